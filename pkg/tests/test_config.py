import pytest

from driftlab import config as cfgmod
from driftlab.errors import ConfigError

TEXT = """\
experiment = pde_fdt
seed = 3

[env]
kind = periodic
preset = sin2
"""


def test_parse_and_access():
    cfg = cfgmod.parse_text(TEXT)
    assert cfg.get_str("experiment") == "pde_fdt"
    assert cfg.get_int("seed") == 3
    assert cfg.get_str("preset", section="env") == "sin2"
    assert cfg.get_float("missing", default=1.5) == 1.5


def test_required_missing():
    cfg = cfgmod.parse_text("a = 1\n")
    with pytest.raises(ConfigError):
        cfg.get_str("experiment", required=True)


def test_type_errors():
    cfg = cfgmod.parse_text("n = abc\n")
    with pytest.raises(ConfigError):
        cfg.get_int("n")
    with pytest.raises(ConfigError):
        cfg.get_float("n")


def test_float_list():
    cfg = cfgmod.parse_text("grid = 0.4, 0.2, 0.1\n")
    assert cfg.get_float_list("grid") == [0.4, 0.2, 0.1]


def test_duplicates_rejected_with_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        cfgmod.parse_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match=r"duplicate section"):
        cfgmod.parse_text("[s]\n[s]\n")


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 1"):
        cfgmod.parse_text("just words\n")


def test_canonical_format_round_trip():
    cfg = cfgmod.parse_text(TEXT)
    canon = cfgmod.format_text(cfg)
    again = cfgmod.format_text(cfgmod.parse_text(canon))
    assert canon == again
    assert canon.endswith("\n")


def test_json_alternative(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"experiment": "pde_fdt", "seed": 3, '
                 '"env": {"preset": "sin2"}, "grid": [0.4, 0.2]}')
    cfg = cfgmod.load(str(p))
    assert cfg.get_str("experiment") == "pde_fdt"
    assert cfg.get_str("preset", section="env") == "sin2"
    assert cfg.get_float_list("grid") == [0.4, 0.2]


def test_validate_schema():
    cfg = cfgmod.parse_text("experiment = x\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        cfg.validate({"experiment"}, {})
    cfg2 = cfgmod.parse_text("[weird]\nk = 1\n")
    with pytest.raises(ConfigError, match="weird"):
        cfg2.validate({"experiment"}, {"env": {"kind"}})


def test_load_missing_file():
    with pytest.raises(ConfigError):
        cfgmod.load("/nonexistent/file.cfg")
