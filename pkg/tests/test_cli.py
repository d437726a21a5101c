import csv
import json

from driftlab import cli


def run(argv):
    return cli.main(argv)


def test_list_names_every_experiment(capsys):
    assert run(["list"]) == 0
    out = capsys.readouterr().out.split()
    assert "pde_effective_sigma" in out
    assert "mc_gamma_bar" in out
    assert len(out) == 13


def test_describe(capsys):
    assert run(["describe", "pde_einstein"]) == 0
    assert "Einstein" in capsys.readouterr().out
    assert run(["describe", "nope"]) == 2


def test_run_writes_artifacts(tmp_path, capsys):
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text("experiment = pde_effective_sigma\n")
    out = tmp_path / "out"
    assert run(["run", str(cfgfile), "--output-dir", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.count("[PASS]") == 3

    results = json.loads((out / "results.json").read_text())
    assert results["experiment"] == "pde_effective_sigma"
    assert results["passed"] is True
    assert len(results["config_hash"]) == 16

    with open(out / "ledger.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["timestamp", "experiment", "config_hash", "metric",
                       "value", "se", "passed"]
    assert len(rows) == 4 and all(r[6] == "1" for r in rows[1:])

    scripts = list((out / "plots").glob("*.script"))
    assert len(scripts) == 1


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("experiment = pde_einstein\nbananas = 3\n")
    assert run(["run", str(cfgfile)]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_experiment(tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("experiment = not_a_thing\n")
    assert run(["run", str(cfgfile)]) == 2


def test_unknown_section(tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("experiment = pde_einstein\n[mystery]\nk = 1\n")
    assert run(["run", str(cfgfile)]) == 2


def test_missing_config_file():
    assert run(["run", "/does/not/exist.cfg"]) == 2


def test_json_config_and_env_section(tmp_path):
    cfgfile = tmp_path / "exp.json"
    cfgfile.write_text(json.dumps({
        "experiment": "pde_steady_state",
        "lambda": 0.05,
        "env": {"preset": "sin2"},
    }))
    out = tmp_path / "out"
    assert run(["run", str(cfgfile), "--output-dir", str(out)]) == 0


def test_workers_flag(tmp_path):
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text("experiment = pde_einstein\n")
    out = tmp_path / "out"
    assert run(["run", str(cfgfile), "--output-dir", str(out),
                "--workers", "2"]) == 0


def test_workers_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DRIFTLAB_WORKERS", "not-a-number")
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text("experiment = pde_einstein\n")
    assert run(["run", str(cfgfile), "--output-dir",
                str(tmp_path / "o")]) == 2


def test_ledger_appends(tmp_path):
    cfgfile = tmp_path / "exp.cfg"
    cfgfile.write_text("experiment = pde_einstein\n")
    out = tmp_path / "out"
    assert run(["run", str(cfgfile), "--output-dir", str(out)]) == 0
    assert run(["run", str(cfgfile), "--output-dir", str(out)]) == 0
    with open(out / "ledger.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3  # header + one metric per run
