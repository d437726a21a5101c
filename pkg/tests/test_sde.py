import math

import numpy as np
import pytest

from driftlab import environment as envmod
from driftlab import sde
from driftlab.errors import OffGrid


@pytest.fixture(scope="module")
def sin2():
    return envmod.make_periodic(1, {"const": 2.0, "terms": [[1, 0.0, 1.0]]})


def test_default_step_rule():
    assert sde.default_step(0.0) == 1e-2
    assert sde.default_step(0.1) == pytest.approx(1e-3)
    assert sde.default_step(1.0) == 1e-2


def test_config_validation():
    with pytest.raises(ValueError):
        sde.IntegratorConfig(step=-1.0, seed=0)
    with pytest.raises(ValueError):
        sde.IntegratorConfig(step=1e-2, seed=0, scheme="heun")
    with pytest.raises(ValueError):
        sde.IntegratorConfig(step=1e-2, seed=0, direction=[2.0])


def test_reproducible_and_batch_independent(sin2):
    cfg = sde.IntegratorConfig(step=1e-2, seed=42, lam=0.1)
    r1 = sde.simulate(sin2, cfg, 1.0, 4)
    r2 = sde.simulate(sin2, cfg, 1.0, 4)
    assert np.array_equal(r1.X_end, r2.X_end)
    # path i is the same whether simulated alone or in a batch
    solo = sde.simulate(sin2, cfg, 1.0, 1, path_offset=2)
    assert np.allclose(solo.X_end[0], r1.X_end[2], atol=1e-12)


def test_brownian_moments():
    env = envmod.make_constant(1, 1.0)
    cfg = sde.IntegratorConfig(step=1e-2, seed=7, lam=0.0)
    res = sde.simulate(env, cfg, 4.0, 4000)
    x = res.X_end[:, 0]
    assert abs(x.mean()) < 3 * 2.0 / math.sqrt(4000)
    assert x.var() == pytest.approx(4.0, rel=0.15)
    # companion Brownian coordinate is independent of X
    assert abs(np.corrcoef(x, res.W1_end)[0, 1]) < 0.06


def test_constant_forcing_drift():
    env = envmod.make_constant(1, 2.0)
    cfg = sde.IntegratorConfig(step=1e-2, seed=3, lam=0.25)
    res = sde.simulate(env, cfg, 50.0, 500)
    # dX = lam * a dt + ... with a = 2
    est = res.X_end[:, 0].mean() / res.horizon
    assert est == pytest.approx(0.5, abs=3 * math.sqrt(2.0 / 50.0 / 500))


def test_additive_functional_of_time():
    env = envmod.make_constant(1, 1.0)
    cfg = sde.IntegratorConfig(step=1e-2, seed=5)
    res = sde.simulate(env, cfg, 2.0, 3,
                       accumulators=[lambda x: np.ones(len(x))])
    assert np.allclose(res.A_end[:, 0], 2.0, atol=1e-12)


def test_snapshots_and_sup_tracking(sin2):
    f = envmod.make_functional(sin2, "drift_component")
    cfg = sde.IntegratorConfig(step=1e-2, seed=11)
    res = sde.simulate(sin2, cfg, 2.0, 8, accumulators=[sde.DRIFT_B1],
                       snap_times=[1.0, 2.0], track_sup=True)
    assert set(res.snapshots) == {1.0, 2.0}
    assert np.all(res.max_abs_A[:, 0] >= np.abs(res.A_end[:, 0]) - 1e-12)
    assert np.allclose(res.snapshots[2.0]["A"][:, 0], res.A_end[:, 0])
    with pytest.raises(OffGrid):
        sde.simulate(sin2, cfg, 2.0, 1, snap_times=[0.5 * 1e-2 + 1e-5])
    del f


def test_integrate_full_record(sin2):
    f = envmod.make_functional(sin2, "drift_component")
    cfg = sde.IntegratorConfig(step=1e-3, seed=13, lam=0.2)
    path = sde.integrate(sin2, f, cfg, 3.0)
    assert path.X.shape == (3001, 1)
    assert path.step == pytest.approx(1e-3)
    assert path.index_of(1.5) == 1500
    with pytest.raises(OffGrid):
        path.index_of(1.5 + 3e-4)
    assert np.all(np.diff(path.running_max) >= 0)
    assert np.all(path.running_max >= path.X[:, 0] - 1e-12)


def test_bbar_identity(sin2):
    # Bbar must equal e1.(X - X0) minus the accumulated drift
    f = envmod.make_functional(sin2, "drift_component")
    cfg = sde.IntegratorConfig(step=1e-3, seed=17, lam=0.0)
    path = sde.integrate(sin2, f, cfg, 2.0)
    dev = sde.bbar_decomposition_check(path, sin2)
    cfg2 = sde.IntegratorConfig(step=5e-4, seed=17, lam=0.0)
    dev2 = sde.bbar_decomposition_check(sde.integrate(sin2, f, cfg2, 2.0), sin2)
    assert dev < 5e-3
    assert dev2 < 0.75 * dev  # residual shrinks with the step


def test_girsanov_weight_unbiased():
    # E[weight] = 1 for the exponential martingale
    env = envmod.make_constant(1, 1.0)
    cfg = sde.IntegratorConfig(step=1e-2, seed=23)
    res = sde.simulate(env, cfg, 1.0, 4000)
    lam = 0.3
    w = np.exp(lam * res.Bbar_end - 0.5 * lam**2 * res.Bbracket_end)
    assert w.mean() == pytest.approx(1.0, abs=3 * w.std() / math.sqrt(4000))


def test_weight_accessor(sin2):
    f = envmod.make_functional(sin2, "drift_component")
    cfg = sde.IntegratorConfig(step=1e-2, seed=29)
    path = sde.integrate(sin2, f, cfg, 1.0)
    gw = sde.weight(path, 0.2, 1.0)
    expected = math.exp(0.2 * path.Bbar[-1] - 0.02 * path.Bbracket[-1])
    assert gw.weight == pytest.approx(expected)


def test_milstein_matches_euler_in_law(sin2):
    cfg_e = sde.IntegratorConfig(step=1e-3, seed=31, scheme="euler")
    cfg_m = sde.IntegratorConfig(step=1e-3, seed=31, scheme="milstein1d")
    xe = sde.simulate(sin2, cfg_e, 5.0, 800).X_end[:, 0]
    xm = sde.simulate(sin2, cfg_m, 5.0, 800).X_end[:, 0]
    assert xm.var() == pytest.approx(xe.var(), rel=0.1)
    assert abs(xm.mean() - xe.mean()) < 0.05


def test_two_dimensional_stepping():
    env = envmod.make_periodic(2, {
        "a11": {"const": 2.0, "terms": [[[1, 0], 0.0, 0.5]]},
        "a22": {"const": 1.0, "terms": []},
    })
    cfg = sde.IntegratorConfig(step=1e-2, seed=37, lam=0.1)
    res = sde.simulate(env, cfg, 2.0, 16)
    assert res.X_end.shape == (16, 2)
    assert np.isfinite(res.X_end).all()
