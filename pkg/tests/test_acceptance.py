"""End-to-end verification experiments at their declared tolerances.

Each test drives one registered experiment through the same runner the
command line uses, checks every declared criterion, and prints a single
pass/fail line with the runtime budget.
"""

import time

import pytest

from driftlab import cli
from driftlab.config import Config


@pytest.fixture
def run_checked(tmp_path, capfd):
    def _run(name: str, budget_s: float, extra: dict = None,
             sections: dict = None):
        cfg = Config({"experiment": name, **(extra or {})}, sections or {})
        t0 = time.monotonic()
        metrics, results = cli.run_experiment(cfg,
                                              output_dir=str(tmp_path / name))
        runtime = time.monotonic() - t0
        ok = results["passed"] and runtime < budget_s
        status = "PASS" if ok else "FAIL"
        detail = "; ".join(f"{m.name}={m.value:.6g}" for m in metrics)
        with capfd.disabled():  # show the summary even when the test passes
            print(f"\n[{status}] {name} ({runtime:.1f}s < {budget_s:.0f}s) "
                  f"{detail}", flush=True)
        for m in metrics:
            assert m.passed, f"{name}: {m.name}={m.value} violates {m.criterion}"
        assert runtime < budget_s, f"{name} exceeded the {budget_s}s budget"
        return metrics

    return _run


def test_pde_effective_sigma(run_checked):
    run_checked("pde_effective_sigma", 5.0)


def test_pde_steady_state(run_checked):
    run_checked("pde_steady_state", 10.0)


def test_pde_fdt(run_checked):
    run_checked("pde_fdt", 30.0)


def test_pde_einstein(run_checked):
    run_checked("pde_einstein", 10.0)


def test_mc_vs_pde_drift(run_checked):
    run_checked("mc_vs_pde_drift", 300.0)


def test_mc_nu_consistency(run_checked):
    run_checked("mc_nu_consistency", 600.0)


def test_mc_einstein_trend(run_checked):
    metrics = run_checked("mc_einstein_trend", 1200.0)
    by_name = {m.name: m for m in metrics}
    assert by_name["cycles_per_lambda"].value >= 300


def test_mc_amax_scaling(run_checked):
    metrics = run_checked("mc_amax_scaling", 600.0)
    assert -1.2 <= metrics[0].value <= -0.8


def test_mc_doob_bound(run_checked):
    run_checked("mc_doob_bound", 300.0)


def test_mc_lebowitz_rost(run_checked):
    run_checked("mc_lebowitz_rost", 600.0)


def test_mc_regen_diagnostics(run_checked):
    run_checked("mc_regen_diagnostics", 600.0)


def test_mc_gamma_bar(run_checked):
    metrics = run_checked("mc_gamma_bar", 600.0)
    by_name = {m.name: m for m in metrics}
    assert abs(by_name["gamma_bar"].value - (-0.26795)) <= \
        3 * by_name["gamma_bar"].se
    assert abs(by_name["corrector_pairing"].value - 0.13397) <= \
        3 * by_name["corrector_pairing"].se
