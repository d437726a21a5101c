"""Experiment runner: named verification experiments, config parsing,
result ledger, and plot-script emission.

Exit codes: 0 all declared criteria pass, 1 a criterion failed,
2 invalid config, 3 sampling budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import config as cfgmod
from . import environment as envmod
from . import estimators, homogenize, regeneration, sde
from ._stats import combined_se
from .errors import BudgetExhausted, ConfigError, DriftlabError

SQRT3 = math.sqrt(3.0)

_TOP_KEYS = {"experiment", "seed", "output_dir", "lambda", "lambda_grid",
             "horizon", "n_paths", "n_cycles", "step", "workers"}
_SECTION_KEYS = {
    "env": {"kind", "dim", "seed", "params", "preset"},
    "functional": {"kind", "name"},
}

_PRESETS = {
    # a(x) = 2 + sin(2 pi x)
    "sin2": lambda: envmod.make_periodic(1, {"const": 2.0, "terms": [[1, 0.0, 1.0]]}),
    # a(x) = 1 / (1 + sin(2 pi x) / 2), harmonic mean exactly 1
    "inv_sin": lambda: envmod.make_periodic(
        1, {"inverse": {"const": 1.0, "terms": [[1, 0.0, 0.5]]}}),
    "bumps1d": lambda seed=314: envmod.make_random_bumps(
        1, intensity=1.0, bump_radius=0.5, amplitude=0.8, base=1.0, seed=seed),
    "flat": lambda: envmod.make_constant(1, 1.0),
}


def _resolve_env(cfg: cfgmod.Config, default_preset: str) -> envmod.Environment:
    sec = cfg.section("env")
    preset = sec.get("preset")
    if preset is None and not sec:
        preset = default_preset
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown env preset {preset!r}")
        maker = _PRESETS[preset]
        if preset == "bumps1d" and "seed" in sec:
            return maker(int(sec["seed"]))
        return maker()
    try:
        return envmod.Environment.from_config(sec)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad [env] section: {exc}") from exc


def _resolve_functional(cfg, env):
    kind = cfg.get_str("kind", "functional", default="drift_component")
    return envmod.make_functional(env, kind)


@dataclass
class Metric:
    name: str
    value: float
    se: float
    criterion: str
    passed: bool


def _metric(name, value, se, criterion, passed) -> Metric:
    return Metric(name, float(value), float(se), criterion, bool(passed))


def _workers(cfg: cfgmod.Config, cli_workers: Optional[int]) -> int:
    if cli_workers:
        return cli_workers
    w = cfg.get_int("workers")
    if w:
        return w
    envw = os.environ.get("DRIFTLAB_WORKERS")
    if envw:
        try:
            return int(envw)
        except ValueError as exc:
            raise ConfigError(f"DRIFTLAB_WORKERS={envw!r} is not an integer") from exc
    return os.cpu_count() or 1


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# experiments (each mirrors one acceptance criterion)
# ---------------------------------------------------------------------------

def _exp_pde_effective_sigma(cfg, out, workers):
    grid = homogenize.TorusGrid(1, 4096)
    f1a, f2a = homogenize.effective_sigma(_PRESETS["sin2"](), grid)
    f1b, f2b = homogenize.effective_sigma(_PRESETS["inv_sin"](), grid)
    agree = max(abs(f1a - f2a) / max(1.0, abs(f1a)),
                abs(f1b - f2b) / max(1.0, abs(f1b)))
    _dump_csv(out, "effective_sigma.csv", ["case", "form1", "form2"],
              [["sin2", f1a, f2a], ["inv_sin", f1b, f2b]])
    return [
        _metric("sigma1_sin2", f1a, 0.0, "== sqrt(3) rel 1e-5",
                abs(f1a - SQRT3) / SQRT3 <= 1e-5),
        _metric("sigma1_inv_sin", f1b, 0.0, "== 1 rel 1e-5",
                abs(f1b - 1.0) <= 1e-5),
        _metric("forms_rel_gap", agree, 0.0, "<= 1e-8", agree <= 1e-8),
    ]


def _exp_pde_steady_state(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    lam = cfg.get_float("lambda", default=0.1)
    flat = homogenize.steady_state(env, 0.0, homogenize.TorusGrid(1, 4096))
    flat_dev = float(np.abs(flat - 1.0).max())
    errs = []
    for n in (1024, 2048, 4096):
        g = homogenize.TorusGrid(1, n)
        fh = homogenize.steady_state(env, lam, g)
        ref = homogenize.steady_state_1d_exact(env, lam, g.nodes()[:, 0])
        errs.append(float(np.abs(fh - ref).max()))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    order = min(orders)
    _dump_csv(out, "steady_state_convergence.csv", ["n", "max_err"],
              [[n, e] for n, e in zip((1024, 2048, 4096), errs)])
    return [
        _metric("flat_at_lambda0", flat_dev, 0.0, "<= 1e-10", flat_dev <= 1e-10),
        _metric("oracle_err_n4096", errs[-1], 0.0, "O(h^2) magnitude",
                errs[-1] <= 1e-6),
        _metric("convergence_order", order, 0.0, ">= 1.9", order >= 1.9),
    ]


def _exp_pde_fdt(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    f = _resolve_functional(cfg, env)
    grid = homogenize.TorusGrid(1, 4096)
    reports = [homogenize.fdt_identities(env, f, lf, grid)
               for lf in (0.02, 0.01, 0.005)]
    gamma = reports[1]["gamma_bar"]
    errs = [abs(r["dnu_dlambda"] - r["gamma_bar"]) for r in reports]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    chain_gap = max(abs(r["gamma_bar"] - r["corrector_pairing"]) for r in reports)
    iv_err = abs(reports[1]["sigma_difference"] - (SQRT3 - 2.0))
    _dump_csv(out, "fdt_identities.csv",
              ["lambda_fd", "dnu_dlambda", "gamma_bar", "pairing", "sigma_diff"],
              [[r["lambda_fd"], r["dnu_dlambda"], r["gamma_bar"],
                r["corrector_pairing"], r["sigma_difference"]] for r in reports])
    checks = [
        _metric("gamma_via_sigma_diff", reports[1]["sigma_difference"], 0.0,
                "== sqrt(3)-2 within 1e-6", iv_err <= 1e-6),
        _metric("chain_gap_ii_iii", chain_gap, 0.0, "solver tolerance",
                chain_gap <= 1e-9),
    ]
    for i, r in enumerate(ratios):
        checks.append(_metric(f"halving_ratio_{i}", r, 0.0,
                              "in [2.8, 5.2] (x4 +-30%)", 2.8 <= r <= 5.2))
    return checks


def _exp_pde_einstein(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    grid = homogenize.TorusGrid(1, 4096)
    lam = cfg.get_float("lambda", default=1e-2)
    ell_p, ell_m = _pmap(lambda l: homogenize.effective_drift(env, l, grid)[0],
                         [lam, -lam], workers)
    slope = (ell_p - ell_m) / (2.0 * lam)
    sigma1 = homogenize.effective_sigma(env, grid)[0]
    err = abs(slope - sigma1)
    _dump_csv(out, "einstein_pde.csv", ["lambda", "slope", "sigma1"],
              [[lam, slope, sigma1]])
    return [_metric("einstein_slope", slope, 0.0,
                    f"|slope - {sigma1:.6f}| <= 1e-3", err <= 1e-3)]


def _exp_mc_vs_pde_drift(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    lam = cfg.get_float("lambda", default=0.05)
    horizon = cfg.get_float("horizon", default=4e3)
    n_paths = cfg.get_int("n_paths", default=200)
    seed = cfg.get_int("seed", default=1205)
    step = cfg.get_float("step", default=2e-3)
    icfg = sde.IntegratorConfig(step=step, seed=seed, lam=lam)
    res = sde.simulate(env, icfg, horizon, n_paths)
    from ._stats import plain_mean
    est = plain_mean(res.X_end[:, 0] / res.horizon)
    pde = homogenize.effective_drift(env, lam, homogenize.TorusGrid(1, 4096))[0]
    gap = abs(est.value - pde)
    _dump_csv(out, "mc_vs_pde_drift.csv", ["mc", "se", "pde"],
              [[est.value, est.se, pde]])
    return [_metric("ell_mc_vs_pde", est.value, est.se,
                    f"|mc - {pde:.6f}| <= 3 se", gap <= 3.0 * est.se)]


def _nu_consistency_case(env, f, lam, seed, n_cycles, horizon, step,
                         erg_horizon, erg_paths):
    rcfg = regeneration.RegenConfig.for_environment(env, f, lam)
    both = regeneration.harvest(env, f, rcfg, n_cycles, seed=seed,
                                horizon=horizon, step=step,
                                paths_per_batch=16,
                                h_cens_factors=[50.0, 100.0])
    recs, stats = both[50.0]
    recs2, _ = both[100.0]
    ratio = regeneration.ratio_estimate(recs, "nu_f")
    ratio2 = regeneration.ratio_estimate(recs2, "nu_f")
    erg = estimators.ergodic_nu(env, f, lam, erg_horizon, erg_paths,
                                seed=seed + 1, step=step)
    return ratio, ratio2, erg, stats


def _exp_mc_nu_consistency(cfg, out, workers):
    seed = cfg.get_int("seed", default=71)
    metrics = []
    cases = [
        ("periodic", _resolve_env(cfg, "sin2"), 0.1, 60, 2.0e4, 1e-2, 2000.0, 128),
        ("bumps", _PRESETS["bumps1d"](), 0.2, 80, 6.0e3, 1e-2, 1000.0, 128),
    ]
    rows = []
    for name, env, lam, ncyc, horizon, step, eh, ep in cases:
        f = envmod.make_functional(env, "drift_component")
        ratio, ratio2, erg, stats = _nu_consistency_case(
            env, f, lam, seed, ncyc, horizon, step, eh, ep)
        gap = abs(ratio.value - erg.value)
        cse = combined_se(ratio, erg)
        move = abs(ratio2.value - ratio.value)
        mse = combined_se(ratio, ratio2)
        rows.append([name, lam, ratio.value, ratio.se, erg.value, erg.se,
                     ratio2.value, ratio2.se])
        metrics.append(_metric(f"nu_gap_{name}", gap, cse,
                               "<= 3 combined se", gap <= 3.0 * cse))
        metrics.append(_metric(f"censoring_shift_{name}", move, mse,
                               "< 1 combined se", move < 1.0 * mse))
    _dump_csv(out, "nu_consistency.csv",
              ["case", "lambda", "ratio", "ratio_se", "ergodic", "ergodic_se",
               "ratio_2x_cens", "ratio_2x_se"], rows)
    return metrics


def _exp_mc_einstein_trend(cfg, out, workers):
    env = _resolve_env(cfg, "bumps1d")
    f = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=88)
    n_cycles = cfg.get_int("n_cycles", default=300)
    lams = cfg.get_float_list("lambda_grid", default=[0.4, 0.2, 0.1])
    horizons = {0.4: 2500.0, 0.2: 1.0e4, 0.1: 4.0e4}

    def one(j_lam):
        j, lam = j_lam
        rcfg = regeneration.RegenConfig.for_environment(env, f, lam)
        recs, stats = regeneration.harvest(
            env, f, rcfg, n_cycles, seed=estimators.rng_seed(seed, j),
            horizon=horizons.get(lam), step=1e-2, paths_per_batch=16)
        return regeneration.ratio_estimate(recs, "ell"), recs, stats

    results = _pmap(one, list(enumerate(lams)), workers)
    sigma0 = estimators.sigma_e1_mc(env, 200.0, 1600,
                                    seed=estimators.rng_seed(seed, 101))
    mobil = [(r[0].value / lam, r[0].se / lam) for r, lam in
             zip(results, lams)]
    devs = [abs(v - sigma0.value) for v, _ in mobil]
    slack = [math.hypot(s, sigma0.se) for _, s in mobil]
    monotone = all(devs[i] + 2.0 * (slack[i] + slack[i + 1]) >= devs[i + 1]
                   for i in range(len(devs) - 1))
    final_ok = devs[-1] <= 0.20 * sigma0.value + 3.0 * slack[-1]
    enough = all(r[0].n >= n_cycles for r in results)
    _dump_csv(out, "einstein_trend.csv",
              ["lambda", "mobility", "se", "n_cycles", "sigma0", "sigma0_se"],
              [[lam, v, s, r[0].n, sigma0.value, sigma0.se]
               for lam, (v, s), r in zip(lams, mobil, results)])
    sig_l = regeneration.ratio_estimate(results[-1][1], "sigma_lambda")
    var_ok = abs(sig_l.value - sigma0.value) <= (
        0.20 * sigma0.value + 3.0 * math.hypot(sig_l.se, sigma0.se))
    return [
        _metric("cycles_per_lambda", min(r[0].n for r in results), 0.0,
                f">= {n_cycles}", enough),
        _metric("monotone_trend", float(monotone), 0.0,
                "deviation non-increasing (2 se slack)", monotone),
        _metric("mobility_at_0.1", mobil[-1][0], mobil[-1][1],
                f"within 20% of sigma0={sigma0.value:.4f}", final_ok),
        _metric("sigma_lambda_continuity", sig_l.value, sig_l.se,
                "within 20% + 3 se of sigma0", var_ok),
    ]


def _exp_mc_variance_continuity(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    f = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=93)
    lam = cfg.get_float("lambda", default=0.1)
    n_cycles = cfg.get_int("n_cycles", default=60)
    rcfg = regeneration.RegenConfig.for_environment(env, f, lam)
    recs, _ = regeneration.harvest(env, f, rcfg, n_cycles, seed=seed,
                                   horizon=2.0e4, step=1e-2,
                                   paths_per_batch=16)
    sig_l = regeneration.ratio_estimate(recs, "sigma_lambda")
    sigma0 = estimators.sigma_e1_mc(env, 200.0, 1600,
                                    seed=estimators.rng_seed(seed, 7))
    gap = abs(sig_l.value - sigma0.value)
    tol = 0.15 * sigma0.value + 3.0 * math.hypot(sig_l.se, sigma0.se)
    _dump_csv(out, "variance_continuity.csv",
              ["lambda", "sigma_lambda", "se", "sigma0", "sigma0_se"],
              [[lam, sig_l.value, sig_l.se, sigma0.value, sigma0.se]])
    return [_metric("sigma_lambda_vs_sigma0", sig_l.value, sig_l.se,
                    "within 15% + 3 se", gap <= tol)]


def _exp_mc_amax_scaling(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    f = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=55)
    n_paths = cfg.get_int("n_paths", default=400)
    lams = cfg.get_float_list("lambda_grid", default=[0.4, 0.2, 0.1])
    fit = estimators.amax_scaling(env, f, lams, n_paths, seed)
    _dump_csv(out, "amax_scaling.csv", ["lambda", "e_max_abs_a", "se"],
              [[l, v, s] for l, v, s in zip(fit.lambdas, fit.values, fit.ses)])
    ok = -1.2 <= fit.slope <= -0.8
    return [_metric("amax_loglog_slope", fit.slope, fit.slope_se,
                    "in [-1.2, -0.8]", ok)]


def _exp_mc_doob_bound(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    g = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=60)
    n_paths = cfg.get_int("n_paths", default=1000)
    norm, _ = homogenize.h_minus1(env, g, g, homogenize.TorusGrid(1, 4096))
    metrics, rows = [], []
    for t in (5.0, 10.0):
        chk = estimators.doob_bound_check(env, g, t, n_paths, seed, norm)
        rows.append([t, chk["lhs"].value, chk["lhs"].se, chk["bound"]])
        metrics.append(_metric(f"doob_t{int(t)}", chk["lhs"].value,
                               chk["lhs"].se,
                               f"<= {chk['bound']:.4f} + 3 se", chk["ok"]))
    _dump_csv(out, "doob_bound.csv", ["t", "lhs", "se", "bound"], rows)
    return metrics


def _exp_mc_lebowitz_rost(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    f = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=47)
    n_paths = cfg.get_int("n_paths", default=800)
    eps = 0.1
    gamma = homogenize.gamma_bar_pde(env, f, homogenize.TorusGrid(1, 4096))
    fits = _pmap(lambda alpha: estimators.lebowitz_rost_drift(
        env, f, alpha, [eps], n_paths, seed, step=1e-3), [1.0, 4.0], workers)
    d1, s1 = fits[0].values[0], fits[0].ses[0]
    d4, s4 = fits[1].values[0], fits[1].ses[0]
    ratio = d4 / d1
    ratio_se = abs(ratio) * math.hypot(s4 / abs(d4), s1 / abs(d1))
    _dump_csv(out, "lebowitz_rost.csv", ["alpha", "drift", "se"],
              [[1.0, d1, s1], [4.0, d4, s4]])
    return [
        _metric("drift_alpha1", d1, s1, f"within 3 se of {gamma:.5f}",
                abs(d1 - gamma) <= 3.0 * s1),
        _metric("drift_ratio_alpha4", ratio, ratio_se, "== 2 within 3 se",
                abs(ratio - 2.0) <= 3.0 * ratio_se),
    ]


def _exp_mc_regen_diagnostics(cfg, out, workers):
    env = _resolve_env(cfg, "flat")
    lam = cfg.get_float("lambda", default=0.5)
    seed = cfg.get_int("seed", default=29)
    n_cycles = cfg.get_int("n_cycles", default=500)
    rcfg = regeneration.RegenConfig.for_environment(env, None, lam)
    recs, stats = regeneration.harvest(env, None, rcfg, n_cycles, seed=seed,
                                       paths_per_batch=16)
    d = stats["diagnostics"]
    pool = [r for r in recs if not r.is_first]
    dts = np.array([r.dt for r in pool])
    ac = float(np.corrcoef(dts[:-1], dts[1:])[0, 1])
    bound = 3.0 / math.sqrt(len(dts))
    tau_int = all(x.tau_units >= 1 for x in d)
    first_taus = [r.dt for r in recs if r.is_first]
    lam2tau = min(lam * lam * t for t in first_taus)
    _dump_csv(out, "regen_cycles.csv", ["k", "dt", "dX1"],
              [[r.k, r.dt, r.dX1] for r in recs])
    return [
        _metric("ordering_invariant", float(all(x.order_ok for x in d)), 0.0,
                "100% of cycles", all(x.order_ok for x in d)),
        _metric("halfspace_invariants",
                float(all(x.halfspace_pre_ok and x.halfspace_post_ok
                          for x in d)), 0.0, "100% of certified cycles",
                all(x.halfspace_pre_ok and x.halfspace_post_ok for x in d)),
        _metric("lag1_autocorr", ac, bound / 3.0, f"|ac| <= {bound:.4f}",
                abs(ac) <= bound),
        _metric("min_lam2_tau1", lam2tau, 0.0, ">= 2",
                lam2tau >= 2.0 - 1e-12 and tau_int),
    ]


def _exp_mc_gamma_bar(cfg, out, workers):
    env = _resolve_env(cfg, "sin2")
    f = envmod.make_functional(env, "drift_component")
    seed = cfg.get_int("seed", default=35)
    grid = homogenize.TorusGrid(1, 4096)
    gamma_ref = homogenize.gamma_bar_pde(env, f, grid)
    pair_ref = -0.5 * gamma_ref
    g = estimators.gamma_bar(env, f, horizon=10.0,
                             n_paths=cfg.get_int("n_paths", default=30000),
                             seed=seed, step=5e-4)
    chi = homogenize.corrector(env, grid)
    cp = estimators.corrector_pairing(
        env, f, horizon=10.0, n_paths=2000, seed=seed + 1,
        chi_eval=lambda x: homogenize.grid_interp(grid, chi, x), step=5e-4)
    _dump_csv(out, "gamma_bar.csv", ["quantity", "mc", "se", "reference"],
              [["gamma_bar", g.value, g.se, gamma_ref],
               ["corrector_pairing", cp.value, cp.se, pair_ref]])
    return [
        _metric("gamma_bar", g.value, g.se, f"within 3 se of {gamma_ref:.5f}",
                abs(g.value - gamma_ref) <= 3.0 * g.se),
        _metric("corrector_pairing", cp.value, cp.se,
                f"within 3 se of {pair_ref:.5f}",
                abs(cp.value - pair_ref) <= 3.0 * cp.se),
    ]


_EXPERIMENTS: dict[str, tuple[str, Callable]] = {
    "pde_effective_sigma": (
        "Effective variance from the periodic cell problem, two quadratic "
        "forms, against closed-form harmonic means.", _exp_pde_effective_sigma),
    "pde_steady_state": (
        "Tilted invariant density vs the 1-D integrating-factor closed form; "
        "grid-convergence order.", _exp_pde_steady_state),
    "pde_fdt": (
        "Fluctuation-dissipation chain: steady-state derivative vs response "
        "coefficient vs corrector pairing.", _exp_pde_fdt),
    "pde_einstein": (
        "Einstein relation: central difference of the effective drift equals "
        "the effective variance.", _exp_pde_einstein),
    "mc_vs_pde_drift": (
        "Ergodic Monte Carlo drift vs the deterministic cell-problem drift.",
        _exp_mc_vs_pde_drift),
    "mc_nu_consistency": (
        "Ergodic average vs regenerative ratio estimator of the steady state, "
        "plus censoring-horizon sensitivity.", _exp_mc_nu_consistency),
    "mc_einstein_trend": (
        "Mobility ell(lam)/lam across a lam grid vs the lam=0 diffusivity "
        "(random-bump medium).", _exp_mc_einstein_trend),
    "mc_variance_continuity": (
        "Cycle-based effective variance at small lam vs the unforced "
        "diffusivity.", _exp_mc_variance_continuity),
    "mc_amax_scaling": (
        "Scaling of E max |A_f| over [0, lam^-2] in lam.", _exp_mc_amax_scaling),
    "mc_doob_bound": (
        "Empirical second moment of sup |A_g| against the 8 t |g|^2 bound.",
        _exp_mc_doob_bound),
    "mc_lebowitz_rost": (
        "Drift of the diffusively rescaled additive functional under "
        "sqrt(alpha) eps forcing.", _exp_mc_lebowitz_rost),
    "mc_regen_diagnostics": (
        "Skeleton ordering/halfspace invariants, cycle independence "
        "diagnostics, and the 2 lam^-2 lower bound.", _exp_mc_regen_diagnostics),
    "mc_gamma_bar": (
        "Drift-response coefficient and corrector pairing from unforced "
        "paths vs the cell-problem values.", _exp_mc_gamma_bar),
}


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _dump_csv(out: Path, name: str, header, rows):
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _config_hash(cfg: cfgmod.Config) -> str:
    return hashlib.sha256(cfgmod.format_text(cfg).encode()).hexdigest()[:16]


def _append_ledger(out: Path, experiment: str, chash: str, metrics):
    path = out / "ledger.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["timestamp", "experiment", "config_hash", "metric",
                        "value", "se", "passed"])
        ts = time.strftime("%Y-%m-%dT%H:%M:%S")
        for m in metrics:
            w.writerow([ts, experiment, chash, m.name,
                        f"{m.value:.10g}", f"{m.se:.6g}", int(m.passed)])


def _write_plot_script(out: Path, experiment: str):
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    csvs = sorted(p.name for p in out.glob("*.csv") if p.name != "ledger.csv")
    lines = [f"# plotting commands for {experiment}",
             "set datafile separator ','", "set key autotitle columnhead"]
    for c in csvs:
        lines.append(f"plot '../{c}' using 0:2 with linespoints")
    (plots / f"{experiment}.script").write_text("\n".join(lines) + "\n")


def run_experiment(cfg: cfgmod.Config, output_dir: Optional[str] = None,
                   workers: Optional[int] = None):
    """Execute the named experiment; returns (metrics, results dict)."""
    cfg.validate(_TOP_KEYS, _SECTION_KEYS)
    name = cfg.get_str("experiment", required=True)
    if name not in _EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    out = Path(output_dir or cfg.get_str("output_dir", default="driftlab_out"))
    out.mkdir(parents=True, exist_ok=True)
    nworkers = _workers(cfg, workers)
    t0 = time.time()
    metrics = _EXPERIMENTS[name][1](cfg, out, nworkers)
    runtime = time.time() - t0
    chash = _config_hash(cfg)
    results = {
        "experiment": name,
        "config_hash": chash,
        "runtime_s": round(runtime, 3),
        "passed": all(m.passed for m in metrics),
        "metrics": [{"name": m.name, "value": m.value, "se": m.se,
                     "criterion": m.criterion, "passed": m.passed}
                    for m in metrics],
    }
    with open(out / "results.json", "w") as fh:
        json.dump(results, fh, indent=2)
    _append_ledger(out, name, chash, metrics)
    _write_plot_script(out, name)
    return metrics, results


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="driftlab")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a config file")
    runp.add_argument("config")
    runp.add_argument("--workers", type=int, default=None)
    runp.add_argument("--output-dir", default=None)
    sub.add_parser("list", help="list registered experiments")
    desc = sub.add_parser("describe", help="describe one experiment")
    desc.add_argument("experiment")
    args = parser.parse_args(argv)

    if args.command == "list":
        for name in _EXPERIMENTS:
            print(name)
        return 0
    if args.command == "describe":
        if args.experiment not in _EXPERIMENTS:
            print(f"unknown experiment {args.experiment!r}", file=sys.stderr)
            return 2
        print(args.experiment)
        print("  " + _EXPERIMENTS[args.experiment][0])
        return 0

    try:
        cfg = cfgmod.load(args.config)
        metrics, results = run_experiment(cfg, args.output_dir, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return 3
    except DriftlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for m in metrics:
        status = "PASS" if m.passed else "FAIL"
        print(f"[{status}] {m.name} = {m.value:.6g} (se {m.se:.3g}) "
              f"criterion: {m.criterion}")
    return 0 if results["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
