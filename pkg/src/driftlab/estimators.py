"""Path-ensemble estimators for steady states, asymptotic covariances,
response coefficients, and the associated scaling checks."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import regeneration, sde
from ._stats import EstimateWithCI, ScalingFit, loglog_fit, plain_mean
from .environment import Environment, FunctionalSpec
from .errors import HorizonTooShort


def _accs(env: Environment, fs: Sequence[Optional[FunctionalSpec]]):
    out = []
    for f in fs:
        out.extend(sde._functional_accumulator(env, f) or
                   [lambda x: np.zeros(np.atleast_2d(x).shape[0])])
    return out


def ergodic_nu(env: Environment, f: FunctionalSpec, lam: float,
               horizon: float, n_paths: int, seed: int,
               step: Optional[float] = None) -> EstimateWithCI:
    """Long-run time average (1/T) A_f(T), averaged over paths."""
    if lam > 0 and horizon < 10.0 / (lam * lam):
        raise HorizonTooShort(
            f"horizon {horizon} < 10/lam^2 = {10.0 / lam ** 2}")
    h = step or sde.default_step(lam)
    cfg = sde.IntegratorConfig(step=h, seed=seed, lam=lam)
    res = sde.simulate(env, cfg, horizon, n_paths, accumulators=_accs(env, [f]))
    return plain_mean(res.A_end[:, 0] / res.horizon)


def sigma_cov(env: Environment, f: FunctionalSpec, g: FunctionalSpec,
              horizon: float, n_paths: int, seed: int,
              step: float = 1e-2) -> EstimateWithCI:
    """Covariance rate E[A_f(t) A_g(t)] / t of the unforced dynamics."""
    cfg = sde.IntegratorConfig(step=step, seed=seed, lam=0.0)
    res = sde.simulate(env, cfg, horizon, n_paths, accumulators=_accs(env, [f, g]))
    return plain_mean(res.A_end[:, 0] * res.A_end[:, 1] / res.horizon)


def gamma_bar(env: Environment, f: FunctionalSpec, horizon: float,
              n_paths: int, seed: int, step: float = 1e-2) -> EstimateWithCI:
    """Drift response E[A_f(t) Bbar(t)] / t of the unforced dynamics."""
    cfg = sde.IntegratorConfig(step=step, seed=seed, lam=0.0)
    res = sde.simulate(env, cfg, horizon, n_paths, accumulators=_accs(env, [f]))
    return plain_mean(res.A_end[:, 0] * res.Bbar_end / res.horizon)


def corrector_pairing(env: Environment, f: FunctionalSpec, horizon: float,
                      n_paths: int, seed: int, chi_eval,
                      step: float = 1e-2) -> EstimateWithCI:
    """Time average of f(X_s) chi(X_s) under the unforced dynamics.

    chi_eval maps a batch of points to corrector values (e.g. a periodic
    interpolant of the cell solution)."""
    acc = lambda x: np.asarray(f.div_F(x)) * np.asarray(chi_eval(x))
    cfg = sde.IntegratorConfig(step=step, seed=seed, lam=0.0)
    res = sde.simulate(env, cfg, horizon, n_paths, accumulators=[acc])
    return plain_mean(res.A_end[:, 0] / res.horizon)


def lebowitz_rost_drift(env: Environment, f: FunctionalSpec, alpha: float,
                        eps_grid: Sequence[float], n_paths: int, seed: int,
                        step: Optional[float] = None) -> ScalingFit:
    """Drift of the rescaled functional eps A_f(t/eps^2) under forcing
    lam = sqrt(alpha) eps, measured at t = 1 per eps."""
    values, ses = [], []
    for j, eps in enumerate(eps_grid):
        lam = math.sqrt(alpha) * eps
        h = step or sde.default_step(lam)
        cfg = sde.IntegratorConfig(step=h, seed=seed, lam=lam)
        res = sde.simulate(env, cfg, eps ** -2, n_paths,
                           accumulators=_accs(env, [f]),
                           path_offset=j * n_paths)
        est = plain_mean(eps * res.A_end[:, 0])
        values.append(est.value)
        ses.append(est.se)
    lam_grid = np.sqrt(alpha) * np.asarray(eps_grid, dtype=float)
    if len(values) >= 3:
        return loglog_fit(lam_grid, values, ses)
    return ScalingFit(lambdas=lam_grid, values=np.asarray(values),
                      ses=np.asarray(ses), slope=math.nan, slope_se=math.nan)


def amax_scaling(env: Environment, f: FunctionalSpec,
                 lambdas: Sequence[float], n_paths: int, seed: int,
                 step: Optional[float] = None) -> ScalingFit:
    """E max_{s <= lam^-2} |A_f(s)| across a lam grid, with log-log slope."""
    values, ses = [], []
    for j, lam in enumerate(lambdas):
        h = step or sde.default_step(lam)
        cfg = sde.IntegratorConfig(step=h, seed=seed, lam=lam)
        res = sde.simulate(env, cfg, lam ** -2, n_paths,
                           accumulators=_accs(env, [f]), track_sup=True,
                           path_offset=j * n_paths)
        est = plain_mean(res.max_abs_A[:, 0])
        values.append(est.value)
        ses.append(est.se)
    return loglog_fit(np.asarray(lambdas, dtype=float), values, ses)


def sigma_e1_mc(env: Environment, horizon: float, n_paths: int, seed: int,
                step: float = 1e-2) -> EstimateWithCI:
    """e1.Sigma e1 at lam = 0 from the terminal spread of X(t)/sqrt(t)."""
    cfg = sde.IntegratorConfig(step=step, seed=seed, lam=0.0)
    res = sde.simulate(env, cfg, horizon, n_paths)
    return plain_mean(res.X_end[:, 0] ** 2 / res.horizon)


def einstein_mc(env: Environment, f: Optional[FunctionalSpec],
                lambdas: Sequence[float], n_cycles: int, seed: int,
                sigma0_horizon: float = 200.0, sigma0_paths: int = 400,
                harvest_kwargs: Optional[dict] = None):
    """Mobility ratios ell(lam)/lam from regeneration cycles, with the
    lam = 0 diffusivity estimate as companion.

    Returns (fit, sigma0, per_lam) where per_lam maps lam to the
    (EstimateWithCI, harvest stats) pair."""
    harvest_kwargs = dict(harvest_kwargs or {})
    values, ses = [], []
    per_lam = {}
    for j, lam in enumerate(lambdas):
        cfg = regeneration.RegenConfig.for_environment(env, f, lam)
        recs, stats = regeneration.harvest(
            env, f, cfg, n_cycles, seed=rng_seed(seed, j), **harvest_kwargs)
        est = regeneration.ratio_estimate(recs, "ell")
        per_lam[lam] = (est, stats, recs)
        values.append(est.value / lam)
        ses.append(est.se / lam)
    sigma0 = sigma_e1_mc(env, sigma0_horizon, sigma0_paths,
                         seed=rng_seed(seed, 101))
    lam_arr = np.asarray(lambdas, dtype=float)
    if len(values) >= 3:
        fit = loglog_fit(lam_arr, values, ses)
    else:
        fit = ScalingFit(lambdas=lam_arr, values=np.asarray(values),
                         ses=np.asarray(ses), slope=math.nan, slope_se=math.nan)
    fit.values = np.asarray(values)
    fit.ses = np.asarray(ses)
    return fit, sigma0, per_lam


def doob_bound_check(env: Environment, g: FunctionalSpec, t: float,
                     n_paths: int, seed: int, hminus1_norm: float,
                     step: float = 1e-2):
    """Empirical E[(sup_{s<=t} |A_g(s)|)^2] against the 8 t ||g||^2 bound."""
    cfg = sde.IntegratorConfig(step=step, seed=seed, lam=0.0)
    res = sde.simulate(env, cfg, t, n_paths, accumulators=_accs(env, [g]),
                       track_sup=True)
    lhs = plain_mean(res.max_abs_A[:, 0] ** 2)
    bound = 8.0 * t * hminus1_norm ** 2
    return {"lhs": lhs, "bound": bound,
            "ok": lhs.value - 3.0 * lhs.se <= bound,
            "slack": bound / lhs.value if lhs.value > 0 else math.inf}


def rng_seed(seed: int, salt: int) -> int:
    from .rng import mix64
    return mix64(seed ^ (0xD1F7 + salt))
