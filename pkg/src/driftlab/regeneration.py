"""Regeneration-time detection on simulated paths.

The skeleton walks a path with a ladder of first-passage times: it waits
for the particle to climb a fresh multiple of R(lam) in the e1 direction,
takes the next multiple of lam^-2 as a candidate epoch when the trajectory
has settled (oscillation at most R(lam)/2 over the rounding window), runs a
success block of length lam^-2, and certifies the epoch if the particle
never backtracks R(lam) below the block end within a censoring horizon.
Certified epochs split the path into cycles whose increments feed the
ratio estimators for the steady state, the effective drift, and the
effective variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng, sde
from .environment import Environment, FunctionalSpec, regen_range
from .errors import BudgetExhausted, HorizonExceeded, OffGrid, TooFewCycles
from ._stats import EstimateWithCI, ratio_of_means

_SCAN_CHUNK = 1 << 16


@dataclass
class RegenConfig:
    lam: float
    R_assump: float
    R_f: float
    delta: Optional[float] = None
    mode: str = "event"          # "event" | "bernoulli"
    h_cens_factor: float = 50.0  # censoring horizon in units of lam^-2

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise ValueError("lam must lie in (0, 1]")
        if self.mode not in ("event", "bernoulli"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "bernoulli" and self.delta is None:
            self.delta = 0.5

    @property
    def R_lam(self) -> float:
        """Regeneration length scale R(lam) = max(R, R_f, 1/lam)."""
        return max(self.R_assump, self.R_f, 1.0 / self.lam)

    @classmethod
    def for_environment(cls, env: Environment, f: Optional[FunctionalSpec],
                        lam: float, **kw) -> "RegenConfig":
        rf = f.locality_radius if f is not None else 0.0
        return cls(lam=lam, R_assump=regen_range(env), R_f=rf, **kw)


@dataclass
class SkeletonState:
    """Resumable cursor of the per-path state machine (grid-time units)."""

    phase: str = "SeekingRecord"   # | "InSuccessBlock" | "AwaitingBacktrack"
    origin_time: float = 0.0       # start of the current cycle
    k: int = 1                     # index of the cycle being built
    attempt: int = 0               # Bernoulli counter within the path


@dataclass
class RegenerationRecord:
    k: int
    dt: float
    dA: float
    dW1: float
    dX1: float
    dX: np.ndarray
    is_first: bool
    censored: bool = False

    @property
    def dZ(self) -> np.ndarray:
        return np.concatenate([self.dX, [self.dA + self.dW1]])


@dataclass
class CycleDiagnostics:
    tau_units: int            # (tau_k - tau_{k-1}) in units of lam^-2
    n_candidates: int
    n_failures: int
    order_ok: bool
    halfspace_pre_ok: bool
    halfspace_post_ok: bool


# ---------------------------------------------------------------------------
# low-level scanning primitives
# ---------------------------------------------------------------------------

def _scan(s: np.ndarray, j0: int, jmax: int, level: float, up: bool) -> int:
    """First index in [j0, jmax) where s crosses the level, else -1."""
    j = j0
    while j < jmax:
        end = min(j + _SCAN_CHUNK, jmax)
        seg = s[j:end]
        hits = np.nonzero(seg >= level if up else seg <= level)[0]
        if hits.size:
            return j + int(hits[0])
        j = end
    return -1


def _stay_in_tube(s, u, X, j, nb, RL) -> bool:
    """Did Z stay in the ball of radius 6R around Z(j) + 5R e1 over a
    lam^-2 block?  u is the companion coordinate A_f + W1."""
    sl = slice(j, j + nb + 1)
    du = u[sl] - u[j]
    if X is None:
        dx2 = (s[sl] - s[j] - 5.0 * RL) ** 2
    else:
        dX = X[sl] - X[j]
        dX[:, 0] -= 5.0 * RL
        dx2 = (dX * dX).sum(axis=1)
    return bool(((dx2 + du * du) <= 36.0 * RL * RL).all())


# ---------------------------------------------------------------------------
# per-path skeleton
# ---------------------------------------------------------------------------

def _skeleton_path(s, A, W1, h, lam, RL, nb, ncens, mode, delta,
                   ybit: Callable[[int], int], X=None, start_index: int = 0,
                   k_start: int = 1, attempt_start: int = 0):
    """Run the full state machine over one stored path.

    Returns (records, diagnostics, stats) where stats counts candidate and
    failure events plus whether the path ended mid-cycle (censored tail).
    """
    nt = len(s) - 1
    u = A + W1  # companion coordinate of the lifted process
    tol = 16.0 * np.finfo(s.dtype).eps * max(1.0, float(np.abs(s[-1])) + RL)
    records: list[RegenerationRecord] = []
    diags: list[CycleDiagnostics] = []
    o = start_index
    k = k_start
    attempt = attempt_start
    n_cand_total = 0
    n_fail_total = 0

    while True:
        origin = o
        level = s[origin] + 3.0 * RL      # initial ladder parameter a = 3 lam R
        n_cand = 0
        n_fail = 0
        marks: list[int] = []
        done = False
        while not done:
            # --- climb the V-ladder to the next settled candidate -------
            j_from = origin
            hi = s[origin]
            cov = origin
            Ntil = -1
            while True:
                V = _scan(s, j_from, nt + 1, level, up=True)
                if V < 0:
                    return records, diags, _stats(n_cand_total, n_fail_total, True)
                cV = o + ((V - o + nb - 1) // nb) * nb
                if cV + nb > nt:
                    return records, diags, _stats(n_cand_total, n_fail_total, True)
                if cV > cov:
                    hi = max(hi, float(s[cov:cV + 1].max()))
                    cov = cV
                window = s[V:cV + 1]
                osc = float(window.max() - window.min()) if len(window) > 1 else 0.0
                if osc <= 0.5 * RL:
                    Ntil = cV
                    break
                level = hi + RL
                j_from = cV

            n_cand += 1
            n_cand_total += 1
            attempt += 1
            marks.append(Ntil)

            # --- success block ------------------------------------------
            stay = _stay_in_tube(s, u, X, Ntil, nb, RL)
            if mode == "bernoulli":
                accept = bool(ybit(attempt)) and stay
            else:
                accept = stay
            if not accept:
                origin = Ntil
                level = s[Ntil] + 3.0 * RL
                continue

            S = Ntil + nb
            marks.append(S)
            jmax = min(S + ncens, nt) + 1
            jb = _scan(s, S + 1, jmax, s[S] - RL, up=False)
            if jb < 0:
                if S + ncens > nt:
                    # cannot certify before the path ends
                    return records, diags, _stats(n_cand_total, n_fail_total, True)
                done = True
                tau = S
                break
            # --- backtrack: restart the ladder above the old maximum ----
            marks.append(jb)
            n_fail += 1
            n_fail_total += 1
            Ridx = o + ((jb - o + nb - 1) // nb) * nb
            marks.append(Ridx)
            if Ridx + nb > nt:
                return records, diags, _stats(n_cand_total, n_fail_total, True)
            origin = Ridx
            level = float(s[o:Ridx + 1].max()) + RL

        # --- certified cycle ---------------------------------------------
        dX = (X[tau] - X[o]) if X is not None else np.array([s[tau] - s[o]])
        records.append(RegenerationRecord(
            k=k, dt=(tau - o) * h, dA=float(A[tau] - A[o]),
            dW1=float(W1[tau] - W1[o]), dX1=float(s[tau] - s[o]),
            dX=dX, is_first=(k == 1)))
        N_acc = marks[-2] if len(marks) >= 2 else tau - nb
        order_ok = (marks == sorted(marks)) and (marks[0] - o >= nb)
        pre_ok = float(s[o:N_acc + 1].max()) <= s[N_acc] + 0.5 * RL + tol
        post_ok = float(s[tau:min(tau + ncens, nt) + 1].min()) >= s[tau] - RL - tol
        diags.append(CycleDiagnostics(
            tau_units=(tau - o) // nb, n_candidates=n_cand, n_failures=n_fail,
            order_ok=bool(order_ok), halfspace_pre_ok=bool(pre_ok),
            halfspace_post_ok=bool(post_ok)))
        o = tau
        k += 1


def _stats(n_cand, n_fail, censored_tail):
    return {"candidates": n_cand, "failures": n_fail,
            "censored_tail": censored_tail}


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def advance(state: SkeletonState, path: sde.PathRecord,
            ys: Callable[[int], int], cfg: RegenConfig):
    """Run the skeleton over a recorded path, resuming from the state.

    Returns (new_state, records).  The path must extend past the state's
    origin; a path ending mid-cycle leaves the state at the last certified
    epoch (the unfinished cycle is censored)."""
    h = path.step
    lam = cfg.lam
    nb = int(round(lam ** -2 / h))
    if abs(nb * h - lam ** -2) > 1e-9 * lam ** -2:
        raise OffGrid("step must divide lam^-2 for the rounding convention")
    ncens = int(round(cfg.h_cens_factor)) * nb
    s = path.X[:, 0] - path.X[0, 0]
    j0 = int(round(state.origin_time / h))
    if j0 >= len(s) - 1:
        raise HorizonExceeded("path does not extend past the skeleton state")
    ybit = lambda i: ys(i)
    records, diags, stats = _skeleton_path(
        s, path.Afun, path.W1, h, lam, cfg.R_lam, nb, ncens,
        cfg.mode, cfg.delta, ybit, X=path.X if path.X.shape[1] > 1 else None,
        start_index=j0, k_start=state.k, attempt_start=state.attempt)
    new = SkeletonState(phase="SeekingRecord",
                        origin_time=state.origin_time + sum(r.dt for r in records),
                        k=state.k + len(records),
                        attempt=state.attempt + stats["candidates"])
    new.diagnostics = diags
    return new, records


def estimate_delta(env: Environment, f: Optional[FunctionalSpec],
                   cfg: RegenConfig, seed: int, n_trials: int = 1000,
                   step: Optional[float] = None) -> float:
    """Monte Carlo frequency of the success event over one lam^-2 block,
    floored at 1e-3."""
    lam = cfg.lam
    h = step or max(sde.default_step(lam), lam ** -2 / 4096)
    nb = max(1, int(round(lam ** -2 / h)))
    h = lam ** -2 / nb
    icfg = sde.IntegratorConfig(step=h, seed=rng.mix64(seed ^ 0x5DE17A), lam=lam)
    accs = sde._functional_accumulator(env, f)
    res = sde.simulate(env, icfg, lam ** -2, n_trials, accumulators=accs,
                       keep_series=True, keep_x_series=env.dim > 1)
    RL = cfg.R_lam
    hits = 0
    A = res.series["A"]
    for i in range(n_trials):
        X = res.series["X"][i] if env.dim > 1 else None
        hits += _stay_in_tube(res.series["s1"][i],
                              A[i] + res.series["W1"][i], X, 0, nb, RL)
    return max(hits / n_trials, 1e-3)


def harvest(env: Environment, f: Optional[FunctionalSpec], cfg: RegenConfig,
            n_cycles: int, seed: int, horizon: Optional[float] = None,
            step: Optional[float] = None, paths_per_batch: int = 4,
            max_batches: int = 64, h_cens_factors=None,
            series_dtype=np.float32):
    """Collect at least n_cycles certified regeneration records.

    Paths are simulated in batches; each path is walked once by the
    skeleton.  When ``h_cens_factors`` lists several censoring horizons the
    same stored paths are re-walked per horizon (for censoring-bias
    studies) and a dict {factor: (records, stats)} is returned.
    """
    lam = cfg.lam
    h = step or sde.default_step(lam)
    nb = max(1, int(round(lam ** -2 / h)))
    h = lam ** -2 / nb
    factors = list(h_cens_factors) if h_cens_factors else [cfg.h_cens_factor]
    fmax = max(factors)
    if horizon is None:
        horizon = (3.0 * fmax + 40.0) * lam ** -2
    nt = int(round(horizon / h))
    horizon = nt * h
    icfg = sde.IntegratorConfig(step=h, seed=seed, lam=lam)
    accs = sde._functional_accumulator(env, f)
    RL = cfg.R_lam

    pools = {fac: [] for fac in factors}
    stats = {fac: {"candidates": 0, "failures": 0, "censored_tails": 0,
                   "n_paths": 0, "diagnostics": []} for fac in factors}
    target = n_cycles

    for batch in range(max_batches):
        offset = batch * paths_per_batch
        res = sde.simulate(env, icfg, horizon, paths_per_batch,
                           accumulators=accs, keep_series=True,
                           keep_x_series=env.dim > 1, path_offset=offset,
                           series_dtype=series_dtype)
        for i in range(paths_per_batch):
            pid = offset + i
            s = res.series["s1"][i]
            A = res.series["A"][i] if accs else np.zeros(nt + 1)
            W1 = res.series["W1"][i]
            X = res.series["X"][i] if env.dim > 1 else None
            ybit = lambda t, _pid=pid: rng.bernoulli(
                seed, (_pid << 24) | t, cfg.delta or 0.5)
            for fac in factors:
                recs, diags, st = _skeleton_path(
                    s, A, W1, h, lam, RL, nb, int(round(fac)) * nb,
                    cfg.mode, cfg.delta, ybit, X=X)
                pools[fac].extend(recs)
                stats[fac]["candidates"] += st["candidates"]
                stats[fac]["failures"] += st["failures"]
                stats[fac]["censored_tails"] += int(st["censored_tail"])
                stats[fac]["n_paths"] += 1
                stats[fac]["diagnostics"].extend(diags)
        if all(sum(not r.is_first for r in pools[fac]) >= target
               for fac in factors):
            break
    else:
        raise BudgetExhausted(
            f"collected {min(len(p) for p in pools.values())} cycles "
            f"in {max_batches} batches, wanted {n_cycles}")

    for fac in factors:
        stats[fac]["step"] = h
        stats[fac]["horizon"] = horizon
        stats[fac]["R_lam"] = RL
    if h_cens_factors:
        return {fac: (pools[fac], stats[fac]) for fac in factors}
    return pools[factors[0]], stats[factors[0]]


def ratio_estimate(records, which: str,
                   ell: Optional[float] = None) -> EstimateWithCI:
    """Ratio-of-means estimators over the i.i.d. cycle pool (k >= 2).

    which: "nu_f"           mean(dA + dW1) / mean(dt)
           "ell"            mean(dX1) / mean(dt)
           "sigma_lambda"   mean((dX1 - dt ell)^2) / mean(dt)
           "sigma_lambda_f" the same for the companion coordinate
    """
    pool = [r for r in records if not r.is_first]
    if len(pool) < 30:
        raise TooFewCycles(f"need >= 30 cycles in the pool, have {len(pool)}")
    dt = np.array([r.dt for r in pool])
    if which == "nu_f":
        num = np.array([r.dA + r.dW1 for r in pool])
    elif which == "ell":
        num = np.array([r.dX1 for r in pool])
    elif which == "sigma_lambda":
        if ell is None:
            ell = float(np.array([r.dX1 for r in pool]).mean() / dt.mean())
        num = (np.array([r.dX1 for r in pool]) - dt * ell) ** 2
    elif which == "sigma_lambda_f":
        comp = np.array([r.dA + r.dW1 for r in pool])
        nu = float(comp.mean() / dt.mean())
        num = (comp - dt * nu) ** 2
    else:
        raise ValueError(f"unknown estimand {which!r}")
    return ratio_of_means(num, dt)


def records_to_csv(records, path: str) -> None:
    """Write cycles as CSV: k, dt, dA, dW1, dX_1..dX_d, censored."""
    d = len(records[0].dX) if records else 1
    xcols = ",".join(f"dX_{j + 1}" for j in range(d))
    with open(path, "w") as fh:
        fh.write(f"k,dt,dA,dW1,{xcols},censored\n")
        for r in records:
            xs = ",".join(f"{v:.12g}" for v in r.dX)
            fh.write(f"{r.k},{r.dt:.12g},{r.dA:.12g},{r.dW1:.12g},{xs},"
                     f"{int(r.censored)}\n")
