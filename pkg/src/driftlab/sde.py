"""Path simulation for the forced diffusion dX = b dt + lam a e1 dt + sigma dW.

One vectorized stepping core serves three consumers: full single-path
records, memory-light ensemble summaries for the estimators, and per-step
scalar series for the regeneration skeleton.  Alongside X the core tracks
an independent companion Brownian coordinate W1, trapezoid-accumulated
additive functionals A_f, the exponential-martingale integrand Bbar with
its bracket, and the running forward maximum of e1.(X - X(0)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import rng
from .environment import Environment, FunctionalSpec
from .errors import NonFinite, OffGrid

_BLOCK = 4096

# accumulator sentinel: reuse the drift component e1.b already evaluated
# by the stepper instead of a second coefficient evaluation
DRIFT_B1 = "b1"

Accumulator = Union[str, Callable[[np.ndarray], np.ndarray]]


def default_step(lam: float) -> float:
    """Step-size rule resolving the lam^-2 regeneration timescale."""
    return min(1e-2, lam * lam / 10.0) if lam > 0 else 1e-2


@dataclass
class IntegratorConfig:
    step: float
    seed: int
    lam: float = 0.0
    scheme: str = "euler"  # "euler" | "milstein1d"
    direction: Optional[np.ndarray] = None  # defaults to e1

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.scheme not in ("euler", "milstein1d"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.direction is not None:
            v = np.asarray(self.direction, dtype=float)
            n = np.linalg.norm(v)
            if not math.isclose(n, 1.0, rel_tol=1e-12):
                raise ValueError("direction must be a unit vector")
            self.direction = v


@dataclass
class PathRecord:
    """A fully recorded trajectory on a uniform time grid."""

    times: np.ndarray
    X: np.ndarray            # (nt+1, d)
    Afun: np.ndarray         # (nt+1,)
    W1: np.ndarray           # (nt+1,)
    Bbar: np.ndarray         # (nt+1,)
    Bbracket: np.ndarray     # (nt+1,)
    running_max: np.ndarray  # (nt+1,)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def index_of(self, t: float) -> int:
        h = self.step
        i = int(round(t / h))
        if i < 0 or i >= len(self.times) or abs(i * h - t) > 1e-9 * max(1.0, t):
            raise OffGrid(f"time {t} not on the grid (step {h})")
        return i


@dataclass
class GirsanovWeight:
    logw: float

    @property
    def weight(self) -> float:
        return math.exp(self.logw)


@dataclass
class EnsembleResult:
    """Summaries of n independent paths integrated with shared code."""

    horizon: float
    step: float
    X_end: np.ndarray          # (P, d)
    A_end: np.ndarray          # (P, n_acc)
    W1_end: np.ndarray         # (P,)
    Bbar_end: np.ndarray       # (P,)
    Bbracket_end: np.ndarray   # (P,)
    max_abs_A: Optional[np.ndarray] = None   # (P, n_acc)
    snapshots: Optional[dict] = None         # t -> dict(A, X, W1)
    series: Optional[dict] = None            # "s1"/"A"/"W1" -> (P, nt+1)
    running_max_end: Optional[np.ndarray] = None  # (P,)


def _acc_values(accumulators, x, b1):
    cols = []
    for acc in accumulators:
        if acc == DRIFT_B1:
            cols.append(b1)
        else:
            cols.append(np.asarray(acc(x), dtype=float))
    if not cols:
        return None
    return np.stack(cols, axis=1)  # (P, n_acc)


def simulate(env: Environment, cfg: IntegratorConfig, horizon: float,
             n_paths: int, accumulators: Sequence[Accumulator] = (),
             snap_times: Sequence[float] = (), track_sup: bool = False,
             keep_series: bool = False, keep_x_series: bool = False,
             keep_bbar_series: bool = False, series_dtype=np.float64,
             trapezoid: bool = True,
             path_offset: int = 0) -> EnsembleResult:
    """Integrate n_paths independent paths from the origin.

    Path i draws its noise from the counter-based stream
    (cfg.seed, path_offset + i); results are independent of n_paths
    batching and of execution order.
    """
    h = cfg.step
    if horizon < h:
        raise ValueError("horizon must cover at least one step")
    nt = int(round(horizon / h))
    d = env.dim
    P = n_paths
    lam = cfg.lam
    e1 = cfg.direction if cfg.direction is not None else np.eye(d)[0]
    one_d = (d == 1) and (cfg.direction is None or abs(e1[0] - 1.0) < 1e-15)
    sqh = math.sqrt(h)

    gens = [rng.stream(cfg.seed, rng.TAG_PATH, path_offset + i) for i in range(P)]
    snap_idx = {}
    for t in snap_times:
        i = int(round(t / h))
        if abs(i * h - t) > 1e-9 * max(1.0, t) or i > nt:
            raise OffGrid(f"snapshot time {t} not on the grid")
        snap_idx[i] = t

    X = np.zeros((P, d))
    A = np.zeros((P, max(len(accumulators), 1)))
    n_acc = len(accumulators)
    W1 = np.zeros(P)
    Bbar = np.zeros(P)
    Bbracket = np.zeros(P)
    Mmax = np.zeros(P)
    supA = np.zeros((P, max(n_acc, 1))) if track_sup else None
    snapshots: dict = {}
    series = None
    if keep_series:
        dt_ = series_dtype
        series = {"s1": np.zeros((P, nt + 1), dt_), "A": np.zeros((P, nt + 1), dt_),
                  "W1": np.zeros((P, nt + 1), dt_)}
        if keep_x_series:
            series["X"] = np.zeros((P, nt + 1, d), dt_)
        if keep_bbar_series:
            series["Bbar"] = np.zeros((P, nt + 1), dt_)
            series["Bbracket"] = np.zeros((P, nt + 1), dt_)

    vals_prev = None
    noise = None
    # cap the pregenerated-noise buffer at ~0.5 GB regardless of width
    block = max(64, min(_BLOCK, (1 << 26) // max(P * (d + 1), 1)))
    pos = block  # exhausted

    milstein = cfg.scheme == "milstein1d" and one_d

    for k in range(nt + 1):
        a, b = env.a_and_b(X)
        if one_d:
            a1 = a[:, 0, 0]
            b1 = b[:, 0]
        else:
            b1 = b @ e1
        vals = _acc_values(accumulators, X, b1)
        if k > 0 and vals is not None:
            if trapezoid:
                A[:, :n_acc] += (0.5 * h) * (vals_prev + vals)
            else:
                A[:, :n_acc] += h * vals_prev  # non-anticipating quadrature
            if track_sup:
                np.maximum(supA, np.abs(A), out=supA)
        vals_prev = vals
        if k in snap_idx:
            snapshots[snap_idx[k]] = {"A": A[:, :n_acc].copy(), "X": X.copy(),
                                      "W1": W1.copy()}
        if keep_series:
            series["s1"][:, k] = X @ e1
            series["A"][:, k] = A[:, 0]
            series["W1"][:, k] = W1
            if keep_x_series:
                series["X"][:, k] = X
            if keep_bbar_series:
                series["Bbar"][:, k] = Bbar
                series["Bbracket"][:, k] = Bbracket
        if k == nt:
            break

        if pos >= block:
            take = min(block, nt - k)
            noise = np.empty((P, take, d + 1))
            for i, g in enumerate(gens):
                noise[i] = g.standard_normal((take, d + 1))
            noise *= sqh
            pos = 0
            if not np.isfinite(X).all():
                raise NonFinite("path state became non-finite; reduce the step")
        dW = noise[:, pos, :d]
        dW1 = noise[:, pos, d]
        pos += 1

        if one_d:
            sig = np.sqrt(a1)
            dx = (b1 + lam * a1) * h + sig * dW[:, 0]
            if milstein:
                dx += 0.5 * b1 * (dW[:, 0] ** 2 - h)
            X[:, 0] += dx
            Bbar += sig * dW[:, 0]
            Bbracket += a1 * h
        else:
            sig = _sqrtm(a)
            ae1 = a @ e1
            X += (b + lam * ae1) * h + np.einsum("pij,pj->pi", sig, dW)
            sige1 = sig @ e1
            Bbar += np.einsum("pi,pi->p", sige1, dW)
            Bbracket += np.einsum("pi,pi->p", sige1, sige1) * h
        W1 += dW1
        np.maximum(Mmax, X @ e1, out=Mmax)

    if not np.isfinite(X).all() or not np.isfinite(A).all():
        raise NonFinite("path state became non-finite; reduce the step")

    res = EnsembleResult(
        horizon=nt * h, step=h, X_end=X, A_end=A[:, :n_acc],
        W1_end=W1, Bbar_end=Bbar, Bbracket_end=Bbracket,
        max_abs_A=supA[:, :n_acc] if track_sup else None,
        snapshots=snapshots or None, series=series, running_max_end=Mmax)
    return res


def _sqrtm(a: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    if d == 1:
        return np.sqrt(a)
    if d == 2:
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        s = np.sqrt(det)
        t = np.sqrt(a[:, 0, 0] + a[:, 1, 1] + 2.0 * s)
        out = a.copy()
        out[:, 0, 0] += s
        out[:, 1, 1] += s
        return out / t[:, None, None]
    vals, vecs = np.linalg.eigh(a)
    return np.einsum("nij,nj,nkj->nik", vecs, np.sqrt(vals), vecs)


def _functional_accumulator(env: Environment, f: Optional[FunctionalSpec]):
    if f is None or f.name == "zero":
        return []
    if f.name == "drift_component":
        return [DRIFT_B1]
    return [lambda x: f.div_F(x)]


def integrate(env: Environment, f: Optional[FunctionalSpec],
              cfg: IntegratorConfig, horizon: float,
              path_index: int = 0) -> PathRecord:
    """Single fully recorded path (all per-grid-point state retained)."""
    accs = _functional_accumulator(env, f)
    res = simulate(env, cfg, horizon, 1, accumulators=accs,
                   keep_series=True, keep_x_series=True, keep_bbar_series=True,
                   path_offset=path_index)
    nt = int(round(res.horizon / res.step))
    times = np.arange(nt + 1) * res.step
    s1 = res.series["s1"][0]
    Afun = res.series["A"][0] if accs else np.zeros(nt + 1)
    return PathRecord(times=times, X=res.series["X"][0], Afun=Afun,
                      W1=res.series["W1"][0], Bbar=res.series["Bbar"][0],
                      Bbracket=res.series["Bbracket"][0],
                      running_max=np.maximum.accumulate(s1))


def weight(path: PathRecord, lam: float, t: float) -> GirsanovWeight:
    """Girsanov reweighting factor exp(lam Bbar - lam^2/2 <Bbar>) at time t."""
    i = path.index_of(t)
    logw = lam * path.Bbar[i] - 0.5 * lam * lam * path.Bbracket[i]
    if not math.isfinite(logw):
        raise NonFinite("non-finite Girsanov exponent")
    return GirsanovWeight(logw=logw)


def bbar_decomposition_check(path: PathRecord, env: Environment,
                             direction: Optional[np.ndarray] = None) -> float:
    """Max deviation of Bbar from e1.(X - X0) - int e1.b along the path."""
    e1 = direction if direction is not None else np.eye(env.dim)[0]
    b = env.a_and_b(path.X)[1] @ e1
    h = path.step
    drift_int = np.concatenate([[0.0], np.cumsum(0.5 * h * (b[:-1] + b[1:]))])
    s1 = (path.X - path.X[0]) @ e1
    return float(np.abs(path.Bbar - (s1 - drift_int)).max())
