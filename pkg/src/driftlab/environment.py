"""Coefficient-field environments: periodic, random-bump and constant media.

An environment is an immutable realization of a diffusion matrix field
a(x) = sigma(x) sigma(x)^T on R^d together with the drift b(x) = 1/2 div a(x).
Derivatives are analytic; no automatic differentiation is used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .errors import BadCoefficients, EllipticityViolation, NotCentered, UnboundedF

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# trigonometric coefficient tables (periodic environments)
# ---------------------------------------------------------------------------

def _normalize_table(table) -> dict:
    """Validate and canonicalize one scalar trig-polynomial table.

    A table is {"const": c, "terms": [[kvec, cos_amp, sin_amp], ...]}.
    For dim 1 a bare number means a constant field, and each kvec may be a
    bare integer.
    """
    if isinstance(table, (int, float)):
        return {"const": float(table), "terms": []}
    if isinstance(table, dict) and "inverse" in table:
        return {"inverse": _normalize_table(table["inverse"])}
    if not isinstance(table, dict) or "const" not in table:
        raise BadCoefficients(f"expected number or dict with 'const': {table!r}")
    terms = []
    for term in table.get("terms", []):
        try:
            kvec, ca, sa = term
        except (TypeError, ValueError) as exc:
            raise BadCoefficients(f"malformed term {term!r}") from exc
        if isinstance(kvec, (int, float)):
            kvec = (int(kvec),)
        kvec = tuple(int(k) for k in kvec)
        terms.append([list(kvec), float(ca), float(sa)])
    return {"const": float(table["const"]), "terms": terms}


class _TrigPoly:
    """Scalar trigonometric polynomial on the unit torus with analytic gradient."""

    def __new__(cls, table, dim: int):
        table = _normalize_table(table)
        if cls is _TrigPoly and "inverse" in table:
            return _RecipPoly(table, dim)
        return super().__new__(cls)

    def __init__(self, table: dict, dim: int):
        table = _normalize_table(table)
        if "inverse" in table:
            return  # handled by _RecipPoly
        self.table = table
        self.const = table["const"]
        ks, cas, sas = [], [], []
        for kvec, ca, sa in table["terms"]:
            if len(kvec) != dim:
                raise BadCoefficients(
                    f"wavevector {kvec} has wrong length for dim {dim}")
            ks.append(kvec)
            cas.append(ca)
            sas.append(sa)
        self.k = np.asarray(ks, dtype=float).reshape(len(ks), dim)
        self.ca = np.asarray(cas, dtype=float)
        self.sa = np.asarray(sas, dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        # x: (n, d) -> (n,)
        if self.k.size == 0:
            return np.full(x.shape[0], self.const)
        phase = TWO_PI * (x @ self.k.T)
        return self.const + np.cos(phase) @ self.ca + np.sin(phase) @ self.sa

    def grad(self, x: np.ndarray) -> np.ndarray:
        # (n, d)
        if self.k.size == 0:
            return np.zeros_like(x)
        phase = TWO_PI * (x @ self.k.T)
        coef = -np.sin(phase) * self.ca + np.cos(phase) * self.sa  # (n, m)
        return TWO_PI * (coef @ self.k)


class _RecipPoly(_TrigPoly):
    """Pointwise reciprocal of a trig polynomial, with analytic gradient."""

    def __init__(self, table: dict, dim: int):
        self.table = _normalize_table(table)
        self.base = _TrigPoly(self.table["inverse"], dim)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return 1.0 / self.base(x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        v = self.base(x)
        return -self.base.grad(x) / (v * v)[:, None]


def _sqrtm_spd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a batch (n, d, d) of SPD matrices, d <= 2 closed form."""
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


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipticityBounds:
    """Ellipticity constant kappa: eigenvalues of a lie in [kappa, 1/kappa]."""

    kappa: float

    def __post_init__(self):
        if not (0.0 < self.kappa <= 1.0):
            raise EllipticityViolation(f"kappa must be in (0, 1], got {self.kappa}")


@dataclass
class Environment:
    """Immutable realization of (sigma, a, b) on R^d.

    ``range`` is the dependence range of the field: evaluations at points
    farther apart are independent by construction (infinity for periodic
    and constant media).
    """

    dim: int
    kind: str  # "periodic" | "random_bumps" | "constant"
    params: dict
    range: float
    bounds: EllipticityBounds
    seed: Optional[int] = None
    _impl: object = field(default=None, repr=False, compare=False)

    def eval_batch(self, x: np.ndarray):
        """Evaluate at points x of shape (n, d).

        Returns (sigma, a, b) with shapes (n, d, d), (n, d, d), (n, d).
        a is computed as sigma @ sigma^T exactly.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b = self._impl.a_and_b(x)
        sigma = _sqrtm_spd(a)
        a_exact = sigma @ np.swapaxes(sigma, 1, 2)
        return sigma, a_exact, b

    def eval(self, x):
        """Point evaluation; returns (sigma (d,d), a (d,d), b (d,))."""
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        sigma, a, b = self.eval_batch(x)
        return sigma[0], a[0], b[0]

    # lighter accessors used by the integrator and the PDE solver
    def a_and_b(self, x: np.ndarray):
        return self._impl.a_and_b(np.atleast_2d(np.asarray(x, dtype=float)))

    def to_config(self) -> dict:
        """Serializable description; round-trips byte-identically via JSON params."""
        cfg = {
            "kind": self.kind,
            "dim": str(self.dim),
            "params": json.dumps(self.params, sort_keys=True, separators=(",", ":")),
        }
        if self.seed is not None:
            cfg["seed"] = str(self.seed)
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "Environment":
        kind = cfg["kind"]
        dim = int(cfg["dim"])
        params = json.loads(cfg["params"])
        if kind == "periodic":
            return make_periodic(dim, params["coeffs"])
        if kind == "random_bumps":
            return make_random_bumps(
                dim,
                intensity=params["intensity"],
                bump_radius=params["bump_radius"],
                amplitude=params["amplitude"],
                base=params["base"],
                seed=int(cfg["seed"]),
            )
        if kind == "constant":
            return make_constant(dim, params["a"])
        raise BadCoefficients(f"unknown environment kind {kind!r}")


@dataclass
class FunctionalSpec:
    """A local observable f = div F with bounded analytic F."""

    F: Callable[[np.ndarray], np.ndarray]         # (n,d) -> (n,d)
    div_F: Callable[[np.ndarray], np.ndarray]     # (n,d) -> (n,)
    locality_radius: float
    sup_norm: float
    centered: bool
    name: str = "custom"

    def f(self, x: np.ndarray) -> np.ndarray:
        return self.div_F(np.atleast_2d(np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# kind-specific implementations
# ---------------------------------------------------------------------------

class _PeriodicImpl:
    def __init__(self, dim: int, tables: list[_TrigPoly]):
        self.dim = dim
        self.tables = tables  # upper-triangular entries, row major

    def _entries(self):
        # pairs (i, j) matching self.tables ordering
        return [(i, j) for i in range(self.dim) for j in range(i, self.dim)]

    def a_and_b(self, x: np.ndarray):
        n, d = x.shape
        a = np.empty((n, d, d))
        b = np.zeros((n, d))
        for (i, j), poly in zip(self._entries(), self.tables):
            v = poly(x)
            g = poly.grad(x)
            a[:, i, j] = v
            a[:, j, i] = v
            # b_i = 1/2 sum_j d_j a_ij
            b[:, i] += 0.5 * g[:, j]
            if i != j:
                b[:, j] += 0.5 * g[:, i]
        return a, b


class _ConstantImpl:
    def __init__(self, a: np.ndarray):
        self.a0 = a

    def a_and_b(self, x: np.ndarray):
        n, d = x.shape
        a = np.broadcast_to(self.a0, (n, d, d)).copy()
        return a, np.zeros((n, d))


class _BumpImpl1D:
    """1-D Poisson bump field with a sorted lazy cache over covered cells."""

    def __init__(self, intensity, bump_radius, amplitude, base, seed):
        self.intensity = intensity
        self.r = bump_radius
        self.amplitude = amplitude
        self.base = base
        self.seed = seed
        self.cell = bump_radius  # cell size; candidates live in offsets -1..1
        self.clo = 0
        self.chi = 0  # covered cells are [clo, chi)
        self.pos = np.empty(0)
        self.weight = np.empty(0)
        self.ids = np.empty(0, dtype=np.int64)

    def _gen_cell(self, c: int):
        g = rng.stream(self.seed, rng.TAG_BUMP, c)
        count = g.poisson(self.intensity * self.cell)
        pos = c * self.cell + self.cell * np.sort(g.random(count))
        weight = self.amplitude * g.random(count)
        ids = (np.int64(c) << 20) + np.arange(count, dtype=np.int64)
        return pos, weight, ids

    def _cover(self, xmin: float, xmax: float):
        lo = math.floor((xmin - self.r) / self.cell)
        hi = math.floor((xmax + self.r) / self.cell) + 1
        if self.clo == self.chi:  # empty cache
            self.clo, self.chi = lo, lo
        if lo < self.clo:
            cells = range(lo, self.clo)
            parts = [self._gen_cell(c) for c in cells]
            self.pos = np.concatenate([p for p, _, _ in parts] + [self.pos])
            self.weight = np.concatenate([w for _, w, _ in parts] + [self.weight])
            self.ids = np.concatenate([i for _, _, i in parts] + [self.ids])
            self.clo = lo
        if hi > self.chi:
            cells = range(self.chi, hi)
            parts = [self._gen_cell(c) for c in cells]
            self.pos = np.concatenate([self.pos] + [p for p, _, _ in parts])
            self.weight = np.concatenate([self.weight] + [w for _, w, _ in parts])
            self.ids = np.concatenate([self.ids] + [i for _, _, i in parts])
            self.chi = hi

    def _gather(self, x1: np.ndarray):
        self._cover(float(x1.min()), float(x1.max()))
        lo = np.searchsorted(self.pos, x1 - self.r)
        hi = np.searchsorted(self.pos, x1 + self.r)
        kmax = int((hi - lo).max(initial=0))
        if kmax == 0:
            return None
        idx = lo[:, None] + np.arange(kmax)[None, :]
        valid = idx < hi[:, None]
        idx = np.minimum(idx, len(self.pos) - 1)
        u = (x1[:, None] - self.pos[idx]) / self.r
        mask = valid & (np.abs(u) < 1.0)
        return idx, u, mask

    def a_and_b(self, x: np.ndarray):
        n = x.shape[0]
        x1 = x[:, 0]
        a = np.full(n, self.base)
        b = np.zeros(n)
        got = self._gather(x1)
        if got is not None:
            idx, u, mask = got
            s = np.where(mask, 1.0 - u * u, 0.0)
            w = self.weight[idx]
            a += (w * s**3).sum(axis=1)
            b += 0.5 * (w * (-6.0 * u * s * s) / self.r).sum(axis=1)
        return a.reshape(n, 1, 1), b.reshape(n, 1)

    def bump_ids(self, xpt: float):
        """Indices of bumps whose support contains xpt (test instrumentation)."""
        got = self._gather(np.asarray([xpt], dtype=float))
        if got is None:
            return set()
        idx, _, mask = got
        return set(self.ids[idx[mask]].tolist())


class _BumpImplND:
    """Generic d-dimensional Poisson bump field with a per-cell dict cache."""

    def __init__(self, dim, intensity, bump_radius, amplitude, base, seed):
        self.dim = dim
        self.intensity = intensity
        self.r = bump_radius
        self.amplitude = amplitude
        self.base = base
        self.seed = seed
        self.cell = bump_radius
        self.cache: dict[tuple, tuple] = {}

    def _cell_key(self, cidx: tuple) -> int:
        k = 0
        for c in cidx:
            k = rng.mix64(k ^ rng.mix64(int(c) & rng.MASK64))
        return k

    def _get_cell(self, cidx: tuple):
        got = self.cache.get(cidx)
        if got is None:
            g = rng.stream(self.seed, rng.TAG_BUMP, self._cell_key(cidx))
            count = g.poisson(self.intensity * self.cell**self.dim)
            pos = (np.asarray(cidx, dtype=float) + g.random((count, self.dim))) * self.cell
            v = g.standard_normal((count, self.dim))
            v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
            w = self.amplitude * g.random(count)
            mats = w[:, None, None] * v[:, :, None] * v[:, None, :]
            got = (pos, mats, cidx)
            self.cache[cidx] = got
        return got

    def a_and_b(self, x: np.ndarray):
        n, d = x.shape
        a = np.tile(self.base * np.eye(d), (n, 1, 1))
        b = np.zeros((n, d))
        offsets = np.stack(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij"),
                           axis=-1).reshape(-1, d)
        base_cells = np.floor(x / self.cell).astype(np.int64)
        for i in range(n):
            for off in offsets:
                pos, mats, _ = self._get_cell(tuple(base_cells[i] + off))
                if len(pos) == 0:
                    continue
                u = (x[i] - pos) / self.r
                r2 = (u * u).sum(axis=1)
                sel = r2 < 1.0
                if not sel.any():
                    continue
                s = 1.0 - r2[sel]
                phi = s**3
                grad = (-6.0 * s * s)[:, None] * u[sel] / self.r  # d phi / dx
                a[i] += np.einsum("m,mjk->jk", phi, mats[sel])
                b[i] += 0.5 * np.einsum("mjk,mk->j", mats[sel], grad)
        return a, b


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _sample_points(dim: int, n: int, seed: int = 0) -> np.ndarray:
    g = rng.stream(seed, 0xA5A5A5A5)
    return g.random((n, dim)) * 4.0 - 2.0


def _estimate_bounds(impl, dim: int, pts: np.ndarray) -> EllipticityBounds:
    a, _ = impl.a_and_b(pts)
    if dim == 1:
        lo = float(a.min())
        hi = float(a.max())
    else:
        vals = np.linalg.eigvalsh(a)
        lo = float(vals.min())
        hi = float(vals.max())
    if lo <= 0.0 or not np.isfinite(hi):
        raise EllipticityViolation(
            f"sampled eigenvalues leave (0, inf): min={lo}, max={hi}")
    return EllipticityBounds(kappa=min(lo, 1.0 / hi, 1.0))


def make_periodic(dim: int, coeff_table) -> Environment:
    """Periodic environment from trig-polynomial tables for a(x).

    For dim 1, ``coeff_table`` is a single scalar table for a(x).  For dim 2
    it is a dict with keys "a11", "a12", "a22" (missing "a12" means zero).
    """
    if dim not in (1, 2):
        raise BadCoefficients("periodic environments support dim 1 or 2")
    if dim == 1:
        tables = [_TrigPoly(coeff_table, 1)]
        params = {"coeffs": _normalize_table(coeff_table)}
    else:
        if not isinstance(coeff_table, dict):
            raise BadCoefficients("dim-2 coefficient table must be a dict")
        entries = {}
        for key in ("a11", "a12", "a22"):
            entries[key] = coeff_table.get(key, 0.0 if key == "a12" else None)
            if entries[key] is None:
                raise BadCoefficients(f"missing entry {key}")
        tables = [_TrigPoly(entries["a11"], 2),
                  _TrigPoly(entries["a12"], 2),
                  _TrigPoly(entries["a22"], 2)]
        params = {"coeffs": {k: _normalize_table(v) for k, v in entries.items()}}
    impl = _PeriodicImpl(dim, tables)
    # dense torus sampling for the ellipticity band
    if dim == 1:
        pts = np.linspace(0.0, 1.0, 2048, endpoint=False).reshape(-1, 1)
    else:
        g = np.linspace(0.0, 1.0, 96, endpoint=False)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    bounds = _estimate_bounds(impl, dim, pts)
    return Environment(dim=dim, kind="periodic", params=params,
                       range=math.inf, bounds=bounds, seed=None, _impl=impl)


def make_constant(dim: int, a) -> Environment:
    a0 = np.asarray(a, dtype=float)
    if a0.ndim == 0:
        a0 = float(a0) * np.eye(dim)
    if a0.shape != (dim, dim):
        raise BadCoefficients(f"constant a must be scalar or ({dim},{dim})")
    a0 = 0.5 * (a0 + a0.T)
    vals = np.linalg.eigvalsh(a0)
    if vals.min() <= 0:
        raise EllipticityViolation("constant a is not positive definite")
    bounds = EllipticityBounds(kappa=min(float(vals.min()), 1.0 / float(vals.max()), 1.0))
    return Environment(dim=dim, kind="constant", params={"a": a0.tolist()},
                       range=0.0, bounds=bounds, seed=None, _impl=_ConstantImpl(a0))


def make_random_bumps(dim: int, intensity: float, bump_radius: float,
                      amplitude: float, base: float, seed: int) -> Environment:
    """Poisson superposition of compactly supported C^2 bumps over base*I.

    a(x) = base*I + sum_j w_j (1 - |x-p_j|^2/r^2)^3 V_j with V_j PSD of norm
    <= amplitude; the dependence range is 2*bump_radius.
    """
    if base <= 0.0:
        raise EllipticityViolation("base must be positive")
    if amplitude < 0.0 or bump_radius <= 0.0 or intensity < 0.0:
        raise EllipticityViolation("intensity, bump_radius must be > 0 and amplitude >= 0")
    if dim == 1:
        impl = _BumpImpl1D(intensity, bump_radius, amplitude, base, seed)
    else:
        impl = _BumpImplND(dim, intensity, bump_radius, amplitude, base, seed)
    pts = _sample_points(dim, 4096, seed=seed)
    bounds = _estimate_bounds(impl, dim, pts)
    params = {"intensity": intensity, "bump_radius": bump_radius,
              "amplitude": amplitude, "base": base}
    return Environment(dim=dim, kind="random_bumps", params=params,
                       range=2.0 * bump_radius, bounds=bounds, seed=seed, _impl=impl)


def regen_range(env: Environment) -> float:
    """Dependence range used by the regeneration skeleton.

    Periodic and constant media have no finite dependence range; the torus
    period (1) is used as the effective correlation scale there.
    """
    return env.range if math.isfinite(env.range) and env.range > 0 else 1.0


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------

def make_functional(env: Environment, kind: str, params: Optional[dict] = None,
                    ) -> FunctionalSpec:
    """Build a local observable f = div F for an environment.

    kind "drift_component": F = a e1 / 2, so f = b . e1 (the canonical
    bounded-local example).  kind "custom": params must provide analytic
    callables F and div_F plus sup_norm and locality_radius.
    """
    params = params or {}
    if kind in ("drift_component", "DriftComponent"):
        def F(x):
            _, a, _ = _split_ab(env, x)
            return 0.5 * a[:, :, 0]

        def div_F(x):
            b = env.a_and_b(x)[1]
            return b[:, 0]

        pts = _sample_points(env.dim, 4096, seed=env.seed or 0)
        sup = float(np.linalg.norm(F(pts), axis=1).max()) * 1.0000001
        spec = FunctionalSpec(F=F, div_F=div_F,
                              locality_radius=regen_range(env),
                              sup_norm=sup, centered=True,
                              name="drift_component")
    elif kind in ("custom", "Custom"):
        spec = FunctionalSpec(
            F=params["F"], div_F=params["div_F"],
            locality_radius=float(params.get("locality_radius", regen_range(env))),
            sup_norm=float(params["sup_norm"]),
            centered=bool(params.get("centered", True)),
            name=params.get("name", "custom"))
        pts = _sample_points(env.dim, 2048, seed=env.seed or 0)
        vals = np.linalg.norm(np.atleast_2d(spec.F(pts)), axis=1)
        if vals.max() > spec.sup_norm * (1 + 1e-9):
            raise UnboundedF(
                f"|F| reaches {vals.max()} > declared sup_norm {spec.sup_norm}")
    else:
        raise BadCoefficients(f"unknown functional kind {kind!r}")

    if env.kind == "periodic" and spec.centered:
        xs = _torus_grid(env.dim, 256)
        mean = float(spec.f(xs).mean())
        if abs(mean) > 1e-8:
            raise NotCentered(f"torus mean of f is {mean}, expected 0")
    return spec


def zero_functional(env: Environment) -> FunctionalSpec:
    """The f = 0 observable (F = 0)."""
    return FunctionalSpec(
        F=lambda x: np.zeros_like(np.atleast_2d(x)),
        div_F=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        locality_radius=regen_range(env), sup_norm=0.0, centered=True,
        name="zero")


def _split_ab(env: Environment, x):
    a, b = env.a_and_b(x)
    return None, a, b


def _torus_grid(dim: int, n: int) -> np.ndarray:
    g = (np.arange(n) + 0.5) / n
    if dim == 1:
        return g.reshape(-1, 1)
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, dim)
