"""Deterministic periodic-cell solver: invariant density, corrector and
effective coefficients on the unit torus.

Discretization is piecewise-(multi)linear finite elements on a uniform
periodic grid with two-point Gauss quadrature per axis.  Because every
bilinear form and every load below is evaluated with the *same* quadrature
and the same discrete gradients, the integration-by-parts identities of
the continuum problem (the two expressions for the effective variance, the
equality of the drift-response and corrector pairings) hold to solver
precision on the grid, not merely in the h->0 limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid, trapezoid

from .environment import Environment, FunctionalSpec
from .errors import NotCentered, SolverDiverged

_GAUSS = 0.5 / math.sqrt(3.0)  # offsets +-_GAUSS around cell midpoints


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid with n nodes per axis."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError("n must be a power of two >= 16")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.n ** self.dim

    def nodes(self) -> np.ndarray:
        g = np.arange(self.n) / self.n
        if self.dim == 1:
            return g.reshape(-1, 1)
        return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass
class TorusSolution:
    """Bundle of discrete fields and derived effective quantities."""

    grid: TorusGrid
    f_lambda: np.ndarray
    chi1: np.ndarray
    u_f: Optional[np.ndarray]
    sigma1: float
    ell: np.ndarray


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

class _Assembly:
    """Stiffness/advection matrices and quadrature data for one (env, grid).

    K[i,j]  = int grad(phi_i) . a grad(phi_j)
    G[i,j]  = int grad(phi_i) . (a e1) phi_j
    g       = G @ 1  (load of the corrector problem)
    m       = mass vector, m[i] = int phi_i
    A0      = int e1 . a e1
    """

    def __init__(self, env: Environment, grid: TorusGrid):
        self.env = env
        self.grid = grid
        d, n, h = grid.dim, grid.n, grid.h

        if d == 1:
            conn = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
            xi = np.array([0.5 - _GAUSS, 0.5 + _GAUSS])
            phi = np.stack([1.0 - xi, xi], axis=1)            # (q, 2)
            gphi = np.tile(np.array([[-1.0, 1.0]]) / h, (2, 1))[:, :, None]  # (q,2,1)
            mids = (np.arange(n) + 0.5) * h
            xq = (mids[:, None] + (xi[None, :] - 0.5) * h).reshape(-1, 1)
            wq = np.full(2 * n, h / 2.0)
        else:
            ij = np.arange(n)
            ii, jj = np.meshgrid(ij, ij, indexing="ij")
            node = lambda a, b: ((a % n) * n + (b % n)).ravel()
            conn = np.stack([node(ii, jj), node(ii + 1, jj),
                             node(ii, jj + 1), node(ii + 1, jj + 1)], axis=1)
            pts1 = np.array([0.5 - _GAUSS, 0.5 + _GAUSS])
            xi, eta = np.meshgrid(pts1, pts1, indexing="ij")
            xi, eta = xi.ravel(), eta.ravel()                 # 4 points
            phi = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta),
                            (1 - xi) * eta, xi * eta], axis=1)  # (4, 4)
            dxi = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=1) / h
            deta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=1) / h
            gphi = np.stack([dxi, deta], axis=2)              # (4, 4nodes, 2)
            corners = np.stack([ii.ravel(), jj.ravel()], axis=1) * h  # (ncell, 2)
            loc = np.stack([xi, eta], axis=1) * h                      # (4, 2)
            xq = (corners[:, None, :] + loc[None, :, :]).reshape(-1, 2)
            wq = np.full(4 * n * n, h * h / 4.0)

        a_q, b_q = env.a_and_b(xq)
        ncell = conn.shape[0]
        nq = phi.shape[0]
        a_q = a_q.reshape(ncell, nq, d, d)
        self.b_q = b_q.reshape(ncell, nq, d)
        self.xq = xq
        self.wq_cell = wq.reshape(ncell, nq)
        self.conn = conn
        self.phi = phi
        self.gphi = gphi

        # element matrices via quadrature, identical data for K and G
        w = self.wq_cell
        ag = np.einsum("cqde,qje->cqjd", a_q, gphi)  # a(x_q) grad(phi_j)
        ke = np.einsum("cq,qid,cqjd->cij", w, gphi, ag)
        ae1 = a_q[:, :, :, 0]                        # column a e1, (c, q, d)
        ge = np.einsum("cq,qid,cqd,qj->cij", w, gphi, ae1, phi)

        rows = np.repeat(conn, conn.shape[1], axis=1).ravel()
        cols = np.tile(conn, (1, conn.shape[1])).ravel()
        nn = grid.n_nodes
        self.K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nn, nn)).tocsc()
        self.G = sp.coo_matrix((ge.ravel(), (rows, cols)), shape=(nn, nn)).tocsc()
        self.g = np.asarray(self.G.sum(axis=1)).ravel()
        self.m = np.full(nn, grid.h ** d)
        self.A0 = float((w * a_q[:, :, 0, 0]).sum())

    # -- quadrature helpers ---------------------------------------------

    def quad_field(self, values_q: np.ndarray) -> float:
        """Integrate a scalar given at quadrature points."""
        return float((self.wq_cell * values_q.reshape(self.wq_cell.shape)).sum())

    def interp_q(self, u: np.ndarray) -> np.ndarray:
        """Nodal field -> values at quadrature points, shape (ncell, nq)."""
        return np.einsum("qj,cj->cq", self.phi, u[self.conn])

    def grad_q(self, u: np.ndarray) -> np.ndarray:
        """Nodal field -> gradients at quadrature points, (ncell, nq, d)."""
        return np.einsum("qjd,cj->cqd", self.gphi, u[self.conn])

    def load_div(self, F) -> np.ndarray:
        """Weak load of f = div F:  l[i] = int phi_i f = -int grad(phi_i).F."""
        Fq = np.atleast_2d(F(self.xq)).reshape(self.wq_cell.shape + (self.grid.dim,))
        le = -np.einsum("cq,qid,cqd->ci", self.wq_cell, self.gphi, Fq)
        out = np.zeros(self.grid.n_nodes)
        np.add.at(out, self.conn.ravel(), le.ravel())
        return out

    # -- constrained solves ----------------------------------------------

    def solve_pinned(self, A: sp.spmatrix, rhs: np.ndarray, target: float):
        """Solve A u = rhs subject to m.u = target via a Lagrange multiplier.

        Works for the singular consistent systems here (constant functions
        span the relevant null spaces)."""
        nn = A.shape[0]
        aug = sp.bmat([[A, self.m.reshape(-1, 1)],
                       [self.m.reshape(1, -1), None]], format="csc")
        b = np.concatenate([rhs, [target]])
        sol = spla.splu(aug).solve(b)
        u = sol[:nn]
        resid = np.linalg.norm(A @ u + sol[nn] * self.m - rhs)
        scale = max(1.0, np.linalg.norm(rhs), float(np.abs(u).max()))
        if not np.isfinite(resid) or resid > 1e-9 * scale:
            raise SolverDiverged(f"constrained solve residual {resid:.3e}")
        return u


_CACHE: dict = {}


def _assemble(env: Environment, grid: TorusGrid) -> _Assembly:
    key = (id(env), grid.dim, grid.n)
    asm = _CACHE.get(key)
    if asm is None or asm.env is not env:
        asm = _Assembly(env, grid)
        if len(_CACHE) > 32:
            _CACHE.clear()
        _CACHE[key] = asm
    return asm


# ---------------------------------------------------------------------------
# public solves
# ---------------------------------------------------------------------------

def steady_state(env: Environment, lam: float, grid: TorusGrid) -> np.ndarray:
    """Invariant density f on the torus: div(a(grad f - 2 lam f e1)) = 0,
    normalized to unit mass."""
    asm = _assemble(env, grid)
    A = asm.K - 2.0 * lam * asm.G
    f = asm.solve_pinned(A, np.zeros(grid.n_nodes), target=1.0)
    return f


def corrector(env: Environment, grid: TorusGrid) -> np.ndarray:
    """Mean-zero corrector chi solving div(a(grad chi + e1)) = 0."""
    asm = _assemble(env, grid)
    return asm.solve_pinned(asm.K, -asm.g, target=0.0)


def effective_sigma(env: Environment, grid: TorusGrid):
    """Effective variance along e1, via both quadratic forms.

    form1 = int (e1+grad chi) . a (e1+grad chi)
    form2 = int (e1 . a e1  -  grad chi . a grad chi)
    They agree to solver precision by discrete integration by parts.
    """
    asm = _assemble(env, grid)
    chi = asm.solve_pinned(asm.K, -asm.g, target=0.0)
    kchi = float(chi @ (asm.K @ chi))
    gchi = float(asm.g @ chi)
    form1 = asm.A0 + 2.0 * gchi + kchi
    form2 = asm.A0 - kchi
    return form1, form2


def effective_drift(env: Environment, lam: float, grid: TorusGrid) -> np.ndarray:
    """Mean displacement rate ell(lam) = int (b + lam a e1) f_lam.

    The b-pairing is evaluated weakly (b = 1/2 div a integrated by parts
    against the discrete density), which makes ell(0) vanish identically
    and ties the small-lam slope to the discrete effective variance."""
    asm = _assemble(env, grid)
    d = grid.dim
    f = steady_state(env, lam, grid)
    fq = asm.interp_q(f)
    gradf = asm.grad_q(f)
    a_q, _ = env.a_and_b(asm.xq)
    a_q = a_q.reshape(asm.wq_cell.shape + (d, d))
    ell = np.empty(d)
    for k in range(d):
        aek = a_q[:, :, :, k]  # column a e_k, (ncell, nq, d)
        weak_b = -0.5 * float((asm.wq_cell * np.einsum("cqd,cqd->cq", aek, gradf)).sum())
        forcing = lam * float((asm.wq_cell * a_q[:, :, k, 0] * fq).sum())
        ell[k] = weak_b + forcing
    return ell


def nu_pde(env: Environment, f: FunctionalSpec, lam: float, grid: TorusGrid) -> float:
    """Steady-state average of f = div F under the lam-tilted density."""
    asm = _assemble(env, grid)
    lf = asm.load_div(f.F)
    fl = steady_state(env, lam, grid)
    return float(lf @ fl)


def potential(env: Environment, f: FunctionalSpec, grid: TorusGrid) -> np.ndarray:
    """Discrete potential u_f with (1/2) div(a grad u_f) = -f, mean zero."""
    asm = _assemble(env, grid)
    lf = asm.load_div(f.F)
    _check_centered(asm, f)
    return asm.solve_pinned(asm.K, 2.0 * lf, target=0.0)


def _check_centered(asm: _Assembly, f: FunctionalSpec) -> None:
    mean = asm.quad_field(np.atleast_1d(f.div_F(asm.xq)))
    if abs(mean) > 1e-7:
        raise NotCentered(f"torus mean of f is {mean:.3e}")


def sigma_pair(env: Environment, f: FunctionalSpec, g: FunctionalSpec,
               grid: TorusGrid) -> float:
    """Asymptotic covariance Sigma(f, g) = int grad(u_f) . a grad(u_g)."""
    asm = _assemble(env, grid)
    uf = potential(env, f, grid)
    lg = asm.load_div(g.F)
    # u_f^T K u_g = u_f^T (2 l_g): avoids a second solve and is symmetric
    return float(2.0 * (uf @ lg))


def h_minus1(env: Environment, f: FunctionalSpec, g: FunctionalSpec,
             grid: TorusGrid):
    """H^{-1} norm of f and inner product (f, g); Sigma(f,g) = 2 (f,g)."""
    sff = sigma_pair(env, f, f, grid)
    sfg = sigma_pair(env, f, g, grid)
    return math.sqrt(max(sff, 0.0) / 2.0), sfg / 2.0


def gamma_bar_pde(env: Environment, f: FunctionalSpec, grid: TorusGrid) -> float:
    """Linear response of the steady state: -int grad(u_f) . a grad(chi1)."""
    asm = _assemble(env, grid)
    uf = potential(env, f, grid)
    chi = asm.solve_pinned(asm.K, -asm.g, target=0.0)
    return -float(uf @ (asm.K @ chi))


def fdt_identities(env: Environment, f: FunctionalSpec, lambda_fd: float,
                   grid: TorusGrid) -> dict:
    """Cross-check the four fluctuation-dissipation expressions.

    (i)   central difference of nu_lam(f) in lam,
    (ii)  -int grad(u_f) . a grad(chi1),
    (iii) -2 int f chi1,
    (iv)  sigma1 - int e1 . a e1   (meaningful when f is the drift component).
    (ii) and (iii) coincide to solver precision; (i) approaches them at
    rate lambda_fd^2; (iv) equals (ii) exactly for f = b.e1.
    """
    asm = _assemble(env, grid)
    lf = asm.load_div(f.F)
    _check_centered(asm, f)
    uf = asm.solve_pinned(asm.K, 2.0 * lf, target=0.0)
    chi = asm.solve_pinned(asm.K, -asm.g, target=0.0)

    nu_plus = float(lf @ steady_state(env, lambda_fd, grid))
    nu_minus = float(lf @ steady_state(env, -lambda_fd, grid))
    dnu = (nu_plus - nu_minus) / (2.0 * lambda_fd)
    gamma = -float(uf @ (asm.K @ chi))
    pairing = -2.0 * float(lf @ chi)
    sigma1 = asm.A0 + float(asm.g @ chi)
    return {
        "dnu_dlambda": dnu,
        "gamma_bar": gamma,
        "corrector_pairing": pairing,
        "sigma_difference": sigma1 - asm.A0,
        "sigma1": sigma1,
        "lambda_fd": lambda_fd,
        "grid_n": grid.n,
    }


def solve(env: Environment, f: Optional[FunctionalSpec], lam: float,
          grid: TorusGrid) -> TorusSolution:
    """Full bundle: density, corrector, optional potential, Sigma1, ell."""
    asm = _assemble(env, grid)
    fl = steady_state(env, lam, grid)
    chi = asm.solve_pinned(asm.K, -asm.g, target=0.0)
    uf = potential(env, f, grid) if f is not None else None
    sigma1 = asm.A0 + float(asm.g @ chi)
    ell = effective_drift(env, lam, grid)
    return TorusSolution(grid=grid, f_lambda=fl, chi1=chi, u_f=uf,
                         sigma1=sigma1, ell=ell)


def grid_interp(grid: TorusGrid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Periodic (multi)linear interpolation of a nodal field at points x."""
    x = np.atleast_2d(np.asarray(x, dtype=float)) % 1.0
    n = grid.n
    t = x * n
    i0 = np.floor(t).astype(int) % n
    frac = t - np.floor(t)
    if grid.dim == 1:
        v = values
        return (1 - frac[:, 0]) * v[i0[:, 0]] + frac[:, 0] * v[(i0[:, 0] + 1) % n]
    v = values.reshape(n, n)
    i, j = i0[:, 0], i0[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    ip, jp = (i + 1) % n, (j + 1) % n
    return ((1 - fx) * (1 - fy) * v[i, j] + fx * (1 - fy) * v[ip, j]
            + (1 - fx) * fy * v[i, jp] + fx * fy * v[ip, jp])


# ---------------------------------------------------------------------------
# independent 1-D closed form (quadrature of the integrating factor)
# ---------------------------------------------------------------------------

def steady_state_1d_exact(env: Environment, lam: float,
                          x: np.ndarray, n_fine: int = 1 << 17) -> np.ndarray:
    """Reference invariant density in one dimension.

    Integrates a(f' - 2 lam f) = const by the integrating-factor formula
    f(x) = e^{2 lam x} (f0 + c I(x)), I(x) = int_0^x e^{-2 lam s} / a(s) ds,
    with periodicity fixing c and unit mass fixing f0.  Evaluated by dense
    trapezoid quadrature, independent of the finite-element solver.
    """
    s = np.linspace(0.0, 1.0, n_fine + 1)
    a_s = env.a_and_b(s.reshape(-1, 1))[0][:, 0, 0]
    integrand = np.exp(-2.0 * lam * s) / a_s
    I = np.concatenate([[0.0], cumulative_trapezoid(integrand, s)])
    # periodic closure: f(1) = f(0) with f0 = 1 before normalization
    c = (math.exp(-2.0 * lam) - 1.0) / I[-1] if lam != 0.0 else 0.0
    f_raw = np.exp(2.0 * lam * s) * (1.0 + c * I)
    mass = trapezoid(f_raw, s)
    f_norm = f_raw / mass
    return np.interp(np.asarray(x, dtype=float).ravel() % 1.0, s, f_norm)
