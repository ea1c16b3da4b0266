"""Flux models, viscous shock profiles and the endstate hypotheses.

A flux model supplies f1, f2 and their Jacobians.  Every callable takes the
parameter eps and a state array of shape (n, ...) and returns an array of
shape (n, ...) (fluxes) or (n, n, ...) (Jacobians), so that the same code
evaluates at a single state, along a grid, or over a 2D strip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Grid1D, LinearCoefficients
from .errors import (ConfigError, ConvergenceError, HyperbolicityError, LaxViolation,
                     ModelError, RankineHugoniotError)


def _const(value):
    if callable(value):
        return value
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda eps: arr


class FluxModel:
    """Conservative flux pair with Jacobians.

    mode_potential(eps, k, x) may return an (N, n, n) array: a linear term
    that acts only on transverse Fourier mode k (used to manufacture a
    controlled eigenvalue crossing on top of a physical flux).
    """

    def __init__(self, n, f1, f2, df1, df2, u_minus, u_plus, param_interval=(-1.0, 1.0),
                 box=10.0, name="flux", mode_potential=None, reflection=None):
        self.n = int(n)
        self.f1, self.f2, self.df1, self.df2 = f1, f2, df1, df2
        self._um, self._up = _const(u_minus), _const(u_plus)
        lo, hi = param_interval
        if not lo <= 0.0 <= hi:
            raise ConfigError("parameter interval must contain 0")
        self.param_interval = (float(lo), float(hi))
        self.box = float(box)
        self.name = name
        self.mode_potential = mode_potential
        self.reflection = np.eye(self.n) if reflection is None else np.asarray(reflection, float)

    def endstates(self, eps):
        return self._um(eps).copy(), self._up(eps).copy()

    def flux_residual(self, eps, v, ubar, which):
        """f(ubar + v) - f(ubar) - Df(ubar) v for which in {1, 2}."""
        f, df = (self.f1, self.df1) if which == 1 else (self.f2, self.df2)
        return f(eps, ubar + v) - f(eps, ubar) - np.einsum("ab...,b...->a...", df(eps, ubar), v)

    def __repr__(self):
        return f"FluxModel({self.name!r}, n={self.n})"


def check_jacobians(model: FluxModel, n_probes: int = 100, seed: int = 0) -> float:
    """Largest relative discrepancy between the analytic Jacobians and
    central differences at random (eps, u) probes inside the model box."""
    rng = np.random.default_rng(seed)
    lo, hi = model.param_interval
    step = np.finfo(float).eps ** (1.0 / 3.0)
    worst = 0.0
    for _ in range(n_probes):
        eps = rng.uniform(lo, hi)
        u = rng.uniform(-0.5, 0.5, model.n) * model.box
        for f, df in ((model.f1, model.df1), (model.f2, model.df2)):
            J = np.asarray(df(eps, u), dtype=float).reshape(model.n, model.n)
            fd = np.empty_like(J)
            for j in range(model.n):
                hj = step * max(1.0, abs(u[j]))
                e = np.zeros(model.n)
                e[j] = hj
                fd[:, j] = (f(eps, u + e) - f(eps, u - e)) / (2 * hj)
            scale = max(np.linalg.norm(J), 1e-300)
            if np.linalg.norm(J) == 0 and np.linalg.norm(fd) == 0:
                continue
            worst = max(worst, np.linalg.norm(J - fd) / max(scale, np.linalg.norm(fd)))
    return worst


class DirectOperatorModel:
    """Linear operator family given directly by A(eps, x), B(eps, x).

    A and B take (eps, x-array) and return (N, n, n) arrays.  Optional hooks
    mode_potential(eps, k, x) and mode_lowrank(eps, k, grid) add terms to
    individual Fourier modes.
    """

    def __init__(self, n, A, B, A_limits, B_limits=None, alpha=1.0, name="direct",
                 mode_potential=None, mode_lowrank=None):
        self.n = int(n)
        self.A, self.B = A, B
        self.A_limits = A_limits          # eps -> (A_minus, A_plus)
        self.B_limits = B_limits
        self.alpha = float(alpha)
        self.name = name
        self.mode_potential = mode_potential
        self.mode_lowrank = mode_lowrank

    def linear_coefficients(self, eps, grid: Grid1D) -> LinearCoefficients:
        if eps is None or grid is None:
            raise ConfigError("a direct operator model needs eps and a grid")
        pot = lowrank = None
        if self.mode_potential is not None:
            pot = lambda k: self.mode_potential(eps, k, grid.x)
        if self.mode_lowrank is not None:
            lowrank = lambda k: self.mode_lowrank(eps, k, grid)
        return LinearCoefficients(grid, np.asarray(self.A(eps, grid.x), float),
                                  np.asarray(self.B(eps, grid.x), float), eps, pot, lowrank)

    def asymptotic_decay(self, eps, grid: Grid1D) -> float:
        """Measured exponential rate at which A(eps, x) approaches its limits
        on the outer quarter of the grid (smallest of the two ends)."""
        Am, Ap = self.A_limits(eps)
        A = np.asarray(self.A(eps, grid.x), float)
        dev_m = np.linalg.norm(A - Am, axis=(1, 2))
        dev_p = np.linalg.norm(A - Ap, axis=(1, 2))
        q = grid.N // 4
        return min(_fit_rate(grid.x[-q:], dev_p[-q:]), _fit_rate(-grid.x[:q], dev_m[:q]))

    def __repr__(self):
        return f"DirectOperatorModel({self.name!r}, n={self.n})"


def _fit_rate(dist, dev, floor=1e-14):
    keep = dev > floor
    if keep.sum() < 3:
        return np.inf
    slope = np.polyfit(dist[keep], np.log(dev[keep]), 1)[0]
    return float(-slope)


# -- speed and endstate checks --------------------------------------------

def compute_speed(model: FluxModel, eps, u_minus, u_plus, tol_rh: float = 1e-10):
    """Least-squares Rankine-Hugoniot speed.  Returns (c, residual)."""
    um = np.atleast_1d(np.asarray(u_minus, float))
    up = np.atleast_1d(np.asarray(u_plus, float))
    jump = up - um
    if np.linalg.norm(jump) == 0:
        raise RankineHugoniotError("u_minus equals u_plus: there is no shock")
    dflux = model.f1(eps, up) - model.f1(eps, um)
    c = float(jump @ dflux / (jump @ jump))
    residual = float(np.linalg.norm(dflux - c * jump))
    if residual > tol_rh * max(1.0, np.linalg.norm(dflux)):
        raise RankineHugoniotError(
            f"endstates violate the jump condition (residual {residual:.3e})")
    return c, residual


@dataclass
class LaxReport:
    eig_minus: np.ndarray
    eig_plus: np.ndarray
    dim_stable_plus: int
    dim_unstable_minus: int
    n: int
    A_minus: np.ndarray
    A_plus: np.ndarray

    @property
    def passed(self) -> bool:
        return self.dim_stable_plus + self.dim_unstable_minus == self.n + 1

    def to_dict(self) -> dict:
        return {"n": self.n, "eig_minus": self.eig_minus.tolist(),
                "eig_plus": self.eig_plus.tolist(),
                "dim_stable_plus": self.dim_stable_plus,
                "dim_unstable_minus": self.dim_unstable_minus, "passed": self.passed}


def _hyperbolic_eigs(M, label, sep_tol):
    ev = np.linalg.eigvals(M)
    scale = max(1.0, np.abs(ev).max())
    if np.any(np.abs(ev.imag) > sep_tol * scale):
        raise HyperbolicityError(f"{label} has complex eigenvalues {ev}")
    ev = np.sort(ev.real)
    if np.any(np.abs(ev) <= sep_tol * scale):
        raise HyperbolicityError(f"{label} has a zero eigenvalue {ev}")
    if ev.size > 1 and np.min(np.diff(ev)) <= sep_tol * scale:
        raise HyperbolicityError(f"{label} has repeated eigenvalues {ev}")
    return ev


def endstate_matrices(model: FluxModel, eps, u_minus, u_plus, c):
    I = np.eye(model.n)
    Am = np.asarray(model.df1(eps, np.asarray(u_minus, float)), float).reshape(model.n, -1) - c * I
    Ap = np.asarray(model.df1(eps, np.asarray(u_plus, float)), float).reshape(model.n, -1) - c * I
    return Am, Ap


def verify_lax(model: FluxModel, eps, u_minus, u_plus, c, sep_tol: float = 1e-8,
               strict: bool = True) -> LaxReport:
    """Hyperbolicity of the endstate matrices A(+-) = Df1(u+-) - c I and the
    Lax count: negative eigenvalues of A(+) plus positive eigenvalues of
    A(-) must number n + 1."""
    Am, Ap = endstate_matrices(model, eps, u_minus, u_plus, c)
    ev_m = _hyperbolic_eigs(Am, "A(-)", sep_tol)
    ev_p = _hyperbolic_eigs(Ap, "A(+)", sep_tol)
    report = LaxReport(ev_m, ev_p, int(np.sum(ev_p < 0)), int(np.sum(ev_m > 0)), model.n, Am, Ap)
    if strict and not report.passed:
        raise LaxViolation(
            f"Lax count {report.dim_stable_plus} + {report.dim_unstable_minus} != {model.n + 1}")
    return report


def boundary_rows(Am, Ap):
    """Left eigenvectors selecting the directions that must vanish at the
    truncation ends: growing directions of A(+) at +L, decaying directions
    of A(-) at -L.  Returns (rows_minus, rows_plus) as k x n arrays."""
    def left(M, pick):
        ev, W = np.linalg.eig(M.T)
        sel = pick(ev.real)
        return np.real(W[:, sel]).T
    return left(Am, lambda e: e < 0), left(Ap, lambda e: e > 0)


# -- profiles -----------------------------------------------------------

@dataclass
class ShockProfile:
    grid: Grid1D
    ubar: np.ndarray
    ubar_x: np.ndarray
    c: float
    u_minus: np.ndarray
    u_plus: np.ndarray
    alpha: float
    epsilon: float
    model: Optional[FluxModel] = None
    residual: float = 0.0
    iterations: int = 0
    lax: Optional[LaxReport] = None

    @property
    def n(self):
        return self.ubar.shape[0]

    def jacobians(self):
        """A = Df1(ubar) - c I and B = Df2(ubar) as (N, n, n) arrays."""
        m = self.model
        A = np.moveaxis(np.asarray(m.df1(self.epsilon, self.ubar), float), -1, 0)
        B = np.moveaxis(np.asarray(m.df2(self.epsilon, self.ubar), float), -1, 0)
        return A - self.c * np.eye(self.n), B

    def linear_coefficients(self, eps=None, grid=None) -> LinearCoefficients:
        if grid is not None and grid != self.grid:
            raise ConfigError("profile was computed on a different grid")
        if eps is not None and eps != self.epsilon:
            raise ConfigError(f"profile was computed at eps={self.epsilon}, not {eps}")
        A, B = self.jacobians()
        pot = None
        if self.model is not None and self.model.mode_potential is not None:
            mp, e, x = self.model.mode_potential, self.epsilon, self.grid.x
            pot = lambda k: mp(e, k, x)
        return LinearCoefficients(self.grid, A, B, self.epsilon, pot, None)

    def end_error(self) -> float:
        return float(max(np.abs(self.ubar[:, 0] - self.u_minus).max(),
                         np.abs(self.ubar[:, -1] - self.u_plus).max()))


def _profile_rhs(model, eps, u, c, um):
    const = model.f1(eps, um) - c * um
    return model.f1(eps, u) - c * u - const[:, None]


def solve_profile(model: FluxModel, eps, u_minus, u_plus, c, grid: Grid1D,
                  tol: float = 1e-12, max_iter: int = 50, lax: LaxReport = None) -> ShockProfile:
    """Damped Newton on the trapezoid (box) collocation of the profile ODE
    u' = f1(u) - c u - (f1(u-) - c u-), with boundary rows from the endstate
    eigenvectors and the centering condition
    <u(0) - (u+ + u-)/2, u+ - u-> = 0."""
    um = np.atleast_1d(np.asarray(u_minus, float))
    up = np.atleast_1d(np.asarray(u_plus, float))
    if np.array_equal(um, up):
        raise RankineHugoniotError("u_minus equals u_plus: there is no shock")
    lax = lax or verify_lax(model, eps, um, up, c)
    n, N, h = model.n, grid.N, grid.h
    rows_m, rows_p = boundary_rows(lax.A_minus, lax.A_plus)
    jump, midpoint = up - um, 0.5 * (up + um)

    rate = min(np.abs(lax.eig_minus).min(), np.abs(lax.eig_plus).min())
    u = midpoint[:, None] + 0.5 * jump[:, None] * np.tanh(0.5 * rate * grid.x)[None, :]

    I = np.eye(n)

    def residual(u):
        F = _profile_rhs(model, eps, u, c, um)
        box = (u[:, 1:] - u[:, :-1]) / h - 0.5 * (F[:, 1:] + F[:, :-1])
        parts = [box.T.reshape(-1), rows_m @ (u[:, 0] - um), rows_p @ (u[:, -1] - up),
                 [jump @ (u[:, grid.mid] - midpoint)]]
        return np.concatenate(parts)

    def jacobian(u):
        J = np.moveaxis(np.asarray(model.df1(eps, u), float), -1, 0) - c * I  # (N, n, n)
        left = -I / h - 0.5 * J[:-1]
        right = I / h - 0.5 * J[1:]
        cells = N - 1
        r = np.arange(cells * n).reshape(cells, n)
        rr = np.repeat(r[:, :, None], n, axis=2)
        cl = (np.arange(cells)[:, None, None] * n + np.arange(n)[None, None, :]).repeat(n, axis=1)
        rows = [rr.ravel(), rr.ravel()]
        cols = [cl.ravel(), (cl + n).ravel()]
        vals = [left.ravel(), right.ravel()]
        base = cells * n
        for block, node in ((rows_m, 0), (rows_p, N - 1)):
            for a in range(block.shape[0]):
                rows.append(np.full(n, base))
                cols.append(node * n + np.arange(n))
                vals.append(block[a])
                base += 1
        rows.append(np.full(n, base))
        cols.append(grid.mid * n + np.arange(n))
        vals.append(jump)
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N * n, N * n))

    res = residual(u)
    if res.size != N * n:
        raise LaxViolation("collocation system is not square; check the Lax count")
    norm = np.abs(res).max()
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        step = spla.spsolve(jacobian(u), -res)
        step = step.reshape(N, n).T
        t = 1.0
        while True:
            trial = u + t * step
            r_trial = residual(trial)
            if np.abs(r_trial).max() < (1 - 0.25 * t) * norm or t < 1e-4:
                break
            t *= 0.5
        u, res = trial, r_trial
        new_norm = np.abs(res).max()
        if t < 1e-4 and new_norm >= norm:
            raise ConvergenceError(
                "profile Newton stalled; try a larger domain or a closer initial guess")
        norm = new_norm
    if norm > tol:
        raise ConvergenceError(
            f"profile Newton did not converge in {max_iter} steps (residual {norm:.3e}); "
            "try a larger domain or a closer initial guess")

    ubar_x = _profile_rhs(model, eps, u, c, um)
    alpha = _profile_decay(grid, u, um, up)
    return ShockProfile(grid, u, ubar_x, c, um, up, alpha, float(eps), model, float(norm), it, lax)


def _profile_decay(grid, u, um, up):
    q = max(grid.N // 4, 3)
    dev_p = np.linalg.norm(u[:, -q:] - up[:, None], axis=0)
    dev_m = np.linalg.norm(u[:, :q] - um[:, None], axis=0)
    return min(_fit_rate(grid.x[-q:], dev_p), _fit_rate(-grid.x[:q], dev_m))


def profile_ode_defect(profile: ShockProfile) -> float:
    """Sup norm of the centered-difference defect u' - F(u) at interior nodes,
    an estimate of the pointwise ODE residual independent of the box rows."""
    u, h = profile.ubar, profile.grid.h
    F = _profile_rhs(profile.model, profile.epsilon, u, profile.c, profile.u_minus)
    return float(np.abs((u[:, 2:] - u[:, :-2]) / (2 * h) - F[:, 1:-1]).max())


def shock_profile(model: FluxModel, eps, grid: Grid1D, tol_rh: float = 1e-10,
                  tol: float = 1e-12) -> ShockProfile:
    """Speed, Lax check and profile in one call using the model endstates."""
    um, up = model.endstates(eps)
    c, _ = compute_speed(model, eps, um, up, tol_rh)
    lax = verify_lax(model, eps, um, up, c)
    return solve_profile(model, eps, um, up, c, grid, tol=tol, lax=lax)


# -- built-in models ------------------------------------------------------

def burgers(gamma: float = 0.0, u_minus=1.0, u_plus=-1.0, mode_potential=None,
            name="burgers") -> FluxModel:
    """Scalar viscous Burgers with f1 = u^2/2 and f2 = gamma u^2/2."""
    g = float(gamma)
    return FluxModel(
        1,
        f1=lambda e, u: 0.5 * u**2,
        f2=lambda e, u: 0.5 * g * u**2,
        df1=lambda e, u: np.asarray(u)[None, ...],
        df2=lambda e, u: g * np.asarray(u)[None, ...],
        u_minus=u_minus, u_plus=u_plus, box=4.0, name=name, mode_potential=mode_potential)


@dataclass(frozen=True)
class WellPotential:
    """Gaussian well acting only on the transverse modes +-k_star:
    V(eps, x) = -(depth + eps) exp(-((x - center)/width)^2)."""

    k_star: int
    depth: float
    center: float = 0.0
    width: float = 1.0

    def shape(self, x):
        return np.exp(-(((np.asarray(x) - self.center) / self.width) ** 2))

    def __call__(self, eps, k, x):
        if abs(int(k)) != self.k_star:
            return None
        return (-(self.depth + eps) * self.shape(x))[:, None, None]


def synthetic_crossing(k_star: int = 1, gamma: float = 0.0, depth: float = 1.79,
                       center: float = 0.0, width: float = 1.0) -> FluxModel:
    """Burgers shock whose +-k_star modes carry an extra Gaussian well.

    Deepening the well with eps pushes the translational eigenvalue k_star^2
    of L_{k_star} through the imaginary axis.  With gamma = 0 and a centered
    well the problem has O(2) symmetry (reflection y -> -y with R = I);
    gamma != 0 together with an off-center well gives a genuinely complex
    crossing eigenvalue.
    """
    pot = WellPotential(int(k_star), float(depth), float(center), float(width))
    kind = "o2" if gamma == 0.0 and center == 0.0 else "so2"
    return burgers(gamma, mode_potential=pot, name=f"synthetic_crossing_{kind}")


def rank_one_family(k_star: int = 2, shift: complex = 1j) -> DirectOperatorModel:
    """Burgers-linearization operators with a rank-one modification of mode
    k_star that moves one eigenvalue to exactly eps + shift.

    The base operator L_{k_star} (A = -tanh(x/2), B = 0) has a simple real
    eigenvalue mu0 near k_star^2 with right/left eigenvectors (v, w); adding
    (eps + shift - mu0) v w^H / (w^H v) relocates it without moving the rest
    of the spectrum.  Mode -k_star carries the conjugate modification.
    """
    from .discretization import ModeOperator

    A = lambda eps, x: (-np.tanh(0.5 * np.asarray(x)))[:, None, None]
    B = lambda eps, x: np.zeros((np.size(x), 1, 1))
    limits = lambda eps: (np.array([[1.0]]), np.array([[-1.0]]))
    cache = {}

    def eigvecs(grid):
        if grid not in cache:
            base = LinearCoefficients(grid, A(0.0, grid.x), B(0.0, grid.x))
            M = ModeOperator(base, k_star, 0.0).dense()
            ev, V = np.linalg.eig(M)
            j = int(np.argmin(np.abs(ev - k_star**2)))
            evl, W = np.linalg.eig(M.conj().T)
            jl = int(np.argmin(np.abs(evl - np.conj(ev[j]))))
            cache[grid] = (ev[j], V[:, j], W[:, jl])
        return cache[grid]

    def lowrank(eps, k, grid):
        if abs(int(k)) != k_star:
            return None
        mu0, v, w = eigvecs(grid)
        coef = eps + shift - mu0
        U = coef * v / np.vdot(w, v)
        if k < 0:
            return np.conj(U), np.conj(w)
        return U, w

    model = DirectOperatorModel(1, A, B, limits, alpha=1.0, name="rank_one",
                                mode_lowrank=lowrank)
    model.k_star = k_star
    return model


class OperatorFamily:
    """Caches profiles and linear coefficients of a model over eps on one
    grid, and hands out mode operators L_k^d(eps)."""

    def __init__(self, model, grid: Grid1D, tol_rh: float = 1e-10):
        self.model = model
        self.grid = grid
        self.tol_rh = tol_rh
        self._profiles = {}
        self._coeffs = {}

    @property
    def has_flux(self) -> bool:
        return isinstance(self.model, FluxModel)

    def profile(self, eps) -> ShockProfile:
        if not self.has_flux:
            raise ModelError("a direct operator model has no shock profile")
        eps = float(eps)
        if eps not in self._profiles:
            self._profiles[eps] = shock_profile(self.model, eps, self.grid, self.tol_rh)
        return self._profiles[eps]

    def coefficients(self, eps) -> LinearCoefficients:
        eps = float(eps)
        if eps not in self._coeffs:
            if self.has_flux:
                self._coeffs[eps] = self.profile(eps).linear_coefficients()
            else:
                self._coeffs[eps] = self.model.linear_coefficients(eps, self.grid)
        return self._coeffs[eps]

    def mode(self, eps, k, d=0.0):
        from .discretization import ModeOperator
        return ModeOperator(self.coefficients(eps), k, d)
