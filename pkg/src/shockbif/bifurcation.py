"""Branches of the reduced equation and their certification in 2D.

Any object with `lam(eps)`, `f(x, eps, d)`, `k_star` and `d_bar` can be
continued, so closed-form reduced data and the full ReducedEquation share
the same solvers.  Branches are parametrized by the amplitude, x(s) = s.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BifurcationError, PipelineError
from .tail import StripField, synthesize


@dataclass
class BranchSample:
    s: float
    eps: float
    x: float
    d: float
    period: float = float("nan")
    direction: int = 0
    residual: float = float("nan")
    newton_iterations: int = 0


@dataclass
class BifurcationBranch:
    kind: str
    eps_crit: float
    d_bar: float
    samples: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(p, name) for p in self.samples])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "eps", "x", "d", "period", "residual"])
            for p in self.samples:
                w.writerow([repr(float(v)) for v in (p.s, p.eps, p.x, p.d, p.period, p.residual)])


class ManufacturedReduced:
    """Reduced data given in closed form: lam(eps) and f(x, eps, d)."""

    def __init__(self, lam, f, k_star=1, d_bar=0.0):
        self._lam, self._f = lam, f
        self.k_star = k_star
        self.d_bar = d_bar

    def lam(self, eps):
        return complex(self._lam(eps))

    def f(self, x, eps, d=None):
        return complex(self._f(x, eps, self.d_bar if d is None else d))


def _newton_eps(g, eps0, tol, max_iter, step):
    """Scalar secant-Newton on a real function g(eps)."""
    e = float(eps0)
    ge = g(e)
    for it in range(1, max_iter + 1):
        slope = (g(e + step) - g(e - step)) / (2 * step)
        if slope == 0 or not np.isfinite(slope):
            raise BifurcationError("zero slope in the eps Newton iteration")
        de = -ge / slope
        e += de
        ge = g(e)
        if abs(de) <= tol * max(1.0, abs(e)):
            return e, it
    raise BifurcationError(f"eps Newton did not converge (last step {de:.3e})")


def _seed(samples, s, eps_crit):
    if len(samples) >= 2:
        (s1, e1), (s2, e2) = [(p.s, p.eps) for p in samples[-2:]]
        # eps - eps_crit is even in s to leading order: extrapolate in s^2
        if s2**2 != s1**2:
            return e2 + (e2 - e1) * (s**2 - s2**2) / (s2**2 - s1**2)
    if samples:
        p = samples[-1]
        return eps_crit + (p.eps - eps_crit) * (s / p.s) ** 2
    return eps_crit


def branch_O2(reduced, s_grid, eps_crit: float, lambda_prime: complex = None,
              tol: float = 1e-12, max_iter: int = 30, fd_step: float = 1e-6,
              tol_transversal: float = 1e-6) -> BifurcationBranch:
    """Solve lam(eps) - f(s, eps, dbar)/s = 0 for eps at each s != 0 (real
    parts; both quantities are real under O(2) symmetry)."""
    if lambda_prime is not None and abs(complex(lambda_prime).real) < tol_transversal:
        raise BifurcationError("transversality fails: Re lambda'(eps_crit) ~ 0")
    branch = BifurcationBranch("O2_pitchfork", float(eps_crit), float(reduced.d_bar))
    d = reduced.d_bar
    for s in s_grid:
        s = float(s)
        if s == 0.0:
            branch.samples.append(BranchSample(0.0, float(eps_crit), 0.0, d))
            continue
        g = lambda e: (reduced.lam(e) - reduced.f(s, e, d) / s).real
        try:
            e, it = _newton_eps(g, _seed([p for p in branch.samples if p.s != 0], s, eps_crit),
                                tol, max_iter, fd_step)
        except PipelineError as exc:
            branch.warnings.append(f"branch truncated at s={s}: {exc}")
            break
        branch.samples.append(BranchSample(s, e, s, d, newton_iterations=it))
    return branch


def branch_SO2(reduced, s_grid, eps_crit: float, lambda_prime: complex = None,
               tol: float = 1e-12, max_iter: int = 30, fd_step: float = 1e-6,
               tol_transversal: float = 1e-6, max_outer: int = 20) -> BifurcationBranch:
    """Translational case: the real part of the reduced equation fixes eps,
    the imaginary part fixes the frame speed,

        d = dbar + Im lam(eps)/k* - Im f(s, eps, d) / (k* s),

    which follows from x lam = f - i k* (dbar - d) x.  The pair is solved by
    alternating the eps Newton with this update until d settles."""
    if lambda_prime is not None and abs(complex(lambda_prime).real) < tol_transversal:
        raise BifurcationError("transversality fails: Re lambda'(eps_crit) ~ 0")
    k = reduced.k_star
    dbar = reduced.d_bar
    branch = BifurcationBranch("SO2_traveling", float(eps_crit), float(dbar))
    for s in s_grid:
        s = float(s)
        if s == 0.0:
            branch.samples.append(BranchSample(0.0, float(eps_crit), 0.0, dbar))
            continue
        prev = [p for p in branch.samples if p.s != 0]
        d = prev[-1].d if prev else dbar
        e = _seed(prev, s, eps_crit)
        total = 0
        try:
            for outer in range(max_outer):
                g = lambda eps: (reduced.lam(eps) - reduced.f(s, eps, d) / s).real
                e, it = _newton_eps(g, e, tol, max_iter, fd_step)
                total += it
                d_new = dbar + reduced.lam(e).imag / k - reduced.f(s, e, d).imag / (k * s)
                if abs(d_new - d) <= tol * max(1.0, abs(d)):
                    d = d_new
                    break
                d = d_new
            else:
                raise BifurcationError("frame-speed iteration did not settle")
        except PipelineError as exc:
            branch.warnings.append(f"branch truncated at s={s}: {exc}")
            break
        branch.samples.append(BranchSample(s, e, s, d, newton_iterations=total))
    return branch


def hopf_reinterpret(branch: BifurcationBranch, tol: float = 1e-12) -> BifurcationBranch:
    """Annotate a branch with d_bar != 0 as spatially periodic traveling
    waves: period 2 pi / |d| with the sign of d as direction flag."""
    if abs(branch.d_bar) <= tol:
        raise BifurcationError("Hopf reinterpretation needs a nonzero frame speed d_bar")
    out = BifurcationBranch("O2_Hopf", branch.eps_crit, branch.d_bar,
                            [BranchSample(**p.__dict__) for p in branch.samples],
                            list(branch.warnings))
    for p in out.samples:
        if p.d == 0.0:
            raise BifurcationError(f"period undefined: d = 0 at s = {p.s}")
        p.period = 2.0 * np.pi / abs(p.d)
        p.direction = int(np.sign(p.d))
    return out


# -- 2D certification -----------------------------------------------------

def _dx4(u, h):
    """Fourth-order centered first derivative along axis 1 (x), interior
    nodes 2..N-3 only (others zero)."""
    out = np.zeros_like(u)
    out[:, 2:-2] = (u[:, :-4] - 8 * u[:, 1:-3] + 8 * u[:, 3:-1] - u[:, 4:]) / (12 * h)
    return out


def _dxx4(u, h):
    out = np.zeros_like(u)
    out[:, 2:-2] = (-u[:, :-4] + 16 * u[:, 1:-3] - 30 * u[:, 2:-2] + 16 * u[:, 3:-1]
                    - u[:, 4:]) / (12 * h * h)
    return out


def _dy(u, order=1):
    Ny = u.shape[-1]
    k = np.fft.fftfreq(Ny, 1.0 / Ny)
    if order % 2 == 1:
        k[Ny // 2] = 0.0
    return np.fft.ifft(np.fft.fft(u, axis=-1) * (1j * k) ** order, axis=-1).real


def strip_residual(model, profile, eps, d, v: np.ndarray, k_star=None) -> np.ndarray:
    """Full steady equation in the frame (c, d) evaluated at ubar + v on the
    strip, with the profile subtracted:

        d_x[f1(ubar+v) - f1(ubar) - c v] + d_y[f2(ubar+v) - f2(ubar)]
            - d v_y - (v_xx + v_yy) + V v

    using fourth-order x differences and spectral y derivatives.  V v is the
    model's mode potential applied to the Fourier components it acts on.
    Rows within two nodes of either end are zero.
    """
    h = profile.grid.h
    ub = profile.ubar[:, :, None] * np.ones((1, 1, v.shape[-1]))
    F1 = model.f1(eps, ub + v) - model.f1(eps, ub) - profile.c * v
    F2 = model.f2(eps, ub + v) - model.f2(eps, ub)
    res = _dx4(F1, h) + _dy(F2) - d * _dy(v) - _dxx4(v, h) - _dy(v, 2)
    if model.mode_potential is not None:
        Ny = v.shape[-1]
        spec = np.fft.fft(v, axis=-1) / Ny
        kk = np.fft.fftfreq(Ny, 1.0 / Ny).astype(int)
        extra = np.zeros_like(spec)
        for j, k in enumerate(kk):
            pot = model.mode_potential(eps, k, profile.grid.x)
            if pot is not None:
                extra[:, :, j] = np.einsum("iab,bi->ai", pot, spec[:, :, j])
        res = res + (np.fft.ifft(extra, axis=-1) * Ny).real
    res[:, :2] = 0.0
    res[:, -2:] = 0.0
    return res


@dataclass
class Certificate:
    s: float
    field: StripField
    residual_l2: float
    norm_h2: float


def synthesize_and_certify(reduced, sample: BranchSample, Ny: int = None) -> Certificate:
    """Re-solve the sample's state, synthesize v(s) on the strip and measure
    the discrete L^2 norm of the 2D residual."""
    state = reduced.solve(sample.x, sample.eps, sample.d)
    prob = reduced.problem(sample.eps)
    Ny = Ny or prob.Ny_dealias
    field = synthesize(state.stack, Ny)
    res = strip_residual(prob.model, prob.profile, sample.eps, sample.d, field.values,
                         reduced.k_star)
    w = prob.grid.weights
    r = float(np.sqrt(np.sum(w[None, :, None] * res**2) / Ny))
    return Certificate(sample.s, field, r, field.h2_norm())


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
