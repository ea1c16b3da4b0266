"""Lyapunov-Schmidt reduction onto the critical eigen-amplitude.

For fixed (x, eps, d) the critical mode is written u_{k*} = x v + v_c with v
the eigenvector of L_{k*}^{dbar}(eps) and v_c in the range of I - P.  The
zero mode, the tail and v_c are then eliminated by a joint Picard iteration
of their three fixed-point maps, after which the reduced right-hand side is
f(x) = h(N_{k*}[u]), h being the left eigenvector with h(v) = 1.  The
reduced equation reads

    x lambda(eps) = f(x, eps, d) - i k* (dbar - d) x,

lambda(eps) the critical eigenvalue of L_{k*}^{dbar}(eps).  With
L_k^d = L_k^0 - i k d the frame term enters with a minus sign.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discretization import DiscreteField, l2_norm_sq
from .errors import ConfigError, ContractionError, ReductionError, SimplicityError
from .spectral import Contour, SpectralProjector, extract_eigenpair, fix_gauge
from .tail import ModeStack, SymmetryOps, StripProblem, picard_ratio
from .zero_mode import solve_zero_linear


@dataclass
class CriticalMode:
    """Spectral data of L_{k*}^{dbar}(eps): eigenvalue, unit eigenvector,
    dual vector and projector (all in interior-vector layout)."""

    eps: float
    lam: complex
    v: np.ndarray
    h: np.ndarray
    projector: SpectralProjector
    op: object


@dataclass
class ReducedState:
    x: float
    eps: float
    d: float
    f: complex
    stack: ModeStack
    v_c: np.ndarray
    iterations: int
    contraction_ratio: float
    history: list = field(default_factory=list, repr=False)


class ReducedEquation:
    """Scalar bifurcation equation for the +k* amplitude.

    `family` is a model.OperatorFamily of a flux model.  The contour of the
    critical projector is a circle of `radius` about 0 and must enclose the
    critical eigenvalue for every eps used.
    """

    def __init__(self, family, k_star: int, d_bar: float = 0.0, K_max: int = 16,
                 radius: float = 0.1, Q: int = 32, tol_fix: float = 1e-12,
                 symmetry_mode: str = "O2", threads: int = 1, max_iter: int = 200,
                 reflection=None):
        if symmetry_mode not in ("O2", "SO2"):
            raise ConfigError(f"symmetry mode must be O2 or SO2, got {symmetry_mode!r}")
        self.family = family
        self.k_star = int(k_star)
        self.d_bar = float(d_bar)
        self.K_max = int(K_max)
        self.radius = float(radius)
        self.Q = int(Q)
        self.tol_fix = float(tol_fix)
        self.symmetry_mode = symmetry_mode
        self.threads = threads
        self.max_iter = max_iter
        self.symmetry = SymmetryOps(reflection, n=family.model.n)
        self._problems = {}
        self._critical = {}
        self._warm = None

    # -- per-eps data ---------------------------------------------------------
    def problem(self, eps) -> StripProblem:
        eps = float(eps)
        if eps not in self._problems:
            self._problems[eps] = StripProblem(self.family, eps, self.K_max, self.k_star,
                                               self.d_bar, self.tol_fix, self.threads)
        return self._problems[eps]

    def critical(self, eps) -> CriticalMode:
        eps = float(eps)
        if eps not in self._critical:
            op = self.problem(eps).mode_operator(self.k_star)
            proj = SpectralProjector(op, Contour(0.0, self.radius, self.Q),
                                     threads=self.threads)
            pair = extract_eigenpair(op, projector=proj)
            v = pair.vector
            hvec = proj.apply_adjoint(v) / np.vdot(v, v).real
            hvec = hvec / np.conj(np.vdot(hvec, v))
            self._critical[eps] = CriticalMode(eps, pair.lam, v, hvec, proj, op)
        return self._critical[eps]

    def lam(self, eps) -> complex:
        return self.critical(eps).lam

    def eigenvector_field(self, eps) -> np.ndarray:
        c = self.critical(eps)
        return c.op.to_field(c.v)

    # -- elimination ----------------------------------------------------------
    def solve(self, x, eps, d=None, warm: ReducedState = None, gauge: complex = 1.0,
              tol_fix: float = None) -> ReducedState:
        """Eliminate u0, the tail and v_c for amplitude x (optionally with the
        eigenvector multiplied by the unit complex `gauge`)."""
        d = self.d_bar if d is None else float(d)
        tol = self.tol_fix if tol_fix is None else tol_fix
        x = float(x)
        k = self.k_star
        prob = self.problem(eps)
        crit = self.critical(eps)
        op = crit.op
        v = crit.v * gauge
        v_field = op.to_field(v)
        shift = self.d_bar - d

        stack = prob.empty_stack()
        v_c = np.zeros_like(v)
        if warm is not None and warm.stack.K_max == self.K_max and warm.x != 0.0:
            scale = x / warm.x
            stack = warm.stack * (scale**2)
            v_c = warm.v_c * scale**2
        stack[k] = x * v_field + op.to_field(v_c)
        stack[-k] = np.conj(stack[k])
        if x == 0.0:
            stack = prob.empty_stack()
            return ReducedState(0.0, float(eps), d, 0j, stack, np.zeros_like(v), 0, 0.0)

        history = []
        for it in range(1, self.max_iter + 1):
            R = prob.remainders(stack)
            Nk = prob.nonlinear_modes(stack, R)
            new = prob.tail_update(stack, d, Nk)
            new[0] = solve_zero_linear(prob.zero_operator, R[0][0].real)
            g = op.to_vector(Nk[k]) - 1j * k * shift * v_c
            new_vc = crit.projector.partial_inverse(g)
            new[k] = x * v_field + op.to_field(new_vc)
            new[-k] = np.conj(new[k])
            delta = (new - stack).mnorm()
            history.append(delta)
            stack, v_c = new, new_vc
            theta = picard_ratio(history, tol)
            if theta >= 1.0:
                raise ContractionError(
                    f"reduction map not contracting at x={x}, eps={eps} (ratio {theta:.3f})",
                    theta)
            if delta <= tol:
                break
        else:
            raise ContractionError(f"reduction did not converge in {self.max_iter} sweeps",
                                   picard_ratio(history, tol))
        Nk = prob.nonlinear_modes(stack)
        f = complex(np.vdot(crit.h, op.to_vector(Nk[k])) / gauge)
        return ReducedState(x, float(eps), d, f, stack, v_c, it, picard_ratio(history, tol),
                            history)

    def f(self, x, eps, d=None, **kw) -> complex:
        return self.solve(x, eps, d, **kw).f

    def residual(self, x, eps, d=None) -> complex:
        """x lambda(eps) - f(x) + i k* (dbar - d) x."""
        d = self.d_bar if d is None else d
        return x * self.lam(eps) - self.f(x, eps, d) + 1j * self.k_star * (self.d_bar - d) * x

    def sample_table(self, xs, eps_list, d=None):
        d = self.d_bar if d is None else d
        rows = []
        for e in eps_list:
            for x in xs:
                fx = self.f(x, e, d)
                rows.append({"x": float(x), "eps": float(e), "d": float(d),
                             "re_f": fx.real, "im_f": fx.imag})
        return rows


def write_reduced_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["x", "eps", "d", "re_f", "im_f"])
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(float(r[k])) for k in writer.fieldnames})


def split_complement(reduced: ReducedEquation, eps, u_proj: np.ndarray, d=None,
                     rest: ModeStack = None, tol_fix: float = None, max_iter: int = 200):
    """Fixed point v_c = L^dagger N_{k*}[u_proj + v_c] - i k* (dbar - d) L^dagger v_c
    with the zero mode and tail taken from `rest` (default zero).

    u_proj is an n x N field in the range of P; returns (v_c field, info).
    """
    d = reduced.d_bar if d is None else float(d)
    tol = reduced.tol_fix if tol_fix is None else tol_fix
    k = reduced.k_star
    prob = reduced.problem(eps)
    crit = reduced.critical(eps)
    op = crit.op
    base = prob.empty_stack() if rest is None else rest.copy()
    shift = reduced.d_bar - d
    v_c = np.zeros(op.size, dtype=complex)
    history = []
    for it in range(1, max_iter + 1):
        base[k] = u_proj + op.to_field(v_c)
        base[-k] = np.conj(base[k])
        Nk = prob.nonlinear_modes(base)
        new = crit.projector.partial_inverse(op.to_vector(Nk[k]) - 1j * k * shift * v_c)
        delta = DiscreteField(op.to_field(new - v_c), op.grid).norm_h2()
        history.append(delta)
        v_c = new
        theta = picard_ratio(history, tol)
        if theta >= 1.0:
            raise ContractionError(f"complement map not contracting (ratio {theta:.3f})", theta)
        if delta <= tol:
            break
    else:
        raise ContractionError("complement iteration did not converge",
                               picard_ratio(history, tol))
    u_norm = DiscreteField(u_proj, op.grid).norm_h2()
    vc_field = op.to_field(v_c)
    C = DiscreteField(vc_field, op.grid).norm_h2() / u_norm**2 if u_norm > 0 else 0.0
    return vc_field, {"iterations": it, "contraction_ratio": picard_ratio(history, tol),
                      "C_quadratic": C}


@dataclass
class RealnessReport:
    passed: bool
    mode: str
    max_im_lambda: float
    max_rel_im_f: float
    warnings: list

    def to_dict(self):
        return dict(self.__dict__)


def certify_realness(reduced: ReducedEquation, eps_samples, x_samples, tol_eig: float = 1e-8,
                     tol_red: float = 1e-6) -> RealnessReport:
    """O(2) realness check of the crossing eigenvalue and of f.

    With the real gauge of the eigenvector, the component of f along the
    imaginary direction (the part that O(2) symmetry forces to vanish) is
    Im f.  A failed check downgrades the equation to SO2 mode.
    """
    warnings = []
    sym = reduced.symmetry
    prof = reduced.problem(eps_samples[0]).profile
    if not sym.fixes_profile(prof.ubar, 1e-10):
        warnings.append("reflection does not fix the profile")
    im_lam = max(abs(reduced.lam(e).imag) for e in eps_samples)
    rel = 0.0
    for e in eps_samples:
        for x in x_samples:
            fx = reduced.f(x, e)
            if abs(fx) > 0:
                rel = max(rel, abs(fx.imag) / abs(fx))
    passed = not warnings and im_lam <= tol_eig and rel <= tol_red
    if not passed:
        if im_lam > tol_eig:
            warnings.append(f"crossing eigenvalue is complex (|Im| = {im_lam:.3e})")
        if rel > tol_red:
            warnings.append(f"reduced function is not real (relative Im = {rel:.3e})")
        warnings.append("downgraded to SO2 mode")
        reduced.symmetry_mode = "SO2"
    return RealnessReport(passed, reduced.symmetry_mode, float(im_lam), float(rel), warnings)
