"""Invariant checks run by the `verify` subcommand.

Each check returns a Check row; a failing row carries a hint naming the
configuration knob most likely responsible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .discretization import Grid1D, measure_inverse_norm_decay
from .errors import ConfigError, PipelineError
from .model import OperatorFamily
from .spectral import Contour, SpectralProjector
from .tail import ModeStack, StripProblem, SymmetryOps, analyze, solve_tail, synthesize

_REFINE = "increase [grid] N"
HINTS = {
    "profile_convergence": _REFINE,
    "kernel": _REFINE,
    "decay": "increase [verify] decay_N or lower decay_k",
    "dunford": "change [contour] radius or Q",
    "equivariance": "check [reflection] R and [tolerances] tol_fix",
}


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: str
    hint: str = ""
    seconds: float = 0.0

    def row(self):
        status = "PASS" if self.passed else "FAIL"
        line = f"{status}  {self.name:<28} {self.value:<12.4g} {self.limit}"
        if not self.passed and self.hint:
            line += f"  -> {self.hint}"
        return line


def _timed(fn):
    def run(*args, **kw):
        t = time.perf_counter()
        try:
            c = fn(*args, **kw)
        except PipelineError as exc:
            name = fn.__name__.replace("check_", "")
            hint = f"{type(exc).__name__}: {exc}"
            if name in HINTS:
                hint += f"; {HINTS[name]}"
            c = Check(name, False, float("nan"), "", hint)
        c.seconds = time.perf_counter() - t
        return c
    return run


@_timed
def check_profile_convergence(model, eps, L, N, tol_rh=1e-10):
    """Successive-refinement differences of the profile shrink like h^2."""
    grids = [Grid1D(L, N)]
    for _ in range(2):
        grids.append(grids[-1].refined())
    profs = [OperatorFamily(model, g, tol_rh).profile(eps) for g in grids]
    # compare on the coarse nodes
    coarse = [p.ubar[:, :: 2 ** i] for i, p in enumerate(profs)]
    d1 = np.abs(coarse[1] - coarse[0]).max()
    d2 = np.abs(coarse[2] - coarse[1]).max()
    factor = d1 / d2 if d2 > 0 else np.inf
    res = max(p.residual for p in profs)
    # a factor well above 4 means the grid is still pre-asymptotic
    ok = 3.5 <= factor <= 4.5 and res <= 1e-8
    return Check("profile_convergence", ok, factor, "in [3.5, 4.5], residual <= 1e-8",
                 f"grid too coarse for the asymptotic regime: {_REFINE}")


def kernel_residual(family, eps) -> float:
    """||L_0 ubar_x|| / ||ubar_x|| in discrete L^2 over the interior."""
    from .discretization import l2_norm_sq

    ux = family.profile(eps).ubar_x
    r = family.mode(eps, 0).apply(ux)
    return float(np.sqrt(l2_norm_sq(r, family.grid) / l2_norm_sq(ux, family.grid)))


@_timed
def check_kernel(family, eps):
    r = kernel_residual(family, eps)
    return Check("kernel_residual", r <= 1e-4, r, "<= 1e-4",
                 f"profile derivative is not a discrete kernel: {_REFINE}")


@_timed
def check_decay(model, eps, L, N, k_list, d=0.0, seed=0):
    fam = OperatorFamily(model, Grid1D(L, N))
    rep = measure_inverse_norm_decay(fam.coefficients(eps), d, k_list, seed=seed)
    ok = -2.2 <= rep.slope_inv <= -1.8 and -1.2 <= rep.slope_dx <= -0.8
    return Check("inverse_norm_decay", ok, rep.slope_inv,
                 f"slopes {rep.slope_inv:.3f}, {rep.slope_dx:.3f} in [-2.2,-1.8], [-1.2,-0.8]",
                 "resolve k h << 1: increase [verify] decay_N or lower decay_k")


@_timed
def check_dunford(family, eps, Q=32, radius=0.1, n_probes=5, seed=0):
    """Projector identities of the zero mode operator about its kernel."""
    op = family.mode(eps, 0)
    proj = SpectralProjector(op, Contour(0.0, radius, Q))
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
        Pv = proj.apply(v)
        e1 = np.linalg.norm(proj.apply(Pv) - Pv)
        e2 = np.linalg.norm(op.matvec(proj.partial_inverse(v)) - (v - Pv))
        err = max(err, (e1 + e2) / np.linalg.norm(v))
    return Check("dunford_identities", err <= 1e-8, err, "<= 1e-8",
                 "contour too close to the spectrum: change [contour] radius or Q")


@_timed
def check_parseval(grid, K, n=1, seed=0):
    rng = np.random.default_rng(seed)
    w = ModeStack(grid, K, n)
    env = np.exp(-grid.x**2 / 4)
    for k in range(0, K + 1):
        c = (rng.standard_normal((n, grid.N)) + 1j * rng.standard_normal((n, grid.N))) * env
        if k == 0:
            c = c.real
        w[k] = c / (1 + k) ** 3
        w[-k] = np.conj(w[k])
    u = synthesize(w, 2 * K + 2)
    lhs = u.norm_sq()
    rhs = sum(float(np.sum(grid.weights * np.abs(w[k]) ** 2)) for k in w.ks)
    err = abs(lhs - rhs) / rhs
    back = analyze(u, K)
    err = max(err, np.abs(back.data - w.data).max())
    return Check("parseval_roundtrip", err <= 1e-10, err, "<= 1e-10", "")


@_timed
def check_equivariance(problem: StripProblem, reflection=None, amplitude=1e-2, shift=0.7):
    """tail(tau_c base) = tau_c tail(base); likewise for the reflection."""
    n = problem.n
    sym = SymmetryOps(reflection, shift, n=n)
    k = problem.k_star
    x = problem.grid.x
    base = problem.empty_stack()
    bump = amplitude * np.exp(-x**2)[None, :] * np.ones((n, 1))
    base[k] = bump * (1.0 + 0.5j)
    base[-k] = np.conj(base[k])
    d = problem.d_bar
    w, _ = solve_tail(problem, base, d)
    wt, _ = solve_tail(problem, sym.translate(base), d)
    err = (wt - sym.translate(w)).mnorm()
    if sym.fixes_profile(problem.profile.ubar, 1e-10):
        wr, _ = solve_tail(problem, sym.reflect(base), d)
        err = max(err, (wr - sym.reflect(w)).mnorm())
    tol = 10 * problem.tol_fix
    return Check("tail_equivariance", err <= tol, err, f"<= {tol:.1e}", "")


@_timed
def check_reflection(reflection, n):
    try:
        SymmetryOps(reflection, n=n)
    except ConfigError as exc:
        R = np.atleast_2d(np.asarray(reflection, float))
        defect = float(np.abs(R.T @ R - np.eye(R.shape[0])).max()) if R.size == n * n else np.inf
        return Check("reflection_orthogonal", False, defect, "R^T R = I",
                     f"{exc}: fix [reflection] R")
    return Check("reflection_orthogonal", True, 0.0, "R^T R = I")


def run_checks(cfg, model, family, eps) -> list:
    from .config import reflection_matrix

    rows = []
    n = model.n
    try:
        R = reflection_matrix(cfg, n)
    except ConfigError as exc:
        R = None
        rows.append(Check("reflection_orthogonal", False, float("nan"), "R^T R = I", str(exc)))
    else:
        rows.append(check_reflection(R, n))
    rows.append(check_parseval(family.grid, cfg.K_max, n, cfg.seed))
    if family.has_flux:
        rows.append(check_profile_convergence(model, eps, cfg.L, cfg.N, cfg.tolerances["tol_rh"]))
        rows.append(check_kernel(family, eps))
        rows.append(check_dunford(family, eps, cfg.Q, cfg.radius, seed=cfg.seed))
    rows.append(check_decay(model, eps, cfg.decay_L, cfg.decay_N, cfg.decay_k, cfg.d_track,
                            cfg.seed))
    if family.has_flux and cfg.k_star is not None and rows[0].passed:
        try:
            prob = StripProblem(family, eps, min(cfg.K_max, 8), cfg.k_star, cfg.d_track,
                                cfg.tolerances["tol_fix"], cfg.threads)
            rows.append(check_equivariance(prob, R))
        except PipelineError as exc:
            rows.append(Check("tail_equivariance", False, float("nan"), "", str(exc)))
    elif not rows[0].passed:
        rows.append(Check("tail_equivariance", False, float("nan"), "",
                          "reflection checks need an orthogonal R: fix [reflection] R"))
    return rows
