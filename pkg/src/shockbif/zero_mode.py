"""The longitudinal (k = 0) mode.

Integrating L_0 u = -(R1)_x once gives the first-order problem
u' - A u = R1 on the line, whose kernel is spanned by the profile
derivative.  It is discretized with the box scheme on the N - 1 cells,
closed by one row per growing direction at each end and one phase row
<u(0), l> = 0 (l = ubar_x(0) by default), which gives a square system.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import l2_norm_sq
from .errors import ContractionError, LaxViolation, ModelError
from .model import ShockProfile, boundary_rows


class IntegratedOperator:
    """Bordered box-scheme matrix for u' - A u with boundary and phase rows."""

    def __init__(self, profile: ShockProfile, phase_vector=None, cond_max: float = 1e12):
        self.profile = profile
        self.grid = grid = profile.grid
        self.n = n = profile.n
        A, _ = profile.jacobians()
        self.A = A
        lax = profile.lax
        if lax is None or not lax.passed:
            raise LaxViolation("the bordered zero-mode system needs a Lax shock")
        self.rows_minus, self.rows_plus = boundary_rows(lax.A_minus, lax.A_plus)
        self.phase = (profile.ubar_x[:, grid.mid].copy() if phase_vector is None
                      else np.asarray(phase_vector, float))
        if abs(self.phase @ profile.ubar_x[:, grid.mid]) < 1e-12:
            raise ModelError("phase functional must not annihilate ubar_x(0)")
        self.n_cell_rows = (grid.N - 1) * n
        self.matrix = self._assemble()
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise LaxViolation(f"bordered system is {self.matrix.shape}, not square")
        self._lu = spla.splu(self.matrix.tocsc())
        self.cond_max = cond_max
        self._cond = None

    def _assemble(self):
        g, n, h = self.grid, self.n, self.grid.h
        N = g.N
        I = np.eye(n)
        A_half = 0.5 * (self.A[:-1] + self.A[1:])
        left = -I / h - 0.5 * A_half
        right = I / h - 0.5 * A_half
        rows, cols, vals = [], [], []
        for i in range(N - 1):
            for a in range(n):
                r = i * n + a
                rows += [r] * (2 * n)
                cols += list(range(i * n, i * n + n)) + list(range((i + 1) * n, (i + 2) * n))
                vals += list(left[i, a]) + list(right[i, a])
        r = self.n_cell_rows
        for block, node in ((self.rows_minus, 0), (self.rows_plus, N - 1)):
            for row in block:
                rows += [r] * n
                cols += list(range(node * n, node * n + n))
                vals += list(row)
                r += 1
        rows += [r] * n
        cols += list(range(g.mid * n, g.mid * n + n))
        vals += list(self.phase)
        r += 1
        return sp.csr_matrix((vals, (rows, cols)), shape=(r, N * n))

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Full bordered matrix applied to an n x N field (all rows)."""
        return self.matrix @ np.asarray(u).T.reshape(-1)

    def cell_residual(self, u: np.ndarray) -> np.ndarray:
        """Box-scheme rows (u_{i+1} - u_i)/h - A_{i+1/2}(u_i + u_{i+1})/2 as an
        n x (N - 1) array."""
        return self.apply(u)[: self.n_cell_rows].reshape(-1, self.n).T

    def kernel_residual(self) -> float:
        """Discrete L^2 size of the box rows applied to ubar_x, relative to
        ubar_x."""
        ux = self.profile.ubar_x
        res = self.cell_residual(ux)
        return float(np.sqrt(self.grid.h * np.sum(res**2) / l2_norm_sq(ux, self.grid)))

    def rhs_from_nodes(self, f: np.ndarray) -> np.ndarray:
        f = np.atleast_2d(f)
        mid = 0.5 * (f[:, 1:] + f[:, :-1])
        out = np.zeros(self.matrix.shape[0], dtype=f.dtype)
        out[: self.n_cell_rows] = mid.T.reshape(-1)
        return out

    def solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            x = self._lu.solve(rhs.real.copy()) + 1j * self._lu.solve(rhs.imag.copy())
        else:
            x = self._lu.solve(rhs.astype(float))
        return x.reshape(self.grid.N, self.n).T

    def condition(self) -> float:
        """1-norm condition estimate of the bordered matrix."""
        if self._cond is None:
            inv = spla.LinearOperator(self.matrix.shape, matvec=self._lu.solve,
                                      rmatvec=lambda b: self._lu.solve(b, trans="T"),
                                      dtype=float)
            self._cond = float(spla.norm(self.matrix, 1) * spla.onenormest(inv))
        return self._cond

    def diagnostics(self) -> dict:
        return {"kernel_residual": self.kernel_residual(), "cond": self.condition()}


def assemble_bordered(profile: ShockProfile, eps=None, grid=None,
                      phase_vector=None) -> IntegratedOperator:
    if grid is not None and grid != profile.grid:
        raise ModelError("profile grid differs from the requested grid")
    return IntegratedOperator(profile, phase_vector)


def solve_zero_linear(op: IntegratedOperator, f: np.ndarray) -> np.ndarray:
    """Unique u0 with box-scheme u0' - A u0 = f and <u0(0), l> = 0; f is
    given at the nodes and averaged onto cells."""
    return op.solve_rhs(op.rhs_from_nodes(f))


def zero_gain(op: IntegratedOperator, f, u) -> float:
    """Ratio ||u|| / ||f|| in discrete L^2 (the constant reported for a solve)."""
    nf = l2_norm_sq(np.atleast_2d(f), op.grid)
    return float(np.sqrt(l2_norm_sq(np.atleast_2d(u), op.grid) / nf)) if nf > 0 else 0.0


def solve_zero_nonlinear(problem, stack, tol_fix=None, max_iter=200):
    """Picard iteration for the zero mode with the other modes held fixed.

    `problem` is a tail.StripProblem (it knows the nonlinearity and the
    bordered operator at its eps); `stack` supplies u_{+-k*} and the tail.
    Returns (u0, info) with the contraction ratio and the quadratic
    constant ||u0||_H2 / (||u_k*||^2 + ||u_-k*||^2).
    """
    from .tail import picard_ratio

    tol_fix = problem.tol_fix if tol_fix is None else tol_fix
    op = problem.zero_operator
    work = stack.copy()
    history = []
    u0 = work[0].real.copy()
    for it in range(1, max_iter + 1):
        work[0] = u0
        R1_0 = problem.flux_remainder_zero(work)
        new = solve_zero_linear(op, R1_0)
        delta = float(np.sqrt(l2_norm_sq(new - u0, op.grid)))
        history.append(delta)
        u0 = new
        theta = picard_ratio(history, tol_fix)
        if theta >= 1.0:
            raise ContractionError(f"zero-mode map not contracting (ratio {theta:.3f})", theta)
        if delta <= tol_fix:
            break
    else:
        raise ContractionError(f"zero-mode Picard did not converge in {max_iter} sweeps",
                               picard_ratio(history, tol_fix))
    k = problem.k_star
    amp = stack.mode_norm_h2(k) ** 2 + stack.mode_norm_h2(-k) ** 2
    from .discretization import DiscreteField
    info = {"iterations": it, "contraction_ratio": picard_ratio(history, tol_fix),
            "C_quadratic": DiscreteField(u0, op.grid).norm_h2() / amp if amp > 0 else 0.0,
            "history": history}
    return u0, info
