"""Truncated-line grids, banded mode operators and resolvent solves.

The mode operator acting on the k-th transverse Fourier coefficient is

    L_k^d u = (A u)' + i k B u + (k^2 - i k d) u - u''

discretized with second-order centered differences, (A u)' in conservation
form with midpoint averages of A.  Homogeneous Dirichlet conditions at
x = -L and x = +L are imposed by elimination: the matrix acts on the
interior unknowns only, ordered node-major (node index, then component).
That keeps the truncation from adding spurious eigenvalues.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import ConfigError, NearSpectrumError


class Grid1D:
    """Uniform grid on [-L, L] with an odd number of nodes, so that x = 0 is
    the middle node."""

    def __init__(self, L: float, N: int):
        if not L > 0:
            raise ConfigError(f"grid half-width must be positive, got {L}")
        N = int(N)
        if N < 5 or N % 2 == 0:
            raise ConfigError(f"grid point count must be odd and >= 5, got {N}")
        self.L = float(L)
        self.N = N
        self.h = 2.0 * self.L / (N - 1)
        self.mid = (N - 1) // 2
        x = -self.L + self.h * np.arange(N)
        x[self.mid] = 0.0
        self.x = x

    def refined(self) -> "Grid1D":
        """Same interval with the spacing halved."""
        return Grid1D(self.L, 2 * self.N - 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.N, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def __eq__(self, other):
        return isinstance(other, Grid1D) and other.L == self.L and other.N == self.N

    def __hash__(self):
        return hash((self.L, self.N))

    def __repr__(self):
        return f"Grid1D(L={self.L}, N={self.N})"


def ddx(u: np.ndarray, h: float) -> np.ndarray:
    """First derivative along the last axis: centered inside, second-order
    one-sided at the ends."""
    return np.gradient(u, h, axis=-1, edge_order=2)


def d2dx2(u: np.ndarray, h: float) -> np.ndarray:
    """Second derivative along the last axis (second order everywhere)."""
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / h**2
    out[..., 0] = (2.0 * u[..., 0] - 5.0 * u[..., 1] + 4.0 * u[..., 2] - u[..., 3]) / h**2
    out[..., -1] = (2.0 * u[..., -1] - 5.0 * u[..., -2] + 4.0 * u[..., -3] - u[..., -4]) / h**2
    return out


def l2_inner(u: np.ndarray, v: np.ndarray, grid: Grid1D) -> complex:
    """Trapezoid approximation of the integral of u . conj(v) over x."""
    return complex(np.sum(grid.weights * np.sum(u * np.conj(v), axis=0)))


def l2_norm_sq(u: np.ndarray, grid: Grid1D) -> float:
    return float(np.sum(grid.weights * np.sum(np.abs(u) ** 2, axis=tuple(range(u.ndim - 1)))))


class DiscreteField:
    """An n x N complex sample array on a grid, with Sobolev-type norms."""

    def __init__(self, values, grid: Grid1D):
        values = np.asarray(values, dtype=complex)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[-1] != grid.N:
            raise ConfigError(f"field has {values.shape[-1]} samples, grid has {grid.N}")
        self.values = values
        self.grid = grid

    @property
    def n(self):
        return self.values.shape[0]

    def norm_l2(self) -> float:
        return np.sqrt(l2_norm_sq(self.values, self.grid))

    def norm_h1(self) -> float:
        du = ddx(self.values, self.grid.h)
        return np.sqrt(l2_norm_sq(self.values, self.grid) + l2_norm_sq(du, self.grid))

    def norm_h2(self) -> float:
        h = self.grid.h
        u = self.values
        return np.sqrt(l2_norm_sq(u, self.grid) + l2_norm_sq(ddx(u, h), self.grid)
                       + l2_norm_sq(d2dx2(u, h), self.grid))

    def __repr__(self):
        return f"DiscreteField(n={self.n}, grid={self.grid!r})"


@dataclass(frozen=True)
class LinearCoefficients:
    """Samples of the linearized flux Jacobians on a grid.

    `mode_potential(k)` may return an (N, n, n) array added to the diagonal
    blocks of mode k only; `mode_lowrank(k)` may return a pair (U, V) of
    interior-space matrices whose product U V^H is added to mode k.
    """

    grid: Grid1D
    A: np.ndarray
    B: np.ndarray
    eps: float = 0.0
    mode_potential: Optional[Callable[[int], Optional[np.ndarray]]] = None
    mode_lowrank: Optional[Callable[[int], Optional[tuple]]] = None

    @property
    def n(self) -> int:
        return self.A.shape[1]


def _as_coefficients(source, eps, grid) -> LinearCoefficients:
    if isinstance(source, LinearCoefficients):
        return source
    if hasattr(source, "linear_coefficients"):
        return source.linear_coefficients(eps, grid)
    raise TypeError(f"cannot linearize {type(source).__name__}")


class ModeOperator:
    """Banded complex matrix of L_k^d on the interior unknowns, with a cache
    of LU factorizations of (lambda I - L_k^d)."""

    def __init__(self, coeffs: LinearCoefficients, k: int, d: float = 0.0):
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.k = int(k)
        self.d = float(d)
        self.eps = coeffs.eps
        self.n = n = coeffs.n
        N = self.grid.N
        self.size = n * (N - 2)
        self.kl = self.ku = 2 * n - 1
        self._lock = threading.Lock()
        self._factors = {}

        h = self.grid.h
        A = np.asarray(coeffs.A, dtype=complex)
        B = np.asarray(coeffs.B, dtype=complex)
        eye = np.eye(n)
        A_half = 0.5 * (A[:-1] + A[1:])           # A at x_{i+1/2}
        Am, Ap = A_half[:-1], A_half[1:]          # for interior nodes 1..N-2
        kk = self.k
        diag = ((Ap - Am) / (2 * h) + (2.0 / h**2 + kk * kk - 1j * kk * self.d) * eye
                + 1j * kk * B[1:-1])
        pot = coeffs.mode_potential(kk) if coeffs.mode_potential else None
        if pot is not None:
            diag = diag + np.asarray(pot)[1:-1]
        self.diag = diag
        self.upper = Ap / (2 * h) - eye / h**2     # couples node i to i+1
        self.lower = -Am / (2 * h) - eye / h**2    # couples node i to i-1

        lr = coeffs.mode_lowrank(kk) if coeffs.mode_lowrank else None
        if lr is not None:
            U, V = (np.asarray(m, dtype=complex) for m in lr)
            if U.ndim == 1:
                U, V = U[:, None], V[:, None]
            self.lowrank = (U, V)
        else:
            self.lowrank = None
        self._band = self._band_storage()

    # -- layout helpers ---------------------------------------------------
    def to_vector(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[None, :]
        return np.ascontiguousarray(values[:, 1:-1].T).reshape(-1).astype(complex)

    def to_field(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.grid.N), dtype=complex)
        out[:, 1:-1] = np.asarray(vec).reshape(self.grid.N - 2, self.n).T
        return out

    # -- matrix views -----------------------------------------------------
    def _band_storage(self) -> np.ndarray:
        n, m, kl, ku = self.n, self.size, self.kl, self.ku
        ab = np.zeros((2 * kl + ku + 1, m), dtype=complex)
        nodes = self.grid.N - 2
        for a in range(n):
            for b in range(n):
                rows = np.arange(nodes) * n + a
                for blocks, shift in ((self.diag, 0), (self.upper, 1), (self.lower, -1)):
                    sel = slice(0, nodes - 1) if shift == 1 else (
                        slice(1, nodes) if shift == -1 else slice(0, nodes))
                    r = rows[sel]
                    c = r - a + b + shift * n
                    ab[kl + ku + r - c, c] = blocks[sel, a, b]
        return ab

    def band_matrix(self) -> sp.csr_matrix:
        """The banded part as a sparse matrix (low-rank terms excluded)."""
        kl, ku, m = self.kl, self.ku, self.size
        offsets = list(range(ku, -kl - 1, -1))
        data = [self._band[kl + ku - o] for o in offsets]
        return sp.dia_matrix((np.array(data), offsets), shape=(m, m)).tocsr()

    def dense(self) -> np.ndarray:
        M = self.band_matrix().toarray()
        if self.lowrank is not None:
            U, V = self.lowrank
            M = M + U @ V.conj().T
        return M

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        out = self.band_matrix() @ vec
        if self.lowrank is not None:
            U, V = self.lowrank
            out = out + U @ (V.conj().T @ vec)
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Interior stencil action on a full-grid field (boundary values are
        used by the stencil; the returned boundary entries are zero)."""
        u = np.asarray(values, dtype=complex)
        if u.ndim == 1:
            u = u[None, :]
        uc = u[:, 1:-1].T
        res = (np.einsum("iab,ib->ia", self.diag, uc)
               + np.einsum("iab,ib->ia", self.upper, u[:, 2:].T)
               + np.einsum("iab,ib->ia", self.lower, u[:, :-2].T))
        out = np.zeros_like(u)
        out[:, 1:-1] = res.T
        if self.lowrank is not None:
            U, V = self.lowrank
            out += self.to_field(U @ (V.conj().T @ self.to_vector(u)))
        return out

    # -- shifted solves ---------------------------------------------------
    def factor(self, lam: complex, tol_sing: float = 1e-12):
        """LU of (lam I - L_band), cached by lam.

        Partial pivoting does not expose near-singularity for these
        diagonally dominant stencils, so the diagnostic is a reciprocal
        condition estimate from one solve with a fixed probe vector:
        rcond = |b| / (|x| |lam I - L|) in the max norm.  Below tol_sing the
        shift is treated as lying on the spectrum.
        """
        lam = complex(lam)
        with self._lock:
            hit = self._factors.get(lam)
        if hit is not None:
            return hit
        kl, ku = self.kl, self.ku
        ab = -self._band.copy()
        ab[kl + ku] += lam
        lu, piv, info = lapack.zgbtrf(ab, kl, ku)
        piv_diag = np.abs(lu[kl + ku])
        ratio = piv_diag.min() / piv_diag.max() if piv_diag.max() > 0 else 0.0
        if info != 0:
            raise NearSpectrumError(
                f"shift {lam} is an exact eigenvalue of L_{self.k}", shift=lam, pivot_ratio=0.0)
        mat_norm = np.abs(ab[kl:]).sum(axis=0).max()
        probe = self._probe()
        x, _ = lapack.zgbtrs(lu, kl, ku, probe[:, None], piv)
        rcond = 1.0 / (np.abs(x).max() * mat_norm)
        if not np.isfinite(rcond) or rcond < tol_sing:
            raise NearSpectrumError(
                f"shift {lam} lies on the discrete spectrum of L_{self.k} "
                f"(rcond {rcond:.3e}, pivot ratio {ratio:.3e})", shift=lam, pivot_ratio=rcond)
        entry = {"lu": lu, "piv": piv, "pivot_ratio": ratio, "rcond": rcond}
        if self.lowrank is not None:
            U, V = self.lowrank
            BU = self._band_solve(entry, U, 0)
            BhV = self._band_solve(entry, V, 2)
            cap = np.eye(U.shape[1]) - V.conj().T @ BU
            s = np.linalg.svd(cap, compute_uv=False)
            if s.min() < tol_sing * max(1.0, s.max()):
                raise NearSpectrumError(
                    f"shift {lam} lies on the discrete spectrum of L_{self.k} "
                    f"(capacitance ratio {s.min():.3e})", shift=lam, pivot_ratio=s.min())
            entry.update(BU=BU, BhV=BhV, cap=cap)
        with self._lock:
            self._factors[lam] = entry
        return entry

    def _probe(self):
        phase = np.exp(2j * np.pi * np.sqrt(2.0) * np.arange(self.size) ** 2)
        return phase

    def _band_solve(self, entry, rhs, trans):
        rhs = np.asarray(rhs, dtype=complex)
        vec = rhs.ndim == 1
        b = rhs[:, None] if vec else rhs
        x, info = lapack.zgbtrs(entry["lu"], self.kl, self.ku, b, entry["piv"], trans=trans)
        return x[:, 0] if vec else x

    def solve_shifted(self, lam: complex, rhs: np.ndarray, adjoint: bool = False,
                      tol_sing: float = 1e-12) -> np.ndarray:
        """(lam I - L)^{-1} rhs, or (lam I - L)^{-H} rhs when adjoint."""
        entry = self.factor(lam, tol_sing)
        trans = 2 if adjoint else 0
        x = self._band_solve(entry, rhs, trans)
        if self.lowrank is None:
            return x
        # Woodbury for (B - U V^H)^{-1} and its adjoint (B^H - V U^H)^{-1}.
        U, V = self.lowrank
        if not adjoint:
            corr = entry["BU"] @ np.linalg.solve(entry["cap"], V.conj().T @ x)
        else:
            corr = entry["BhV"] @ np.linalg.solve(entry["cap"].conj().T, U.conj().T @ x)
        return x + corr

    def clear_cache(self):
        with self._lock:
            self._factors.clear()

    def __repr__(self):
        return f"ModeOperator(k={self.k}, d={self.d}, n={self.n}, grid={self.grid!r})"


def assemble_mode_operator(source, k: int, d: float = 0.0, eps: float = None,
                           grid: Grid1D = None) -> ModeOperator:
    """Assemble L_k^d from linear coefficients, a shock profile or a direct
    operator model (the last needs eps and grid)."""
    return ModeOperator(_as_coefficients(source, eps, grid), k, d)


def resolvent_solve(op: ModeOperator, lam: complex, f, tol_sing: float = 1e-12):
    """Solve (lam I - L) u = f for a DiscreteField (or n x N array) f."""
    values = f.values if isinstance(f, DiscreteField) else np.asarray(f)
    x = op.solve_shifted(lam, op.to_vector(values), tol_sing=tol_sing)
    return DiscreteField(op.to_field(x), op.grid)


def bilinear_form(coeffs: LinearCoefficients, k: int, d: float, u: np.ndarray,
                  w: np.ndarray) -> complex:
    """Weak form  int -A u . w' + i k B u . w + (k^2 - i k d) u . w + u' . w'
    (bars on w), for fields vanishing at the ends."""
    grid = coeffs.grid
    h = grid.h
    u = np.atleast_2d(u)
    w = np.atleast_2d(w)
    Au = np.einsum("iab,bi->ai", coeffs.A, u)
    Bu = np.einsum("iab,bi->ai", coeffs.B, u)
    zeroth = 1j * k * Bu + (k * k - 1j * k * d) * u
    if coeffs.mode_potential is not None:
        pot = coeffs.mode_potential(k)
        if pot is not None:
            zeroth = zeroth + np.einsum("iab,bi->ai", pot, u)
    du, dw = ddx(u, h), ddx(w, h)
    return l2_inner(-Au, dw, grid) + l2_inner(zeroth, w, grid) + l2_inner(du, dw, grid)


# -- inverse-norm decay ---------------------------------------------------

def _derivative_matrix(grid: Grid1D, n: int, order: int) -> sp.csr_matrix:
    """Sparse map from interior-unknown vectors to the order-th x-derivative
    on the full grid (node-major), matching ddx / d2dx2."""
    N, h = grid.N, grid.h
    E = sp.eye(N, format="csr")[:, 1:-1]      # zero-extend interior to full grid
    if order == 1:
        D = sp.diags([-0.5, 0.5], [-1, 1], shape=(N, N), format="lil") / h
        D[0, :3] = np.array([-1.5, 2.0, -0.5]) / h
        D[N - 1, N - 3:] = np.array([0.5, -2.0, 1.5]) / h
    else:
        D = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(N, N), format="lil") / h**2
        D[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        D[N - 1, N - 4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    D = sp.csr_matrix(D) @ E
    return sp.kron(D, sp.eye(n), format="csr")


@dataclass
class DecayReport:
    """Estimated operator norms of L_k^{-1}, d/dx L_k^{-1} and d2/dx2 L_k^{-1}
    (all from L^2) with their log-log slopes in k."""

    k: list
    inv_norm: list
    dx_norm: list
    dxx_norm: list
    slope_inv: float
    slope_dx: float
    slope_dxx: float
    converged: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in self.__dataclass_fields__}


def _top_singular_value(apply_T, apply_TH, shape, rng, max_iter, tol):
    """Largest singular value of a matrix-free operator by ARPACK (Lanczos
    bidiagonalization); NaN if it does not converge."""
    T = spla.LinearOperator(shape, matvec=lambda v: apply_T(np.ravel(v)),
                            rmatvec=lambda y: apply_TH(np.ravel(y)), dtype=complex)
    v0 = rng.standard_normal(shape[1]) + 1j * rng.standard_normal(shape[1])
    try:
        s = spla.svds(T, k=1, tol=tol, v0=v0, maxiter=max_iter * shape[1],
                      return_singular_vectors=False)
        return float(s[0]), True
    except spla.ArpackNoConvergence:
        return float("nan"), False


def measure_inverse_norm_decay(source, d: float, k_list, eps: float = None,
                               grid: Grid1D = None, max_iter: int = 30,
                               tol: float = 1e-8, seed: int = 0) -> DecayReport:
    """Lanczos estimates of L^2 operator norms of the inverse mode
    operators and their first two x-derivatives.  Norms are taken in the
    trapezoid-weighted L^2; on a uniform grid the interior weights are all h
    so the plain Euclidean estimate of the inverse norm is exact, while the
    derivative outputs carry the full trapezoid weights."""
    coeffs = _as_coefficients(source, eps, grid)
    g = coeffs.grid
    rng = np.random.default_rng(seed)
    ks = [int(k) for k in k_list]
    out = {"inv": [], "dx": [], "dxx": []}
    conv = []
    w_out = np.sqrt(np.repeat(g.weights, coeffs.n) / g.h)
    for k in ks:
        op = ModeOperator(coeffs, k, d)
        solve = lambda v: -op.solve_shifted(0.0, v)
        solve_h = lambda v: -op.solve_shifted(0.0, v, adjoint=True)
        cv = []
        for key, order in (("inv", 0), ("dx", 1), ("dxx", 2)):
            if order == 0:
                T, TH = solve, solve_h
            else:
                D = _derivative_matrix(g, coeffs.n, order)
                T = lambda v, D=D: w_out * (D @ solve(v))
                TH = lambda y, D=D: solve_h(D.conj().T @ (w_out * y))
            rows = op.size if order == 0 else g.N * coeffs.n
            s, ok = _top_singular_value(T, TH, (rows, op.size), rng, max_iter, tol)
            out[key].append(s)
            cv.append(ok)
        conv.append(all(cv))
    logk = np.log(ks)
    slope = lambda vals: float(np.polyfit(logk, np.log(vals), 1)[0]) if len(ks) > 1 else float("nan")
    return DecayReport(ks, out["inv"], out["dx"], out["dxx"], slope(out["inv"]),
                       slope(out["dx"]), slope(out["dxx"]), conv)
