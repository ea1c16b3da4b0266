"""Contour-integral spectral projections, the partial inverse on the
spectral complement, eigenpair extraction and crossing tracking.

The operators handled here only need `size`, `matvec(v)` and
`solve_shifted(lam, v, adjoint=False)` returning (lam - L)^{-1} v (or its
adjoint).  ModeOperator provides these; DenseOperator and BlockOperator
wrap small matrices and block-diagonal strips of modes.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from .errors import (ConfigError, NearSpectrumError, SimplicityError, SpectralError,
                     TrackingError)


class DenseOperator:
    """Small dense matrix with cached LU factors of lam - M."""

    def __init__(self, matrix, tol_sing: float = 1e-12):
        self.matrix = np.asarray(matrix, dtype=complex)
        self.size = self.matrix.shape[0]
        self.tol_sing = tol_sing
        self._lu = {}

    def matvec(self, v):
        return self.matrix @ v

    def norm_estimate(self):
        return float(np.abs(self.matrix).sum(axis=1).max())

    def solve_shifted(self, lam, rhs, adjoint=False, tol_sing=None):
        lam = complex(lam)
        if lam not in self._lu:
            S = lam * np.eye(self.size) - self.matrix
            s = np.linalg.svd(S, compute_uv=False)
            tol = self.tol_sing if tol_sing is None else tol_sing
            if s[-1] <= tol * max(s[0], 1.0):
                raise NearSpectrumError(f"shift {lam} lies on the spectrum", shift=lam,
                                        pivot_ratio=s[-1] / max(s[0], 1.0))
            self._lu[lam] = sla.lu_factor(S)
        return sla.lu_solve(self._lu[lam], rhs, trans=2 if adjoint else 0)


class BlockOperator:
    """Block-diagonal operator, e.g. the strip operator restricted to a
    finite set of Fourier modes."""

    def __init__(self, blocks):
        self.blocks = list(blocks)
        self.sizes = [b.size for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.size = int(self.offsets[-1])

    def _split(self, v):
        return [v[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.blocks))]

    def matvec(self, v):
        return np.concatenate([b.matvec(p) for b, p in zip(self.blocks, self._split(v))])

    def norm_estimate(self):
        return max(_norm_estimate(b) for b in self.blocks)

    def solve_shifted(self, lam, rhs, adjoint=False, tol_sing=None):
        kw = {} if tol_sing is None else {"tol_sing": tol_sing}
        return np.concatenate([b.solve_shifted(lam, p, adjoint=adjoint, **kw)
                               for b, p in zip(self.blocks, self._split(rhs))])


def _norm_estimate(op):
    if hasattr(op, "norm_estimate"):
        return op.norm_estimate()
    band = getattr(op, "_band", None)
    if band is not None:
        return float(np.abs(band).sum(axis=0).max())
    return 1.0


def _as_vector(op, v):
    v = np.asarray(v, dtype=complex)
    if v.ndim == 2 and hasattr(op, "to_vector") and v.shape[-1] == op.grid.N:
        return op.to_vector(v), True
    return v, False


class Contour:
    """Circle centered at `center` with Q trapezoid nodes.  The weights are
    normalized so that sum_j w_j g(lam_j) approximates (1/2 pi i) of the
    contour integral of g."""

    def __init__(self, center: complex, radius: float, Q: int = 32):
        if not radius > 0:
            raise ConfigError("contour radius must be positive")
        Q = int(Q)
        if Q < 2 or Q & (Q - 1):
            raise ConfigError(f"quadrature node count must be a power of two, got {Q}")
        self.center = complex(center)
        self.radius = float(radius)
        self.Q = Q
        theta = 2.0 * np.pi * np.arange(Q) / Q
        self.offsets = self.radius * np.exp(1j * theta)
        self.nodes = self.center + self.offsets
        self.weights = self.offsets / Q

    def encloses(self, z) -> bool:
        return abs(complex(z) - self.center) < self.radius

    def circle_check(self) -> complex:
        """Quadrature of the integral of dlam / (lam - center), i.e. 2 pi i."""
        return complex(2j * np.pi * np.sum(self.weights / self.offsets))

    def doubled(self) -> "Contour":
        return Contour(self.center, self.radius, 2 * self.Q)

    def to_dict(self):
        return {"center_re": self.center.real, "center_im": self.center.imag,
                "radius": self.radius, "Q": self.Q}


class SpectralProjector:
    """Riesz projector of `op` for the spectrum inside `contour`, together
    with the partial inverse on the spectral complement.

    With adaptive=True the node count is doubled (from contour.Q) until the
    projection of a fixed probe changes by less than tol_adapt relative.
    """

    def __init__(self, op, contour: Contour, adaptive: bool = False, tol_adapt: float = 1e-9,
                 Q_max: int = 512, threads: int = 1, tol_sing: float = 1e-12):
        self.op = op
        self.threads = max(1, int(threads))
        self.tol_sing = tol_sing
        self.contour = contour
        self._prime()
        if adaptive:
            probe = np.exp(2j * np.pi * np.sqrt(3.0) * np.arange(op.size) ** 2)
            current = self.apply(probe)
            while self.contour.Q < Q_max:
                self.contour = self.contour.doubled()
                self._prime()
                refined = self.apply(probe)
                change = np.linalg.norm(refined - current) / np.linalg.norm(probe)
                current = refined
                if change < tol_adapt:
                    break

    def _prime(self):
        """Factor lam_j - L at every node (raises at a node on the spectrum)."""
        if hasattr(self.op, "factor"):
            self._map(lambda lam: self.op.factor(lam, self.tol_sing), self.contour.nodes)
        else:
            probe = np.zeros(self.op.size, dtype=complex)
            self._map(lambda lam: self.op.solve_shifted(lam, probe), self.contour.nodes)

    def _map(self, fn, items):
        if self.threads == 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, items))

    def _integrate(self, v, scale, adjoint=False):
        c = self.contour
        terms = self._map(lambda lam: self.op.solve_shifted(lam, v, adjoint=adjoint),
                          c.nodes)
        w = c.weights * scale
        if adjoint:
            w = np.conj(w)
        total = np.zeros_like(terms[0])
        for wj, tj in zip(w, terms):      # fixed summation order
            total += wj * tj
        return total

    def apply(self, v):
        """Pi v."""
        vec, was_field = _as_vector(self.op, v)
        out = self._integrate(vec, np.ones(self.contour.Q))
        return self.op.to_field(out) if was_field else out

    def apply_adjoint(self, v):
        """Pi^H v (Euclidean adjoint)."""
        vec, was_field = _as_vector(self.op, v)
        out = self._integrate(vec, np.ones(self.contour.Q), adjoint=True)
        return self.op.to_field(out) if was_field else out

    def complement(self, v):
        """(I - Pi) v."""
        return np.asarray(v, dtype=complex) - self.apply(v)

    def partial_inverse(self, f):
        """L^dagger f = -(1/2 pi i) contour integral of lam^{-1}(lam - L)^{-1} f."""
        if not self.contour.encloses(0.0):
            raise SpectralError("partial inverse needs a contour enclosing 0")
        vec, was_field = _as_vector(self.op, f)
        out = self._integrate(vec, -1.0 / self.contour.nodes)
        return self.op.to_field(out) if was_field else out

    def partial_inverse_adjoint(self, f):
        vec, was_field = _as_vector(self.op, f)
        out = self._integrate(vec, -1.0 / self.contour.nodes, adjoint=True)
        return self.op.to_field(out) if was_field else out


def dunford_project(op, contour: Contour, v):
    return SpectralProjector(op, contour).apply(v)


def dunford_partial_inverse(op, contour: Contour, f):
    if not contour.encloses(0.0):
        raise SpectralError("partial inverse needs a contour enclosing 0")
    return SpectralProjector(op, contour).partial_inverse(f)


def galilean_shift(lam: complex, k: int, d: float) -> complex:
    """Eigenvalue of L_k^d corresponding to the eigenvalue lam of L_k^0."""
    return complex(lam) - 1j * k * d


@dataclass
class EigenPair:
    lam: complex
    vector: np.ndarray
    multiplicity: int
    residual: float
    cluster: np.ndarray = None
    basis: np.ndarray = None


def fix_gauge(v: np.ndarray) -> np.ndarray:
    """Rotate so the entry of largest modulus is real and positive."""
    j = int(np.argmax(np.abs(v)))
    out = v * (abs(v[j]) / v[j])
    out[j] = abs(v[j])
    return out


def _op_norm(op, v):
    if hasattr(op, "grid") and hasattr(op, "to_field"):
        return float(np.sqrt(op.grid.h) * np.linalg.norm(v))
    return float(np.linalg.norm(v))


def extract_eigenpair(op, contour: Contour = None, projector: SpectralProjector = None,
                      n_probes: int = 6, seed: int = 0, require_simple: bool = True,
                      tol_eig: float = 1e-8) -> EigenPair:
    """Eigenvalue cluster inside the contour.

    The rank of Pi is read off from the eigenvalues of U^H Pi U, where U is an
    orthonormal basis of Pi applied to random probes: eigenvalues near one
    belong to the range of Pi.  For a simple eigenvalue the vector is
    normalized to unit L^2 norm (trapezoid weights for mode operators) with
    the gauge of fix_gauge, and lam is its Rayleigh quotient.
    """
    proj = projector or SpectralProjector(op, contour)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((op.size, n_probes)) + 1j * rng.standard_normal((op.size, n_probes))
    Y = proj.apply(X)
    scale = np.linalg.norm(Y, axis=0).max()
    if scale < 1e-10 * np.linalg.norm(X, axis=0).max():
        raise SimplicityError("no eigenvalue inside contour")
    U, _ = np.linalg.qr(Y)
    G = U.conj().T @ proj.apply(U)
    mu, Z = np.linalg.eig(G)
    keep = np.abs(mu) > 0.5
    mult = int(keep.sum())
    if mult == 0:
        raise SimplicityError("no eigenvalue inside contour")
    if mult > 1 and require_simple:
        raise SimplicityError(f"contour encloses {mult} eigenvalues; a simple one is required")
    basis, _ = np.linalg.qr(U @ Z[:, keep])
    LB = np.column_stack([op.matvec(basis[:, j]) for j in range(mult)])
    cluster = np.linalg.eigvals(basis.conj().T @ LB)
    if mult == 1:
        v = fix_gauge(basis[:, 0])
        Lv = op.matvec(v)
        lam = complex(np.vdot(v, Lv) / np.vdot(v, v))
        v = v / _op_norm(op, v)
        residual = float(np.linalg.norm(op.matvec(v) - lam * v) / np.linalg.norm(v))
        if residual > tol_eig * max(1.0, _norm_estimate(op)):
            raise SpectralError(f"eigenpair residual {residual:.3e} exceeds tolerance; "
                                "increase the quadrature node count")
        return EigenPair(lam, v, 1, residual, cluster, basis)
    lam = complex(np.mean(cluster))
    return EigenPair(lam, basis[:, 0], mult, float("nan"), cluster, basis)


def left_eigenvector(projector: SpectralProjector, v: np.ndarray) -> np.ndarray:
    """Dual vector h with Pi = v h^H, hence h^H v = 1 (Euclidean pairing)."""
    h = projector.apply_adjoint(v) / np.vdot(v, v).real
    return h / np.conj(np.vdot(h, v))


# -- crossing tracking ----------------------------------------------------

@dataclass
class CrossingReport:
    k_star: int
    eps: np.ndarray
    lam: np.ndarray
    eps_crit: float
    lambda_crit: complex
    lambda_prime: complex
    d_bar: float
    d_frame: float
    vectors: list = field(default_factory=list, repr=False)

    def lam_interp(self, eps):
        """Cubic interpolation of the tracked eigenvalue (in the tracking
        frame) between samples."""
        order = np.argsort(self.eps)
        e = np.asarray(self.eps)[order]
        l = np.asarray(self.lam)[order]
        re, im = CubicSpline(e, l.real), CubicSpline(e, l.imag)
        return complex(re(eps) + 1j * im(eps))

    def to_dict(self):
        return {"k_star": int(self.k_star), "eps_crit": float(self.eps_crit),
                "lambda_prime_re": float(self.lambda_prime.real),
                "lambda_prime_im": float(self.lambda_prime.imag),
                "d_bar": float(self.d_bar),
                "samples": [{"eps": float(e), "re": float(l.real), "im": float(l.imag)}
                            for e, l in zip(self.eps, self.lam)]}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


class EigenTracker:
    """Follows one simple eigenvalue of L_k^d(eps) by contour continuation."""

    def __init__(self, family, k, d=0.0, radius=0.1, Q=32, tol_eig=1e-8, threads=1):
        self.family, self.k, self.d = family, int(k), float(d)
        self.radius, self.Q, self.tol_eig, self.threads = radius, Q, tol_eig, threads

    def at(self, eps, guesses):
        op = self.family.mode(eps, self.k, self.d)
        last = None
        for center in guesses:
            for radius in (self.radius, 0.5 * self.radius, 2.0 * self.radius, 4.0 * self.radius):
                try:
                    proj = SpectralProjector(op, Contour(center, radius, self.Q),
                                             threads=self.threads)
                    pair = extract_eigenpair(op, projector=proj, tol_eig=self.tol_eig)
                except (SimplicityError, NearSpectrumError, SpectralError) as exc:
                    last = exc
                    continue
                return pair
        raise TrackingError(f"eigenvalue of L_{self.k} lost at eps={eps}: {last}")


def track_crossing(family, k_star, eps_grid, d=0.0, guess=0.0, radius=0.1, Q=32,
                   tol_eps=1e-10, fd_step=1e-5, tol_eig=1e-8, tol_transversal=1e-6,
                   threads=1) -> CrossingReport:
    """Sample lam_{k*}(eps) on eps_grid, bisect for the zero of Re lam and
    differentiate there.  `family` is a model.OperatorFamily; `guess` is the
    expected eigenvalue location at eps_grid[0]."""
    eps_grid = np.asarray(eps_grid, float)
    tracker = EigenTracker(family, k_star, d, radius, Q, tol_eig, threads)
    lams, vecs = [], []
    for i, e in enumerate(eps_grid):
        if i == 0:
            guesses = [guess]
        elif i == 1:
            guesses = [lams[-1]]
        else:
            de = (e - eps_grid[i - 1]) / (eps_grid[i - 1] - eps_grid[i - 2])
            guesses = [lams[-1] + de * (lams[-1] - lams[-2]), lams[-1]]
        pair = tracker.at(e, guesses)
        v = pair.vector
        if vecs:
            ov = np.vdot(vecs[-1], v)
            v = v * (abs(ov) / ov) if abs(ov) > 0 else v
        lams.append(pair.lam)
        vecs.append(v)
    lams = np.array(lams)
    re = lams.real
    sign_change = np.nonzero(np.sign(re[:-1]) * np.sign(re[1:]) <= 0)[0]
    if sign_change.size == 0:
        raise TrackingError("Re lambda does not change sign on the sampled eps range")
    j = int(sign_change[0])
    a, b = eps_grid[j], eps_grid[j + 1]
    la, lb = lams[j], lams[j + 1]
    fa = la.real
    lam_mid = la
    while b - a > tol_eps:
        m = 0.5 * (a + b)
        t = (m - a) / (b - a)
        lam_mid = tracker.at(m, [la + t * (lb - la), la]).lam
        if np.sign(lam_mid.real) == np.sign(fa):
            a, la, fa = m, lam_mid, lam_mid.real
        else:
            b, lb = m, lam_mid
    # final linear interpolation inside the bracket
    eps_crit = a - la.real * (b - a) / (lb.real - la.real) if lb.real != la.real else 0.5 * (a + b)
    lam_crit = tracker.at(eps_crit, [la, lb]).lam
    lp = tracker.at(eps_crit + fd_step, [lam_crit]).lam
    lm = tracker.at(eps_crit - fd_step, [lam_crit]).lam
    lam_prime = (lp - lm) / (2 * fd_step)
    if abs(lam_prime.real) < tol_transversal:
        raise TrackingError(f"transversality fails: Re lambda' = {lam_prime.real:.3e}")
    d_bar = float(d + lam_crit.imag / k_star)
    return CrossingReport(int(k_star), eps_grid, lams, float(eps_crit), complex(lam_crit),
                          complex(lam_prime), d_bar, float(d), vecs)
