"""Transverse Fourier modes on the strip R x T.

A ModeStack holds the coefficients w_k(x), |k| <= K_max, of a field
u(x, y) = sum_k w_k(x) e^{iky}; analyze/synthesize convert between stacks
and samples on the uniform y-grid.  Norms on the strip use the normalized
measure dy / 2 pi, for which Parseval's identity is exact.

StripProblem bundles everything the nonlinear mode equations need at a
given eps: the profile, the mode operators L_k^{dbar}, the bordered zero
mode operator and the dealiased evaluation of the flux remainders.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .discretization import DiscreteField, Grid1D, d2dx2, ddx, l2_norm_sq
from .errors import ConfigError, ContractionError, ModelError


class ModeStack:
    """Fourier coefficients w_k for k = -K_max..K_max, stored k-ascending as
    an array of shape (2 K_max + 1, n, N)."""

    def __init__(self, grid: Grid1D, K_max: int, n: int = 1, data=None):
        self.grid = grid
        self.K_max = int(K_max)
        self.n = int(n)
        shape = (2 * self.K_max + 1, self.n, grid.N)
        if data is None:
            self.data = np.zeros(shape, dtype=complex)
        else:
            data = np.asarray(data, dtype=complex)
            if data.shape != shape:
                raise ConfigError(f"mode data has shape {data.shape}, expected {shape}")
            self.data = data

    @property
    def ks(self):
        return range(-self.K_max, self.K_max + 1)

    def __getitem__(self, k):
        if abs(k) > self.K_max:
            raise ConfigError(f"mode {k} outside K_max={self.K_max}")
        return self.data[k + self.K_max]

    def __setitem__(self, k, values):
        if abs(k) > self.K_max:
            raise ConfigError(f"mode {k} outside K_max={self.K_max}")
        self.data[k + self.K_max] = np.asarray(values).reshape(self.n, self.grid.N)

    def copy(self):
        return ModeStack(self.grid, self.K_max, self.n, self.data.copy())

    def zeros_like(self):
        return ModeStack(self.grid, self.K_max, self.n)

    def _compatible(self, other):
        if (other.K_max, other.n, other.grid) != (self.K_max, self.n, self.grid):
            raise ConfigError("mode stacks have different layouts")

    def __add__(self, other):
        self._compatible(other)
        return ModeStack(self.grid, self.K_max, self.n, self.data + other.data)

    def __sub__(self, other):
        self._compatible(other)
        return ModeStack(self.grid, self.K_max, self.n, self.data - other.data)

    def __mul__(self, scalar):
        return ModeStack(self.grid, self.K_max, self.n, self.data * scalar)

    __rmul__ = __mul__

    def restricted(self, keep=None, drop=()):
        """Copy with all slots outside `keep` (or inside `drop`) zeroed."""
        out = self.zeros_like()
        for k in self.ks:
            if (keep is None or k in keep) and k not in drop:
                out[k] = self[k]
        return out

    def mode_weights(self, k):
        kk = float(k * k)
        return max(kk * kk, 1.0), max(kk, 1.0), 1.0

    def mnorm_sq(self) -> float:
        """sum_k (k^4 v 1)|w_k|^2 + (k^2 v 1)|w_k'|^2 + |w_k''|^2."""
        h = self.grid.h
        total = 0.0
        for k in self.ks:
            w = self[k]
            a, b, c = self.mode_weights(k)
            total += (a * l2_norm_sq(w, self.grid) + b * l2_norm_sq(ddx(w, h), self.grid)
                      + c * l2_norm_sq(d2dx2(w, h), self.grid))
        return float(total)

    def mnorm(self) -> float:
        return float(np.sqrt(self.mnorm_sq()))

    def mode_norm_h2(self, k) -> float:
        return DiscreteField(self[k], self.grid).norm_h2()

    def reality_defect(self) -> float:
        flip = self.data[::-1].conj()
        return float(np.abs(self.data - flip).max())

    def symmetrize(self):
        """Impose w_{-k} = conj(w_k) by averaging the two slots."""
        self.data = 0.5 * (self.data + self.data[::-1].conj())
        return self

    # -- serialization ----------------------------------------------------
    def header(self):
        return {"n": self.n, "N": self.grid.N, "K_max": self.K_max, "L": self.grid.L}

    def save_npz(self, path):
        """Header fields n, N, K_max, L plus `modes`, complex (2K+1, n, N)
        with rows in k-ascending order."""
        np.savez(path, modes=self.data, **{k: v for k, v in self.header().items()})

    @classmethod
    def load_npz(cls, path):
        z = np.load(path)
        grid = Grid1D(float(z["L"]), int(z["N"]))
        return cls(grid, int(z["K_max"]), int(z["n"]), z["modes"])

    def to_json(self):
        rows = [{"k": int(k), "re": self[k].real.tolist(), "im": self[k].imag.tolist()}
                for k in self.ks]
        return json.dumps({"header": self.header(), "modes": rows})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        hd = obj["header"]
        grid = Grid1D(hd["L"], hd["N"])
        stack = cls(grid, hd["K_max"], hd["n"])
        for row in obj["modes"]:
            stack[row["k"]] = np.asarray(row["re"]) + 1j * np.asarray(row["im"])
        return stack

    def __repr__(self):
        return f"ModeStack(K_max={self.K_max}, n={self.n}, grid={self.grid!r})"


class StripField:
    """Real samples u(x_i, y_j), y_j = 2 pi j / Ny, shape (n, N, Ny)."""

    def __init__(self, values, grid: Grid1D, K_max: int):
        values = np.asarray(values)
        if values.ndim == 2:
            values = values[None]
        if values.shape[1] != grid.N:
            raise ConfigError("strip field does not match the grid")
        self.values = values
        self.grid = grid
        self.K_max = int(K_max)

    @property
    def Ny(self):
        return self.values.shape[-1]

    @property
    def y(self):
        return 2 * np.pi * np.arange(self.Ny) / self.Ny

    def wavenumbers(self):
        return np.fft.fftfreq(self.Ny, 1.0 / self.Ny)

    def dy(self, order=1):
        """Spectral y-derivative (exact for band-limited samples)."""
        k = self.wavenumbers()
        if order % 2 == 1 and self.Ny % 2 == 0:
            k = k.copy()
            k[self.Ny // 2] = 0.0
        spec = np.fft.fft(self.values, axis=-1) * (1j * k) ** order
        out = np.fft.ifft(spec, axis=-1)
        return out.real if np.isrealobj(self.values) else out

    def norm_sq(self, ax=0, ay=0) -> float:
        """|| d_x^ax d_y^ay u ||^2 with the normalized y measure."""
        u = self.values if ay == 0 else self.dy(ay)
        h = self.grid.h
        if ax == 1:
            u = ddx(np.moveaxis(u, -1, 0), h)
            u = np.moveaxis(u, 0, -1)
        elif ax == 2:
            u = d2dx2(np.moveaxis(u, -1, 0), h)
            u = np.moveaxis(u, 0, -1)
        w = self.grid.weights
        return float(np.sum(w[None, :, None] * np.abs(u) ** 2) / self.Ny)

    def h2_norm_sq(self) -> float:
        return sum(self.norm_sq(a, b) for a in range(3) for b in range(3 - a))

    def h2_norm(self) -> float:
        return float(np.sqrt(self.h2_norm_sq()))

    def sup(self) -> float:
        return float(np.abs(self.values).max())


def analyze(u: StripField, K_max: int = None) -> ModeStack:
    """w_k = (1 / 2 pi) int u e^{-iky} dy, by the discrete Fourier transform."""
    K = u.K_max if K_max is None else int(K_max)
    if u.Ny < 2 * K + 1:
        raise ConfigError(f"{u.Ny} y-samples cannot resolve K_max={K}")
    spec = np.fft.fft(u.values, axis=-1) / u.Ny
    ks = np.arange(-K, K + 1)
    data = np.moveaxis(spec[..., ks % u.Ny], -1, 0)
    return ModeStack(u.grid, K, u.values.shape[0], data)


def synthesize(w: ModeStack, Ny: int = None, real: bool = True) -> StripField:
    """Samples of sum_k w_k e^{iky} on Ny points (default 2 K_max + 2)."""
    Ny = 2 * w.K_max + 2 if Ny is None else int(Ny)
    if Ny < 2 * w.K_max + 1:
        raise ConfigError(f"{Ny} y-samples cannot carry K_max={w.K_max}")
    spec = np.zeros((w.n, w.grid.N, Ny), dtype=complex)
    ks = np.arange(-w.K_max, w.K_max + 1)
    spec[..., ks % Ny] = np.moveaxis(w.data, 0, -1)
    values = np.fft.ifft(spec, axis=-1) * Ny
    return StripField(values.real if real else values, w.grid, w.K_max)


def translate(w: ModeStack, c: float) -> ModeStack:
    """Stack of u(x, y + c): w_k -> e^{ikc} w_k."""
    out = w.copy()
    for k in w.ks:
        out[k] = np.exp(1j * k * c) * w[k]
    return out


def reflect(w: ModeStack, R) -> ModeStack:
    """Stack of R u(x, -y): w_k -> R w_{-k}."""
    R = np.asarray(R, float)
    out = w.copy()
    for k in w.ks:
        out[k] = R @ w[-k]
    return out


class SymmetryOps:
    """Reflection matrix R (orthogonal) and translation parameter c."""

    def __init__(self, R=None, c: float = 0.0, n: int = 1, tol: float = 1e-12):
        R = np.eye(n) if R is None else np.atleast_2d(np.asarray(R, float))
        if np.abs(R.T @ R - np.eye(R.shape[0])).max() > tol:
            raise ConfigError("reflection matrix is not orthogonal")
        self.R = R
        self.c = float(c)

    def fixes_profile(self, ubar, tol: float = 1e-12) -> bool:
        return float(np.abs(self.R @ ubar - ubar).max()) <= tol

    def translate(self, w):
        return translate(w, self.c)

    def reflect(self, w):
        return reflect(w, self.R)


# -- nonlinear problem --------------------------------------------------

def picard_ratio(history, tol) -> float:
    """Largest successive ratio of update norms, ignoring updates already
    at round-off scale."""
    floor = max(10.0 * tol, 1e-14)
    ratios = [history[j + 1] / history[j] for j in range(len(history) - 1)
              if history[j] > floor and history[j + 1] > floor]
    return max(ratios) if ratios else 0.0


class StripProblem:
    """Nonlinear mode equations at a fixed eps in the frame d_bar."""

    def __init__(self, family, eps, K_max: int, k_star: int, d_bar: float = 0.0,
                 tol_fix: float = 1e-12, threads: int = 1, dealias: int = None,
                 phase_vector=None):
        from .zero_mode import IntegratedOperator

        self.family = family
        self.model = family.model
        self.grid = family.grid
        self.eps = float(eps)
        self.K_max = int(K_max)
        self.k_star = int(k_star)
        if self.K_max < self.k_star + 2:
            raise ConfigError("K_max must be at least k_star + 2")
        self.d_bar = float(d_bar)
        self.tol_fix = float(tol_fix)
        self.threads = max(1, int(threads))
        self.profile = family.profile(eps)
        self.n = self.profile.n
        self.Ny_dealias = int(dealias) if dealias else 4 * self.K_max + 4
        self._ops = {}
        self.zero_operator = IntegratedOperator(self.profile, phase_vector)

    @property
    def tail_modes(self):
        return [k for k in range(1, self.K_max + 1) if k != self.k_star]

    def mode_operator(self, k):
        if k not in self._ops:
            self._ops[k] = self.family.mode(self.eps, k, self.d_bar)
        return self._ops[k]

    def empty_stack(self):
        return ModeStack(self.grid, self.K_max, self.n)

    def remainders(self, stack: ModeStack):
        """Mode stacks of R1, R2 evaluated on the dealiased y-grid."""
        v = synthesize(stack, self.Ny_dealias).values
        if np.abs(v).max() > self.model.box:
            raise ModelError("perturbation leaves the flux evaluation box")
        ub = self.profile.ubar[:, :, None] * np.ones((1, 1, v.shape[-1]))
        R1 = self.model.flux_residual(self.eps, v, ub, 1)
        R2 = self.model.flux_residual(self.eps, v, ub, 2)
        K = self.K_max
        out = []
        for R in (R1, R2):
            field = StripField(R, self.grid, K)
            out.append(analyze(field, K))
        return out

    def flux_remainder_zero(self, stack: ModeStack) -> np.ndarray:
        R1, _ = self.remainders(stack)
        return R1[0].real

    def nonlinear_modes(self, stack: ModeStack, R=None) -> ModeStack:
        """N_k = -(R1_k)' - i k R2_k for every |k| <= K_max."""
        R1, R2 = self.remainders(stack) if R is None else R
        out = stack.zeros_like()
        h = self.grid.h
        for k in stack.ks:
            out[k] = -ddx(R1[k], h) - 1j * k * R2[k]
        return out

    def _map(self, fn, items):
        if self.threads == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, items))

    def tail_update(self, stack: ModeStack, d: float, Nk: ModeStack = None) -> ModeStack:
        """One Picard sweep of the tail: for each tail mode k,
        L_k^{dbar} w_k = N_k - i k (dbar - d) w_k.  Returns a stack holding
        only the new tail slots (negative k by conjugation)."""
        Nk = self.nonlinear_modes(stack) if Nk is None else Nk
        shift = self.d_bar - d

        def solve(k):
            op = self.mode_operator(k)
            rhs = Nk[k] - 1j * k * shift * stack[k]
            return op.to_field(-op.solve_shifted(0.0, op.to_vector(rhs)))

        new = stack.zeros_like()
        for k, wk in zip(self.tail_modes, self._map(solve, self.tail_modes)):
            new[k] = wk
            new[-k] = np.conj(wk)
        return new


def solve_tail(problem: StripProblem, base: ModeStack, d: float, w0: ModeStack = None,
               max_iter: int = 200, tol_fix: float = None):
    """Tail fixed point with u0 and u_{+-k*} (taken from `base`) held fixed.
    Returns (w, info) where w holds only the tail slots."""
    tol = problem.tol_fix if tol_fix is None else tol_fix
    fixed = base.restricted(keep={0, problem.k_star, -problem.k_star})
    w = problem.empty_stack() if w0 is None else w0.restricted(drop={0, problem.k_star,
                                                                    -problem.k_star})
    history = []
    for it in range(1, max_iter + 1):
        new = problem.tail_update(fixed + w, d)
        delta = (new - w).mnorm()
        history.append(delta)
        w = new
        theta = picard_ratio(history, tol)
        if theta >= 1.0:
            raise ContractionError(f"tail map not contracting (ratio {theta:.3f})", theta)
        if delta <= tol:
            break
    else:
        raise ContractionError(f"tail Picard did not converge in {max_iter} sweeps",
                               picard_ratio(history, tol))
    return w, {"iterations": it, "contraction_ratio": picard_ratio(history, tol),
               "history": history}


def tail_fixed_point(u0, u_kstar_pair, d, d_bar, eps, profile, K_max, k_star,
                     tol_fix=1e-12, threads=1, w0=None):
    """Tail w for given zero mode u0 and critical pair (u_{k*}, u_{-k*}).

    Builds the StripProblem from the profile (and its model) and returns
    (w, info); see solve_tail.
    """
    from .model import OperatorFamily

    family = OperatorFamily(profile.model, profile.grid)
    family._profiles[float(eps)] = profile
    problem = StripProblem(family, eps, K_max, k_star, d_bar, tol_fix, threads)
    base = problem.empty_stack()
    base[0] = np.asarray(u0).real
    base[k_star] = u_kstar_pair[0]
    base[-k_star] = u_kstar_pair[1]
    return solve_tail(problem, base, d, w0)
