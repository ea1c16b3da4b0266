"""Run configuration: one INI file with sections, read with configparser."""

from __future__ import annotations

import configparser
import importlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError

TEMPLATE = """\
# shockbif run configuration.  Every key below shows its default value.

[model]
# burgers | synthetic_crossing | rank_one | package.module:factory
# A factory is called with no arguments and must return a FluxModel or a
# DirectOperatorModel.
name = synthetic_crossing
# Transverse flux coefficient f2 = gamma u^2/2 (burgers, synthetic_crossing).
gamma = 0.0
# Gaussian well on modes +-k_star (synthetic_crossing).
depth = 1.79
center = 0.0
width = 1.0
# Endstates for burgers (must satisfy Rankine-Hugoniot with a Lax speed).
u_minus = 1.0
u_plus = -1.0
# Imaginary part of the relocated eigenvalue (rank_one).
shift_im = 1.0

[grid]
# Domain [-L, L] with N nodes (N odd).
L = 30.0
N = 801

[parameter]
# Bracket and number of eps samples used to locate the crossing.
eps_min = -0.05
eps_max = 0.05
eps_samples = 3
# Parameter value used by profile, spectrum and verify.
eps = 0.0

[crossing]
# Critical transverse wavenumber; required by spectrum, crossing, reduce,
# branch, synthesize.
k_star = 1
# Expected eigenvalue at eps_min (real and imaginary parts).
guess_re = 0.0
guess_im = 0.0
# Tracking frame speed d.
d = 0.0

[contour]
radius = 0.1
# Quadrature nodes, a power of two.
Q = 32

[reduction]
K_max = 16
# O2 | SO2 | auto (auto certifies realness and downgrades on failure)
symmetry_mode = auto
# Frame speed override; leave empty to use the crossing value d_bar.
d_override =
# Amplitudes for the reduced-function table.
x_samples = 0.0125, 0.025, 0.05

[branch]
s_grid = 0.0, 0.0125, 0.025, 0.05

[tolerances]
tol_fix = 1e-12
tol_eig = 1e-8
tol_red = 1e-6
tol_sing = 1e-12
tol_rh = 1e-10
tol_transversal = 1e-6

[reflection]
# Reflection matrix R (row-major, n*n entries); identity when empty.
R =

[verify]
# Grid and wavenumbers for the inverse-norm decay check.
decay_L = 8.0
decay_N = 1601
decay_k = 8, 16, 32

[run]
threads = 1
seed = 0
out = out
"""

_SECTIONS = ("model", "grid", "parameter", "crossing", "contour", "reduction", "branch",
             "tolerances", "reflection", "verify", "run")


@dataclass
class RunConfig:
    model: dict
    L: float
    N: int
    eps_range: tuple
    eps_samples: int
    eps0: float = 0.0
    k_star: int = None
    guess: complex = 0j
    d_track: float = 0.0
    radius: float = 0.1
    Q: int = 32
    K_max: int = 16
    symmetry_mode: str = "auto"
    d_override: float = None
    x_samples: list = field(default_factory=list)
    s_grid: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    reflection: list = None
    decay_L: float = 8.0
    decay_N: int = 1601
    decay_k: list = field(default_factory=lambda: [8, 16, 32])
    threads: int = 1
    seed: int = 0
    out: str = "out"

    @property
    def eps_grid(self):
        return np.linspace(self.eps_range[0], self.eps_range[1], self.eps_samples)

    def require_k_star(self) -> int:
        if self.k_star is None:
            raise ConfigError("missing key [crossing] k_star")
        return self.k_star

    def to_dict(self):
        d = asdict(self)
        d["guess"] = [self.guess.real, self.guess.imag]
        return d


def _floats(text):
    text = text.strip()
    return [float(t) for t in text.split(",")] if text else []


def parse_config(text: str) -> RunConfig:
    defaults = configparser.ConfigParser(inline_comment_prefixes=("#",))
    defaults.read_string(TEMPLATE)
    user = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        user.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    unknown = set(user.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for sec in ("model", "grid"):
        if not user.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
    for key in ("L", "N"):
        if not user.has_option("grid", key):
            raise ConfigError(f"missing key [grid] {key}")
    if not user.has_option("model", "name"):
        raise ConfigError("missing key [model] name")

    def get(sec, key):
        if user.has_option(sec, key):
            return user.get(sec, key)
        return defaults.get(sec, key)

    try:
        model = {k: get("model", k) for k in defaults.options("model")}
        for k, v in user.items("model"):
            model[k] = v
        k_star = int(user.get("crossing", "k_star")) if user.has_option("crossing", "k_star") \
            else None
        d_over = get("reduction", "d_override").strip()
        R = _floats(get("reflection", "R"))
        cfg = RunConfig(
            model=model,
            L=float(get("grid", "L")), N=int(get("grid", "N")),
            eps_range=(float(get("parameter", "eps_min")), float(get("parameter", "eps_max"))),
            eps_samples=int(get("parameter", "eps_samples")),
            eps0=float(get("parameter", "eps")),
            k_star=k_star,
            guess=complex(float(get("crossing", "guess_re")), float(get("crossing", "guess_im"))),
            d_track=float(get("crossing", "d")),
            radius=float(get("contour", "radius")), Q=int(get("contour", "Q")),
            K_max=int(get("reduction", "K_max")),
            symmetry_mode=get("reduction", "symmetry_mode").strip(),
            d_override=float(d_over) if d_over else None,
            x_samples=_floats(get("reduction", "x_samples")),
            s_grid=_floats(get("branch", "s_grid")),
            tolerances={k: float(get("tolerances", k)) for k in defaults.options("tolerances")},
            reflection=R or None,
            decay_L=float(get("verify", "decay_L")), decay_N=int(get("verify", "decay_N")),
            decay_k=[int(k) for k in _floats(get("verify", "decay_k"))],
            threads=int(get("run", "threads")), seed=int(get("run", "seed")),
            out=get("run", "out").strip(),
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def validate(cfg: RunConfig):
    if any(v <= 0 for v in cfg.tolerances.values()):
        raise ConfigError("all tolerances must be positive")
    if cfg.N < 5 or cfg.N % 2 == 0:
        raise ConfigError(f"[grid] N must be odd and >= 5, got {cfg.N}")
    if cfg.L <= 0:
        raise ConfigError("[grid] L must be positive")
    if cfg.Q < 4 or cfg.Q & (cfg.Q - 1):
        raise ConfigError(f"[contour] Q must be a power of two >= 4, got {cfg.Q}")
    if cfg.radius <= 0:
        raise ConfigError("[contour] radius must be positive")
    if cfg.eps_samples < 2 or not cfg.eps_range[0] < cfg.eps_range[1]:
        raise ConfigError("[parameter] needs eps_min < eps_max and at least 2 samples")
    if cfg.symmetry_mode not in ("O2", "SO2", "auto"):
        raise ConfigError(f"[reduction] symmetry_mode must be O2, SO2 or auto")
    if cfg.K_max < 1:
        raise ConfigError("[reduction] K_max must be positive")
    if cfg.k_star is not None and not 1 <= cfg.k_star <= cfg.K_max:
        raise ConfigError(f"[crossing] k_star must lie in 1..K_max, got {cfg.k_star}")
    if not cfg.s_grid:
        raise ConfigError("[branch] s_grid is empty")
    if cfg.threads < 1:
        raise ConfigError("[run] threads must be >= 1")


def build_model(cfg: RunConfig):
    """Instantiate the model named in the [model] section."""
    from . import model as M

    spec = cfg.model
    name = spec["name"].strip()
    try:
        if name == "burgers":
            return M.burgers(float(spec["gamma"]), float(spec["u_minus"]), float(spec["u_plus"]))
        if name == "synthetic_crossing":
            return M.synthetic_crossing(cfg.require_k_star(), float(spec["gamma"]),
                                        float(spec["depth"]), float(spec["center"]),
                                        float(spec["width"]))
        if name == "rank_one":
            return M.rank_one_family(cfg.require_k_star(), 1j * float(spec["shift_im"]))
    except ValueError as exc:
        raise ConfigError(f"bad model parameter: {exc}") from exc
    if ":" in name:
        mod, fn = name.split(":", 1)
        try:
            return getattr(importlib.import_module(mod), fn)()
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load model factory {name}: {exc}") from exc
    raise ConfigError(f"unknown model {name!r}")


def reflection_matrix(cfg: RunConfig, n: int):
    if cfg.reflection is None:
        return None
    if len(cfg.reflection) != n * n:
        raise ConfigError(f"[reflection] R needs {n * n} entries, got {len(cfg.reflection)}")
    return np.array(cfg.reflection).reshape(n, n)
