"""Numerical transverse bifurcation analysis of viscous shock profiles on a
strip R x T: profiles, mode operators, contour projectors, the zero mode and
tail fixed points, the scalar reduced equation and its branches."""

from .errors import (BifurcationError, ConfigError, ContractionError, ModelError,
                     PipelineError, ReductionError, SpectralError)
from .discretization import Grid1D, ModeOperator, assemble_mode_operator
from .model import (FluxModel, DirectOperatorModel, OperatorFamily, burgers, rank_one_family,
                    shock_profile, synthetic_crossing)
from .spectral import Contour, SpectralProjector, track_crossing
from .tail import ModeStack, StripField, StripProblem, analyze, synthesize
from .reduction import ReducedEquation
from .bifurcation import branch_O2, branch_SO2, hopf_reinterpret, synthesize_and_certify

__version__ = "0.1.0"
