# flowdcn/_constants.py

"""
Enums and module-wide constants.
"""

# Standard library imports
from enum import Enum


class Solver(str, Enum):
    """Sampling solvers"""

    EULER_ODE = "euler_ode"
    EULER_MARUYAMA = "euler_maruyama"


class DatasetKind(str, Enum):
    """Desk-scale datasets"""

    GAUSS8 = "gauss8"
    CHECKERBOARD = "checkerboard"
    SHAPES16 = "shapes16"


class BenchOp(str, Enum):
    """Operators covered by the scaling benchmark"""

    DCN_NAIVE = "dcn_naive"
    DCN_BLOCKED = "dcn_blocked"
    ATTENTION = "attention"


class GradcheckScope(str, Enum):
    """Groups of finite-difference checks"""

    PRIMITIVES = "primitives"
    MSDCN = "msdcn"
    MODEL = "model"


class BlockStyle(str, Enum):
    """Norm/MLP pairing of a block"""

    SWIGLU_RMSNORM = "swiglu_rmsnorm"
    FFN_LAYERNORM = "ffn_layernorm"


class PriorInit(str, Enum):
    """How direction and scale priors are initialized"""

    GRID = "grid"
    RANDOM = "random"


class DType(str, Enum):
    """Storage dtypes for checkpoints and benchmarks"""

    F32 = "f32"
    F64 = "f64"


# Sinusoidal timestep embedding width
TIMESTEP_FREQUENCIES = 256

# Score conversion is refused at t >= 1 - SCORE_DELTA
SCORE_DELTA = 1e-3

# Training times are drawn from [0, 1 - T_MAX_GAP)
T_MAX_GAP = 1e-5

# Default guidance scale and step counts
DEFAULT_CFG_SCALE = 1.375
DEFAULT_ODE_STEPS = 50
DEFAULT_SDE_STEPS = 250

# Environment variable capping worker threads
THREADS_ENV = "FLOWDCN_THREADS"
