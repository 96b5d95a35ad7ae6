# flowdcn/utils/types.py

# Standard library imports
from typing import Any
from typing import Dict
from typing import Tuple
from typing import Union

# Third party imports
import numpy as np
from numpy.typing import NDArray

# Reference precision for every correctness path
FloatArray = NDArray[np.float64]

# f32 storage is allowed for checkpoints and benchmarks
AnyFloatArray = NDArray[np.floating[Any]]

IntArray = NDArray[np.int64]

# Flat, ordered name -> array mapping; the model and optimizer state use this everywhere
ParamDict = Dict[str, FloatArray]

# Per-axis S_max adjustment factors (r_h, r_w)
Adjust = Tuple[float, float]

# (height, width)
Resolution = Tuple[int, int]

Shape = Tuple[int, ...]

# Values allowed in checkpoint meta lines and run config files
MetaValue = Union[str, int, float, bool]
MetaDict = Dict[str, MetaValue]
