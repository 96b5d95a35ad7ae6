# flowdcn/bench/kernels.py

"""
Forward kernels timed by the benchmark harness.

dcn_naive is the vectorized msdcn_forward over the whole map. dcn_blocked computes
the same output tile by tile: each tile projects all groups at once, then samples
only its own output pixels. Both use the same element-wise arithmetic, so their
outputs are bit-identical. attention_reference is plain multi-head softmax
attention with query chunking to bound memory.
"""

# Standard library imports
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import sqrt
from typing import Optional
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import ConfigException
from flowdcn.exceptions import ShapeException
from flowdcn.ops.msdcn import MsDcnParams
from flowdcn.ops.msdcn import aggregate
from flowdcn.ops.msdcn import as_batched
from flowdcn.ops.msdcn import check_adjust
from flowdcn.ops.msdcn import msdcn_forward
from flowdcn.ops.msdcn import place
from flowdcn.ops.msdcn import project
from flowdcn.ops.msdcn import random_msdcn_params
from flowdcn.tensor.primitives import LinearParams
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.helpers import tiles
from flowdcn.utils.helpers import worker_threads
from flowdcn.utils.types import Adjust

DEFAULT_TILE = (8, 8)
DEFAULT_CHUNK = 256


def dcn_naive(x: np.ndarray, p: MsDcnParams, adjust: Adjust = (1.0, 1.0)) -> np.ndarray:
    """Full-map vectorized forward."""
    y, _ = msdcn_forward(x, p, adjust)
    return y


def dcn_blocked(
    x: np.ndarray,
    p: MsDcnParams,
    adjust: Adjust = (1.0, 1.0),
    tile: Tuple[int, int] = DEFAULT_TILE,
    threads: int = 1,
) -> np.ndarray:
    """
    Tiled forward over (H, W).

    Each tile projects weights, offsets and scales for its pixels and all groups in
    one pass, then samples the full input. Tiles write disjoint output slices, so
    running them on a thread pool does not change the result.

    Args:
        x: Input [H, W, D] or [B, H, W, D]
        p: Layer parameters
        adjust: Per-axis S_max adjustment
        tile: (rows, cols) per tile
        threads: Worker threads, capped by FLOWDCN_THREADS

    Returns:
        Output with the shape of x, equal to dcn_naive bit for bit
    """
    r = check_adjust(adjust)
    x4, squeeze = as_batched(x, p.channels)
    b, h, w, d = x4.shape
    xg = x4.reshape(b, h, w, p.groups, p.group_width)
    out = np.empty_like(xg)

    def run(rows: Tuple[int, int], cols: Tuple[int, int]) -> None:
        (r0, r1), (c0, c1) = rows, cols
        proj = place(project(x4[:, r0:r1, c0:c1], p), r, origin=(r0, c0))
        out[:, r0:r1, c0:c1] = aggregate(xg, proj.weights, proj.ph, proj.pw)

    jobs = [(rows, cols) for rows in tiles(h, tile[0]) for cols in tiles(w, tile[1])]
    n_threads = worker_threads(threads)
    if n_threads == 1:
        for rows, cols in jobs:
            run(rows, cols)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for future in [pool.submit(run, rows, cols) for rows, cols in jobs]:
                future.result()
    y = out.reshape(b, h, w, d)
    return y[0] if squeeze else y


@dataclass(frozen=True)
class AttentionParams:
    """QKV and output projections of one attention layer."""

    qkv: LinearParams
    out: Optional[LinearParams] = None

    @property
    def channels(self) -> int:
        return self.qkv.in_dim


def init_attention_params(
    rng: np.random.Generator,
    channels: int,
    std: float = 0.1,
    with_output: bool = True,
    dtype: type = np.float64,
) -> AttentionParams:
    qkv = LinearParams(
        weight=(rng.standard_normal((channels, 3 * channels)) * std).astype(dtype),
        bias=np.zeros(3 * channels, dtype=dtype),
    )
    out = None
    if with_output:
        out = LinearParams(
            weight=(rng.standard_normal((channels, channels)) * std).astype(dtype),
            bias=np.zeros(channels, dtype=dtype),
        )
    return AttentionParams(qkv=qkv, out=out)


def _linear(x: np.ndarray, lp: LinearParams) -> np.ndarray:
    return x @ lp.weight + lp.bias


def attention_reference(
    x: np.ndarray, heads: int, params: AttentionParams, chunk: int = DEFAULT_CHUNK
) -> np.ndarray:
    """
    Multi-head softmax(Q K^T / sqrt(d_h)) V, forward only.

    Args:
        x: Tokens [N, D] (or [B, N, D])
        heads: Number of heads; must divide D
        params: Projections
        chunk: Queries processed per block

    Returns:
        Output [N, D] (or [B, N, D])

    Raises:
        ShapeException: If x does not have D channels
        ConfigException: If heads does not divide D
    """
    squeeze = x.ndim == 2
    x3 = x[None] if squeeze else x
    if x3.ndim != 3 or x3.shape[-1] != params.channels:
        raise ShapeException(
            "Attention input must be [N, D] or [B, N, D]",
            "x",
            expected=(params.channels,),
            actual=x.shape,
        )
    b, n, d = x3.shape
    if heads < 1 or d % heads != 0:
        raise ConfigException(f"Heads {heads} must divide D={d}", "heads")
    dh = d // heads
    qkv = _linear(x3, params.qkv).reshape(b, n, 3, heads, dh)
    q = qkv[:, :, 0].transpose(0, 2, 1, 3)
    k = qkv[:, :, 1].transpose(0, 2, 1, 3)
    v = qkv[:, :, 2].transpose(0, 2, 1, 3)
    out = np.empty_like(q)
    scale = 1.0 / sqrt(dh)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        scores = (q[:, :, start:stop] @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
        scores /= scores.sum(axis=-1, keepdims=True)
        out[:, :, start:stop] = scores @ v
    y = out.transpose(0, 2, 1, 3).reshape(b, n, d)
    if params.out is not None:
        y = _linear(y, params.out)
    return y[0] if squeeze else y


def attention_flops(tokens: int, channels: int) -> float:
    """4 N^2 D for scores and mixing plus 6 N D^2 for the QKV projection."""
    return 4.0 * tokens * tokens * channels + 6.0 * tokens * channels * channels


def make_case_inputs(
    height: int,
    width: int,
    channels: int,
    groups: int,
    points: int = 9,
    dtype: type = np.float64,
    seed: int = 0,
    batch: int = 1,
) -> Tuple[np.ndarray, MsDcnParams, AttentionParams]:
    """Seeded input map and layer parameters for one benchmark size."""
    rng = rng_stream(seed, "bench", height, width, channels, groups)
    x = rng.standard_normal((batch, height, width, channels)).astype(dtype)
    p = random_msdcn_params(rng, channels, groups, points, dtype=dtype)
    attn = init_attention_params(rng, channels, dtype=dtype)
    return x, p, attn
