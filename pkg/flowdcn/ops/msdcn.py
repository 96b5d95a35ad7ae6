# flowdcn/ops/msdcn.py

"""
Group-wise multiscale deformable convolution with decoupled scale and direction.

For every output pixel p0 and group g the layer predicts K dynamic weights, K
offsets and one scale logit from the input features, then samples

    p = p0 + s_g(x) * (p_k + dp_k(x)) * r,   s_g(x) = sigmoid(W_s x + s0_g) * S_max

bilinearly and sums w_k * x_g(p) over the K points. `r` is the per-axis S_max
adjustment used at resolutions the layer was not trained at.

Feature maps are [H, W, D] or batched [B, H, W, D]; channels of group g are
D/G * g ... D/G * (g + 1) - 1.
"""

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from logging import getLogger
from math import floor
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import PriorInit
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ConfigException
from flowdcn.exceptions import ShapeException
from flowdcn.ops.priors import direction_prior
from flowdcn.ops.priors import init_scale_priors
from flowdcn.ops.priors import random_direction_prior
from flowdcn.ops.priors import random_scale_priors
from flowdcn.tensor.primitives import LinearParams
from flowdcn.tensor.primitives import matmul_affine
from flowdcn.tensor.primitives import matmul_affine_backward
from flowdcn.tensor.primitives import softmax
from flowdcn.tensor.primitives import softmax_backward
from flowdcn.tensor.primitives import stable_sigmoid
from flowdcn.tensor.tape import Tape
from flowdcn.utils.types import Adjust
from flowdcn.utils.types import Resolution
from flowdcn.utils.validation import check_finite
from flowdcn.utils.validation import check_last_dim
from flowdcn.utils.validation import validate_positive
from flowdcn.utils.validation import validate_positive_params

logger = getLogger("flowdcn.msdcn")


@dataclass
class MsDcnParams:
    """All learnable parameters and priors of one deformable layer.

    Attributes:
        proj_weight: D -> G*K dynamic weights
        proj_offset: D -> G*K*2 deformable field, (dh, dw) innermost
        proj_scale: D -> G scale logits
        scale_prior: s0 logits [G]
        direction_prior: p_k [K, 2] in feature-grid units
        s_max: Cap on the predicted scale
        groups: G
        points: K
        softmax_weights: Normalize the K weights of each group with softmax
        learn_direction_prior: Let the direction prior receive gradients
        learn_relative_scale: Predict the scale from x; when off the scale is sigmoid(s0) * S_max
    """

    proj_weight: LinearParams
    proj_offset: LinearParams
    proj_scale: LinearParams
    scale_prior: np.ndarray
    direction_prior: np.ndarray
    s_max: float
    groups: int
    points: int
    softmax_weights: bool = False
    learn_direction_prior: bool = False
    learn_relative_scale: bool = True

    def __post_init__(self) -> None:
        validate_positive(self.s_max, "s_max")
        if self.groups < 1 or self.points < 1:
            raise ConfigException(
                f"groups and points must be >= 1, got G={self.groups}, K={self.points}", "groups"
            )
        if self.channels % self.groups != 0:
            raise ConfigException(
                f"Channels D={self.channels} not divisible by groups G={self.groups}", "groups"
            )
        gk = self.groups * self.points
        expected = {
            "proj_weight": (self.channels, gk),
            "proj_offset": (self.channels, gk * 2),
            "proj_scale": (self.channels, self.groups),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).weight.shape
            if actual != shape:
                raise ShapeException(f"{name} weight", name, expected=shape, actual=actual)
        if self.scale_prior.shape != (self.groups,):
            raise ShapeException(
                "scale_prior", "scale_prior", expected=(self.groups,), actual=self.scale_prior.shape
            )
        if self.direction_prior.shape != (self.points, 2):
            raise ShapeException(
                "direction_prior",
                "direction_prior",
                expected=(self.points, 2),
                actual=self.direction_prior.shape,
            )

    @property
    def channels(self) -> int:
        return self.proj_weight.in_dim

    @property
    def group_width(self) -> int:
        return self.channels // self.groups


@dataclass
class MsDcnGrads:
    """Gradients for every field of MsDcnParams."""

    proj_weight: LinearParams
    proj_offset: LinearParams
    proj_scale: LinearParams
    scale_prior: np.ndarray
    direction_prior: np.ndarray


@dataclass
class SamplingPlan:
    """Where and how a forward call sampled.

    Attributes:
        positions: Fractional (h, w) per (pixel, group, point): [..., H, W, G, K, 2]
        weights: Dynamic weights per (pixel, group, point): [..., H, W, G, K]
        scales: Effective per-axis scale per (pixel, group): [..., H, W, G, 2]
        displacements: positions - p0 as applied, [..., H, W, G, K, 2]
        adjust: The (r_h, r_w) factors that were applied
    """

    positions: np.ndarray
    weights: np.ndarray
    scales: np.ndarray
    displacements: np.ndarray
    adjust: Adjust = (1.0, 1.0)


@dataclass
class Projection:
    """Per-pixel projection outputs of one forward call (batched layout)."""

    weights: np.ndarray  # [B, H, W, G, K]
    rel: np.ndarray  # [B, H, W, G, K, 2], p_k + dp_k
    sig: np.ndarray  # [B, H, W, G]
    scale: np.ndarray  # [B, H, W, G], sig * S_max
    ph: np.ndarray = field(default_factory=lambda: np.empty(0))
    pw: np.ndarray = field(default_factory=lambda: np.empty(0))
    disp: np.ndarray = field(default_factory=lambda: np.empty(0))


def init_msdcn_params(
    rng: np.random.Generator,
    channels: int,
    groups: int,
    points: int = 9,
    s_max: float = 1.0,
    multiscale: bool = True,
    prior_init: PriorInit = PriorInit.GRID,
    weight_std: float = 0.02,
    softmax_weights: bool = False,
    learn_direction_prior: bool = False,
    learn_relative_scale: bool = True,
    dtype: type = np.float64,
) -> MsDcnParams:
    """
    Fresh layer parameters.

    Weight projection ~ N(0, weight_std); offset and scale projections are zero so the
    first forward samples exactly the prior grid at the prior scales.

    Args:
        rng: Generator for the random weights
        channels: D
        groups: G (must divide D)
        points: K
        s_max: Scale cap
        multiscale: When False every s0 is 0 (single shared scale)
        prior_init: GRID for the default priors, RANDOM for random ones

    Returns:
        MsDcnParams
    """
    if groups < 1 or channels % groups != 0:
        raise ConfigException(f"Channels D={channels} not divisible by groups G={groups}", "groups")
    gk = groups * points
    if prior_init == PriorInit.RANDOM:
        directions = random_direction_prior(rng, points)
        scales = random_scale_priors(rng, groups)
    else:
        directions = direction_prior(points)
        scales = init_scale_priors(groups)
    if not multiscale:
        scales = np.zeros(groups)
    return MsDcnParams(
        proj_weight=LinearParams(
            weight=(rng.standard_normal((channels, gk)) * weight_std).astype(dtype),
            bias=np.zeros(gk, dtype=dtype),
        ),
        proj_offset=LinearParams(
            weight=np.zeros((channels, gk * 2), dtype=dtype), bias=np.zeros(gk * 2, dtype=dtype)
        ),
        proj_scale=LinearParams(
            weight=np.zeros((channels, groups), dtype=dtype), bias=np.zeros(groups, dtype=dtype)
        ),
        scale_prior=scales.astype(dtype),
        direction_prior=directions.astype(dtype),
        s_max=float(s_max),
        groups=groups,
        points=points,
        softmax_weights=softmax_weights,
        learn_direction_prior=learn_direction_prior,
        learn_relative_scale=learn_relative_scale,
    )


def random_msdcn_params(
    rng: np.random.Generator,
    channels: int,
    groups: int,
    points: int = 9,
    s_max: float = 2.0,
    std: float = 0.3,
    dtype: type = np.float64,
    **flags: bool,
) -> MsDcnParams:
    """Layer parameters with every projection random, so offsets and scales vary per pixel."""
    p = init_msdcn_params(rng, channels, groups, points, s_max=s_max, dtype=dtype, **flags)
    gk = groups * points
    for lp, out_dim in ((p.proj_weight, gk), (p.proj_offset, 2 * gk), (p.proj_scale, groups)):
        lp.weight[...] = rng.standard_normal((channels, out_dim)) * std
        lp.bias[...] = rng.standard_normal(out_dim) * std
    return p


def as_batched(x: np.ndarray, channels: int) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        x = x[None]
        squeeze = True
    elif x.ndim == 4:
        squeeze = False
    else:
        raise ShapeException(
            "Feature map must be [H, W, D] or [B, H, W, D]", "x", expected=(3,), actual=(x.ndim,)
        )
    check_last_dim(x, channels, "x")
    return x, squeeze


def check_adjust(adjust: Adjust) -> np.ndarray:
    validate_positive(adjust[0], "r_h")
    validate_positive(adjust[1], "r_w")
    return np.array([float(adjust[0]), float(adjust[1])])


def project(
    x4: np.ndarray, p: MsDcnParams, tape: Optional[Tape] = None, key: Optional[str] = None
) -> Projection:
    """
    Dynamic weights, relative directions and scales for every pixel of a batched map.

    Args:
        x4: Input [B, H, W, D]
        p: Layer parameters
        tape: Optional tape
        key: Call-site key (required with tape)

    Returns:
        Projection without positions

    Raises:
        NumericException: If any projection is not finite
    """
    b, h, w, _ = x4.shape
    g, k = p.groups, p.points
    sub = (lambda name: f"{key}.{name}") if key is not None else (lambda name: None)

    raw_weights = matmul_affine(x4, p.proj_weight, tape, sub("weight"))
    check_finite(raw_weights, "msdcn weight projection")
    weights = raw_weights.reshape(b, h, w, g, k)
    if p.softmax_weights:
        weights = softmax(weights, tape, sub("softmax"))

    raw_offsets = matmul_affine(x4, p.proj_offset, tape, sub("offset"))
    check_finite(raw_offsets, "msdcn offset projection")
    rel = p.direction_prior + raw_offsets.reshape(b, h, w, g, k, 2)

    if p.learn_relative_scale:
        logits = matmul_affine(x4, p.proj_scale, tape, sub("scale")) + p.scale_prior
        check_finite(logits, "msdcn scale projection")
    else:
        logits = np.broadcast_to(p.scale_prior, (b, h, w, g)).copy()
    sig = stable_sigmoid(logits)
    return Projection(weights=weights, rel=rel, sig=sig, scale=sig * p.s_max)


def place(proj: Projection, r: np.ndarray, origin: Tuple[int, int] = (0, 0)) -> Projection:
    """
    Fill in absolute sampling positions: p0 + (s * (p_k + dp_k)) * r.

    r is applied last so adjusted displacements are exactly r times the
    unadjusted ones. `origin` is the (row, col) of the first projected pixel
    when only a tile of the map was projected.
    """
    _, h, w = proj.scale.shape[:3]
    disp = (proj.scale[..., None, None] * proj.rel) * r
    rows = np.arange(origin[0], origin[0] + h, dtype=disp.dtype)[None, :, None, None, None]
    cols = np.arange(origin[1], origin[1] + w, dtype=disp.dtype)[None, None, :, None, None]
    proj.disp = disp
    proj.ph = rows + disp[..., 0]
    proj.pw = cols + disp[..., 1]
    return proj


def corner_terms(
    ph: np.ndarray, pw: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Integer base corner and fractional parts of fractional positions.

    Returns:
        (h0, w0, lh, lw, hh, hw) where lh = ph - floor(ph), hh = 1 - lh (same for w)
    """
    fh = np.floor(ph)
    fw = np.floor(pw)
    lh = ph - fh
    lw = pw - fw
    # Clipping keeps out-of-range corners out of range without int overflow.
    h0 = np.clip(fh, -2, np.iinfo(np.int32).max).astype(np.int64)
    w0 = np.clip(fw, -2, np.iinfo(np.int32).max).astype(np.int64)
    return h0, w0, lh, lw, 1.0 - lh, 1.0 - lw


def gather(xg: np.ndarray, hi: np.ndarray, wi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read xg[b, hi, wi, g, :] for index maps hi/wi of shape [B, h, w, G].

    Returns:
        (values [B, h, w, G, C] with out-of-bounds rows zeroed, valid mask [B, h, w, G])
    """
    b, height, width, g, _ = xg.shape
    valid = (hi >= 0) & (hi < height) & (wi >= 0) & (wi < width)
    hc = np.clip(hi, 0, height - 1)
    wc = np.clip(wi, 0, width - 1)
    bidx = np.arange(b)[:, None, None, None]
    gidx = np.arange(g)[None, None, None, :]
    values = xg[bidx, hc, wc, gidx]
    return np.where(valid[..., None], values, 0.0), valid


def _corner_values(
    xg: np.ndarray, h0: np.ndarray, w0: np.ndarray
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    corners = []
    for dh, dw in ((0, 0), (0, 1), (1, 0), (1, 1)):
        hi, wi = h0 + dh, w0 + dw
        values, valid = gather(xg, hi, wi)
        corners.append((values, valid, hi, wi))
    return corners


def aggregate(xg: np.ndarray, weights: np.ndarray, ph: np.ndarray, pw: np.ndarray) -> np.ndarray:
    """
    y_g = sum_k w_k * bilinear(x_g, p_k) for any set of output pixels.

    Args:
        xg: Full grouped input [B, H, W, G, C]
        weights: [B, h, w, G, K] for the output pixels being computed
        ph: Row positions [B, h, w, G, K]
        pw: Column positions [B, h, w, G, K]

    Returns:
        Grouped output [B, h, w, G, C]
    """
    h0, w0, lh, lw, hh, hw = corner_terms(ph, pw)
    out = np.zeros(weights.shape[:-1] + (xg.shape[-1],), dtype=xg.dtype)
    for k in range(weights.shape[-1]):
        (v00, _, _, _), (v01, _, _, _), (v10, _, _, _), (v11, _, _, _) = _corner_values(
            xg, h0[..., k], w0[..., k]
        )
        c00 = (hh[..., k] * hw[..., k])[..., None]
        c01 = (hh[..., k] * lw[..., k])[..., None]
        c10 = (lh[..., k] * hw[..., k])[..., None]
        c11 = (lh[..., k] * lw[..., k])[..., None]
        value = ((c00 * v00 + c01 * v01) + c10 * v10) + c11 * v11
        out = out + weights[..., k, None] * value
    return out


def msdcn_forward(
    x: np.ndarray,
    p: MsDcnParams,
    adjust: Adjust = (1.0, 1.0),
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> Tuple[np.ndarray, SamplingPlan]:
    """
    Multiscale deformable convolution.

    Args:
        x: Input [H, W, D] or [B, H, W, D]
        p: Layer parameters
        adjust: Per-axis S_max adjustment (r_h, r_w), both > 0
        tape: Optional tape for msdcn_backward
        key: Call-site key (required with tape)

    Returns:
        (y with the shape of x, SamplingPlan)

    Raises:
        ShapeException: If x is not a feature map with D channels
        NumericException: If any projection is not finite
        ArgumentException: If an adjust factor is not positive
    """
    r = check_adjust(adjust)
    x4, squeeze = as_batched(x, p.channels)
    b, h, w, d = x4.shape
    xg = x4.reshape(b, h, w, p.groups, p.group_width)

    proj = place(project(x4, p, tape, key), r)
    yg = aggregate(xg, proj.weights, proj.ph, proj.pw)

    if tape is not None:
        if key is None:
            raise ArgumentException("msdcn_forward called with a tape but without a key", "key")
        tape.record(
            key,
            "msdcn",
            xg=xg,
            ph=proj.ph,
            pw=proj.pw,
            rel=proj.rel,
            sig=proj.sig,
            scale=proj.scale,
            weights=proj.weights,
            adjust=r,
        )

    plan = SamplingPlan(
        positions=np.stack([proj.ph, proj.pw], axis=-1),
        weights=proj.weights,
        scales=proj.scale[..., None] * r,
        displacements=proj.disp,
        adjust=(float(r[0]), float(r[1])),
    )
    y = yg.reshape(b, h, w, d)
    if squeeze:
        return y[0], SamplingPlan(
            plan.positions[0], plan.weights[0], plan.scales[0], plan.displacements[0], plan.adjust
        )
    return y, plan


def msdcn_backward(
    grad: np.ndarray, p: MsDcnParams, tape: Tape, key: str
) -> Tuple[np.ndarray, MsDcnGrads]:
    """
    Gradients of msdcn_forward with respect to x and every parameter.

    Positions lying exactly on an integer lattice line use the right-limit
    derivative of the bilinear kernel.

    Args:
        grad: Upstream gradient, shape of the forward output
        p: Parameters used in the forward call
        tape: Tape holding the forward call
        key: Call-site key used in forward

    Returns:
        (dx, MsDcnGrads)

    Raises:
        StateException: If the forward call was not recorded
    """
    saved = tape.fetch(key, "msdcn")
    xg, ph, pw = saved["xg"], saved["ph"], saved["pw"]
    rel, sig, scale, weights, r = (
        saved["rel"],
        saved["sig"],
        saved["scale"],
        saved["weights"],
        saved["adjust"],
    )
    b, h, w, g, c = xg.shape
    k_points = p.points
    gy = grad.reshape(b, h, w, g, c)

    dxg = np.zeros_like(xg)
    dweights = np.empty_like(weights)
    dph = np.empty_like(ph)
    dpw = np.empty_like(pw)
    h0, w0, lh, lw, hh, hw = corner_terms(ph, pw)
    bidx = np.broadcast_to(np.arange(b)[:, None, None, None], (b, h, w, g))
    gidx = np.broadcast_to(np.arange(g)[None, None, None, :], (b, h, w, g))

    for k in range(k_points):
        corners = _corner_values(xg, h0[..., k], w0[..., k])
        cw = (
            hh[..., k] * hw[..., k],
            hh[..., k] * lw[..., k],
            lh[..., k] * hw[..., k],
            lh[..., k] * lw[..., k],
        )
        v00, v01, v10, v11 = (values for values, _, _, _ in corners)
        value = (
            (cw[0][..., None] * v00 + cw[1][..., None] * v01) + cw[2][..., None] * v10
        ) + cw[3][..., None] * v11
        dweights[..., k] = np.sum(gy * value, axis=-1)
        dvalue = weights[..., k, None] * gy
        dcw = [np.sum(dvalue * values, axis=-1) for values, _, _, _ in corners]
        dph[..., k] = (
            -dcw[0] * hw[..., k] - dcw[1] * lw[..., k] + dcw[2] * hw[..., k] + dcw[3] * lw[..., k]
        )
        dpw[..., k] = (
            -dcw[0] * hh[..., k] + dcw[1] * hh[..., k] - dcw[2] * lh[..., k] + dcw[3] * lh[..., k]
        )
        for (values, valid, hi, wi), weight in zip(corners, cw):
            contrib = weight[..., None] * dvalue
            np.add.at(
                dxg,
                (bidx[valid], hi[valid], wi[valid], gidx[valid]),
                contrib[valid],
            )

    # p = p0 + (s * rel) * r
    dbase_h = dph * r[0]
    dbase_w = dpw * r[1]
    dscale = np.sum(dbase_h * rel[..., 0] + dbase_w * rel[..., 1], axis=-1)
    drel = np.stack([dbase_h, dbase_w], axis=-1) * scale[..., None, None]
    dlogits = dscale * p.s_max * sig * (1.0 - sig)

    dx = dxg.reshape(b, h, w, g * c)
    zeros_scale = LinearParams(np.zeros_like(p.proj_scale.weight), np.zeros_like(p.proj_scale.bias))
    if p.learn_relative_scale:
        dx_scale, dproj_scale = matmul_affine_backward(dlogits, tape, f"{key}.scale")
        dx = dx + dx_scale
    else:
        dproj_scale = zeros_scale
    dscale_prior = dlogits.reshape(-1, g).sum(axis=0)

    dx_offset, dproj_offset = matmul_affine_backward(
        drel.reshape(b, h, w, g * k_points * 2), tape, f"{key}.offset"
    )
    ddirection = (
        drel.reshape(-1, k_points, 2).sum(axis=0)
        if p.learn_direction_prior
        else np.zeros_like(p.direction_prior)
    )

    draw_weights = (
        softmax_backward(dweights, tape, f"{key}.softmax") if p.softmax_weights else dweights
    )
    dx_weight, dproj_weight = matmul_affine_backward(
        draw_weights.reshape(b, h, w, g * k_points), tape, f"{key}.weight"
    )
    dx = dx + dx_offset + dx_weight
    if grad.ndim == 3:
        dx = dx[0]
    return dx, MsDcnGrads(
        proj_weight=dproj_weight,
        proj_offset=dproj_offset,
        proj_scale=dproj_scale,
        scale_prior=dscale_prior,
        direction_prior=ddirection,
    )


# ---------------------------------------------------------------------------
# Reference implementations


def bilinear_sample(x: np.ndarray, h: float, w: float) -> np.ndarray:
    """
    4-neighbor bilinear interpolation of x [H, W, C] at fractional (h, w).

    Neighbors outside [0, H-1] x [0, W-1] contribute zero.

    Args:
        x: Feature map [H, W, C]
        h: Row coordinate
        w: Column coordinate

    Returns:
        Channel vector [C]
    """
    height, width, channels = x.shape
    fh = float(floor(h))
    fw = float(floor(w))
    lh = h - fh
    lw = w - fw
    hh = 1.0 - lh
    hw = 1.0 - lw
    zero = np.zeros(channels, dtype=x.dtype)

    def at(row: float, col: float) -> np.ndarray:
        if 0 <= row < height and 0 <= col < width:
            return x[int(row), int(col)]
        return zero

    v00 = at(fh, fw)
    v01 = at(fh, fw + 1)
    v10 = at(fh + 1, fw)
    v11 = at(fh + 1, fw + 1)
    return ((hh * hw * v00 + hh * lw * v01) + lh * hw * v10) + lh * lw * v11


def _affine_loop(xvec: np.ndarray, lp: LinearParams) -> np.ndarray:
    out = np.empty(lp.out_dim, dtype=np.result_type(xvec, lp.weight))
    for j in range(lp.out_dim):
        acc = xvec[0] * lp.weight[0, j]
        for i in range(1, lp.in_dim):
            acc = acc + xvec[i] * lp.weight[i, j]
        out[j] = acc + lp.bias[j]
    return out


def msdcn_oracle(x: np.ndarray, p: MsDcnParams, adjust: Adjust = (1.0, 1.0)) -> np.ndarray:
    """
    Nested-loop reference for msdcn_forward, one pixel, group and point at a time.

    Same contract and same results as msdcn_forward; used to verify it.

    Args:
        x: Input [H, W, D] or [B, H, W, D]
        p: Layer parameters
        adjust: Per-axis S_max adjustment

    Returns:
        Output with the shape of x
    """
    r_h, r_w = (float(v) for v in check_adjust(adjust))
    x4, squeeze = as_batched(x, p.channels)
    batch, height, width, _ = x4.shape
    g_count, k_count, c = p.groups, p.points, p.group_width
    y = np.zeros_like(x4)

    for bi in range(batch):
        for i in range(height):
            for j in range(width):
                xvec = x4[bi, i, j]
                raw_w = _affine_loop(xvec, p.proj_weight)
                raw_o = _affine_loop(xvec, p.proj_offset)
                raw_s = _affine_loop(xvec, p.proj_scale) if p.learn_relative_scale else None
                check_finite(raw_w, "msdcn weight projection")
                check_finite(raw_o, "msdcn offset projection")
                for g in range(g_count):
                    xg = x4[bi, :, :, g * c : (g + 1) * c]
                    row = raw_w[g * k_count : (g + 1) * k_count]
                    if p.softmax_weights:
                        row = softmax(row)
                    logit = raw_s[g] + p.scale_prior[g] if raw_s is not None else p.scale_prior[g]
                    s = stable_sigmoid(np.array([logit]))[0] * p.s_max
                    acc = np.zeros(c, dtype=x4.dtype)
                    for k in range(k_count):
                        base = (g * k_count + k) * 2
                        rel_h = p.direction_prior[k, 0] + raw_o[base]
                        rel_w = p.direction_prior[k, 1] + raw_o[base + 1]
                        ph = float(i) + (s * rel_h) * r_h
                        pw = float(j) + (s * rel_w) * r_w
                        acc = acc + row[k] * bilinear_sample(xg, ph, pw)
                    y[bi, i, j, g * c : (g + 1) * c] = acc
    return y[0] if squeeze else y


def static_conv_forward(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Group convolution with one shared static scalar per (group, tap), zero padding.

    This is what the deformable layer reduces to with no offsets, unit scale and
    static weights.

    Args:
        x: Input [H, W, D] or [B, H, W, D]
        weights: Kernel [G, k, k] with k in {3, 5}

    Returns:
        Output with the shape of x

    Raises:
        ShapeException: If the kernel is not 3x3 or 5x5
        ConfigException: If D is not divisible by G
    """
    if weights.ndim != 3 or weights.shape[1] != weights.shape[2] or weights.shape[1] not in (3, 5):
        raise ShapeException(
            "Static kernel must be [G, 3, 3] or [G, 5, 5]",
            "weights",
            expected=(3, 3),
            actual=tuple(weights.shape[1:]),
        )
    groups, ksize, _ = weights.shape
    if x.ndim not in (3, 4):
        raise ShapeException(
            "Feature map must be [H, W, D] or [B, H, W, D]", "x", expected=(3,), actual=(x.ndim,)
        )
    x4 = x[None] if x.ndim == 3 else x
    b, h, w, d = x4.shape
    if d % groups != 0:
        raise ConfigException(f"Channels D={d} not divisible by groups G={groups}", "weights")
    pad = ksize // 2
    widths = ((0, 0), (pad, pad), (pad, pad), (0, 0), (0, 0))
    xp = np.pad(x4.reshape(b, h, w, groups, d // groups), widths)
    out = np.zeros((b, h, w, groups, d // groups), dtype=x4.dtype)
    for a in range(ksize):
        for c in range(ksize):
            out = out + weights[:, a, c][:, None] * xp[:, a : a + h, c : c + w]
    out = out.reshape(b, h, w, d)
    return out[0] if x.ndim == 3 else out


# ---------------------------------------------------------------------------
# Cost model and resolution adjustment


@validate_positive_params("height", "width", "channels", "points", "groups")
def flops_count(height: int, width: int, channels: int, points: int, groups: int) -> float:
    """
    Sampling cost of one layer: 4 * K * H * W * C / G.

    Args:
        height: H
        width: W
        channels: C
        points: K
        groups: G

    Returns:
        FLOPs count

    Raises:
        ArgumentException: If any argument is not positive (including G = 0)
    """
    return (4 * points * height * width * channels) / groups


def smax_adjust(train_res: Resolution, test_res: Resolution) -> Adjust:
    """
    Per-axis S_max adjustment factors for sampling at a new resolution.

    Args:
        train_res: (H, W) the layer was trained at
        test_res: (H, W) it is evaluated at

    Returns:
        (H_test / H_train, W_test / W_train)

    Raises:
        ArgumentException: If any size is not positive
    """
    for name, value in zip(
        ("train_height", "train_width", "test_height", "test_width"), (*train_res, *test_res)
    ):
        validate_positive(value, name)
    factors = (test_res[0] / train_res[0], test_res[1] / train_res[1])
    logger.debug(f"S_max adjustment {train_res} -> {test_res}: {factors}")
    return factors


def params_as_dict(p: MsDcnParams, prefix: str) -> Dict[str, np.ndarray]:
    """Flatten the learnable arrays of a layer under `prefix`."""
    return {
        f"{prefix}.weight.weight": p.proj_weight.weight,
        f"{prefix}.weight.bias": p.proj_weight.bias,
        f"{prefix}.offset.weight": p.proj_offset.weight,
        f"{prefix}.offset.bias": p.proj_offset.bias,
        f"{prefix}.scale.weight": p.proj_scale.weight,
        f"{prefix}.scale.bias": p.proj_scale.bias,
        f"{prefix}.scale_prior": p.scale_prior,
        f"{prefix}.direction_prior": p.direction_prior,
    }


def grads_as_dict(gr: MsDcnGrads, prefix: str) -> Dict[str, np.ndarray]:
    """Flatten MsDcnGrads with the same names as params_as_dict."""
    return {
        f"{prefix}.weight.weight": gr.proj_weight.weight,
        f"{prefix}.weight.bias": gr.proj_weight.bias,
        f"{prefix}.offset.weight": gr.proj_offset.weight,
        f"{prefix}.offset.bias": gr.proj_offset.bias,
        f"{prefix}.scale.weight": gr.proj_scale.weight,
        f"{prefix}.scale.bias": gr.proj_scale.bias,
        f"{prefix}.scale_prior": gr.scale_prior,
        f"{prefix}.direction_prior": gr.direction_prior,
    }
