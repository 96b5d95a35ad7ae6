# flowdcn/tensor/primitives.py

"""
Differentiable primitives on dense numpy arrays.

Every forward function takes an optional `tape` and `key`; when a tape is given the
function records what its matching `*_backward` function needs. Backward functions
return gradients with respect to every input and parameter of the forward call.

Feature maps are laid out H x W x D (row-major, channels last). f64 is the reference
precision; f32 inputs are accepted and keep their dtype.
"""

# Standard library imports
from dataclasses import dataclass
from math import pi
from math import sqrt
from typing import Optional
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ShapeException
from flowdcn.tensor.tape import Tape
from flowdcn.utils.validation import check_last_dim
from flowdcn.utils.validation import validate_positive_params

_GELU_C = sqrt(2.0 / pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class LinearParams:
    """Affine map parameters: weight [in_dim x out_dim], bias [out_dim].

    Also used to carry the gradients of an affine map (same shapes)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ShapeException(
                "LinearParams weight must be 2-D",
                "weight",
                expected=(2,),
                actual=(self.weight.ndim,),
            )
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeException(
                "LinearParams bias must match weight columns",
                "bias",
                expected=(self.weight.shape[1],),
                actual=self.bias.shape,
            )

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[1])


def _record(tape: Optional[Tape], key: Optional[str], op: str, **saved: np.ndarray) -> None:
    if tape is None:
        return
    if key is None:
        raise ArgumentException(f"{op} called with a tape but without a key", "key")
    tape.record(key, op, **saved)


# ---------------------------------------------------------------------------
# Affine


def matmul_affine(
    x: np.ndarray, p: LinearParams, tape: Optional[Tape] = None, key: Optional[str] = None
) -> np.ndarray:
    """
    y[..., j] = sum_i x[..., i] * W[i, j] + b[j]

    The sum is accumulated in input-index order, then the bias is added, so the
    result is bit-identical to a plain triple loop doing the same.

    Args:
        x: Input [..., in_dim]
        p: Affine parameters
        tape: Optional tape to record the input on
        key: Call-site key (required with tape)

    Returns:
        Output [..., out_dim]

    Raises:
        ShapeException: If the last axis of x is not in_dim
    """
    check_last_dim(x, p.in_dim, "x")
    weight = p.weight
    acc = x[..., 0:1] * weight[0]
    for i in range(1, p.in_dim):
        acc = acc + x[..., i : i + 1] * weight[i]
    y = acc + p.bias
    _record(tape, key, "matmul_affine", x=x, weight=weight)
    return y


def matmul_affine_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, LinearParams]:
    """
    Gradients of matmul_affine.

    Args:
        grad: Upstream gradient [..., out_dim]
        tape: Tape holding the forward call
        key: Call-site key used in forward

    Returns:
        (dx, LinearParams(dweight, dbias))
    """
    saved = tape.fetch(key, "matmul_affine")
    x, weight = saved["x"], saved["weight"]
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad.reshape(-1, grad.shape[-1])
    dx = grad @ weight.T
    return dx, LinearParams(weight=flat_x.T @ flat_g, bias=flat_g.sum(axis=0))


# ---------------------------------------------------------------------------
# Normalization


@validate_positive_params("eps")
def rms_norm(
    x: np.ndarray,
    gain: np.ndarray,
    eps: float = 1e-6,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    y = x / sqrt(mean(x^2) + eps) * gain, mean over the last axis.

    Args:
        x: Input [..., D]
        gain: Per-channel gain [D]
        eps: Stabilizer, > 0

    Returns:
        Normalized array with the shape of x
    """
    check_last_dim(x, gain.shape[0], "x")
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    xhat = x * inv
    _record(tape, key, "rms_norm", xhat=xhat, inv=inv, gain=gain)
    return xhat * gain


def rms_norm_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of rms_norm.

    Returns:
        (dx, dgain)
    """
    saved = tape.fetch(key, "rms_norm")
    xhat, inv, gain = saved["xhat"], saved["inv"], saved["gain"]
    dxhat = grad * gain
    dgain = (grad * xhat).reshape(-1, gain.shape[0]).sum(axis=0)
    dx = inv * (dxhat - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dgain


@validate_positive_params("eps")
def layer_norm(
    x: np.ndarray,
    gain: np.ndarray,
    bias: np.ndarray,
    eps: float = 1e-6,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    y = (x - mean) / sqrt(var + eps) * gain + bias over the last axis.

    Args:
        x: Input [..., D]
        gain: Per-channel gain [D]
        bias: Per-channel bias [D]
        eps: Stabilizer

    Returns:
        Normalized array with the shape of x
    """
    check_last_dim(x, gain.shape[0], "x")
    centered = x - np.mean(x, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    _record(tape, key, "layer_norm", xhat=xhat, inv=inv, gain=gain)
    return xhat * gain + bias


def layer_norm_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of layer_norm.

    Returns:
        (dx, dgain, dbias)
    """
    saved = tape.fetch(key, "layer_norm")
    xhat, inv, gain = saved["xhat"], saved["inv"], saved["gain"]
    width = gain.shape[0]
    dxhat = grad * gain
    dgain = (grad * xhat).reshape(-1, width).sum(axis=0)
    dbias = grad.reshape(-1, width).sum(axis=0)
    dx = inv * (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# Elementwise nonlinearities


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """
    Overflow-free logistic function.

    Every sigmoid in the package goes through this helper so vectorized, blocked
    and loop implementations round identically.
    """
    z = np.ascontiguousarray(z)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(z: np.ndarray, tape: Optional[Tape] = None, key: Optional[str] = None) -> np.ndarray:
    """Elementwise logistic function."""
    s = stable_sigmoid(z)
    _record(tape, key, "sigmoid", s=s)
    return s


def sigmoid_backward(grad: np.ndarray, tape: Tape, key: str) -> np.ndarray:
    """Gradient of sigmoid w.r.t. its input."""
    s = tape.fetch(key, "sigmoid")["s"]
    return grad * s * (1.0 - s)


def silu(z: np.ndarray, tape: Optional[Tape] = None, key: Optional[str] = None) -> np.ndarray:
    """silu(z) = z * sigmoid(z)"""
    s = stable_sigmoid(z)
    _record(tape, key, "silu", z=z, s=s)
    return z * s


def silu_backward(grad: np.ndarray, tape: Tape, key: str) -> np.ndarray:
    """Gradient of silu w.r.t. its input."""
    saved = tape.fetch(key, "silu")
    z, s = saved["z"], saved["s"]
    return grad * (s + z * s * (1.0 - s))


def gelu(z: np.ndarray, tape: Optional[Tape] = None, key: Optional[str] = None) -> np.ndarray:
    """GELU, tanh approximation."""
    t = np.tanh(_GELU_C * (z + _GELU_A * z**3))
    _record(tape, key, "gelu", z=z, t=t)
    return 0.5 * z * (1.0 + t)


def gelu_backward(grad: np.ndarray, tape: Tape, key: str) -> np.ndarray:
    """Gradient of gelu w.r.t. its input."""
    saved = tape.fetch(key, "gelu")
    z, t = saved["z"], saved["t"]
    inner = _GELU_C * (1.0 + 3.0 * _GELU_A * z * z)
    return grad * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * inner)


def softmax(
    z: np.ndarray, tape: Optional[Tape] = None, key: Optional[str] = None
) -> np.ndarray:
    """
    Softmax over the last axis.

    The normalizer is summed in index order so that calling this on a single
    row gives the same bits as calling it on a stack of rows.

    Args:
        z: Logits [..., K]

    Returns:
        Probabilities [..., K]
    """
    shifted = np.ascontiguousarray(z - np.max(z, axis=-1, keepdims=True))
    e = np.exp(shifted)
    total = e[..., 0:1]
    for k in range(1, z.shape[-1]):
        total = total + e[..., k : k + 1]
    p = e / total
    _record(tape, key, "softmax", p=p)
    return p


def softmax_backward(grad: np.ndarray, tape: Tape, key: str) -> np.ndarray:
    """Gradient of softmax w.r.t. its logits."""
    p = tape.fetch(key, "softmax")["p"]
    return p * (grad - np.sum(grad * p, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Elementwise conditioning ops


def modulate(
    x: np.ndarray,
    shift: np.ndarray,
    scale: np.ndarray,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    x * (1 + scale) + shift, with shift/scale broadcast over the spatial axes.

    Args:
        x: Normalized features [B, H, W, D]
        shift: [B, D]
        scale: [B, D]

    Returns:
        Modulated features [B, H, W, D]
    """
    sh = shift[:, None, None, :]
    sc = scale[:, None, None, :]
    _record(tape, key, "modulate", x=x, scale=sc)
    return x * (1.0 + sc) + sh


def modulate_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of modulate.

    Returns:
        (dx, dshift [B, D], dscale [B, D])
    """
    saved = tape.fetch(key, "modulate")
    x, sc = saved["x"], saved["scale"]
    dx = grad * (1.0 + sc)
    dshift = grad.sum(axis=(1, 2))
    dscale = (grad * x).sum(axis=(1, 2))
    return dx, dshift, dscale


def gated_residual(
    x: np.ndarray,
    gate: np.ndarray,
    branch: np.ndarray,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    x + gate * branch, gate [B, D] broadcast over the spatial axes.

    Returns:
        Residual output [B, H, W, D]
    """
    g = gate[:, None, None, :]
    _record(tape, key, "gated_residual", gate=g, branch=branch)
    return x + g * branch


def gated_residual_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of gated_residual.

    Returns:
        (dx, dgate [B, D], dbranch)
    """
    saved = tape.fetch(key, "gated_residual")
    g, branch = saved["gate"], saved["branch"]
    return grad, (grad * branch).sum(axis=(1, 2)), grad * g


# ---------------------------------------------------------------------------
# MLP blocks


def swiglu(
    x: np.ndarray,
    p_gate: LinearParams,
    p_up: LinearParams,
    p_down: LinearParams,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    down(silu(gate(x)) * up(x))

    Args:
        x: Input [..., D]
        p_gate: D -> D_hidden
        p_up: D -> D_hidden
        p_down: D_hidden -> D

    Returns:
        Output [..., D]
    """
    if p_gate.out_dim != p_up.out_dim or p_down.in_dim != p_gate.out_dim:
        raise ShapeException(
            "SwiGLU hidden widths disagree",
            "p_down",
            expected=(p_gate.out_dim,),
            actual=(p_up.out_dim, p_down.in_dim),
        )
    sub = f"{key}." if key is not None else None
    a = matmul_affine(x, p_gate, tape, None if sub is None else sub + "gate")
    b = matmul_affine(x, p_up, tape, None if sub is None else sub + "up")
    act = silu(a, tape, None if sub is None else sub + "act")
    hidden = act * b
    _record(tape, key, "swiglu", act=act, b=b)
    return matmul_affine(hidden, p_down, tape, None if sub is None else sub + "down")


def swiglu_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, LinearParams, LinearParams, LinearParams]:
    """
    Gradients of swiglu.

    Returns:
        (dx, dgate, dup, ddown)
    """
    saved = tape.fetch(key, "swiglu")
    act, b = saved["act"], saved["b"]
    dhidden, ddown = matmul_affine_backward(grad, tape, f"{key}.down")
    dact = dhidden * b
    db = dhidden * act
    da = silu_backward(dact, tape, f"{key}.act")
    dx_up, dup = matmul_affine_backward(db, tape, f"{key}.up")
    dx_gate, dgate = matmul_affine_backward(da, tape, f"{key}.gate")
    return dx_gate + dx_up, dgate, dup, ddown


def ffn(
    x: np.ndarray,
    p_fc1: LinearParams,
    p_fc2: LinearParams,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    fc2(gelu(fc1(x))), the plain transformer MLP.

    Returns:
        Output [..., D]
    """
    sub = f"{key}." if key is not None else None
    hidden = matmul_affine(x, p_fc1, tape, None if sub is None else sub + "fc1")
    act = gelu(hidden, tape, None if sub is None else sub + "act")
    return matmul_affine(act, p_fc2, tape, None if sub is None else sub + "fc2")


def ffn_backward(
    grad: np.ndarray, tape: Tape, key: str
) -> Tuple[np.ndarray, LinearParams, LinearParams]:
    """
    Gradients of ffn.

    Returns:
        (dx, dfc1, dfc2)
    """
    dact, dfc2 = matmul_affine_backward(grad, tape, f"{key}.fc2")
    dhidden = gelu_backward(dact, tape, f"{key}.act")
    dx, dfc1 = matmul_affine_backward(dhidden, tape, f"{key}.fc1")
    return dx, dfc1, dfc2
