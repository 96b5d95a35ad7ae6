# flowdcn/model/network.py

# Standard library imports
from logging import getLogger
from math import log
from typing import Callable
from typing import Dict
from typing import Optional
from typing import Tuple
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import BlockStyle
from flowdcn._constants import TIMESTEP_FREQUENCIES
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ResolutionException
from flowdcn.exceptions import ShapeException
from flowdcn.model.config import ModelConfig
from flowdcn.model.config import parameter_shapes
from flowdcn.ops.msdcn import MsDcnParams
from flowdcn.ops.msdcn import grads_as_dict
from flowdcn.ops.msdcn import init_msdcn_params
from flowdcn.ops.msdcn import msdcn_backward
from flowdcn.ops.msdcn import msdcn_forward
from flowdcn.ops.msdcn import params_as_dict
from flowdcn.ops.msdcn import smax_adjust
from flowdcn.tensor.primitives import LinearParams
from flowdcn.tensor.primitives import ffn
from flowdcn.tensor.primitives import ffn_backward
from flowdcn.tensor.primitives import gated_residual
from flowdcn.tensor.primitives import gated_residual_backward
from flowdcn.tensor.primitives import layer_norm
from flowdcn.tensor.primitives import layer_norm_backward
from flowdcn.tensor.primitives import matmul_affine
from flowdcn.tensor.primitives import matmul_affine_backward
from flowdcn.tensor.primitives import modulate
from flowdcn.tensor.primitives import modulate_backward
from flowdcn.tensor.primitives import rms_norm
from flowdcn.tensor.primitives import rms_norm_backward
from flowdcn.tensor.primitives import silu
from flowdcn.tensor.primitives import silu_backward
from flowdcn.tensor.primitives import swiglu
from flowdcn.tensor.primitives import swiglu_backward
from flowdcn.tensor.tape import Tape
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.types import Adjust
from flowdcn.utils.types import ParamDict
from flowdcn.utils.validation import check_finite

ArrayFn = Callable[[np.ndarray], np.ndarray]
Labels = Union[int, np.ndarray]


# ---------------------------------------------------------------------------
# Structural helpers


def patchify_rearrange(x: np.ndarray, patch: int) -> np.ndarray:
    """
    Non-overlapping p x p space-to-depth.

    out[b, i, j, (a * p + c) * C + ch] = x[b, i * p + a, j * p + c, ch]

    Args:
        x: Images [B, H, W, C]
        patch: p

    Returns:
        [B, H/p, W/p, p*p*C]

    Raises:
        ResolutionException: If H or W is not divisible by p
    """
    b, h, w, c = x.shape
    if h % patch or w % patch:
        raise ResolutionException(h, w, patch)
    out = x.reshape(b, h // patch, patch, w // patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(out).reshape(b, h // patch, w // patch, patch * patch * c)


def unpatchify(z: np.ndarray, patch: int, channels: int) -> np.ndarray:
    """
    Depth-to-space, the exact inverse of patchify_rearrange.

    Args:
        z: [B, h, w, p*p*C]
        patch: p
        channels: C

    Returns:
        Images [B, h*p, w*p, C]
    """
    b, h, w, depth = z.shape
    if depth != patch * patch * channels:
        raise ShapeException(
            "Patch depth mismatch", "z", expected=(patch * patch * channels,), actual=(depth,)
        )
    out = z.reshape(b, h, w, patch, patch, channels).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(out).reshape(b, h * patch, w * patch, channels)


def patchify(
    x: np.ndarray,
    patch: int,
    embed: LinearParams,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    Space-to-depth followed by an affine projection to the model width.

    Args:
        x: Images [B, H, W, C]
        patch: p
        embed: p*p*C -> d projection

    Returns:
        Tokens [B, H/p, W/p, d]
    """
    return matmul_affine(patchify_rearrange(x, patch), embed, tape, key)


def timestep_embedding(t: np.ndarray, dim: int = TIMESTEP_FREQUENCIES) -> np.ndarray:
    """
    Sinusoidal features of t in [0, 1] (scaled by 1000), [cos | sin].

    Args:
        t: Times [B]
        dim: Feature width (even)

    Returns:
        [B, dim]
    """
    half = dim // 2
    freqs = np.exp(-log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = (np.asarray(t, dtype=np.float64) * 1000.0)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def adaln_modulate(
    x: np.ndarray,
    shift: np.ndarray,
    scale: np.ndarray,
    gate: np.ndarray,
    branch: ArrayFn,
    norm: ArrayFn,
    tape: Optional[Tape] = None,
    key: Optional[str] = None,
) -> np.ndarray:
    """
    One AdaLN-Zero sub-block: x + gate * branch(norm(x) * (1 + scale) + shift).

    With a zero gate the sub-block is the identity.

    Args:
        x: Tokens [B, h, w, d]
        shift: [B, d]
        scale: [B, d]
        gate: [B, d]
        branch: Branch applied to the modulated tokens (records itself on the tape)
        norm: Normalization (records itself on the tape)
        tape: Optional tape
        key: Call-site key (required with tape)

    Returns:
        Tokens [B, h, w, d]
    """
    mod_key = f"{key}.mod" if key is not None else None
    res_key = f"{key}.res" if key is not None else None
    modulated = modulate(norm(x), shift, scale, tape, mod_key)
    return gated_residual(x, gate, branch(modulated), tape, res_key)


def adaln_modulate_backward(
    grad: np.ndarray, branch_backward: ArrayFn, norm_backward: ArrayFn, tape: Tape, key: str
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of adaln_modulate.

    Args:
        grad: Upstream gradient [B, h, w, d]
        branch_backward: Maps d(branch output) to d(branch input), accumulating its own grads
        norm_backward: Maps d(norm output) to d(norm input), accumulating its own grads
        tape: Tape holding the forward call
        key: Call-site key used in forward

    Returns:
        (dx, dshift, dscale, dgate)
    """
    dx, dgate, dbranch = gated_residual_backward(grad, tape, f"{key}.res")
    dnormed, dshift, dscale = modulate_backward(branch_backward(dbranch), tape, f"{key}.mod")
    return dx + norm_backward(dnormed), dshift, dscale, dgate


# ---------------------------------------------------------------------------
# Initialization


def _xavier(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ParamDict:
    """
    Fresh parameters for config.

    Each tensor draws from its own named RNG stream, so the values do not depend on
    parameter order. AdaLN projections and the final projection start at zero
    (AdaLN-Zero): a fresh model outputs exactly zero.

    Args:
        config: Model configuration
        seed: Initialization seed

    Returns:
        Ordered parameter dict matching parameter_shapes(config)
    """
    params: ParamDict = {}
    for name, shape in parameter_shapes(config).items():
        if ".dcn." in name:
            continue
        rng = rng_stream(seed, "init", name)
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".bias") or "adaln" in name or name.startswith("final.linear"):
            params[name] = np.zeros(shape)
        elif name.startswith(("t_embed", "y_embed")):
            params[name] = rng.standard_normal(shape) * 0.02
        else:
            params[name] = _xavier(rng, shape)

    for i in range(config.layers):
        layer = init_msdcn_params(
            rng_stream(seed, "init", f"blocks.{i}.dcn"),
            channels=config.hidden,
            groups=config.groups,
            points=config.points,
            s_max=config.effective_s_max,
            multiscale=config.multiscale,
            prior_init=config.prior_init,
        )
        params.update(params_as_dict(layer, f"blocks.{i}.dcn"))

    # Canonical order
    return {name: params[name] for name in parameter_shapes(config)}


# ---------------------------------------------------------------------------
# Model


class FlowDCN:
    """
    Resolution-agnostic velocity network: patchify, AdaLN-Zero conditioned stack of
    (deformable, MLP) blocks, final projection, unpatchify.

    Parameters live in one flat ordered dict; nothing depends on the image size, so the
    same instance runs at any resolution divisible by the patch size.
    """

    def __init__(self, config: ModelConfig, params: Optional[ParamDict] = None, seed: int = 0):
        """Initialize a model.

        Args:
            config: Model configuration
            params: Existing parameters (validated against config); fresh ones if None
            seed: Initialization seed when params is None
        """
        self.config = config
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")
        if params is None:
            self.params = init_params(config, seed)
        else:
            expected = parameter_shapes(config)
            if list(params) != list(expected):
                missing = sorted(set(expected) - set(params))
                extra = sorted(set(params) - set(expected))
                raise ShapeException(
                    "Parameter names do not match config"
                    f" (missing={missing[:5]}, extra={extra[:5]})",
                    "params",
                )
            for name, shape in expected.items():
                if params[name].shape != shape:
                    raise ShapeException(name, name, expected=shape, actual=params[name].shape)
            self.params = params
        self.logger.debug(
            f"Built FlowDCN with {self.parameter_count()} parameters "
            f"(layers={config.layers}, hidden={config.hidden}, groups={config.groups})"
        )

    @property
    def null_label(self) -> int:
        return self.config.num_classes

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def resolution_adjust(self, height: int, width: int) -> Adjust:
        """S_max adjustment factors for images of size height x width."""
        return smax_adjust(self.config.train_resolution, (height, width))

    def _lin(self, name: str) -> LinearParams:
        return LinearParams(self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def msdcn_params(self, index: int) -> MsDcnParams:
        """View of block `index`'s deformable layer parameters."""
        prefix = f"blocks.{index}.dcn"
        cfg = self.config
        return MsDcnParams(
            proj_weight=self._lin(f"{prefix}.weight"),
            proj_offset=self._lin(f"{prefix}.offset"),
            proj_scale=self._lin(f"{prefix}.scale"),
            scale_prior=self.params[f"{prefix}.scale_prior"],
            direction_prior=self.params[f"{prefix}.direction_prior"],
            s_max=cfg.effective_s_max,
            groups=cfg.groups,
            points=cfg.points,
            softmax_weights=cfg.softmax_weights,
            learn_direction_prior=cfg.learn_direction_prior,
            learn_relative_scale=cfg.learn_relative_scale,
        )

    # -- inputs ------------------------------------------------------------

    def _prepare(
        self, x: np.ndarray, t: Union[float, np.ndarray], labels: Labels
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ShapeException(
                "Model input must be [B, H, W, C]",
                "x",
                expected=(self.config.in_channels,),
                actual=tuple(x.shape),
            )
        batch = x.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (batch,)).copy()
        check_finite(t_arr, "model timestep")
        label_arr = np.broadcast_to(np.asarray(labels, dtype=np.int64).reshape(-1), (batch,)).copy()
        if np.any(label_arr < 0) or np.any(label_arr > self.null_label):
            bad = label_arr[(label_arr < 0) | (label_arr > self.null_label)][0]
            raise ArgumentException(
                f"Unknown label id {bad}; valid ids are 0..{self.null_label - 1}"
                f" and {self.null_label} (null)",
                "label",
            )
        return x, t_arr, label_arr

    # -- forward -----------------------------------------------------------

    def _norm(self, name: str, z: np.ndarray, tape: Optional[Tape]) -> np.ndarray:
        key = name if tape is not None else None
        if self.config.block_style == BlockStyle.FFN_LAYERNORM:
            return layer_norm(
                z, self.params[f"{name}.gain"], self.params[f"{name}.bias"], tape=tape, key=key
            )
        return rms_norm(z, self.params[f"{name}.gain"], tape=tape, key=key)

    def _dcn_branch(
        self, index: int, m: np.ndarray, adjust: Adjust, tape: Optional[Tape]
    ) -> np.ndarray:
        block = f"blocks.{index}"
        key: Callable[[str], Optional[str]] = (
            (lambda s: f"{block}.{s}") if tape is not None else (lambda s: None)
        )
        if self.config.dcn_projections:
            m = matmul_affine(m, self._lin(f"{block}.dcn_in"), tape, key("dcn_in"))
        v, _ = msdcn_forward(m, self.msdcn_params(index), adjust, tape, key("dcn"))
        if self.config.dcn_projections:
            v = matmul_affine(v, self._lin(f"{block}.dcn_out"), tape, key("dcn_out"))
        return v

    def _mlp(self, index: int, m: np.ndarray, tape: Optional[Tape]) -> np.ndarray:
        block = f"blocks.{index}.mlp"
        key = block if tape is not None else None
        if self.config.block_style == BlockStyle.FFN_LAYERNORM:
            return ffn(m, self._lin(f"{block}.fc1"), self._lin(f"{block}.fc2"), tape, key)
        return swiglu(
            m,
            self._lin(f"{block}.gate"),
            self._lin(f"{block}.up"),
            self._lin(f"{block}.down"),
            tape,
            key,
        )

    def _block(
        self, index: int, h: np.ndarray, c: np.ndarray, adjust: Adjust, tape: Optional[Tape]
    ) -> np.ndarray:
        block = f"blocks.{index}"
        key: Callable[[str], Optional[str]] = (
            (lambda s: f"{block}.{s}") if tape is not None else (lambda s: None)
        )
        mod = matmul_affine(c, self._lin(f"{block}.adaln"), tape, key("adaln"))
        shift1, scale1, gate1, shift2, scale2, gate2 = np.split(mod, 6, axis=-1)
        h = adaln_modulate(
            h,
            shift1,
            scale1,
            gate1,
            branch=lambda m: self._dcn_branch(index, m, adjust, tape),
            norm=lambda z: self._norm(f"{block}.norm1", z, tape),
            tape=tape,
            key=key("sub1"),
        )
        return adaln_modulate(
            h,
            shift2,
            scale2,
            gate2,
            branch=lambda m: self._mlp(index, m, tape),
            norm=lambda z: self._norm(f"{block}.norm2", z, tape),
            tape=tape,
            key=key("sub2"),
        )

    def forward(
        self,
        x: np.ndarray,
        t: Union[float, np.ndarray],
        labels: Labels,
        adjust: Adjust = (1.0, 1.0),
        tape: Optional[Tape] = None,
    ) -> np.ndarray:
        """
        Predict the velocity field at (x_t, t) for the given labels.

        Args:
            x: Noisy images [B, H, W, C] or [H, W, C]; H and W divisible by the patch size
            t: Time in [0, 1], scalar or [B]
            labels: Class ids in [0, num_classes]; num_classes is the null label
            adjust: S_max adjustment (r_h, r_w) for every deformable layer
            tape: Optional tape for backward()

        Returns:
            Velocity with the shape of x

        Raises:
            ResolutionException: If H or W is not divisible by the patch size
            ArgumentException: If a label id is unknown
        """
        squeeze = x.ndim == 3
        x4, t_arr, label_arr = self._prepare(x, t, labels)
        cfg = self.config
        key: Callable[[str], Optional[str]] = (
            (lambda s: s) if tape is not None else (lambda s: None)
        )

        h = patchify(x4, cfg.patch, self._lin("x_embed"), tape, key("x_embed"))

        t1 = matmul_affine(
            timestep_embedding(t_arr), self._lin("t_embed.fc1"), tape, key("t_embed.fc1")
        )
        t2 = silu(t1, tape, key("t_embed.act"))
        t_vec = matmul_affine(t2, self._lin("t_embed.fc2"), tape, key("t_embed.fc2"))
        cond = t_vec + self.params["y_embed.table"][label_arr]
        c = silu(cond, tape, key("cond_act"))
        if tape is not None:
            tape.record("y_embed", "lookup", labels=label_arr)

        for i in range(cfg.layers):
            h = self._block(i, h, c, adjust, tape)

        fmod = matmul_affine(c, self._lin("final.adaln"), tape, key("final.adaln"))
        shift, scale = np.split(fmod, 2, axis=-1)
        normed = self._norm("final.norm", h, tape)
        out = matmul_affine(
            modulate(normed, shift, scale, tape, key("final.mod")),
            self._lin("final.linear"),
            tape,
            key("final.linear"),
        )
        v = unpatchify(out, cfg.patch, cfg.in_channels)
        return v[0] if squeeze else v

    def velocity(
        self,
        x: np.ndarray,
        t: Union[float, np.ndarray],
        labels: Labels,
        adjust: Adjust = (1.0, 1.0),
    ) -> np.ndarray:
        """Inference-only forward (no tape)."""
        return self.forward(x, t, labels, adjust)

    __call__ = velocity

    # -- backward ----------------------------------------------------------

    def _accumulate(self, grads: ParamDict, name: str, value: np.ndarray) -> None:
        grads[name] = grads[name] + value

    def _acc_linear(self, grads: ParamDict, name: str, lg: LinearParams) -> None:
        self._accumulate(grads, f"{name}.weight", lg.weight)
        self._accumulate(grads, f"{name}.bias", lg.bias)

    def _norm_backward(
        self, grads: ParamDict, name: str, grad: np.ndarray, tape: Tape
    ) -> np.ndarray:
        if self.config.block_style == BlockStyle.FFN_LAYERNORM:
            dz, dgain, dbias = layer_norm_backward(grad, tape, name)
            self._accumulate(grads, f"{name}.bias", dbias)
        else:
            dz, dgain = rms_norm_backward(grad, tape, name)
        self._accumulate(grads, f"{name}.gain", dgain)
        return dz

    def _dcn_branch_backward(
        self, grads: ParamDict, index: int, grad: np.ndarray, tape: Tape
    ) -> np.ndarray:
        block = f"blocks.{index}"
        if self.config.dcn_projections:
            grad, lg = matmul_affine_backward(grad, tape, f"{block}.dcn_out")
            self._acc_linear(grads, f"{block}.dcn_out", lg)
        grad, dcn_grads = msdcn_backward(grad, self.msdcn_params(index), tape, f"{block}.dcn")
        for name, value in grads_as_dict(dcn_grads, f"{block}.dcn").items():
            self._accumulate(grads, name, value)
        if self.config.dcn_projections:
            grad, lg = matmul_affine_backward(grad, tape, f"{block}.dcn_in")
            self._acc_linear(grads, f"{block}.dcn_in", lg)
        return grad

    def _mlp_backward(
        self, grads: ParamDict, index: int, grad: np.ndarray, tape: Tape
    ) -> np.ndarray:
        block = f"blocks.{index}.mlp"
        if self.config.block_style == BlockStyle.FFN_LAYERNORM:
            dx, dfc1, dfc2 = ffn_backward(grad, tape, block)
            self._acc_linear(grads, f"{block}.fc1", dfc1)
            self._acc_linear(grads, f"{block}.fc2", dfc2)
            return dx
        dx, dgate, dup, ddown = swiglu_backward(grad, tape, block)
        self._acc_linear(grads, f"{block}.gate", dgate)
        self._acc_linear(grads, f"{block}.up", dup)
        self._acc_linear(grads, f"{block}.down", ddown)
        return dx

    def _block_backward(
        self, grads: ParamDict, index: int, dh: np.ndarray, tape: Tape
    ) -> Tuple[np.ndarray, np.ndarray]:
        block = f"blocks.{index}"
        dh, dshift2, dscale2, dgate2 = adaln_modulate_backward(
            dh,
            branch_backward=lambda g: self._mlp_backward(grads, index, g, tape),
            norm_backward=lambda g: self._norm_backward(grads, f"{block}.norm2", g, tape),
            tape=tape,
            key=f"{block}.sub2",
        )
        dh, dshift1, dscale1, dgate1 = adaln_modulate_backward(
            dh,
            branch_backward=lambda g: self._dcn_branch_backward(grads, index, g, tape),
            norm_backward=lambda g: self._norm_backward(grads, f"{block}.norm1", g, tape),
            tape=tape,
            key=f"{block}.sub1",
        )
        dmod = np.concatenate([dshift1, dscale1, dgate1, dshift2, dscale2, dgate2], axis=-1)
        dc, lg = matmul_affine_backward(dmod, tape, f"{block}.adaln")
        self._acc_linear(grads, f"{block}.adaln", lg)
        return dh, dc

    def backward(self, grad: np.ndarray, tape: Tape) -> Tuple[np.ndarray, ParamDict]:
        """
        Gradients of a scalar loss given d(loss)/d(output) for the taped forward call.

        Args:
            grad: Upstream gradient with the shape of the forward output
            tape: Tape passed to forward()

        Returns:
            (d(loss)/d(x), ordered parameter gradient dict)

        Raises:
            StateException: If the tape does not hold a forward call
        """
        cfg = self.config
        squeeze = grad.ndim == 3
        grad4 = grad[None] if squeeze else grad
        grads: ParamDict = {name: np.zeros_like(value) for name, value in self.params.items()}

        dout = patchify_rearrange(grad4, cfg.patch)
        dmod_in, lg = matmul_affine_backward(dout, tape, "final.linear")
        self._acc_linear(grads, "final.linear", lg)
        dnormed, dshift, dscale = modulate_backward(dmod_in, tape, "final.mod")
        dh = self._norm_backward(grads, "final.norm", dnormed, tape)
        dmod = np.concatenate([dshift, dscale], axis=-1)
        dc, lg = matmul_affine_backward(dmod, tape, "final.adaln")
        self._acc_linear(grads, "final.adaln", lg)

        for i in reversed(range(cfg.layers)):
            dh, dc_block = self._block_backward(grads, i, dh, tape)
            dc = dc + dc_block

        dcond = silu_backward(dc, tape, "cond_act")
        labels = tape.fetch("y_embed", "lookup")["labels"]
        np.add.at(grads["y_embed.table"], labels, dcond)
        dt2, lg = matmul_affine_backward(dcond, tape, "t_embed.fc2")
        self._acc_linear(grads, "t_embed.fc2", lg)
        dt1 = silu_backward(dt2, tape, "t_embed.act")
        _, lg = matmul_affine_backward(dt1, tape, "t_embed.fc1")
        self._acc_linear(grads, "t_embed.fc1", lg)

        dpatches, lg = matmul_affine_backward(dh, tape, "x_embed")
        self._acc_linear(grads, "x_embed", lg)
        dx = unpatchify(dpatches, cfg.patch, cfg.in_channels)
        return (dx[0] if squeeze else dx), grads
