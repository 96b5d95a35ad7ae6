# flowdcn/sampler.py

"""
Euler ODE and Euler-Maruyama SDE samplers for velocity models, with
classifier-free guidance applied to the velocity.

Time runs from 0 (noise) to 1 (data) on a uniform grid t_k = k / N. The SDE

    dX = [v + w_t * s] dt + sqrt(2 w_t) dW,   s = (t v - x) / (1 - t)

has the same marginals as the ODE for any diffusion schedule w_t (default 1 - t).
Stochastic steps are taken while t_k <= 1 - delta; the remaining steps, and always
the last one, are deterministic Euler steps.
"""

# Standard library imports
from dataclasses import dataclass
from logging import getLogger
from typing import Callable
from typing import Optional
from typing import Protocol
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import DEFAULT_CFG_SCALE
from flowdcn._constants import DEFAULT_ODE_STEPS
from flowdcn._constants import DEFAULT_SDE_STEPS
from flowdcn._constants import SCORE_DELTA
from flowdcn._constants import Solver
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import DomainException
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.types import Adjust
from flowdcn.utils.types import Resolution
from flowdcn.utils.validation import check_finite
from flowdcn.utils.validation import check_same_shape
from flowdcn.utils.validation import validate_non_negative
from flowdcn.utils.validation import validate_non_negative_params

logger = getLogger("flowdcn.sampler")

Labels = Union[int, np.ndarray]
DiffusionSchedule = Callable[[float], float]


class VelocityModel(Protocol):
    """Anything that predicts a velocity: FlowDCN, or a closed-form oracle in tests."""

    def __call__(
        self, x: np.ndarray, t: Union[float, np.ndarray], labels: Labels, adjust: Adjust = ...
    ) -> np.ndarray: ...


def linear_diffusion(t: float) -> float:
    """Default diffusion schedule w_t = 1 - t."""
    return 1.0 - t


def zero_diffusion(t: float) -> float:
    """w_t = 0; Euler-Maruyama then reduces to the Euler ODE."""
    return 0.0


@dataclass(frozen=True)
class SampleSpec:
    """Sampler configuration.

    Attributes:
        solver: euler_ode or euler_maruyama
        steps: Number of steps on the uniform time grid
        cfg_scale: Guidance scale w (1 disables guidance, 0 is unconditional)
        resolution: Output (H, W)
        smax_adjust: Rescale S_max by the test/train resolution ratio
        seed: Noise seed
        label: Class id (None or the null id samples unconditionally)
        num_samples: How many samples to draw
        delta: Stochastic steps stop once t > 1 - delta
    """

    solver: Solver = Solver.EULER_ODE
    steps: int = DEFAULT_ODE_STEPS
    cfg_scale: float = DEFAULT_CFG_SCALE
    resolution: Resolution = (16, 16)
    smax_adjust: bool = False
    seed: int = 0
    label: Optional[int] = None
    num_samples: int = 1
    delta: float = SCORE_DELTA

    def __post_init__(self) -> None:
        object.__setattr__(self, "solver", Solver(self.solver))
        minimum = 2 if self.solver == Solver.EULER_MARUYAMA else 1
        if self.steps < minimum:
            raise ArgumentException(
                f"{self.solver.value} needs steps >= {minimum}, got {self.steps}", "steps"
            )
        validate_non_negative(self.cfg_scale, "cfg_scale")
        if self.num_samples < 1:
            raise ArgumentException(
                f"num_samples must be >= 1, got {self.num_samples}", "num_samples"
            )
        if not 0.0 < self.delta < 1.0:
            raise ArgumentException(f"delta must be in (0, 1), got {self.delta}", "delta")

    @classmethod
    def sde(cls, **kwargs: object) -> "SampleSpec":
        """Euler-Maruyama spec with the default SDE step count."""
        kwargs.setdefault("steps", DEFAULT_SDE_STEPS)
        return cls(solver=Solver.EULER_MARUYAMA, **kwargs)  # type: ignore[arg-type]


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, w: float) -> np.ndarray:
    """
    Classifier-free guidance on velocities: v_uncond + w * (v_cond - v_uncond).

    w = 1 returns v_cond and w = 0 returns v_uncond exactly.

    Args:
        v_cond: Conditional velocity
        v_uncond: Unconditional velocity
        w: Guidance scale

    Returns:
        Guided velocity
    """
    check_same_shape(v_cond, v_uncond, "v_uncond")
    if w == 1.0:
        return v_cond.copy()
    if w == 0.0:
        return v_uncond.copy()
    return v_uncond + w * (v_cond - v_uncond)


def score_from_velocity(
    x_t: np.ndarray, v: np.ndarray, t: float, delta: float = SCORE_DELTA
) -> np.ndarray:
    """
    Score of the marginal at time t from the predicted velocity.

    s = (t * v - x_t) / (1 - t), i.e. -E[eps | x_t] / (1 - t).

    Args:
        x_t: State
        v: Velocity at (x_t, t)
        t: Time in [0, 1 - delta)
        delta: Distance from 1 below which the conversion is refused

    Returns:
        Score, shape of x_t

    Raises:
        DomainException: If t >= 1 - delta or t < 0
    """
    check_same_shape(x_t, v, "v")
    if t < 0.0 or t >= 1.0 - delta:
        raise DomainException(
            f"Score conversion needs t in [0, {1.0 - delta}), got {t}", field_name="t"
        )
    return (t * v - x_t) / (1.0 - t)


def time_grid(steps: int) -> np.ndarray:
    """Uniform grid t_k = k / steps, k = 0..steps."""
    return np.arange(steps + 1, dtype=np.float64) / steps


def _guided(
    model: VelocityModel, x: np.ndarray, t: float, label: int, null: int, w: float, adjust: Adjust
) -> np.ndarray:
    if label == null or w == 1.0:
        return model(x, t, label, adjust)
    if w == 0.0:
        return model(x, t, null, adjust)
    return cfg_velocity(model(x, t, label, adjust), model(x, t, null, adjust), w)


@validate_non_negative_params("cfg_scale")
def euler_ode(
    model: VelocityModel,
    x0: np.ndarray,
    steps: int,
    label: int,
    null_label: int,
    cfg_scale: float = 1.0,
    adjust: Adjust = (1.0, 1.0),
) -> np.ndarray:
    """
    Integrate dx/dt = v(x, t) from t=0 to t=1 with forward Euler.

    Args:
        model: Velocity model
        x0: Initial noise [H, W, C] (or batched)
        steps: Number of uniform steps (>= 1)
        label: Class id
        null_label: Unconditional id
        cfg_scale: Guidance scale
        adjust: S_max adjustment passed to the model

    Returns:
        Sample at t=1

    Raises:
        NumericException: If the state becomes non-finite
    """
    if steps < 1:
        raise ArgumentException(f"euler_ode needs steps >= 1, got {steps}", "steps")
    grid = time_grid(steps)
    x = x0.copy()
    for k in range(steps):
        t, dt = grid[k], grid[k + 1] - grid[k]
        x = x + dt * _guided(model, x, t, label, null_label, cfg_scale, adjust)
        check_finite(x, "euler_ode state")
    return x


@validate_non_negative_params("cfg_scale")
def euler_maruyama(
    model: VelocityModel,
    x0: np.ndarray,
    steps: int,
    label: int,
    null_label: int,
    rng: np.random.Generator,
    cfg_scale: float = 1.0,
    adjust: Adjust = (1.0, 1.0),
    diffusion: DiffusionSchedule = linear_diffusion,
    delta: float = SCORE_DELTA,
) -> np.ndarray:
    """
    Euler-Maruyama integration of the velocity SDE from t=0 to t=1.

    With diffusion == zero_diffusion the trajectory is bit-identical to euler_ode
    on the same initial noise.

    Args:
        model: Velocity model
        x0: Initial noise
        steps: Number of uniform steps (>= 2)
        label: Class id
        null_label: Unconditional id
        rng: Generator for the Brownian increments of this sample
        cfg_scale: Guidance scale
        adjust: S_max adjustment passed to the model
        diffusion: Schedule w_t
        delta: Stochastic steps only while t <= 1 - delta

    Returns:
        Sample at t=1

    Raises:
        NumericException: If the state becomes non-finite
    """
    if steps < 2:
        raise ArgumentException(f"euler_maruyama needs steps >= 2, got {steps}", "steps")
    grid = time_grid(steps)
    x = x0.copy()
    for k in range(steps):
        t, dt = grid[k], grid[k + 1] - grid[k]
        v = _guided(model, x, t, label, null_label, cfg_scale, adjust)
        # The noise is drawn every step so the stream does not depend on the schedule.
        noise = rng.standard_normal(x.shape)
        w_t = diffusion(t)
        if k == steps - 1 or t > 1.0 - delta or w_t == 0.0:
            x = x + dt * v
        else:
            drift = v + w_t * score_from_velocity(x, v, t, delta)
            x = x + dt * drift + np.sqrt(2.0 * w_t * dt) * noise
        check_finite(x, "euler_maruyama state")
    return x


def sample(
    model: VelocityModel,
    spec: SampleSpec,
    channels: int,
    null_label: int,
    train_resolution: Optional[Resolution] = None,
    diffusion: DiffusionSchedule = linear_diffusion,
) -> np.ndarray:
    """
    Draw spec.num_samples samples.

    Sample i starts from the noise stream (seed, "sample", i) and uses its own
    Brownian stream, so samples can be drawn in any order or in parallel.

    Args:
        model: Velocity model
        spec: Sampler configuration
        channels: Image channels
        null_label: Unconditional id of the model
        train_resolution: Needed when spec.smax_adjust is set
        diffusion: SDE schedule

    Returns:
        Samples [num_samples, H, W, C]
    """
    height, width = spec.resolution
    adjust: Adjust = (1.0, 1.0)
    if spec.smax_adjust:
        if train_resolution is None:
            raise ArgumentException(
                "smax_adjust needs the training resolution", "train_resolution"
            )
        adjust = (height / train_resolution[0], width / train_resolution[1])
    label = null_label if spec.label is None else spec.label
    logger.info(
        f"Sampling {spec.num_samples} x {height}x{width} with {spec.solver.value},"
        f" {spec.steps} steps, cfg={spec.cfg_scale}, adjust={adjust}"
    )
    out = np.empty((spec.num_samples, height, width, channels))
    for i in range(spec.num_samples):
        x0 = rng_stream(spec.seed, "sample", i).standard_normal((height, width, channels))
        if spec.solver == Solver.EULER_ODE:
            out[i] = euler_ode(model, x0, spec.steps, label, null_label, spec.cfg_scale, adjust)
        else:
            out[i] = euler_maruyama(
                model,
                x0,
                spec.steps,
                label,
                null_label,
                rng_stream(spec.seed, "brownian", i),
                spec.cfg_scale,
                adjust,
                diffusion,
                spec.delta,
            )
    return out
