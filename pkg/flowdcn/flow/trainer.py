# flowdcn/flow/trainer.py

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from datetime import datetime
from json import dumps
from logging import getLogger
from pathlib import Path
from time import perf_counter_ns
from typing import List
from typing import Optional
from typing import Tuple

# Third party imports
import numpy as np
from tqdm import tqdm

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import NumericException
from flowdcn.exceptions import ShapeException
from flowdcn.flow.objective import FlowBatch
from flowdcn.flow.objective import fm_loss
from flowdcn.flow.objective import fm_loss_backward
from flowdcn.flow.objective import interpolate
from flowdcn.flow.objective import make_batch
from flowdcn.flow.objective import target_velocity
from flowdcn.model.network import FlowDCN
from flowdcn.tensor.tape import Tape
from flowdcn.utils.helpers import parameter_digest
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.types import ParamDict
from flowdcn.utils.validation import validate_non_negative
from flowdcn.utils.validation import validate_positive


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings.

    Adam with a constant learning rate and no gradient clipping.

    Attributes:
        lr: Learning rate (0 freezes the parameters)
        beta1: Adam first-moment decay
        beta2: Adam second-moment decay
        adam_eps: Adam denominator epsilon
        batch_size: Samples per step
        steps: Number of steps for fit()
        seed: Seed for batches, noise, times and label dropout
        class_dropout: Probability of replacing a label with the null label
        ema_decay: EMA decay of the parameters; None disables EMA
        log_every: Metrics line interval in steps
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    steps: int = 20000
    seed: int = 0
    class_dropout: float = 0.1
    ema_decay: Optional[float] = None
    log_every: int = 100

    def __post_init__(self) -> None:
        validate_non_negative(self.lr, "lr")
        validate_positive(self.adam_eps, "adam_eps")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ArgumentException(f"{name} must be in [0, 1), got {value}", name)
        for name in ("batch_size", "log_every"):
            validate_positive(getattr(self, name), name)
        validate_non_negative(self.steps, "steps")
        if not 0.0 <= self.class_dropout <= 1.0:
            raise ArgumentException(
                f"class_dropout must be in [0, 1], got {self.class_dropout}", "class_dropout"
            )
        if self.ema_decay is not None and not 0.0 <= self.ema_decay < 1.0:
            raise ArgumentException(
                f"ema_decay must be in [0, 1), got {self.ema_decay}", "ema_decay"
            )


@dataclass
class TrainState:
    """Parameters plus Adam moments.

    `params` is the model's own dict; train_step updates it in place.
    """

    params: ParamDict
    m: ParamDict
    v: ParamDict
    step: int = 0
    ema: Optional[ParamDict] = None

    @classmethod
    def fresh(cls, params: ParamDict, ema: bool = False) -> "TrainState":
        return cls(
            params=params,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            ema={name: p.copy() for name, p in params.items()} if ema else None,
        )

    def digest(self) -> str:
        return parameter_digest(self.params)


def adam_update(state: TrainState, grads: ParamDict, config: TrainConfig) -> None:
    """One bias-corrected Adam step, in place, in parameter order."""
    step = state.step + 1
    correction1 = 1.0 - config.beta1**step
    correction2 = 1.0 - config.beta2**step
    for name, param in state.params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        param -= config.lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
    if state.ema is not None and config.ema_decay is not None:
        for name, param in state.params.items():
            state.ema[name] = config.ema_decay * state.ema[name] + (1.0 - config.ema_decay) * param


def train_step(
    model: FlowDCN, state: TrainState, batch: FlowBatch, config: TrainConfig
) -> Tuple[TrainState, float]:
    """
    Forward, backward and one Adam update on the flow-matching loss.

    Args:
        model: Model whose params dict is state.params
        state: Parameters and optimizer moments
        batch: Training batch
        config: Optimizer settings

    Returns:
        (updated state, loss before the update)

    Raises:
        NumericException: If the loss is not finite
    """
    if model.params is not state.params:
        raise ArgumentException("TrainState does not hold this model's parameters", "state")
    tape = Tape()
    x_t = interpolate(batch.x, batch.eps, batch.t)
    v_target = target_velocity(batch.x, batch.eps)
    v_pred = model.forward(x_t, batch.t, batch.labels, tape=tape)
    loss = fm_loss(v_pred, v_target)
    if not np.isfinite(loss):
        raise NumericException(f"Training loss is {loss} at step {state.step}", "loss")
    _, grads = model.backward(fm_loss_backward(v_pred, v_target), tape)
    adam_update(state, grads, config)
    state.step += 1
    return state, loss


@dataclass
class TrainResult:
    """Outcome of Trainer.fit."""

    state: TrainState
    losses: List[float] = field(default_factory=list)
    wallclock_ms: float = 0.0


class Trainer:
    """
    Seeded training loop over an in-memory dataset.

    Logs progress on `flowdcn.Trainer`, structured metrics on `flowdcn.data`, and
    optionally appends `step loss wallclock_ms` lines to a metrics file.
    """

    def __init__(
        self,
        model: FlowDCN,
        data: np.ndarray,
        labels: np.ndarray,
        config: TrainConfig,
        metrics_path: Optional[Path] = None,
    ):
        """Initialize a trainer.

        Args:
            model: Model to train (its params are updated in place)
            data: Training set [N, H, W, C], values in [-1, 1]
            labels: Class ids [N]
            config: Training configuration
            metrics_path: Optional metrics log file, appended to by every fit
        """
        if data.shape[0] != labels.shape[0]:
            raise ShapeException(
                "Data and labels disagree on N",
                "labels",
                expected=data.shape[:1],
                actual=labels.shape,
            )
        self.model = model
        self.data = data
        self.labels = labels.astype(np.int64)
        self.config = config
        self.metrics_path = metrics_path
        self.state = TrainState.fresh(model.params, ema=config.ema_decay is not None)
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")
        self.data_logger = getLogger("flowdcn.data")

    def batch(self, step: int) -> FlowBatch:
        """The batch for `step`, a pure function of (seed, step)."""
        idx = rng_stream(self.config.seed, "index", step).integers(
            0, self.data.shape[0], size=self.config.batch_size
        )
        return make_batch(
            self.data[idx],
            self.labels[idx],
            seed=self.config.seed,
            step=step,
            null_label=self.model.null_label,
            class_dropout=self.config.class_dropout,
        )

    def _log_data(self, step: int, loss: float, wallclock_ms: float) -> None:
        data_entry = {
            "timestamp": datetime.now().isoformat(),
            "method": "fit",
            "fields": {"step": step, "loss": loss, "wallclock_ms": round(wallclock_ms, 3)},
        }
        self.data_logger.info(dumps(data_entry))

    def fit(self, steps: Optional[int] = None, progress: bool = True) -> TrainResult:
        """
        Run `steps` training steps (default config.steps).

        Args:
            steps: Number of steps
            progress: Show a tqdm progress bar

        Returns:
            TrainResult with per-step losses

        Raises:
            NumericException: If a loss is not finite
        """
        total = self.config.steps if steps is None else steps
        result = TrainResult(state=self.state)
        self.logger.info(
            f"Training for {total} steps (batch={self.config.batch_size}, lr={self.config.lr},"
            f" seed={self.config.seed})"
        )
        metrics = self.metrics_path.open("a", encoding="utf-8") if self.metrics_path else None
        start = perf_counter_ns()
        try:
            bar = tqdm(range(total), desc="train", unit="step", disable=not progress)
            for i in bar:
                step = self.state.step
                batch = self.batch(step)
                try:
                    self.state, loss = train_step(self.model, self.state, batch, self.config)
                except NumericException as e:
                    self.logger.error(f"Training aborted at step {step}: {e.message}")
                    raise
                result.losses.append(loss)
                elapsed_ms = (perf_counter_ns() - start) / 1e6
                if (step + 1) % self.config.log_every == 0 or i + 1 == total:
                    bar.set_postfix(loss=f"{loss:.5f}")
                    self._log_data(step + 1, loss, elapsed_ms)
                    if metrics is not None:
                        metrics.write(f"{step + 1} {loss:.8e} {elapsed_ms:.3f}\n")
                        metrics.flush()
        finally:
            if metrics is not None:
                metrics.close()
        result.state = self.state
        result.wallclock_ms = (perf_counter_ns() - start) / 1e6
        self.logger.info(
            f"Training finished after {self.state.step} steps in {result.wallclock_ms / 1000:.1f}s"
            f" (last loss {result.losses[-1] if result.losses else float('nan'):.5f})"
        )
        return result
