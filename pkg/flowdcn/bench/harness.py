# flowdcn/bench/harness.py

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from datetime import datetime
from json import dumps
from logging import getLogger
from statistics import mean
from statistics import median
from statistics import stdev
from time import perf_counter_ns
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import BenchOp
from flowdcn._constants import DType
from flowdcn.bench.kernels import attention_flops
from flowdcn.bench.kernels import attention_reference
from flowdcn.bench.kernels import dcn_blocked
from flowdcn.bench.kernels import dcn_naive
from flowdcn.bench.kernels import make_case_inputs
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import TimerResolutionException
from flowdcn.ops.msdcn import flops_count
from flowdcn.utils.helpers import worker_threads
from flowdcn.utils.types import Resolution

# A measured call shorter than this many ns is below the clock's useful resolution.
MIN_CALL_NS = 1_000
MAX_ITERS = 10_000
MIN_TOKEN_SPAN = 8

CSV_HEADER = "op,H,W,G,D,median_us,flops,exponent"


@dataclass(frozen=True)
class BenchCase:
    """One timed configuration.

    Attributes:
        op: Kernel to time
        height: H
        width: W
        groups: DCN groups or attention heads
        channels: D
        iters: Timed calls (>= 10)
        warmup: Discarded calls (>= 3)
        points: K for the DCN kernels
        dtype: f32 or f64
        threads: Worker threads for dcn_blocked
        batch: Batch size of the input map
    """

    op: BenchOp
    height: int
    width: int
    groups: int
    channels: int
    iters: int = 10
    warmup: int = 3
    points: int = 9
    dtype: DType = DType.F64
    threads: int = 1
    batch: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", BenchOp(self.op))
        object.__setattr__(self, "dtype", DType(self.dtype))
        if self.iters < 10:
            raise ArgumentException(f"iters must be >= 10, got {self.iters}", "iters")
        if self.warmup < 3:
            raise ArgumentException(f"warmup must be >= 3, got {self.warmup}", "warmup")
        for name in ("height", "width", "groups", "channels", "points", "threads", "batch"):
            if getattr(self, name) < 1:
                raise ArgumentException(f"{name} must be >= 1, got {getattr(self, name)}", name)

    @property
    def tokens(self) -> int:
        return self.height * self.width

    @property
    def label(self) -> str:
        """Op name as reported; threaded dcn_blocked runs are tagged `@<n>t`."""
        if self.op == BenchOp.DCN_BLOCKED and self.threads > 1:
            return f"{self.op.value}@{self.threads}t"
        return self.op.value

    def flops(self) -> float:
        if self.op == BenchOp.ATTENTION:
            return self.batch * attention_flops(self.tokens, self.channels)
        return self.batch * flops_count(
            self.height, self.width, self.channels, self.points, self.groups
        )


@dataclass
class BenchReport:
    """Timing summary for one case. Times are per call in microseconds."""

    case: BenchCase
    median_us: float
    mean_us: float
    stddev_us: float
    flops: float
    iters: int
    exponent: Optional[float] = None
    samples_us: List[float] = field(default_factory=list)


@dataclass
class ScalingResult:
    """Least-squares fit of log(time) against log(H*W)."""

    exponent: float
    reports: List[BenchReport]
    monotone: bool

    @property
    def warning(self) -> bool:
        return not self.monotone


def fit_exponent(tokens: Sequence[float], times: Sequence[float]) -> float:
    """
    Slope of log(time) vs log(tokens).

    Args:
        tokens: Token counts (H*W), at least 3 distinct values spanning >= 8x
        times: Positive times, same length

    Returns:
        Fitted exponent

    Raises:
        ArgumentException: If the sizes are too few or too close together
    """
    if len(tokens) != len(times):
        raise ArgumentException("tokens and times differ in length", "times")
    if len(set(tokens)) < 3:
        raise ArgumentException(f"Exponent fit needs >= 3 sizes, got {len(set(tokens))}", "sizes")
    if max(tokens) < MIN_TOKEN_SPAN * min(tokens):
        raise ArgumentException(
            f"Token counts must span >= {MIN_TOKEN_SPAN}x, got {min(tokens)}..{max(tokens)}",
            "sizes",
        )
    if any(t <= 0 for t in times):
        raise ArgumentException("Times must be positive", "times")
    slope, _ = np.polyfit(np.log(np.asarray(tokens, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def _kernel_for(case: BenchCase) -> Callable[[], np.ndarray]:
    dtype = np.float32 if case.dtype == DType.F32 else np.float64
    x, p, attn = make_case_inputs(
        case.height, case.width, case.channels, case.groups, case.points, dtype, batch=case.batch
    )
    if case.op == BenchOp.DCN_NAIVE:
        return lambda: dcn_naive(x, p)
    if case.op == BenchOp.DCN_BLOCKED:
        threads = worker_threads(case.threads)
        return lambda: dcn_blocked(x, p, threads=threads)
    tokens = x.reshape(case.batch, case.tokens, case.channels)
    return lambda: attention_reference(tokens, case.groups, attn)


class BenchHarness:
    """
    Times forward kernels on a monotonic clock.

    Warmup calls are discarded. When a call is too short for the clock, the number
    of calls per sample is doubled until it is measurable or the cap is reached.
    """

    def __init__(self, max_iters: int = MAX_ITERS, min_call_ns: int = MIN_CALL_NS):
        self.max_iters = max_iters
        self.min_call_ns = min_call_ns
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")
        self.data_logger = getLogger("flowdcn.data")

    def _log_data(self, report: BenchReport) -> None:
        data_entry = {
            "timestamp": datetime.now().isoformat(),
            "method": "run_bench",
            "fields": {
                "op": report.case.label,
                "H": report.case.height,
                "W": report.case.width,
                "median_us": report.median_us,
                "iters": report.iters,
            },
        }
        self.data_logger.info(dumps(data_entry))

    def time_calls(
        self, fn: Callable[[], object], iters: int, warmup: int
    ) -> Tuple[List[float], int]:
        """
        Per-call times in microseconds.

        Returns:
            (samples, calls per sample)

        Raises:
            TimerResolutionException: If calls stay below the clock resolution at the cap
        """
        for _ in range(warmup):
            fn()
        repeat = 1
        while True:
            samples = []
            for _ in range(iters):
                start = perf_counter_ns()
                for _ in range(repeat):
                    fn()
                samples.append((perf_counter_ns() - start) / repeat)
            if min(samples) * repeat >= self.min_call_ns:
                return [s / 1000.0 for s in samples], repeat
            if iters * repeat * 2 > self.max_iters:
                raise TimerResolutionException(
                    f"Calls stay below the timer resolution after {iters * repeat} calls",
                    iters=iters * repeat,
                )
            repeat *= 2
            self.logger.debug(f"Call too short for the clock; timing {repeat} calls per sample")

    def run_bench(self, case: BenchCase, fn: Optional[Callable[[], object]] = None) -> BenchReport:
        """
        Time one case.

        Args:
            case: Benchmark configuration
            fn: Override the kernel (used for synthetic timings)

        Returns:
            BenchReport with median, mean and standard deviation per call
        """
        kernel = fn if fn is not None else _kernel_for(case)
        samples, repeat = self.time_calls(kernel, case.iters, case.warmup)
        report = BenchReport(
            case=case,
            median_us=median(samples),
            mean_us=mean(samples),
            stddev_us=stdev(samples),
            flops=case.flops(),
            iters=case.iters * repeat,
            samples_us=samples,
        )
        self.logger.info(
            f"{case.label} {case.height}x{case.width} G={case.groups} D={case.channels}:"
            f" median {report.median_us:.1f}us"
        )
        self._log_data(report)
        return report

    def scaling_study(
        self,
        op: BenchOp,
        sizes: Sequence[Resolution],
        groups: int,
        channels: int,
        iters: int = 10,
        warmup: int = 3,
        dtype: DType = DType.F64,
        threads: int = 1,
    ) -> ScalingResult:
        """
        Benchmark `op` over a size ladder and fit the scaling exponent.

        Args:
            op: Kernel
            sizes: (H, W) pairs, >= 3 of them spanning >= 8x in H*W
            groups: Groups or heads
            channels: D
            iters: Timed calls per size
            warmup: Discarded calls per size
            dtype: Element type
            threads: dcn_blocked worker threads

        Returns:
            ScalingResult; `warning` is set when times do not grow with size
        """
        tokens = [h * w for h, w in sizes]
        # Validate the ladder before spending time on it.
        fit_exponent(tokens, [1.0] * len(tokens))
        reports = [
            self.run_bench(
                BenchCase(op, h, w, groups, channels, iters, warmup, dtype=dtype, threads=threads)
            )
            for h, w in sizes
        ]
        return self.fit_reports(reports)

    def fit_reports(self, reports: List[BenchReport]) -> ScalingResult:
        """Fit the exponent over reports of one op and flag non-monotone timings."""
        ordered = sorted(reports, key=lambda r: r.case.tokens)
        tokens = [r.case.tokens for r in ordered]
        times = [r.median_us for r in ordered]
        exponent = fit_exponent(tokens, times)
        monotone = all(b >= a for a, b in zip(times, times[1:]))
        if not monotone:
            self.logger.warning(
                f"{ordered[0].case.label}: timings are not monotone in size ({times}); "
                "exponent is unreliable"
            )
        for r in ordered:
            r.exponent = exponent
        return ScalingResult(exponent=exponent, reports=ordered, monotone=monotone)


def format_table(reports: Sequence[BenchReport]) -> str:
    """Aligned text table, one row per report."""
    header = ("op", "H", "W", "G", "D", "median_us", "mean_us", "stddev_us", "flops", "exponent")
    rows = [header] + [
        (
            r.case.label,
            str(r.case.height),
            str(r.case.width),
            str(r.case.groups),
            str(r.case.channels),
            f"{r.median_us:.1f}",
            f"{r.mean_us:.1f}",
            f"{r.stddev_us:.1f}",
            f"{r.flops:.0f}",
            "-" if r.exponent is None else f"{r.exponent:.3f}",
        )
        for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)) for row in rows)


def to_csv(reports: Sequence[BenchReport]) -> str:
    """CSV with header `op,H,W,G,D,median_us,flops,exponent`."""
    lines = [CSV_HEADER]
    for r in reports:
        exponent = "" if r.exponent is None else f"{r.exponent:.6f}"
        lines.append(
            f"{r.case.label},{r.case.height},{r.case.width},{r.case.groups},{r.case.channels},"
            f"{r.median_us:.3f},{r.flops:.0f},{exponent}"
        )
    return "\n".join(lines) + "\n"
