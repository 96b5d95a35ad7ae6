# tests/flowdcn/bench/test_harness.py

# Standard library imports
from json import loads
import logging

# Third party imports
from pytest import approx
from pytest import fixture
from pytest import raises

# Local imports
from flowdcn._constants import BenchOp
from flowdcn.bench.harness import CSV_HEADER
from flowdcn.bench.harness import BenchCase
from flowdcn.bench.harness import BenchHarness
from flowdcn.bench.harness import BenchReport
from flowdcn.bench.harness import fit_exponent
from flowdcn.bench.harness import format_table
from flowdcn.bench.harness import to_csv
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import TimerResolutionException


@fixture
def fake_clock(mocker):
    """Fixture to replace the harness clock with one that advances only inside calls"""

    class Clock:
        now = 0

        def call(self, cost_ns: int):
            def fn():
                self.now += cost_ns

            return fn

    clock = Clock()
    mocker.patch("flowdcn.bench.harness.perf_counter_ns", side_effect=lambda: clock.now)
    return clock


def _report(op, height, width, median_us, exponent=None):
    case = BenchCase(op, height, width, groups=2, channels=8)
    return BenchReport(
        case=case,
        median_us=median_us,
        mean_us=median_us,
        stddev_us=0.0,
        flops=case.flops(),
        iters=10,
        exponent=exponent,
    )


class TestBenchCase:
    def test_minimums(self):
        """Test iters >= 10 and warmup >= 3"""
        with raises(ArgumentException) as exc_info:
            BenchCase(BenchOp.DCN_NAIVE, 4, 4, 2, 8, iters=9)
        assert exc_info.value.field_name == "iters"
        with raises(ArgumentException) as exc_info:
            BenchCase(BenchOp.DCN_NAIVE, 4, 4, 2, 8, warmup=2)
        assert exc_info.value.field_name == "warmup"
        with raises(ArgumentException):
            BenchCase(BenchOp.ATTENTION, 0, 4, 2, 8)

    def test_label(self):
        """Test threaded dcn_blocked runs are tagged with the thread count"""
        assert BenchCase("dcn_blocked", 4, 4, 2, 8, threads=4).label == "dcn_blocked@4t"
        assert BenchCase("dcn_blocked", 4, 4, 2, 8).label == "dcn_blocked"
        assert BenchCase("attention", 4, 4, 2, 8, threads=4).label == "attention"

    def test_dcn_flops(self):
        """Test the DCN model FLOPs are exactly 4 K H W C / G"""
        case = BenchCase(BenchOp.DCN_BLOCKED, 16, 16, groups=4, channels=8)
        assert case.flops() == 4 * 9 * 16 * 16 * 8 / 4

    def test_attention_flops(self):
        """Test attention FLOPs use H*W tokens and scale with the batch"""
        case = BenchCase(BenchOp.ATTENTION, 2, 2, groups=2, channels=8, batch=3)
        assert case.flops() == 3 * 2048.0


class TestFitExponent:
    def test_linear(self):
        """Test exactly linear timings fit an exponent of 1"""
        tokens = [256, 1024, 4096, 16384]
        assert fit_exponent(tokens, [0.5 * n for n in tokens]) == approx(1.0, abs=1e-6)

    def test_quadratic(self):
        """Test exactly quadratic timings fit an exponent of 2"""
        tokens = [16, 64, 256]
        assert fit_exponent(tokens, [3e-3 * n * n for n in tokens]) == approx(2.0, abs=1e-6)

    def test_too_few_sizes(self):
        """Test fewer than 3 distinct sizes are rejected"""
        with raises(ArgumentException):
            fit_exponent([16, 256, 256], [1.0, 2.0, 2.0])

    def test_narrow_span(self):
        """Test sizes spanning less than 8x are rejected"""
        with raises(ArgumentException):
            fit_exponent([16, 32, 64], [1.0, 2.0, 4.0])

    def test_non_positive_times(self):
        """Test zero times are rejected"""
        with raises(ArgumentException):
            fit_exponent([16, 64, 256], [1.0, 0.0, 4.0])


class TestHarness:
    def test_repeats_short_calls(self, fake_clock):
        """Test calls below the clock resolution are grouped until measurable"""
        harness = BenchHarness(min_call_ns=1000)
        samples, repeat = harness.time_calls(fake_clock.call(400), iters=10, warmup=3)
        assert repeat == 4
        assert samples == [0.4] * 10

    def test_timer_resolution(self, fake_clock):
        """Test a call that never becomes measurable raises TimerResolutionException"""
        harness = BenchHarness(max_iters=80, min_call_ns=1000)
        with raises(TimerResolutionException) as exc_info:
            harness.time_calls(fake_clock.call(0), iters=10, warmup=3)
        assert exc_info.value.error_type == "timer_resolution"

    def test_run_bench(self, fake_clock, caplog):
        """Test the report summarizes per-call times and logs a data entry"""
        harness = BenchHarness()
        case = BenchCase(BenchOp.DCN_NAIVE, 4, 4, 2, 8)
        with caplog.at_level(logging.INFO, logger="flowdcn.data"):
            report = harness.run_bench(case, fn=fake_clock.call(5000))
        assert report.median_us == 5.0
        assert report.mean_us == 5.0
        assert report.stddev_us == 0.0
        assert report.iters == 10
        entry = loads([r for r in caplog.records if r.name == "flowdcn.data"][-1].message)
        assert entry["method"] == "run_bench"
        assert entry["fields"]["op"] == "dcn_naive"

    def test_non_monotone_warning(self, caplog):
        """Test timings that shrink with size set the warning flag"""
        reports = [
            _report(BenchOp.DCN_NAIVE, 16, 16, 20.0),
            _report(BenchOp.DCN_NAIVE, 4, 4, 10.0),
            _report(BenchOp.DCN_NAIVE, 8, 8, 5.0),
        ]
        with caplog.at_level(logging.WARNING):
            result = BenchHarness().fit_reports(reports)
        assert result.warning
        assert [r.case.height for r in result.reports] == [4, 8, 16]
        assert all(r.exponent == result.exponent for r in result.reports)
        assert "not monotone" in caplog.text

    def test_scaling_study(self):
        """Test a real ladder run fits one exponent over three sizes"""
        result = BenchHarness().scaling_study(
            BenchOp.DCN_BLOCKED, [(2, 2), (4, 4), (8, 8)], groups=2, channels=4
        )
        assert len(result.reports) == 3
        assert all(r.median_us > 0 for r in result.reports)
        assert all(r.exponent == result.exponent for r in result.reports)

    def test_scaling_study_validates_ladder_first(self, mocker):
        """Test a bad ladder is rejected before anything is timed"""
        harness = BenchHarness()
        run = mocker.patch.object(harness, "run_bench")
        with raises(ArgumentException):
            harness.scaling_study(BenchOp.ATTENTION, [(4, 4), (8, 8)], groups=2, channels=8)
        run.assert_not_called()


class TestOutput:
    def test_csv(self):
        """Test the CSV header and row format"""
        text = to_csv(
            [_report(BenchOp.ATTENTION, 4, 4, 12.5, exponent=1.9), _report("dcn_naive", 4, 4, 2.0)]
        )
        lines = text.splitlines()
        assert lines[0] == CSV_HEADER == "op,H,W,G,D,median_us,flops,exponent"
        assert lines[1] == f"attention,4,4,2,8,12.500,{4 * 256 * 8 + 6 * 16 * 64},1.900000"
        assert lines[2].endswith(",")

    def test_table_is_aligned(self):
        """Test every table row has the same width"""
        table = format_table([_report("dcn_naive", 16, 16, 123.4), _report("attention", 4, 4, 1.0)])
        lines = table.splitlines()
        assert len(lines) == 3
        assert len({len(line) for line in lines}) == 1
        assert lines[0].split()[0] == "op"
