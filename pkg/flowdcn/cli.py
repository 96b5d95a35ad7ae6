# flowdcn/cli.py

"""
Command-line entry point: `flowdcn {train,sample,gradcheck,bench,eval}`.

Exit status is 0 on success, 1 when a command fails (bad config, checksum mismatch,
failed gradcheck, numeric error) and 2 for usage errors.
"""

# Standard library imports
from argparse import ArgumentParser
from argparse import Namespace
from hashlib import sha256
from logging import Formatter
from logging import StreamHandler
from logging import getLogger
from pathlib import Path
import sys
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import BenchOp
from flowdcn._constants import DatasetKind
from flowdcn._constants import DType
from flowdcn._constants import GradcheckScope
from flowdcn._constants import Solver
from flowdcn.bench.harness import BenchCase
from flowdcn.bench.harness import BenchHarness
from flowdcn.bench.harness import BenchReport
from flowdcn.bench.harness import format_table
from flowdcn.bench.harness import to_csv
from flowdcn.data.datasets import ToyDataset
from flowdcn.data.image import write_image
from flowdcn.data.metrics import mmd_rbf
from flowdcn.data.metrics import moment_report
from flowdcn.data.metrics import quadrant_accuracy
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import CheckpointException
from flowdcn.exceptions import FlowDCNException
from flowdcn.exceptions import ResolutionException
from flowdcn.exceptions import ValidationException
from flowdcn.flow.trainer import Trainer
from flowdcn.io.checkpoint import Checkpoint
from flowdcn.io.checkpoint import CheckpointStore
from flowdcn.io.run_config import RunConfig
from flowdcn.io.run_config import load_run_config
from flowdcn.io.run_config import validate_run_config
from flowdcn.model.config import ModelConfig
from flowdcn.model.network import FlowDCN
from flowdcn.sampler import sample
from flowdcn.tensor.gradcheck import run_gradcheck
from flowdcn.utils.types import MetaDict
from flowdcn.utils.types import Resolution

logger = getLogger("flowdcn.cli")

EMA_PREFIX = "ema."
MODEL_META_PREFIX = "model."
LOG_FORMAT = "[%(asctime)s] %(levelname)s [%(name)s] %(message)s"


def configure_logging(level: str) -> None:
    """Attach one stderr handler to the `flowdcn` logger."""
    root = getLogger("flowdcn")
    for handler in list(root.handlers):
        if getattr(handler, "_flowdcn_cli", False):
            root.removeHandler(handler)
    handler = StreamHandler(sys.stderr)
    handler.setFormatter(Formatter(LOG_FORMAT))
    setattr(handler, "_flowdcn_cli", True)
    root.addHandler(handler)
    root.setLevel(level.upper())


## Checkpoint <-> model


def checkpoint_meta(
    config: ModelConfig,
    dataset: DatasetKind,
    dataset_seed: int,
    steps: int,
    digest: str,
    sample_defaults: Optional[MetaDict] = None,
) -> MetaDict:
    meta: MetaDict = {f"{MODEL_META_PREFIX}{k}": v for k, v in config.to_meta().items()}
    meta.update(
        {"dataset": dataset.value, "dataset.seed": dataset_seed, "steps": steps, "digest": digest}
    )
    meta.update(sample_defaults or {})
    return meta


def model_from_checkpoint(checkpoint: Checkpoint, use_ema: bool = False) -> FlowDCN:
    """
    Rebuild a model from checkpoint metadata and parameters.

    Raises:
        CheckpointException: If the model metadata or the requested EMA weights are missing
    """
    model_meta = {
        k[len(MODEL_META_PREFIX) :]: v
        for k, v in checkpoint.meta.items()
        if k.startswith(MODEL_META_PREFIX)
    }
    if not model_meta:
        raise CheckpointException("Checkpoint has no model metadata", "meta")
    config = ModelConfig.from_meta(model_meta)
    params = {k: v for k, v in checkpoint.params.items() if not k.startswith(EMA_PREFIX)}
    if use_ema:
        ema = {
            k[len(EMA_PREFIX) :]: v
            for k, v in checkpoint.params.items()
            if k.startswith(EMA_PREFIX)
        }
        if not ema:
            raise CheckpointException("Checkpoint holds no EMA weights", "use_ema")
        params = ema
    return FlowDCN(config, params=params)


## Commands


def cmd_train(args: Namespace) -> int:
    run_config = load_run_config(args.config) if args.config else RunConfig()
    validate_run_config(run_config)
    dataset = ToyDataset(
        run_config.dataset, run_config["dataset.size"], run_config["dataset.seed"]
    )
    model_config = run_config.model_config(
        dataset.channels, dataset.num_classes, dataset.resolution
    )
    train_config = run_config.train_config()
    model = FlowDCN(model_config, seed=train_config.seed)
    out = Path(args.out)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".log")
    trainer = Trainer(model, dataset.images, dataset.labels, train_config, metrics_path)
    result = trainer.fit(steps=args.steps, progress=not args.no_progress)

    params = dict(model.params)
    if result.state.ema is not None:
        params.update({f"{EMA_PREFIX}{k}": v for k, v in result.state.ema.items()})
    meta = checkpoint_meta(
        model_config,
        dataset.kind,
        dataset.seed,
        result.state.step,
        result.state.digest(),
        run_config.sample_meta(),
    )
    CheckpointStore().save(out, params, meta, DType(args.dtype))
    print(f"checkpoint {out}")
    print(f"steps {result.state.step}")
    print(f"final_loss {result.losses[-1] if result.losses else float('nan'):.8e}")
    print(f"digest {result.state.digest()}")
    return 0


def _write_samples_table(samples: np.ndarray, path: Path) -> None:
    rows = samples.reshape(samples.shape[0], -1)
    path.write_text(
        "\n".join(" ".join(f"{v:.10e}" for v in row) for row in rows) + "\n", encoding="utf-8"
    )


def cmd_sample(args: Namespace) -> int:
    checkpoint = CheckpointStore().load(args.ckpt)
    model = model_from_checkpoint(checkpoint, args.use_ema)
    config = model.config
    if args.height % config.patch or args.width % config.patch:
        raise ResolutionException(args.height, args.width, config.patch)
    label = args.class_id
    if label is not None and not 0 <= label <= config.num_classes:
        raise ArgumentException(
            f"Class {label} is outside [0, {config.num_classes}]", "class"
        )
    spec = RunConfig.from_sample_meta(checkpoint.meta).sample_spec(
        solver=args.solver,
        steps=args.steps,
        cfg_scale=args.cfg,
        resolution=(args.height, args.width),
        smax_adjust=args.smax_adjust,
        seed=args.seed,
        label=label,
        num_samples=args.n,
    )
    samples = sample(model, spec, config.in_channels, model.null_label, config.train_resolution)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: List[str] = []
    if config.in_channels in (1, 3):
        for i, img in enumerate(samples):
            name = f"sample_{i:04d}.ppm"
            write_image(np.clip(img, -1.0, 1.0), out_dir / name)
            files.append(name)
    else:
        _write_samples_table(samples, out_dir / "samples.txt")
        files.append("samples.txt")

    manifest = {
        "checkpoint": str(args.ckpt),
        "solver": spec.solver.value,
        "steps": spec.steps,
        "cfg_scale": spec.cfg_scale,
        "height": args.height,
        "width": args.width,
        "smax_adjust": str(spec.smax_adjust).lower(),
        "seed": spec.seed,
        "class": "null" if label is None else label,
        "num_samples": spec.num_samples,
        "use_ema": str(args.use_ema).lower(),
        "sha256": sha256(np.ascontiguousarray(samples).tobytes()).hexdigest(),
        "files": ",".join(files),
    }
    (out_dir / "manifest.txt").write_text(
        "".join(f"{k} {v}\n" for k, v in manifest.items()), encoding="utf-8"
    )
    print(f"wrote {len(samples)} samples to {out_dir}")
    return 0


def cmd_gradcheck(args: Namespace) -> int:
    rows = run_gradcheck(GradcheckScope(args.scope), seed=args.seed)
    for row in rows:
        print(row.line())
    return 0 if all(row.passed for row in rows) else 1


def parse_sizes(text: str) -> List[Resolution]:
    """`16,32x64` -> [(16, 16), (32, 64)]."""
    sizes: List[Resolution] = []
    for item in text.split(","):
        item = item.strip()
        try:
            if "x" in item:
                h, w = item.split("x")
                sizes.append((int(h), int(w)))
            else:
                sizes.append((int(item), int(item)))
        except ValueError:
            raise ArgumentException(f"Bad size {item!r}; use N or HxW", "sizes")
    return sizes


def cmd_bench(args: Namespace) -> int:
    harness = BenchHarness()
    sizes = parse_sizes(args.sizes)
    ops = list(BenchOp) if args.op == "all" else [BenchOp(args.op)]
    reports: List[BenchReport] = []
    warnings = []
    for op in ops:
        if len(sizes) >= 3:
            result = harness.scaling_study(
                op,
                sizes,
                args.groups,
                args.channels,
                iters=args.iters,
                warmup=args.warmup,
                dtype=DType(args.dtype),
                threads=args.threads,
            )
            reports += result.reports
            if result.warning:
                warnings.append(op.value)
        else:
            for h, w in sizes:
                case = BenchCase(
                    op,
                    h,
                    w,
                    args.groups,
                    args.channels,
                    args.iters,
                    args.warmup,
                    dtype=DType(args.dtype),
                    threads=args.threads,
                )
                reports.append(harness.run_bench(case))
    print(format_table(reports))
    for op_name in warnings:
        print(f"warning {op_name}: timings not monotone in size")
    if args.csv:
        Path(args.csv).write_text(to_csv(reports), encoding="utf-8")
    return 0


def _class_counts(n: int, num_classes: int) -> List[int]:
    return [n // num_classes + (1 if c < n % num_classes else 0) for c in range(num_classes)]


def cmd_eval(args: Namespace) -> int:
    checkpoint = CheckpointStore().load(args.ckpt)
    model = model_from_checkpoint(checkpoint, args.use_ema)
    config = model.config
    kind = DatasetKind(args.dataset or checkpoint.meta.get("dataset", DatasetKind.GAUSS8.value))
    data_seed = int(checkpoint.meta.get("dataset.seed", "0"))
    n = args.n_samples
    reference = ToyDataset(kind, n, data_seed, split="held_out", resolution=config.train_resolution)
    baseline = ToyDataset(kind, n, data_seed, split="baseline", resolution=config.train_resolution)
    if reference.channels != config.in_channels or reference.num_classes != config.num_classes:
        raise ArgumentException(
            f"Dataset {kind.value} does not match the checkpoint model", "dataset"
        )

    defaults = RunConfig.from_sample_meta(checkpoint.meta)
    conditional = reference.num_classes > 1
    parts = []
    labels = []
    for c, count in enumerate(_class_counts(n, reference.num_classes)):
        if count == 0:
            continue
        spec = defaults.sample_spec(
            solver=args.solver,
            steps=args.steps,
            cfg_scale=args.cfg,
            resolution=config.train_resolution,
            seed=args.seed + c,
            label=c if conditional else None,
            num_samples=count,
        )
        parts.append(sample(model, spec, config.in_channels, model.null_label))
        labels.append(np.full(count, c, dtype=np.int64))
    samples = np.concatenate(parts)
    sample_labels = np.concatenate(labels)

    report = moment_report(
        samples,
        reference.images,
        sample_labels if conditional else None,
        reference.labels if conditional else None,
    )
    report.baseline_mmd = mmd_rbf(baseline.images, reference.images)
    if kind == DatasetKind.SHAPES16:
        report.extra["quadrant_accuracy"] = quadrant_accuracy(samples, sample_labels)
    for line in report.to_lines():
        print(line)
    if args.out:
        report.write(Path(args.out))
    return 0


## Parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="flowdcn", description="Multiscale deformable flow models")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level for the flowdcn logger (default WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a model and write a checkpoint")
    train.add_argument("--config", help="Run configuration file (key = value)")
    train.add_argument("--out", required=True, help="Checkpoint path")
    train.add_argument("--metrics", help="Metrics log (default: <out>.log)")
    train.add_argument("--steps", type=int, help="Override train.steps")
    train.add_argument("--dtype", default=DType.F64.value, choices=[d.value for d in DType])
    train.add_argument("--no-progress", action="store_true", help="Hide the progress bar")
    train.set_defaults(handler=cmd_train)

    smp = commands.add_parser("sample", help="Draw samples from a checkpoint")
    smp.add_argument("--ckpt", required=True)
    smp.add_argument("--class", dest="class_id", type=int, help="Class id (default: null)")
    smp.add_argument(
        "--solver", choices=[s.value for s in Solver], help="Solver (default: sample.solver)"
    )
    smp.add_argument("--steps", type=int, help="Steps (default: sample.ode_steps or sde_steps)")
    smp.add_argument("--cfg", type=float, help="Guidance scale (default: sample.cfg_scale)")
    smp.add_argument("--height", type=int, required=True)
    smp.add_argument("--width", type=int, required=True)
    smp.add_argument("--smax-adjust", action="store_true", help="Scale S_max by test/train ratio")
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--out-dir", required=True)
    smp.add_argument("--use-ema", action="store_true", help="Sample with EMA weights")
    smp.add_argument("-n", type=int, default=1, help="Number of samples")
    smp.set_defaults(handler=cmd_sample)

    grad = commands.add_parser("gradcheck", help="Finite-difference gradient checks")
    grad.add_argument(
        "--scope",
        default=GradcheckScope.PRIMITIVES.value,
        choices=[s.value for s in GradcheckScope],
    )
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(handler=cmd_gradcheck)

    bench = commands.add_parser("bench", help="Op-level scaling benchmark")
    bench.add_argument("--op", default="all", choices=["all"] + [o.value for o in BenchOp])
    bench.add_argument("--sizes", default="16,32,64,128", help="Comma list of N or HxW")
    bench.add_argument("--iters", type=int, default=10)
    bench.add_argument("--warmup", type=int, default=3)
    bench.add_argument("--groups", type=int, default=4, help="DCN groups / attention heads")
    bench.add_argument("--channels", type=int, default=16, help="Channels D")
    bench.add_argument("--threads", type=int, default=1, help="dcn_blocked worker threads")
    bench.add_argument("--dtype", default=DType.F64.value, choices=[d.value for d in DType])
    bench.add_argument("--csv", help="Also write CSV here")
    bench.set_defaults(handler=cmd_bench)

    ev = commands.add_parser("eval", help="Sample and compare against held-out data")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--dataset", choices=[k.value for k in DatasetKind])
    ev.add_argument("--n-samples", type=int, default=400)
    ev.add_argument("--solver", choices=[s.value for s in Solver])
    ev.add_argument("--steps", type=int)
    ev.add_argument("--cfg", type=float)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--use-ema", action="store_true")
    ev.add_argument("--out", help="Write the report here")
    ev.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (default sys.argv[1:])

    Returns:
        Process exit status
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    handler: Callable[[Namespace], int] = args.handler
    try:
        return handler(args)
    except (FlowDCNException, ValidationException) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
