"""Command-line entry point: compare, benchmark, distort, serve."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from rbfim import __version__
from rbfim.core.config import get_settings
from rbfim.core.errors import ConfigError, InputError, NumericError, RBFIMError
from rbfim.core.logging import logger, setup_logging
from rbfim.models.schemas import (
    CompareResponse,
    FeatureKind,
    FeatureName,
    KernelKind,
    PartitionConfig,
    RBFIMConfig,
)
from rbfim.services import bench_harness
from rbfim.services.baseline_metrics import compute_baselines, synth_distort
from rbfim.services.pc_model import load_ply, write_ply
from rbfim.services.rbfim_metric import compute_rbfim
from rbfim.utils.metrics import metrics_collector

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_DEFAULTS = RBFIMConfig()
_PARTITION = PartitionConfig()


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("RBFIM parameters")
    g.add_argument("--kernel", choices=[k.value for k in KernelKind], default=_DEFAULTS.kernel.value,
                   help="basis function (default: %(default)s)")
    g.add_argument("--tmin", type=int, default=_PARTITION.t_min, help="minimum points per subdomain (default: %(default)s)")
    g.add_argument("--tmax", type=int, default=_PARTITION.t_max, help="maximum points per subdomain (default: %(default)s)")
    g.add_argument("--eps0", type=float, default=_PARTITION.eps0, help="plane-fit error threshold (default: %(default)s)")
    g.add_argument("--grid", type=int, default=_DEFAULTS.grid_scale, help="pooling grid cells per axis (default: %(default)s)")
    g.add_argument("--ref-fraction", type=float, default=_DEFAULTS.ref_fraction,
                   help="fraction of original points used as reference (default: %(default)s)")
    g.add_argument("--feature", choices=[f.value for f in FeatureName], default=FeatureName.LUMINANCE.value,
                   help="per-point feature (default: %(default)s)")
    g.add_argument("--curvature-k", type=int, default=12, help="neighbours for the curvature feature (default: %(default)s)")
    g.add_argument("--field-side", choices=["distorted", "original"], default=_DEFAULTS.field_side,
                   help="cloud the feature field is built on (default: %(default)s)")
    g.add_argument("--seed", type=int, default=_DEFAULTS.rng_seed, help="seed for reference sampling (default: %(default)s)")
    g.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores (default: %(default)s)")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--metrics-file", default=None, help="write prometheus metrics in text format to this path")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbfim",
        description="Full-reference point cloud quality assessment with RBF-interpolated feature fields.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compare", help="score one distorted cloud against its original")
    p.add_argument("ref", help="original PLY")
    p.add_argument("dist", help="distorted PLY")
    _add_metric_flags(p)
    p.add_argument("--with-baselines", action="store_true", help="also report p2po, p2pl and color MSE/PSNR")
    p.add_argument("--out", default=None, help="write the JSON report here")
    _add_common_flags(p)

    p = sub.add_parser("benchmark", help="score a CSV manifest and correlate against MOS")
    p.add_argument("manifest", help="CSV with header ref_path,dist_path,mos[,tag]")
    _add_metric_flags(p)
    p.add_argument("--metrics", default=",".join(bench_harness.METRICS),
                   help="comma-separated metrics (default: %(default)s)")
    p.add_argument("--scale", choices=["five-point", "percentage"], default="five-point",
                   help="MOS scale of the manifest (default: %(default)s)")
    p.add_argument("--out", default=None, help="write the JSON results document here")
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    _add_common_flags(p)

    p = sub.add_parser("distort", help="quantize geometry and add luminance noise")
    p.add_argument("input", help="input PLY")
    p.add_argument("output", help="output PLY")
    p.add_argument("--quant-step", type=float, default=0.0, help="lattice step in input units (default: %(default)s)")
    p.add_argument("--luma-sigma", type=float, default=0.0, help="std of luminance noise (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default: %(default)s)")
    p.add_argument("--ascii", action="store_true", help="write ascii instead of binary_little_endian")
    _add_common_flags(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default=None, help="bind address (default: settings)")
    p.add_argument("--port", type=int, default=None, help="port (default: settings)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def config_from_args(args: argparse.Namespace) -> RBFIMConfig:
    try:
        feature = FeatureKind(name=FeatureName(args.feature), k=args.curvature_k)
        partition = PartitionConfig(t_min=args.tmin, t_max=args.tmax, eps0=args.eps0)
        return RBFIMConfig(
            kernel=KernelKind(args.kernel),
            partition=partition,
            grid_scale=args.grid,
            ref_fraction=args.ref_fraction,
            rng_seed=args.seed,
            feature=feature,
            q_cap=get_settings().q_cap,
            field_side=args.field_side,
            workers=max(0, args.threads),
        )
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    original = load_ply(args.ref)
    distorted = load_ply(args.dist)

    report = compute_rbfim(original, distorted, cfg)
    print(f"D_RBFIM = {report.d_rbfim:.6f}")
    print(f"Q_RBFIM = {report.q_rbfim:.2f} dB")
    print(f"kernel  = {report.config.kernel.value}")

    baselines = None
    if args.with_baselines:
        baselines = compute_baselines(original, distorted)
        for name, value in baselines.scores().items():
            print(f"{name.upper():<10}= {value:.6f}")

    if args.out:
        doc = CompareResponse(report=report, baselines=baselines)
        Path(args.out).write_text(doc.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Wrote report to {args.out}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in bench_harness.METRICS]
    if not metrics or unknown:
        raise ConfigError(f"unknown metrics: {', '.join(unknown) or '(none given)'}; choose from {', '.join(bench_harness.METRICS)}")

    manifest = bench_harness.load_manifest(args.manifest, scale=args.scale)
    result = bench_harness.run_benchmark(manifest, metrics, cfg, workers=args.threads or None, progress=args.progress)
    print(bench_harness.format_table(result))
    if args.out:
        bench_harness.write_results(result, args.out)
        logger.info(f"Wrote results to {args.out}")
    return EXIT_OK


def cmd_distort(args: argparse.Namespace) -> int:
    if args.quant_step < 0 or args.luma_sigma < 0:
        raise ConfigError("--quant-step and --luma-sigma must be non-negative")
    cloud = load_ply(args.input)
    out = synth_distort(cloud, quant_step=args.quant_step, luma_sigma=args.luma_sigma, seed=args.seed)
    write_ply(args.output, out, binary=not args.ascii)
    print(f"{'original points':<18}{cloud.count:>12}")
    print(f"{'quantized points':<18}{out.count:>12}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = get_settings()
    log_config = Path(__file__).resolve().parent.parent / "config" / "logging_config.yaml"
    uvicorn.run(
        "rbfim.main:app",
        host=args.host or settings.host,
        port=args.port or settings.port,
        log_config=str(log_config) if log_config.is_file() else None,
    )
    return EXIT_OK


_COMMANDS = {
    "compare": cmd_compare,
    "benchmark": cmd_benchmark,
    "distort": cmd_distort,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad flags and 0 on --help / --version
        return int(e.code or 0)

    if args.verbose:
        setup_logging("DEBUG")

    code = EXIT_OK
    try:
        code = _COMMANDS[args.command](args)
    except (InputError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_INPUT
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        logger.error(f"Numeric failure in {args.command}: {e}")
        code = EXIT_NUMERIC
    except RBFIMError as e:
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_NUMERIC
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        code = EXIT_NUMERIC

    metrics_file = getattr(args, "metrics_file", None) or get_settings().metrics_file
    if metrics_file and args.command != "serve":
        metrics_collector.write_textfile(metrics_file)
    return code


if __name__ == "__main__":
    sys.exit(main())
