"""Command-line interface: gen, train, finetune-demo, run, bench, metrics.

Every subcommand accepts --config pointing at a JSON file whose keys mirror
the flag names (hyphens or underscores); explicit flags override the file.
When --config is absent, the VIVID_CONFIG environment variable names the
fallback file.  Exit codes: 0 success, 1 validation/usage error, 2 runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import FaceShadowError, ConfigError, ValidationError

CONFIG_ENV_VAR = "VIVID_CONFIG"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _parse_res(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise ConfigError(f"resolution must look like 32x32, got {text!r}") from exc


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="faceshadow",
        description="Expression shadowing over a toy synthetic-face world.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, help_text: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; flags override its keys")
        registry[name] = p
        return p

    p = sub("gen", "generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", default="32x32", help="grid resolution, HxW")

    p = sub("train", "train the control-value regressor")
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambda-fa", type=float, default=None,
                   help="feature-adaptation weight (default 5e-4)")
    p.add_argument("--no-fa", action="store_true",
                   help="ablate the feature-adaptation term")
    p.add_argument("--seed", type=int, default=0)

    p = sub("finetune-demo", "toy adversarial reconstruction demo")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--res", default="16x16")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p = sub("run", "run a shadowing session")
    p.add_argument("--source", choices=("synthetic", "socket", "file"), default="synthetic")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--sink", choices=("null", "socket", "file"), default="null")
    p.add_argument("--model", default=None, help="regressor checkpoint")
    p.add_argument("--report", default=None, help="session report JSON path")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--source-path", default=None, help="session file for --source file")
    p.add_argument("--listen-port", type=int, default=7588)
    p.add_argument("--sink-host", default="127.0.0.1")
    p.add_argument("--sink-port", type=int, default=7589)
    p.add_argument("--sink-path", default=None, help="output file for --sink file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rebase", action="store_true",
                   help="re-anchor the relative transform on the next frame")
    p.add_argument("--lossless", action="store_true",
                   help="block instead of dropping frames (deterministic replay)")

    p = sub("bench", "latency benchmark under CPU load")
    p.add_argument("--load", default="idle", help="idle | 50 | 90 | N-workers")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub("metrics", "MAID and AUR from CSV files")
    p.add_argument("--human", default=None, help="human AU intensities CSV")
    p.add_argument("--robot", default=None, help="robot AU intensities CSV")
    p.add_argument("--ratings", default=None, help="rater scores CSV")
    p.add_argument("--out", default=None, help="JSON output path (default: stdout)")

    return parser, registry


def _find_config_path(argv: list[str]) -> str | None:
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return os.environ.get(CONFIG_ENV_VAR) or None


def _apply_config_defaults(
    sub_parser: argparse.ArgumentParser, config_path: str
) -> None:
    try:
        data = json.loads(Path(config_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {config_path} must hold a JSON object")
    dests = {a.dest for a in sub_parser._actions}
    mapped = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ConfigError(f"config key {key!r} does not match any flag")
        mapped[dest] = value
    sub_parser.set_defaults(**mapped)


# ---------------------------------------------------------------------------
# subcommand bodies

def _cmd_gen(args) -> int:
    from .synth import generate_dataset

    res = _parse_res(args.res) if isinstance(args.res, str) else tuple(args.res)
    index = generate_dataset(args.out, count=args.count, seed=args.seed, res=res)
    print(f"wrote {index['count']} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .mapping import ModelDims, RegressorModel, TrainConfig, save_checkpoint, train
    from .synth import load_dataset, simulate_inference_counterpart

    if args.no_fa and args.lambda_fa is not None:
        raise ValidationError("--no-fa conflicts with --lambda-fa; pass only one")
    lambda_fa = 0.0 if args.no_fa else (5e-4 if args.lambda_fa is None else args.lambda_fa)

    images, controls, index = load_dataset(args.data)
    counterparts = np.stack([simulate_inference_counterpart(img) for img in images])
    h, w = index["res"]
    model = RegressorModel.init(ModelDims(input_h=h, input_w=w), seed=args.seed)
    cfg = TrainConfig(
        lr=args.lr, batch=args.batch, epochs=args.epochs,
        lambda_fa=lambda_fa, seed=args.seed,
    )
    model, history = train(model, images, counterparts, controls, cfg)
    save_checkpoint(model, args.out)
    print(
        f"trained {cfg.epochs} epochs on {images.shape[0]} samples "
        f"(lambda_fa={lambda_fa:g}); final loss {history.losses[-1]:.6g}; "
        f"checkpoint -> {args.out}"
    )
    return EXIT_OK


def _cmd_finetune_demo(args) -> int:
    from .ganloss import run_adversarial_demo

    res = _parse_res(args.res) if isinstance(args.res, str) else tuple(args.res)
    records = run_adversarial_demo(steps=args.steps, seed=args.seed, res=res, lr=args.lr)
    rows = [(r.step, r.d_loss, r.g_loss, r.recon_error) for r in records]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "d_loss", "g_loss", "recon_error"])
            writer.writerows(rows)
        print(f"wrote {len(rows)} steps to {args.out}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["step", "d_loss", "g_loss", "recon_error"])
        writer.writerows(rows)
    return EXIT_OK


def _cmd_run(args) -> int:
    from .mapping import load_checkpoint
    from .pipeline import (
        FileSink,
        FileSource,
        NullSink,
        RunConfig,
        SocketControlSink,
        SocketFrameSource,
        run_session,
    )

    model = load_checkpoint(args.model) if args.model else None
    grid_res = (model.dims.input_h, model.dims.input_w) if model else (32, 32)

    lossless = args.lossless or args.source == "file"
    config = RunConfig(
        fps=args.fps,
        duration_s=args.duration,
        frame_count=args.frames,
        grid_res=grid_res,
        seed=args.seed,
        rebase=args.rebase,
        lossless=lossless,
    )

    source = None
    if args.source == "file":
        if not args.source_path:
            raise ValidationError("--source file requires --source-path")
        source = FileSource(args.source_path, fps=args.fps)
    elif args.source == "socket":
        source = SocketFrameSource(port=args.listen_port)

    if args.sink == "null":
        sink = NullSink()
    elif args.sink == "file":
        if not args.sink_path:
            raise ValidationError("--sink file requires --sink-path")
        sink = FileSink(args.sink_path)
    else:
        sink = SocketControlSink(host=args.sink_host, port=args.sink_port)

    try:
        report = run_session(config, source=source, sink=sink, model=model)
    finally:
        sink.close()

    payload = report.to_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=1))
        print(f"report -> {args.report}")
    summary = payload["stages"].get("total")
    if summary:
        print(
            f"{report.controls_out}/{report.frames_in} frames; "
            f"E2E mean {summary['mean'] * 1e3:.2f} ms, p95 {summary['p95'] * 1e3:.2f} ms; "
            f"drops {payload['drops']}"
        )
    else:
        print(f"{report.controls_out}/{report.frames_in} frames; no latency samples")
    return EXIT_RUNTIME if report.partial else EXIT_OK


def _cmd_bench(args) -> int:
    from .latency import bench_report
    from .pipeline import RunConfig

    config = RunConfig(fps=args.fps, seed=args.seed)
    report = bench_report(
        config, args.load, duration_s=args.duration, repeats=args.repeats
    )
    Path(args.out).write_text(json.dumps(report, indent=1))
    row = report["latency"]
    if row:
        print(
            f"{report['condition']}: mean {row['mean'] * 1e3:.2f} ms, "
            f"p95 {row['p95'] * 1e3:.2f} ms, p99 {row['p99'] * 1e3:.2f} ms, "
            f"max {row['max'] * 1e3:.2f} ms over {row['count']} samples"
        )
    print(f"report -> {args.out}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    from .metrics import aur, maid_from_files, read_ratings_csv

    if not (args.human or args.robot or args.ratings):
        raise ValidationError("need --human/--robot for MAID and/or --ratings for AUR")
    if bool(args.human) != bool(args.robot):
        raise ValidationError("--human and --robot must be given together")

    out: dict = {"maid": None, "aur_mean": None, "aur_std": None, "per_rater": None}
    if args.human:
        out["maid"] = maid_from_files(args.human, args.robot)
    if args.ratings:
        result = aur(read_ratings_csv(args.ratings))
        out["aur_mean"] = result.mean
        out["aur_std"] = result.std
        out["per_rater"] = list(result.per_rater)

    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
        print(f"metrics -> {args.out}")
    else:
        print(text)
    return EXIT_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "finetune-demo": _cmd_finetune_demo,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "metrics": _cmd_metrics,
}


def cli_dispatch(argv: list[str]) -> int:
    parser, registry = build_parser()

    config_path = _find_config_path(argv)
    if config_path and argv and not argv[0].startswith("-") and argv[0] in registry:
        try:
            _apply_config_defaults(registry[argv[0]], config_path)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage to stderr; fold into our exit codes
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION

    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FaceShadowError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
