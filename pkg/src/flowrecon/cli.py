"""Command-line entry point: ``flowrecon <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cloudio
from .dataset import DataError, DatasetConfig, build_dataset
from .metrics import DEFAULT_TAU, format_table
from .numeric import CheckpointError
from .pipeline import (AblationConfig, EvalRunSpec, PipelineError, ablation_tables, bench_speed, evaluate, infer,
                       oracle_baseline, write_json)
from .training import ConfigError, NumericalFailure, TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("flowrecon")


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = DatasetConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    records = build_dataset(cfg, args.out)
    n_train = sum(r["split"] == "train" for r in records)
    print(f"wrote {len(records)} samples ({n_train} train, {len(records) - n_train} test) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.epochs is not None:
        raw["epochs"] = args.epochs
    try:
        cfg = TrainConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    state = train(cfg, Path(args.data) / "manifest.json", _out_dir(args), resume=args.resume)
    print(f"trained {state.step} steps over {state.epoch} epochs; checkpoint {Path(args.out) / 'final.fgck'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        image = cloudio.read_pnm(args.image)
    except (OSError, cloudio.FormatError) as exc:
        raise DataError(f"cannot read image {args.image}: {exc}") from exc
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    cloud = infer(args.checkpoint, image, args.n, rng, latent_mode=args.latent_mode)
    out = Path(args.out)
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{Path(args.image).stem}.{args.format}"
    cloudio.write_cloud(out, cloud, args.format)
    print(f"wrote {len(cloud)} points to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = EvalRunSpec(args.checkpoint, str(Path(args.data) / "manifest.json"), args.n, args.repetitions, args.tau,
                       args.seed if args.seed is not None else 0, with_emd=not args.no_emd)
    res = evaluate(spec)
    print(format_table(res.runs[0] if len(res.runs) == 1 else {k: res.mean_report(k) for k in res.labels()},
                       title=f"Evaluation (N={args.n}, {args.repetitions} run(s))"))
    if args.out:
        write_json(_out_dir(args) / "eval.json", res.to_json())
    return EXIT_OK


def cmd_oracle(args) -> int:
    table = oracle_baseline(Path(args.data) / "manifest.json", args.n, args.tau,
                            args.seed if args.seed is not None else 0, with_emd=not args.no_emd)
    print(format_table(table, title=f"Oracle (N={args.n})"))
    if args.out:
        write_json(_out_dir(args) / "oracle.json", {k: r.to_json() for k, r in table.items()})
    return EXIT_OK


def cmd_bench_speed(args) -> int:
    rep = bench_speed(args.checkpoint, Path(args.data) / "manifest.json", args.n, args.batch, args.duration,
                      seed=args.seed if args.seed is not None else 0)
    print(f"{rep.samples_per_second:.2f} samples/s (N={rep.n}, batch {rep.batch}, {rep.batches} batches, "
          f"{rep.seconds:.2f} s) on {rep.hardware['machine']} x{rep.hardware['cpu_count']}")
    if args.out:
        write_json(_out_dir(args) / "speed.json", rep.to_json())
    return EXIT_OK


def cmd_ablate(args) -> int:
    if not args.config:
        raise ConfigError("ablate needs --config")
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = AblationConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    text, data = ablation_tables(cfg)
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "ablation.txt").write_text(text + "\n")
        write_json(out / "ablation.json", data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flowrecon", description="Image-conditioned point cloud generation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="build the synthetic dataset")
    s.set_defaults(func=cmd_gen_data, out_required=True)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train, out_required=True)

    s = sub.add_parser("infer", parents=[common], help="image to point cloud")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, help="PGM/PPM image")
    s.add_argument("--n", type=int, default=2500)
    s.add_argument("--format", choices=sorted(cloudio.CLOUD_WRITERS), default="xyz")
    s.add_argument("--latent-mode", choices=("mean", "sample"), default="mean")
    s.set_defaults(func=cmd_infer, out_required=True)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=2500)
    s.add_argument("--repetitions", type=int, default=1)
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--no-emd", action="store_true")
    s.set_defaults(func=cmd_eval, out_required=False)

    s = sub.add_parser("oracle", parents=[common], help="resampled ground truth baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=2500)
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--no-emd", action="store_true")
    s.set_defaults(func=cmd_oracle, out_required=False)

    s = sub.add_parser("bench-speed", parents=[common], help="inference throughput")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=2500)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--duration", type=float, default=5.0)
    s.set_defaults(func=cmd_bench_speed, out_required=False)

    s = sub.add_parser("ablate", parents=[common], help="ablation tables")
    s.set_defaults(func=cmd_ablate, out_required=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.out_required and not args.out:
        parser.error(f"{args.command} needs --out")
    try:
        return args.func(args)
    except (ConfigError, PipelineError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, cloudio.FormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
