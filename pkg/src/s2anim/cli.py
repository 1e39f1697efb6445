"""Command-line entry point: ``s2anim {gen-corpus,train,infer,eval,bench}``.

Exit codes: 0 success, 2 usage or validation failure, 3 runtime failure.
Configuration precedence, lowest first: built-in defaults, ``--config`` JSON
file, the ``S2A_SEED`` environment variable (seed only), command-line flags.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .animation import AnimationSequence
from .corpus import DEFAULT_SPLITS, Corpus, gen_corpus
from .errors import ConfigError, ContainerError, InvalidInputError, ShapeError, TrainingDiverged
from .evalbench import BenchmarkError, SuiteResult, bench_rtf, blstm_for, rmse_report
from .io import load_animation, load_features
from .model import VARIANTS, ModelCheckpoint, ModelConfig
from .trainer import TrainConfig, fit, jsonl_logger

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "S2A_SEED"


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        body = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = set(body) - {"model", "train", "corpus", "seed"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return body


def resolve_seed(file_cfg: dict, flag: int | None, default: int = 0) -> int:
    seed = file_cfg.get("seed", default)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from exc
    if flag is not None:
        seed = flag
    return int(seed)


def _print_config(command: str, config: dict) -> None:
    print(json.dumps({"command": command, "config": config}, sort_keys=True), flush=True)


# -- commands ---------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    file_cfg = load_config_file(args.config)
    section = dict(file_cfg.get("corpus", {}))
    n = args.utterances if args.utterances is not None else section.get("utterances", 200)
    coupled = args.coupled_energy if args.coupled_energy is not None else section.get("coupled_energy", True)
    ratios = tuple(section.get("splits", DEFAULT_SPLITS))
    seed = resolve_seed(file_cfg, args.seed)
    _print_config("gen-corpus", {"out": args.out, "utterances": n, "seed": seed, "coupled_energy": coupled,
                                 "splits": list(ratios)})
    if n < 3:
        raise UsageError(f"--utterances must be at least 3, got {n}")
    manifest = gen_corpus(args.out, n, seed, ratios, coupled_energy=bool(coupled))
    for split, count in manifest.counts().items():
        print(f"{split}: {count}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = load_config_file(args.config)
    model_cfg = ModelConfig.from_dict(dict(file_cfg.get("model", {})))
    train_dict = dict(file_cfg.get("train", {}))
    if "seed" in train_dict and "seed" not in file_cfg:
        file_cfg["seed"] = train_dict["seed"]
    train_dict["seed"] = resolve_seed(file_cfg, args.seed)
    for flag, key in (("max_epochs", "max_epochs"), ("learning_rate", "learning_rate"),
                      ("batch_size", "batch_size"), ("patience", "early_stop_patience"),
                      ("time_budget", "time_budget_s")):
        value = getattr(args, flag)
        if value is not None:
            train_dict[key] = value
    train_cfg = TrainConfig.from_dict(train_dict)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".train.jsonl")
    _print_config("train", {"corpus": args.corpus, "variant": args.variant, "out": args.out,
                            "log": str(log_path), "model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    corpus = Corpus.load(args.corpus)
    with open(log_path, "w") as fh:
        result = fit(corpus, model_cfg, train_cfg, args.variant, jsonl_logger(fh))
    result.checkpoint.save(args.out)
    print(f"best epoch {result.best_epoch}, val RMSE {result.checkpoint.meta['best_val_rmse']:.5f}, "
          f"{len(result.history)} epochs")
    return EXIT_OK


def cmd_infer(args) -> int:
    _print_config("infer", {"ckpt": args.ckpt, "features": args.features, "out": args.out})
    ckpt = ModelCheckpoint.load(args.ckpt)
    fs = load_features(args.features)
    if fs.dim != ckpt.config.ppg_dim:
        raise UsageError(f"feature width {fs.dim} does not match checkpoint ppg_dim {ckpt.config.ppg_dim}")
    anim = ckpt.build().predict(fs, ckpt.stats)
    Path(args.out).write_text(anim.to_csv())
    print(f"wrote {len(anim)} frames to {args.out}")
    return EXIT_OK


def _utterance_id(path: Path) -> str:
    return path.name.split(".")[0]


def load_animation_dir(directory) -> dict[str, AnimationSequence]:
    """Animations in ``directory`` keyed by utterance id (CSV or S2A1 animation files)."""
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    out = {}
    for path in sorted(root.iterdir()):
        if path.suffix == ".csv":
            out[_utterance_id(path)] = AnimationSequence.from_csv(path.read_text(), _utterance_id(path))
        elif path.name.endswith(".anim.s2a"):
            out[_utterance_id(path)] = load_animation(path)
    if not out:
        raise UsageError(f"no animation files (*.csv, *.anim.s2a) in {root}")
    return out


def cmd_eval(args) -> int:
    _print_config("eval", {"pred": args.pred, "ref": args.ref, "out": args.out})
    preds, refs = load_animation_dir(args.pred), load_animation_dir(args.ref)
    unmatched = sorted(set(preds) ^ set(refs))
    if unmatched:
        raise UsageError(f"unmatched utterance ids: {', '.join(unmatched)}")
    for uid in refs:
        if len(preds[uid]) != len(refs[uid]):
            raise UsageError(f"{uid}: {len(preds[uid])} predicted frames vs {len(refs[uid])} reference frames")
    suite = SuiteResult([rmse_report(args.name, preds, refs)])
    print(suite.table())
    if args.out:
        Path(args.out).write_text(suite.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    _print_config("bench", {"ckpt": args.ckpt, "frames": args.frames, "runs": args.runs, "warmup": args.warmup,
                            "out": args.out, "threads": 1})
    if args.runs < 5:
        raise UsageError(f"--runs must be at least 5, got {args.runs}")
    if args.warmup < 2:
        raise UsageError(f"--warmup must be at least 2, got {args.warmup}")
    if args.frames < 1:
        raise UsageError(f"--frames must be positive, got {args.frames}")
    models = {}
    first = None
    for path in args.ckpt:
        ck = ModelCheckpoint.load(path)
        model = ck.build()
        first = first or (model, ck.stats)
        name = Path(path).name.split(".")[0]
        if name in models:
            name = f"{name}#{len(models)}"
        models[name] = ck
    models["BLSTM"] = blstm_for(first[0])
    report = bench_rtf(models, args.frames, args.runs, args.warmup, "BLSTM", stats=first[1])
    print(report.table())
    if not report.stable:
        print("warning: coefficient of variation >= 0.3 for at least one model", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(report.to_json())
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2anim", description="Speech-to-blendshape animation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic paired corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--utterances", type=int, help="number of utterances (default 200)")
    p.add_argument("--seed", type=int, help="master seed (default 0, or $S2A_SEED)")
    p.add_argument("--coupled-energy", type=_bool, help="scale jawOpen with energy gain (default true)")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model variant on a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory holding manifest.json")
    p.add_argument("--config", help="JSON config file with 'model' and 'train' sections")
    p.add_argument("--variant", default="moe", help=f"one of: {', '.join(VARIANTS)}")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default <out>.train.jsonl)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--time-budget", type=float, help="stop after this many seconds of training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict blendshape curves for one feature file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="RMSE between predicted and reference animations")
    p.add_argument("--pred", required=True, help="directory of predicted animations")
    p.add_argument("--ref", required=True, help="directory of reference animations")
    p.add_argument("--name", default="pred", help="row label in the report")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-thread inference real-time factor")
    p.add_argument("--ckpt", required=True, action="append", help="checkpoint (repeatable)")
    p.add_argument("--frames", type=int, default=720)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "variant", None) is not None and args.variant not in VARIANTS:
        print(f"error: unknown variant {args.variant!r}; valid: {', '.join(VARIANTS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, InvalidInputError, ShapeError, ContainerError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, BenchmarkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report any other failure as a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
