# cli.py: single entry point: synth, extract, merge-multiedge, train, predict, eval
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from assignment import SinkhornConfig
from config import ExperimentConfig, resolve_config
from encoding import LAYOUT_TAG, encode, encode_pattern, extract_raw, prepare_pattern
from errors import ConfigError, DataError, DatasetError, NumericalError
from learning import TrainingState, evaluate, evaluate_encoded, fit, history_table, predict_pattern, stitch_set
from model import load_checkpoint, save_checkpoint
from multiedge_merge import transform_pattern
from pattern_io import Pattern, load_pattern, save_pattern
from synth import MAX_JITTER, Family, generate_corpus, split_indices

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _setting(key: str, default: Optional[str] = None) -> Optional[str]:
    # priority: explicit flag (handled by caller) -> env var / .env -> default
    return os.getenv(key) or default


def _jitter(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= MAX_JITTER:
        raise argparse.ArgumentTypeError(f"jitter must lie in [0, {MAX_JITTER}]")
    return v


# ---------- I/O helpers ----------
def _pattern_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.glob("*.json") if p.name != MANIFEST)
    if path.is_file():
        return [path]
    raise DatasetError(f"No pattern file or directory at {path}")


def _load_dir(path: Path) -> List[Pattern]:
    files = _pattern_files(path)
    if not files:
        raise DatasetError(f"No pattern files in {path}")
    return [load_pattern(f) for f in files]


# ---------- subcommands ----------
def cmd_synth(args: argparse.Namespace) -> int:
    if args.count < 10:
        raise UsageError(f"synth: --count must be at least 10, got {args.count}")
    counts = {Family(args.family): args.count}
    corpus = generate_corpus(args.seed, counts, args.jitter)
    args.out.mkdir(parents=True, exist_ok=True)
    for p in corpus.patterns:
        save_pattern(args.out / f"{p.name}.json", p)
    (args.out / MANIFEST).write_text(json.dumps(corpus.manifest(), indent=2) + "\n", encoding="utf-8")
    print(f"Wrote {len(corpus.patterns)} patterns to {args.out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config)
    prepared = prepare_pattern(load_pattern(args.input))
    feats = encode(extract_raw(prepared.pattern), cfg.features)
    header = f"{LAYOUT_TAG}\nnode order (panel:edge in input addressing): " + " ".join(str(r) for r in prepared.source_refs)
    np.savetxt(args.out, feats, fmt="%.10g", header=header)
    return EXIT_OK


def cmd_merge(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config)
    files = _pattern_files(args.input)
    if args.input.is_dir():
        args.out.mkdir(parents=True, exist_ok=True)
    for f in files:
        target = args.out / f.name if args.input.is_dir() else args.out
        save_pattern(target, transform_pattern(load_pattern(f), cfg.merge))
    logger.info("Transformed %d pattern(s)", len(files))
    return EXIT_OK


def _train_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, object]]:
    return {
        "model": {"layers": args.layers, "hidden": args.hidden, "embed_dim": args.embed_dim, "aggregator": args.aggregator},
        "train": {"lr": args.lr, "epochs": args.epochs, "seed": args.seed},
        "sinkhorn": {"iterations": args.iterations, "tau_multi": args.tau},
        "features": {"drop_panel_id": args.drop_panel_id or None, "drop_topology": args.drop_topology or None},
    }


def _splits(data: Path, patterns: List[Pattern], seed: int) -> Tuple[List[Pattern], List[Pattern], List[Pattern]]:
    manifest = data / MANIFEST
    if manifest.is_file():
        names = json.loads(manifest.read_text(encoding="utf-8"))
        by_name = {p.name: p for p in patterns}
        try:
            return tuple([by_name[n] for n in names.get(k, [])] for k in ("train", "val", "test"))  # type: ignore[return-value]
        except KeyError as e:
            raise DatasetError(f"Manifest {manifest} names unknown pattern {e}") from e
    tr, va, te = split_indices(len(patterns), seed)
    return [patterns[i] for i in tr], [patterns[i] for i in va], [patterns[i] for i in te]


def cmd_train(args: argparse.Namespace) -> int:
    cfg: ExperimentConfig = resolve_config(args.config, _train_overrides(args))
    logger.info("Effective configuration:\n%s", cfg.to_yaml())
    patterns = _load_dir(args.data)
    train, val, test = _splits(args.data, patterns, cfg.train.seed)

    state = None
    if args.state and args.resume and Path(args.state).is_file():
        state = TrainingState.load(args.state)
    state = fit(train, val, cfg.model, cfg.train, cfg.sinkhorn, cfg.features, state=state, state_path=args.state)

    best = state.best_params or state.params
    save_checkpoint(args.ckpt_out, best, cfg.model, cfg.features, extra={"sinkhorn": cfg.sinkhorn.model_dump()})
    if args.history_out:
        Path(args.history_out).write_text(history_table(state.history), encoding="utf-8")
    if test:
        report = evaluate_encoded([encode_pattern(p, cfg.features) for p in test], best, cfg.model, cfg.sinkhorn)
        print(report.table())
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    params, model_cfg, feature_cfg, meta = load_checkpoint(args.model)
    flags = {"tau_multi": args.tau, "iterations": args.iterations}
    try:
        sk = SinkhornConfig.model_validate({**meta.get("sinkhorn", {}), **{k: v for k, v in flags.items() if v is not None}})
    except ValidationError as e:
        raise ConfigError(f"Invalid solver settings: {e}") from e

    pred = predict_pattern(load_pattern(args.input), params, model_cfg, sk, feature_cfg)
    save_pattern(args.out, pred.pattern)
    if args.dump_scores:
        header = "symmetrised assignment, last row/column is the dustbin; node order: " + " ".join(str(r) for r in pred.node_refs)
        np.savetxt(args.dump_scores, pred.scores, fmt="%.8e", header=header)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    results = []
    for gt_file in _pattern_files(args.gt):
        pred_file = args.pred / gt_file.name if args.pred.is_dir() else args.pred
        if not pred_file.is_file():
            raise DatasetError(f"No prediction {pred_file} for ground truth {gt_file}")
        gt, pred = load_pattern(gt_file), load_pattern(pred_file)
        results.append((gt.name, stitch_set(pred), stitch_set(gt)))
    report = evaluate(results)
    print(report.table())
    if args.report_out:
        Path(args.report_out).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


# ---------- parser ----------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seamgraph", description="Learn stitch correspondences between sewing-pattern edges.")
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="default: $SEAMGRAPH_LOG_LEVEL or WARNING",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="Generate a synthetic corpus")
    p.add_argument("--family", choices=[f.value for f in Family], required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--jitter", type=_jitter, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="Dump encoded edge features as a text table")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("merge-multiedge", help="Merge half-panels and re-address stitches")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("train", help="Train the edge encoder")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ckpt-out", type=Path, required=True)
    p.add_argument("--history-out", type=Path, default=None)
    p.add_argument("--state", type=Path, default=None, help="Training-state file written after every epoch")
    p.add_argument("--resume", action="store_true", help="Continue from --state if it exists")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--aggregator", choices=["mean", "max", "none"], default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--drop-panel-id", action="store_true")
    p.add_argument("--drop-topology", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="Predict stitches for one pattern")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-scores", type=Path, default=None)
    p.add_argument("--tau", type=float, default=0.4)
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="Score predicted patterns against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--report-out", type=Path, default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    level = (args.log_level or _setting("SEAMGRAPH_LOG_LEVEL", "WARNING")).upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    # basicConfig is a no-op once the root logger has handlers
    logging.getLogger().setLevel(level)

    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        logger.error("%s", e)
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
