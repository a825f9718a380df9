"""``mosa`` command line: synth, train, infer, eval.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure. ``MOSA_LOG_LEVEL`` (error, warn, info, debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import io
from .config import ConfigError, PipelineConfig, load_config
from .datagen import InfeasibleConfigError, synth_video
from .metrics import TaskMismatchError, evaluate
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.core import ShapeError
from .relation_net import EmbeddingMatrix, NetConfig, RelationNet, prepare_video
from .scene_model import RelationVocabulary, SceneModelError, Video
from .training import NumericError, predict, train

log = logging.getLogger("mosa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="overrides the synth and training seeds")
    common.add_argument("--ablate", action="append", choices=("mfe", "mim", "asm"), default=[],
                        help="switch a component off (repeatable)")
    common.add_argument("--data-dir", metavar="DIR", help="directory for detections, embeddings, vocabulary, ground truth")
    common.add_argument("--run-dir", metavar="DIR", help="directory for checkpoint, log, predictions, report")

    parser = _Parser(prog="mosa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p = sub.add_parser("infer", parents=[common], help="write ranked scene graph triples")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--detections", metavar="PATH")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--all-triples", action="store_true", help="dump every pair-predicate triple (no constraint)")
    p.add_argument("--debug-dump", metavar="PATH", help="write per-pair motion attributes as JSONL")
    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--predictions", metavar="PATH")
    p.add_argument("--ground-truth", metavar="PATH")
    p.add_argument("--output", metavar="PATH")
    return parser


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    for name in args.ablate:
        cfg = cfg.with_ablation(name)
    paths = cfg.paths
    if args.data_dir:
        d = Path(args.data_dir)
        paths = replace(
            paths,
            **{k: str(d / Path(getattr(paths, k)).name) for k in ("detections", "embeddings", "vocabulary", "ground_truth")},
        )
    if args.run_dir:
        d = Path(args.run_dir)
        paths = replace(
            paths,
            **{k: str(d / Path(getattr(paths, k)).name) for k in ("checkpoint", "train_log", "predictions", "report")},
        )
    return replace(cfg, paths=paths)


def _need(path: str, what: str) -> str:
    if not Path(path).exists():
        raise DataError(f"{what} file {path} does not exist")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: PipelineConfig) -> int:
    sample = synth_video(cfg.synth)
    p = cfg.paths
    io.write_detections(p.detections, sample.videos)
    io.write_embeddings(p.embeddings, sample.embeddings)
    io.write_vocabulary(p.vocabulary, sample.vocab)
    io.write_ground_truth(p.ground_truth, sample.gt)
    log.info("wrote %d videos, %d triples", len(sample.videos), sample.gt.num_triples())
    return EXIT_OK


def _visual_dim(videos: Sequence[Video], default: int) -> int:
    for v in videos:
        for f in v.frames:
            for d in f.detections:
                if d.visual_feature is not None:
                    return int(d.visual_feature.shape[0])
    return default


def _load_embeddings(cfg: NetConfig, path: str) -> Optional[EmbeddingMatrix]:
    if not cfg.use_asm:
        return None
    z = io.read_embeddings(_need(path, "embedding"))
    if z.num_predicates != cfg.num_predicates:
        raise DataError(f"embedding matrix has {z.num_predicates} rows for {cfg.num_predicates} predicates")
    if z.dim != cfg.dim:
        raise DataError(f"embedding width {z.dim} != model width {cfg.dim}")
    return z


def _net_config(cfg: PipelineConfig, vocab: RelationVocabulary, visual_dim: int) -> NetConfig:
    return cfg.net_config(vocab.num_predicates, vocab.num_object_categories, vocab.person_category, visual_dim)


def cmd_train(cfg: PipelineConfig) -> int:
    p = cfg.paths
    videos = io.read_detections(_need(p.detections, "detection"))
    vocab = io.read_vocabulary(_need(p.vocabulary, "vocabulary"))
    gt = io.read_ground_truth(_need(p.ground_truth, "ground-truth"))
    net_cfg = _net_config(cfg, vocab, _visual_dim(videos, cfg.net.visual_dim))
    z = _load_embeddings(net_cfg, p.embeddings)
    net = RelationNet(net_cfg, cfg.train.seed)

    Path(p.train_log).parent.mkdir(parents=True, exist_ok=True)
    with open(p.train_log, "w", encoding="utf-8") as fh:

        def on_epoch(epoch, history):
            rec = {
                "epoch": epoch + 1,
                "loss": history.epoch_loss[-1],
                "rel_loss": history.epoch_rel_loss[-1],
                "obj_loss": history.epoch_obj_loss[-1],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        history = train(net, videos, gt, vocab, z, cfg.train, cfg.loss, cfg.eval.task, on_epoch)
    final = history.epoch_loss[-1] if history.epoch_loss else float("nan")
    Path(p.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        p.checkpoint,
        net.parameters(),
        {"net": net_cfg.to_dict(), "vocabulary": vocab.to_dict(), "final_loss": final, "epochs": len(history.epoch_loss)},
    )
    print(json.dumps({"final_loss": final, "epochs": len(history.epoch_loss), "seconds": round(history.seconds, 3)}))
    return EXIT_OK


def _load_model(cfg: PipelineConfig, path: str, vocab: RelationVocabulary) -> RelationNet:
    state, meta = load_checkpoint(_need(path, "checkpoint"))
    try:
        stored = NetConfig.from_dict(meta["net"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable network config ({exc})") from None
    expected = _net_config(cfg, vocab, stored.visual_dim)
    if expected != stored:
        a, b = expected.to_dict(), stored.to_dict()
        diff = sorted(k for k in a if a[k] != b[k])
        raise CheckpointError(f"checkpoint {path} does not match the config: {diff}")
    net = RelationNet(stored, 0)
    try:
        net.parameters().load_state_dict(state)
    except ShapeError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return net


def cmd_infer(cfg: PipelineConfig, checkpoint=None, detections=None, output=None, all_triples=False, debug_dump=None) -> int:
    p = cfg.paths
    vocab = io.read_vocabulary(_need(p.vocabulary, "vocabulary"))
    net = _load_model(cfg, checkpoint or p.checkpoint, vocab)
    videos = io.read_detections(_need(detections or p.detections, "detection"))
    z = _load_embeddings(net.cfg, p.embeddings)
    preds = predict(net, videos, z, cfg.eval.task)
    mode = "no" if all_triples else cfg.eval.mode
    io.write_predictions(output or p.predictions, preds, cfg.eval.task, mode)
    if debug_dump:
        lines = []
        for v in videos:
            data = prepare_video(v, net.cfg)
            for item, row in zip(data.items, data.motion):
                lines.append(json.dumps({"video_id": item.video_id, "track_id": item.track_id,
                                         "frame_index": item.frame_index, "motion": [float(x) for x in row]}, sort_keys=True))
        io._write_lines(debug_dump, lines)
    log.info("wrote predictions for %d frames", len(preds))
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, predictions=None, ground_truth=None, output=None) -> int:
    p = cfg.paths
    preds = io.read_predictions(_need(predictions or p.predictions, "prediction"))
    gt = io.read_ground_truth(_need(ground_truth or p.ground_truth, "ground-truth"))
    names = None
    if Path(p.vocabulary).exists():
        names = io.read_vocabulary(p.vocabulary).predicate_names
    report = evaluate(preds, gt, cfg.eval, names)
    text = json.dumps(report, indent=2, sort_keys=True)
    out = output or p.report
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _setup_logging() -> None:
    name = os.environ.get("MOSA_LOG_LEVEL", "warn").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"MOSA_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _setup_logging()
        cfg = _resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.checkpoint, args.detections, args.output, args.all_triples, args.debug_dump)
        return cmd_eval(cfg, args.predictions, args.ground_truth, args.output)
    except (UsageError, ConfigError) as exc:
        print(f"mosa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"mosa: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, io.SchemaError, CheckpointError, InfeasibleConfigError, TaskMismatchError,
            SceneModelError, ShapeError, OSError, ValueError) as exc:
        print(f"mosa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
