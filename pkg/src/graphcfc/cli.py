"""Command-line entry point: gen-data, train, eval, ablate, inspect-graph.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import autodiff as ad
from .config import ConfigError, TrainConfig, reference, resolve, to_ini
from .corpus import CorpusError, generate_synthetic, load_corpus, save_corpus, split_corpus
from .graph import GraphError, build_graph, enumerate_edge_types
from .paircc import CheckpointError, canonical_modalities
from .trainer import STUDIES, LabelMismatch, evaluate, run_ablation, train

log = logging.getLogger("graphcfc")

VALIDATION_ERRORS = (ConfigError, CorpusError, CheckpointError, GraphError, LabelMismatch,
                     ad.ContractError, ad.ShapeError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [train] and [data] sections")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")

    parser = _Parser(prog="gcfc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen-data", parents=[common], help="write a synthetic corpus")

    p = sub.add_parser("train", parents=[common], help="train on a corpus and report test metrics")
    p.add_argument("--data", help="corpus JSONL (default: synthetic corpus from [data])")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="corpus JSONL (default: synthetic corpus from [data])")
    p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")

    p = sub.add_parser("ablate", parents=[common], help="run one ablation study")
    p.add_argument("--study", required=True, choices=STUDIES)
    p.add_argument("--data", help="corpus JSONL (default: synthetic corpus from [data])")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")

    p = sub.add_parser("inspect-graph", parents=[common], help="dump one dialogue's typed edges")
    p.add_argument("--data", help="corpus JSONL (default: synthetic corpus from [data])")
    p.add_argument("--dialogue", default="0", help="dialogue id or index")

    sub.add_parser("config-reference", help="print every config key with its default")
    return parser


def _corpus(args, train_cfg, data_cfg):
    if args.data:
        return load_corpus(args.data)
    if args.command == "ablate" and args.study == "three_emotion" and data_cfg.fine_labels == "none":
        data_cfg = dataclasses.replace(data_cfg, fine_labels="iemocap")
    return generate_synthetic(data_cfg, train_cfg.seed)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def cmd_gen_data(args, cfg: TrainConfig, data_cfg, out: Path):
    corpus = generate_synthetic(data_cfg, cfg.seed)
    save_corpus(corpus, out / "corpus.jsonl")
    print(f"wrote {len(corpus.dialogues)} dialogues to {out / 'corpus.jsonl'}")


def cmd_train(args, cfg, data_cfg, out):
    corpus = _corpus(args, cfg, data_cfg)
    tr, va, te = split_corpus(corpus, cfg.split, seed=cfg.seed)
    result = train(cfg, tr, va, max_speakers=corpus.max_speakers)
    result.save(out)
    metrics = evaluate(result.model, te)
    _write_json(out / "metrics.json", metrics.to_dict())
    (out / "metrics.txt").write_text(metrics.table() + "\n")
    print(metrics.table())


def cmd_eval(args, cfg, data_cfg, out):
    from .paircc import load_checkpoint
    model, _ = load_checkpoint(args.checkpoint)
    corpus = _corpus(args, cfg, data_cfg)
    if args.split == "all":
        split = corpus
    else:
        parts = dict(zip(("train", "valid", "test"), split_corpus(corpus, cfg.split, seed=cfg.seed)))
        split = parts[args.split]
    metrics = evaluate(model, split)
    _write_json(out / "metrics.json", metrics.to_dict())
    (out / "metrics.txt").write_text(metrics.table() + "\n")
    print(metrics.table())


def cmd_ablate(args, cfg, data_cfg, out):
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds: expected comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("--seeds: at least one seed is required")
    corpus = _corpus(args, cfg, data_cfg)
    report = run_ablation(cfg, args.study, corpus, seeds=seeds)
    report.save(out)
    print(report.to_csv(), end="")
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)


def cmd_inspect_graph(args, cfg, data_cfg, out):
    corpus = _corpus(args, cfg, data_cfg)
    by_id = {d.id: d for d in corpus.dialogues}
    if args.dialogue in by_id:
        dialogue = by_id[args.dialogue]
    else:
        try:
            dialogue = corpus.dialogues[int(args.dialogue)]
        except (ValueError, IndexError):
            raise ConfigError(f"--dialogue: no dialogue {args.dialogue!r}") from None
    mods = canonical_modalities(cfg.modalities)
    table = enumerate_edge_types(corpus.max_speakers, len(mods))
    graph = build_graph(dialogue, mods, cfg.window, cfg.direction_mode, table)
    (out / "graph.jsonl").write_text(graph.dump_jsonl())
    summary = {"dialogue": dialogue.id, "utterances": dialogue.n, "modalities": list(mods),
               "nodes": graph.num_nodes, "edges": graph.num_edges, "edge_types": table.total_count}
    _write_json(out / "graph_summary.json", summary)
    print(json.dumps(summary))


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "inspect-graph": cmd_inspect_graph}


def _log_error(out, message):
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.log").write_text(message + "\n")
    except OSError:
        pass
    print(f"error: {message}", file=sys.stderr)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command == "config-reference":
        print(reference(), end="")
        return 0
    out = Path(args.out)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    try:
        cfg, data_cfg = resolve(args.config, overrides)
    except ConfigError as exc:
        _log_error(out, str(exc))
        return 1
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(to_ini(cfg, data_cfg))
        COMMANDS[args.command](args, cfg, data_cfg, out)
    except VALIDATION_ERRORS as exc:
        _log_error(out, f"{type(exc).__name__}: {exc}")
        return 1
    except (ad.NumericError, OSError, RuntimeError, ValueError) as exc:
        _log_error(out, f"{type(exc).__name__}: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
