"""Training loop, evaluation and the ablation runner."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .corpus import (SCHEMES, Corpus, GeneratorConfig, coarsen_labels,
                     generate_synthetic, split_corpus)
from .metrics import Metrics
from .paircc import GraphCFC, load_checkpoint, save_checkpoint
from .params import restore, snapshot

log = logging.getLogger(__name__)


class TrainingDivergence(ad.NumericError):
    """Non-finite loss or gradient; carries the offending epoch and step (both 1-based)."""

    def __init__(self, epoch, step, cause):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {cause}")
        self.epoch, self.step = epoch, step


class LabelMismatch(ValueError):
    pass


def iter_batches(dialogues, batch_size, order=None):
    order = range(len(dialogues)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield [dialogues[i] for i in order[start:start + batch_size]]


# --------------------------------------------------------------------------
# history
# --------------------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "train_loss", "valid_accuracy", "valid_weighted_f1", "best")


def aligned_csv(rows: Sequence[Dict], columns: Sequence[str]) -> str:
    """CSV whose cells are right-padded so columns line up in a terminal."""
    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)
    table = [list(columns)] + [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(columns))]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in table:
        writer.writerow([cell.ljust(w) if i < len(row) - 1 else cell for i, (cell, w) in enumerate(zip(row, widths))])
    return buf.getvalue()


@dataclass
class TrainResult:
    model: GraphCFC
    history: List[Dict] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_f1: float = -1.0

    def history_json(self):
        return json.dumps({"best_epoch": self.best_epoch, "best_valid_weighted_f1": self.best_valid_f1,
                           "epochs": self.history, "step_losses": self.step_losses}, indent=2)

    def history_csv(self):
        return aligned_csv(self.history, HISTORY_FIELDS)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.model, out / "model.ckpt",
                        extra={"best_epoch": self.best_epoch, "best_valid_weighted_f1": self.best_valid_f1})
        (out / "history.json").write_text(self.history_json())
        (out / "history.csv").write_text(self.history_csv())


# --------------------------------------------------------------------------
# train / evaluate
# --------------------------------------------------------------------------

def _check_labels(model: GraphCFC, split: Corpus):
    if tuple(split.labels) != tuple(model.labels):
        raise LabelMismatch(f"split has {split.num_classes} classes {list(split.labels)}, "
                            f"model expects {model.num_classes} {list(model.labels)}")


def train(config: TrainConfig, train_split: Corpus, valid_split: Corpus,
          max_speakers: Optional[int] = None,
          on_epoch: Optional[Callable[[Dict], None]] = None) -> TrainResult:
    """Minibatch AdamW with early stopping on validation weighted F1.

    The returned model holds the best-validation parameters.  Data order,
    dropout masks and initialisation all derive from ``config.seed``.
    """
    config.validate()
    if not train_split.dialogues:
        raise ad.ContractError("train: empty training split")
    if not valid_split.dialogues:
        raise ad.ContractError("train: empty validation split")
    if tuple(train_split.labels) != tuple(valid_split.labels):
        raise LabelMismatch("train and validation splits use different label sets")
    if max_speakers is None:
        max_speakers = max(train_split.max_speakers, valid_split.max_speakers)
    model = GraphCFC(config, train_split.header.dims, train_split.labels, max_speakers)
    state = ad.AdamWState(lr=config.lr, weight_decay=config.weight_decay)
    order_rng = np.random.default_rng([config.seed, 2])
    dialogues = train_split.dialogues
    total_utts = train_split.num_utterances
    result = TrainResult(model)
    best = snapshot(model.params)
    stale = 0

    for epoch in range(1, config.epochs + 1):
        weighted = 0.0
        order = order_rng.permutation(len(dialogues))
        for step, chunk in enumerate(iter_batches(dialogues, config.batch_size, order), start=1):
            batch = model.make_batch(chunk)
            try:
                loss = model.loss(batch, train=True)
                if not math.isfinite(float(loss.data)):
                    raise ad.NumericError(f"loss = {float(loss.data)}")
                ad.zero_grads(model.params)
                grads = ad.backward(loss, model.params)
                ad.adamw_step(model.params, grads, state)
            except ad.NumericError as exc:
                raise TrainingDivergence(epoch, step, exc) from exc
            value = float(loss.data)
            result.step_losses.append(value)
            weighted += value * batch.size
        metrics = evaluate(model, valid_split)
        improved = metrics.weighted_f1 > result.best_valid_f1
        if improved:
            result.best_valid_f1, result.best_epoch = metrics.weighted_f1, epoch
            best = snapshot(model.params)
            stale = 0
        else:
            stale += 1
        record = {"epoch": epoch, "train_loss": weighted / total_utts,
                  "valid_accuracy": metrics.accuracy, "valid_weighted_f1": metrics.weighted_f1,
                  "best": int(improved)}
        result.history.append(record)
        log.info("epoch %d loss %.4f valid acc %.4f wF1 %.4f", epoch, record["train_loss"],
                 metrics.accuracy, metrics.weighted_f1)
        if on_epoch is not None:
            on_epoch(record)
        if stale >= config.patience:
            break
    restore(model.params, best)
    return result


def predict_split(model: GraphCFC, split: Corpus, batch_size: Optional[int] = None):
    batch_size = model.cfg.batch_size if batch_size is None else batch_size
    truth, preds = [], []
    for chunk in iter_batches(split.dialogues, batch_size):
        batch = model.make_batch(chunk)
        truth.append(batch.labels)
        preds.append(model.predict(batch))
    if not truth:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(truth), np.concatenate(preds)


def evaluate(model, split: Corpus, batch_size: Optional[int] = None) -> Metrics:
    """Metrics of ``model`` (a GraphCFC or a checkpoint path) on ``split``."""
    if not isinstance(model, GraphCFC):
        model, _ = load_checkpoint(model)
    _check_labels(model, split)
    truth, preds = predict_split(model, split, batch_size)
    return Metrics.from_predictions(truth, preds, model.labels)


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

DEFAULT_DEPTHS = (1, 2, 4, 8)
DEFAULT_WINDOWS = ((0, 0), (2, 2), (4, 4), (6, 6), (8, 8))


@dataclass
class Cell:
    label: str
    overrides: Dict
    transform: Optional[Callable[[Corpus], Corpus]] = None


def _scheme_for(labels):
    for name, scheme in SCHEMES.items():
        if tuple(labels) == tuple(scheme.names):
            return name, scheme
    raise LabelMismatch(f"no coarsening scheme for labels {list(labels)}")


def _study_cells(study, options) -> List[Cell]:
    if study == "modality_subsets":
        rows = (("A", "a"), ("V", "v"), ("T", "t"), ("A+V", "av"), ("A+T", "at"), ("V+T", "vt"),
                ("A+V+T", "avt"))
        return [Cell(label, {"modalities": mods}) for label, mods in rows]
    if study == "gatmlp_components":
        return [
            Cell("w/o MultiGAT, w FeedForward", {"use_multigat": False, "use_feedforward": True}),
            Cell("w MultiGAT, w/o FeedForward", {"use_multigat": True, "use_feedforward": False}),
            Cell("w MultiGAT, w FeedForward", {"use_multigat": True, "use_feedforward": True}),
        ]
    if study == "subspace_losses":
        return [
            Cell(f"{'w' if shr else 'w/o'} shared loss, {'w' if sep else 'w/o'} separate loss",
                 {"shared_loss": shr, "separate_loss": sep})
            for shr in (False, True) for sep in (False, True)
        ]
    if study == "embeddings":
        return [
            Cell("w/o speaker embedding", {"speaker_embedding": False, "edge_type_embedding": True}),
            Cell("w/o edge-type embedding", {"speaker_embedding": True, "edge_type_embedding": False}),
            Cell("w both embeddings", {"speaker_embedding": True, "edge_type_embedding": True}),
        ]
    if study == "skip_vs_depth":
        depths = options.get("depths", DEFAULT_DEPTHS)
        return [Cell(f"L={depth} {'w' if skip else 'w/o'} skip", {"layers": depth, "skip_connection": skip})
                for depth in depths for skip in (True, False)]
    if study == "window_sweep":
        windows = options.get("windows", DEFAULT_WINDOWS)
        return [Cell(f"({j},{k})", {"window_past": j, "window_future": k}) for j, k in windows]
    if study == "three_emotion":
        def coarsen(corpus):
            return coarsen_labels(corpus, _scheme_for(corpus.labels)[1])
        return [Cell("three-class", {}, coarsen)]
    raise ValueError(f"unknown study {study!r}; expected one of {STUDIES}")


STUDIES = ("modality_subsets", "gatmlp_components", "subspace_losses", "embeddings",
           "skip_vs_depth", "window_sweep", "three_emotion")

REPORT_FIELDS = ("cell", "accuracy", "weighted_f1", "valid_weighted_f1", "seeds", "num_classes")


@dataclass
class AblationReport:
    study: str
    rows: List[Dict]
    per_seed: List[Dict]
    warnings: List[str] = field(default_factory=list)
    meta: Dict = field(default_factory=dict)

    @property
    def labels(self):
        return [r["cell"] for r in self.rows]

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2)

    def to_csv(self):
        return aligned_csv(self.rows, REPORT_FIELDS)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.study}.json").write_text(self.to_json())
        (out / f"{self.study}.csv").write_text(self.to_csv())


def default_corpus(study: str, data: Optional[GeneratorConfig] = None, seed=0) -> Corpus:
    data = GeneratorConfig() if data is None else data
    if study == "three_emotion" and data.fine_labels == "none":
        data = dataclasses.replace(data, fine_labels="iemocap")
    return generate_synthetic(data, seed)


def run_ablation(base: TrainConfig, study: str, corpus: Optional[Corpus] = None,
                 seeds: Sequence[int] = (0, 1, 2), **options) -> AblationReport:
    """Train every cell of ``study`` once per seed; report the mean test metrics per cell.

    Options: ``depths`` (skip_vs_depth), ``windows`` (window_sweep).
    """
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; expected one of {STUDIES}")
    cells = _study_cells(study, options)
    corpus = default_corpus(study) if corpus is None else corpus
    rows, per_seed = [], []
    meta = {"base": dataclasses.asdict(base), "seeds": list(seeds), "source_labels": list(corpus.labels)}
    for cell in cells:
        data = cell.transform(corpus) if cell.transform else corpus
        tr, va, te = split_corpus(data, base.split, seed=base.seed)
        scores = []
        for seed in seeds:
            cfg = base.replace(seed=seed, **cell.overrides)
            result = train(cfg, tr, va, max_speakers=data.max_speakers)
            m = evaluate(result.model, te)
            scores.append((m.accuracy, m.weighted_f1, result.best_valid_f1))
            per_seed.append({"cell": cell.label, "seed": seed, "accuracy": m.accuracy,
                             "weighted_f1": m.weighted_f1, "valid_weighted_f1": result.best_valid_f1,
                             "best_epoch": result.best_epoch, "labels": list(data.labels)})
        acc, wf1, vf1 = np.mean(scores, axis=0)
        rows.append({"cell": cell.label, "accuracy": float(acc), "weighted_f1": float(wf1),
                     "valid_weighted_f1": float(vf1), "seeds": len(seeds), "num_classes": data.num_classes})
        if cell.transform is not None:
            meta["labels"] = list(data.labels)
    report = AblationReport(study, rows, per_seed, meta=meta)
    if study == "skip_vs_depth":
        by_label = {r["cell"]: r for r in rows}
        for depth in options.get("depths", DEFAULT_DEPTHS):
            with_skip = by_label[f"L={depth} w skip"]["valid_weighted_f1"]
            without = by_label[f"L={depth} w/o skip"]["valid_weighted_f1"]
            if with_skip < without:
                report.warnings.append(f"L={depth}: skip {with_skip:.4f} < no-skip {without:.4f} "
                                       "(expected skip >= no-skip)")
    return report
