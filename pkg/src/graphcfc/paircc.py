"""The full model: encoders, subspaces, staged pair-wise complementation, heads and losses."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .corpus import MODALITIES, Dialogue
from .encoders import encode_ff, encode_text, init_encoders, init_subspaces, inject_speaker, subspace_extract
from .gatmlp import Edges, LayerSpec, gat_mlp_stack, init_stack
from .graph import build_edges, edge_type_count, enumerate_edge_types
from .params import ParamInit

STAGE_ORDER = ("v", "a", "t")
CHECKPOINT_MAGIC = b"GCFC1"


def canonical_modalities(spec: str):
    return tuple(m for m in STAGE_ORDER if m in spec)


def stage_plan(modalities):
    """(stage name, left tag, right tag) per stage; a single-modality run has no right tag."""
    if len(modalities) == 1:
        return [("stage1", modalities[0], None)]
    plan, left = [], modalities[0]
    for k, right in enumerate(modalities[1:], start=1):
        plan.append((f"stage{k}", left, right))
        left = left + right
    plan.append((f"stage{len(modalities)}", left, "shr"))
    return plan


@dataclass
class Batch:
    """Several dialogues stacked row-wise, with their stage graphs as one disjoint union."""

    features: Dict[str, np.ndarray]
    speakers: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray
    edges: Edges
    ids: List[str]

    @property
    def size(self):
        return int(self.lengths.sum())


def build_stage_edges(dialogues: Sequence[Dialogue], num_modalities, window, direction_mode,
                      max_speakers, inter_edges=True) -> Edges:
    """Disjoint union of per-dialogue graphs; node m*N + row for modality slot m."""
    table = enumerate_edge_types(max_speakers, num_modalities)
    total = sum(d.n for d in dialogues)
    src, dst, types = [], [], []
    offset = 0
    for d in dialogues:
        g = build_edges(d.speakers, tuple(range(num_modalities)), window, direction_mode, table,
                        inter_edges=inter_edges)
        slot_s, local_s = np.divmod(g.src, d.n)
        slot_d, local_d = np.divmod(g.dst, d.n)
        src.append(slot_s * total + offset + local_s)
        dst.append(slot_d * total + offset + local_d)
        types.append(g.types)
        offset += d.n
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, dtype=np.int64)
    return Edges(cat(src), cat(dst), cat(types), num_modalities * total)


class GraphCFC:
    def __init__(self, cfg: TrainConfig, dims: Dict[str, int], labels: Sequence[str],
                 max_speakers: int, seed: Optional[int] = None):
        cfg.validate()
        self.cfg = cfg
        self.dims = dict(dims)
        self.labels = tuple(labels)
        self.num_classes = len(self.labels)
        self.max_speakers = int(max_speakers)
        self.seed = cfg.seed if seed is None else seed
        self.modalities = canonical_modalities(cfg.modalities)
        self.shared = len(self.modalities) > 1
        self.plan = stage_plan(self.modalities)
        self.spec = LayerSpec(
            width=cfg.dim, heads=cfg.heads, head_mode=cfg.head_mode,
            norm_position=cfg.norm_position, skip_connection=cfg.skip_connection,
            use_multigat=cfg.use_multigat, use_feedforward=cfg.use_feedforward,
            use_edge_types=cfg.edge_type_embedding, dropout=cfg.dropout, slope=cfg.leaky_slope,
        )
        self.stage_modalities = 1 if len(self.modalities) == 1 else 2
        self.params = self._init_params(np.random.default_rng([self.seed, 0]))
        self.rng = np.random.default_rng([self.seed, 1])

    # ------------------------------------------------------------------ params

    def _init_params(self, rng):
        cfg, d = self.cfg, self.cfg.dim
        init = ParamInit(rng)
        init_encoders(init, self.dims, d, self.max_speakers, cfg.speaker_embedding, self.modalities)
        init_subspaces(init, d, self.modalities, shared=self.shared)
        num_types = edge_type_count(self.max_speakers, self.stage_modalities)
        for name, _, right in self.plan:
            init_stack(init, name, self.spec, cfg.layers, num_types)
            if right is not None:
                init.linear(f"{name}.proj", 2 * d, d)
        for head in self.head_names():
            init.linear(f"head.{head}.0", d, d)
            init.linear(f"head.{head}.1", d, self.num_classes)
        for head in self.head_names():
            if head != "main":
                init.zeros(f"loss.s_{head}")
        return init.params

    def head_names(self):
        names = ["main"]
        if self.shared:
            names.append("shr")
        names.extend(f"sep_{m}" for m in self.modalities)
        return names

    def head_params(self, head, params=None):
        p = self.params if params is None else params
        return [p[f"head.{head}.{k}.{w}"] for k in (0, 1) for w in ("W", "b")]

    # ------------------------------------------------------------------ data

    def make_batch(self, dialogues: Sequence[Dialogue]) -> Batch:
        if not dialogues or any(d.n == 0 for d in dialogues):
            raise ad.ContractError("make_batch: empty dialogue")
        edges = build_stage_edges(dialogues, self.stage_modalities, self.cfg.window,
                                  self.cfg.direction_mode, self.max_speakers,
                                  inter_edges=self.stage_modalities > 1)
        return Batch(
            features={m: np.concatenate([d.features[m] for d in dialogues]) for m in MODALITIES},
            speakers=np.concatenate([d.speakers for d in dialogues]),
            labels=np.concatenate([d.labels for d in dialogues]),
            lengths=np.array([d.n for d in dialogues], dtype=np.int64),
            edges=edges,
            ids=[d.id for d in dialogues],
        )

    # ------------------------------------------------------------------ forward

    def encode(self, batch: Batch, train=False, params=None):
        p = self.params if params is None else params
        rng = self.rng if train else None
        cfg = self.cfg
        inputs = {}
        for m in self.modalities:
            x = ad.const(batch.features[m])
            x = encode_text(x, batch.lengths, p) if m == "t" else encode_ff(x, m, p)
            if cfg.speaker_embedding:
                x = inject_speaker(x, batch.speakers, cfg.mu, p["enc.speaker"])
            inputs[m] = x
        return subspace_extract(inputs, p, cfg.dropout, train, rng, shared=self.shared)

    def paircc_stage(self, name, left, right, batch: Batch, train=False, params=None):
        p = self.params if params is None else params
        n = left.shape[0]
        if right.shape[0] != n:
            raise ad.ShapeError(f"{name}: misaligned utterance counts {n} vs {right.shape[0]}")
        nodes = ad.concat([left, right], axis=0)
        out = gat_mlp_stack(nodes, batch.edges, p, name, self.spec, self.cfg.layers, train,
                            self.rng if train else None)
        fused = ad.concat([ad.slice_(out, 0, n), ad.slice_(out, n, 2 * n)], axis=-1)
        return ad.linear(fused, p[f"{name}.proj.W"], p[f"{name}.proj.b"])

    def forward(self, batch: Batch, train=False, params=None):
        """Logits per head: 'main', 'shr' (multimodal runs) and 'sep_<m>'."""
        p = self.params if params is None else params
        sep, shr = self.encode(batch, train, params)
        features = dict(sep)
        if shr is not None:
            features["shr"] = shr
        h = None
        for name, left_tag, right_tag in self.plan:
            left = h if h is not None else features[left_tag]
            if right_tag is None:
                h = gat_mlp_stack(left, batch.edges, p, name, self.spec, self.cfg.layers, train,
                                  self.rng if train else None)
            else:
                h = self.paircc_stage(name, left, features[right_tag], batch, train, params)
        logits = {"main": classify(h, p, "main")}
        if shr is not None:
            logits["shr"] = classify(shr, p, "shr")
        for m in self.modalities:
            logits[f"sep_{m}"] = classify(sep[m], p, f"sep_{m}")
        return logits

    def compute_losses(self, logits, labels, params=None):
        p = self.params if params is None else params
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ad.ContractError(f"labels outside [0, {self.num_classes})")
        wanted = ["main"]
        if self.shared and self.cfg.shared_loss:
            wanted.append("shr")
        if self.cfg.separate_loss:
            wanted.extend(f"sep_{m}" for m in self.modalities)
        return {
            head: cross_entropy(logits[head], labels, self.head_params(head, p), self.cfg.l2)
            for head in wanted
        }

    def total_loss(self, components, params=None):
        p = self.params if params is None else params
        return total_loss(components, p)

    def loss(self, batch: Batch, train=False, params=None):
        return self.total_loss(self.compute_losses(self.forward(batch, train, params), batch.labels, params), params)

    def predict(self, batch: Batch):
        return predict(self.forward(batch, train=False)["main"].data)

    # ------------------------------------------------------------------ persistence

    def meta(self):
        return {"config": dataclasses.asdict(self.cfg), "dims": self.dims, "labels": list(self.labels),
                "max_speakers": self.max_speakers, "seed": self.seed}

    @classmethod
    def from_meta(cls, meta):
        return cls(TrainConfig(**meta["config"]), meta["dims"], meta["labels"], meta["max_speakers"],
                   seed=meta["seed"])


def classify(h, p, head):
    hidden = ad.relu(ad.linear(h, p[f"head.{head}.0.W"], p[f"head.{head}.0.b"]))
    return ad.linear(hidden, p[f"head.{head}.1.W"], p[f"head.{head}.1.b"])


def cross_entropy(logits, labels, head_params, l2=0.0):
    """Mean negative log-likelihood over all utterances plus l2 * ||head params||^2."""
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    nll = ad.scale(ad.sum_(ad.mul(ad.log_softmax(logits), onehot)), -1.0 / n)
    if l2 == 0.0:
        return nll
    reg = ad.sq_l2(head_params[0])
    for w in head_params[1:]:
        reg = ad.add(reg, ad.sq_l2(w))
    return ad.add(nll, ad.scale(reg, l2))


def total_loss(components, p):
    """L_cls + sum_k exp(-s_k) L_k + s_k over the auxiliary components present."""
    total = components["main"]
    for head, value in components.items():
        if head == "main":
            continue
        s = p[f"loss.s_{head}"]
        total = ad.add(total, ad.add(ad.mul(ad.exp(ad.scale(s, -1.0)), value), s))
    return total


def predict(logits: np.ndarray) -> np.ndarray:
    """Arg-max class per row; ties go to the lowest class index."""
    return np.argmax(logits, axis=-1)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(model: GraphCFC, path, arrays: Optional[Dict[str, np.ndarray]] = None, extra=None):
    """Magic, u64 manifest length, JSON manifest, then little-endian float64 blobs."""
    arrays = {k: v.data for k, v in model.params.items()} if arrays is None else arrays
    tensors, blobs, offset = [], [], 0
    for name, value in model.params.items():
        data = np.asarray(arrays[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    manifest = json.dumps({"meta": model.meta(), "extra": extra or {}, "tensors": tensors}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    start = len(CHECKPOINT_MAGIC)
    (length,) = struct.unpack("<Q", raw[start:start + 8])
    manifest = json.loads(raw[start + 8:start + 8 + length])
    data = raw[start + 8 + length:]
    model = GraphCFC.from_meta(manifest["meta"])
    entries = {t["name"]: t for t in manifest["tensors"]}
    if set(entries) != set(model.params):
        missing = sorted(set(model.params) - set(entries))
        extra = sorted(set(entries) - set(model.params))
        raise CheckpointError(f"{path}: parameter mismatch; missing {missing[:5]} unexpected {extra[:5]}")
    for name, value in model.params.items():
        t = entries[name]
        if tuple(t["shape"]) != value.shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(t['shape'])}, model expects {value.shape}")
        count = int(np.prod(value.shape)) if value.shape else 1
        chunk = data[t["offset"]:t["offset"] + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError(f"{path}: truncated data for {name}")
        value.data = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(value.shape)
    return model, manifest.get("extra", {})
