"""Directed multimodal dialogue graphs with speaker/modality-typed edges.

Node ``m * n + i`` is utterance ``i`` in the ``m``-th active modality, so a
graph's node features are the per-modality feature blocks stacked in order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

DIRECTION_MODES = ("future_in", "literal")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphNode:
    utterance: int
    modality: str


@dataclass(frozen=True)
class TypedEdge:
    src: GraphNode
    dst: GraphNode
    type_id: int


@dataclass(frozen=True)
class EdgeTypeTable:
    speakers: int
    modalities: int
    intra: Dict[Tuple[int, int, int], int]  # (modality, s_lo, s_hi) -> id
    inter: Dict[Tuple[int, int], int]  # (m_lo, m_hi) -> id

    @property
    def total_count(self):
        return len(self.intra) + len(self.inter)

    def intra_id(self, modality, speaker_a, speaker_b):
        lo, hi = sorted((int(speaker_a), int(speaker_b)))
        try:
            return self.intra[(int(modality), lo, hi)]
        except KeyError:
            raise GraphError(
                f"no intra edge type for modality {modality}, speakers ({lo}, {hi}) "
                f"in a table with D={self.speakers}, M={self.modalities}"
            ) from None

    def inter_id(self, modality_a, modality_b):
        lo, hi = sorted((int(modality_a), int(modality_b)))
        try:
            return self.inter[(lo, hi)]
        except KeyError:
            raise GraphError(f"no inter edge type for modalities ({lo}, {hi})") from None


def edge_type_count(speakers, modalities):
    """Number of edge types: M (D^2 + D + M - 1) / 2."""
    D, M = speakers, modalities
    return M * (D * D + D + M - 1) // 2


def enumerate_edge_types(speakers: int, modalities: int) -> EdgeTypeTable:
    if speakers < 1 or modalities < 1:
        raise GraphError("enumerate_edge_types needs D >= 1 and M >= 1")
    intra, inter = {}, {}
    next_id = 0
    for m in range(modalities):
        for s1 in range(speakers):
            for s2 in range(s1, speakers):
                intra[(m, s1, s2)] = next_id
                next_id += 1
    for m1 in range(modalities):
        for m2 in range(m1 + 1, modalities):
            inter[(m1, m2)] = next_id
            next_id += 1
    return EdgeTypeTable(speakers, modalities, intra, inter)


@dataclass
class DialogueGraph:
    modalities: Tuple[str, ...]
    n: int
    src: np.ndarray
    dst: np.ndarray
    types: np.ndarray
    window: Tuple[int, int]
    direction_mode: str
    table: EdgeTypeTable

    @property
    def num_nodes(self):
        return len(self.modalities) * self.n

    @property
    def num_edges(self):
        return len(self.src)

    def node(self, index) -> GraphNode:
        m, i = divmod(int(index), self.n)
        return GraphNode(i, self.modalities[m])

    def edges(self) -> List[TypedEdge]:
        return [TypedEdge(self.node(s), self.node(d), int(t))
                for s, d, t in zip(self.src, self.dst, self.types)]

    def dump_jsonl(self) -> str:
        return "".join(
            json.dumps({"src": [e.src.utterance, e.src.modality],
                        "dst": [e.dst.utterance, e.dst.modality],
                        "type": e.type_id}) + "\n"
            for e in self.edges()
        )


def edge_type_of(src: GraphNode, dst: GraphNode, speakers, table: EdgeTypeTable,
                 modalities: Sequence[str]) -> int:
    if src == dst:
        raise GraphError(f"self-loop {src} has no edge type")
    if src.modality == dst.modality:
        m = modalities.index(src.modality)
        return table.intra_id(m, speakers[src.utterance], speakers[dst.utterance])
    if src.utterance == dst.utterance:
        return table.inter_id(modalities.index(src.modality), modalities.index(dst.modality))
    raise GraphError(f"edge {src} -> {dst} joins different utterances and modalities")


def _intra_pairs(n, j, k, direction_mode):
    """Ordered (src, dst) utterance pairs within one modality."""
    pairs, seen = [], set()
    for i in range(n):
        if direction_mode == "future_in":
            candidates = [(t, i) for t in range(max(0, i - j), i)]
            candidates += [(t, i) for t in range(i + 1, min(n, i + k + 1))]
        else:
            candidates = [(t, i) for t in range(max(0, i - j), i)]
            candidates += [(i, t) for t in range(i + 1, min(n, i + k + 1))]
        for pair in candidates:
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return pairs


def build_edges(speakers, modalities: Sequence[str], window=(1, 1),
                direction_mode="future_in", table: EdgeTypeTable = None,
                inter_edges=True) -> DialogueGraph:
    """Graph over ``len(speakers)`` utterances in the given modalities."""
    j, k = window
    n = len(speakers)
    M = len(modalities)
    if j < 0 or k < 0:
        raise GraphError(f"window must be non-negative, got {window}")
    if M == 0:
        raise GraphError("at least one modality is required")
    if len(set(modalities)) != M:
        raise GraphError(f"duplicate modality tags {modalities}")
    if n < 1:
        raise GraphError("dialogue has no utterances")
    if direction_mode not in DIRECTION_MODES:
        raise GraphError(f"direction_mode must be one of {DIRECTION_MODES}")
    speakers = np.asarray(speakers, dtype=np.int64)
    if table is None:
        table = enumerate_edge_types(int(speakers.max()) + 1, M)
    if table.modalities != M:
        raise GraphError(f"edge type table has M={table.modalities}, graph has M={M}")
    src, dst, types = [], [], []
    pairs = _intra_pairs(n, j, k, direction_mode)
    for m in range(M):
        for s, d in pairs:
            src.append(m * n + s)
            dst.append(m * n + d)
            types.append(table.intra_id(m, speakers[s], speakers[d]))
    if inter_edges:
        for i in range(n):
            for p in range(M):
                for q in range(M):
                    if p != q:
                        src.append(p * n + i)
                        dst.append(q * n + i)
                        types.append(table.inter_id(p, q))
    as_int = lambda xs: np.array(xs, dtype=np.int64)
    return DialogueGraph(tuple(modalities), n, as_int(src), as_int(dst), as_int(types),
                         (j, k), direction_mode, table)


def build_graph(dialogue, modalities: Sequence[str] = ("t", "a", "v"), window=(1, 1),
                direction_mode="future_in", table: EdgeTypeTable = None) -> DialogueGraph:
    if table is None:
        table = enumerate_edge_types(dialogue.speaker_count, len(modalities))
    return build_edges(dialogue.speakers, modalities, window, direction_mode, table)


def count_edges_oracle(n, j, k, M, direction_mode="future_in"):
    """(intra, inter) edge counts by testing every ordered node pair."""
    intra = inter = 0
    for m_src in range(M):
        for i_src in range(n):
            for m_dst in range(M):
                for i_dst in range(n):
                    if m_src == m_dst and i_src == i_dst:
                        continue
                    if m_src != m_dst:
                        inter += i_src == i_dst
                        continue
                    past = i_dst - j <= i_src <= i_dst - 1
                    if direction_mode == "future_in":
                        future = i_dst + 1 <= i_src <= i_dst + k
                    else:
                        future = i_src + 1 <= i_dst <= i_src + k
                    intra += past or future
    return intra, inter
