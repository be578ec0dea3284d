"""GAT-MLP layers: edge-typed GATv2 attention with GRU combination plus a feed-forward sublayer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .params import ParamInit

HEAD_MODES = ("average", "concat")
NORM_POSITIONS = ("post", "pre")


class Edges(NamedTuple):
    src: np.ndarray
    dst: np.ndarray
    types: np.ndarray
    num_nodes: int

    @classmethod
    def from_graph(cls, graph):
        return cls(graph.src, graph.dst, graph.types, graph.num_nodes)


@dataclass(frozen=True)
class LayerSpec:
    width: int
    heads: int = 1
    head_mode: str = "average"
    norm_position: str = "post"
    skip_connection: bool = True
    use_multigat: bool = True
    use_feedforward: bool = True
    use_edge_types: bool = True
    dropout: float = 0.0
    slope: float = 0.2

    def __post_init__(self):
        if self.heads < 1:
            raise ad.ContractError("heads must be >= 1")
        if self.head_mode not in HEAD_MODES:
            raise ad.ContractError(f"head_mode must be one of {HEAD_MODES}")
        if self.norm_position not in NORM_POSITIONS:
            raise ad.ContractError(f"norm_position must be one of {NORM_POSITIONS}")


def init_head(init: ParamInit, prefix, width, num_types, use_edge_types=True):
    att_in = 3 * width if use_edge_types else 2 * width
    init.weight(f"{prefix}.att.W", att_in, width)
    init.normal(f"{prefix}.att.a", (width,), std=1.0 / np.sqrt(width))
    init.weight(f"{prefix}.agg.W", width, width)
    init.gru(f"{prefix}.com_fwd", width, width)
    init.gru(f"{prefix}.com_rev", width, width)
    if use_edge_types:
        init.normal(f"{prefix}.et", (num_types, width), std=1.0 / np.sqrt(width))


def init_layer(init: ParamInit, prefix, spec: LayerSpec, num_types):
    d = spec.width
    if spec.use_multigat:
        for k in range(spec.heads):
            init_head(init, f"{prefix}.head{k}", d, num_types, spec.use_edge_types)
        if spec.head_mode == "concat":
            init.weight(f"{prefix}.merge.W", spec.heads * d, d)
        init.layer_norm(f"{prefix}.norm_gat", d)
    if spec.use_feedforward:
        init.linear(f"{prefix}.ff0", d, d)
        init.linear(f"{prefix}.ff1", d, d)
        init.layer_norm(f"{prefix}.norm_ff", d)


def edge_scores(x_dst, x_src, et, att_W, att_a, slope=0.2):
    """a^T LeakyReLU(Theta_att [x_i || x_j || et_ij]) per edge (``et`` may be None)."""
    parts = [x_dst, x_src] if et is None else [x_dst, x_src, et]
    hidden = ad.leaky_relu(ad.matmul(ad.concat(parts, axis=-1), att_W), slope)
    return ad.matmul(hidden, att_a)


def attention_weights(x_i, neighbors, neighbor_types, p, prefix, slope=0.2):
    """Attention simplex of node ``x_i`` (d,) over its in-neighbours (k, d).

    ``neighbor_types`` holds the (k, d_et) edge-type features, or None when
    edge types are disabled.
    """
    k = neighbors.shape[0]
    if k == 0:
        raise ad.ContractError("attention_weights: empty neighbourhood")
    x_rep = ad.take_rows(ad.reshape(x_i, (1, -1)), np.zeros(k, dtype=np.int64))
    scores = edge_scores(x_rep, neighbors, neighbor_types, p[f"{prefix}.att.W"], p[f"{prefix}.att.a"], slope)
    return ad.segment_softmax(scores, np.zeros(k, dtype=np.int64), 1)


def node_projected_scores(X, edges: Edges, p, prefix, use_edge_types=True, slope=0.2):
    """Same scores as :func:`edge_scores`, projecting per node/type before gathering per edge."""
    d = X.shape[1]
    att_W = p[f"{prefix}.att.W"]
    z = ad.add(ad.take_rows(ad.matmul(X, ad.slice_(att_W, 0, d)), edges.dst),
               ad.take_rows(ad.matmul(X, ad.slice_(att_W, d, 2 * d)), edges.src))
    if use_edge_types:
        et_proj = ad.matmul(p[f"{prefix}.et"], ad.slice_(att_W, 2 * d, att_W.shape[0]))
        z = ad.add(z, ad.take_rows(et_proj, edges.types))
    return ad.matmul(ad.leaky_relu(z, slope), p[f"{prefix}.att.a"])


def gat_head(X, edges: Edges, p, prefix, use_edge_types=True, slope=0.2, return_alpha=False):
    """One attention head: weighted aggregation then forward + reverse GRU combination."""
    n = X.shape[0]
    if n != edges.num_nodes:
        raise ad.ShapeError(f"gat_head: {n} node rows but graph has {edges.num_nodes} nodes")
    values = ad.matmul(X, p[f"{prefix}.agg.W"])
    alpha = None
    if len(edges.src):
        scores = node_projected_scores(X, edges, p, prefix, use_edge_types, slope)
        alpha = ad.segment_softmax(scores, edges.dst, n)
        messages = ad.mul(ad.take_rows(values, edges.src), ad.reshape(alpha, (-1, 1)))
        agg = ad.segment_sum(messages, edges.dst, n)
    else:
        agg = ad.const(np.zeros((n, X.shape[1])))
    fwd = ad.gru_cell(X, agg, _gru(p, f"{prefix}.com_fwd"))
    rev = ad.gru_cell(agg, X, _gru(p, f"{prefix}.com_rev"))
    out = ad.add(fwd, rev)
    return (out, alpha) if return_alpha else out


def _gru(p, prefix):
    return {"W": p[f"{prefix}.W"], "U": p[f"{prefix}.U"], "b": p[f"{prefix}.b"]}


def multi_gat(X, edges: Edges, p, prefix, spec: LayerSpec):
    heads = [gat_head(X, edges, p, f"{prefix}.head{k}", spec.use_edge_types, spec.slope)
             for k in range(spec.heads)]
    if spec.head_mode == "concat":
        return ad.matmul(ad.concat(heads, axis=-1), p[f"{prefix}.merge.W"])
    if len(heads) == 1:
        return heads[0]
    total = heads[0]
    for h in heads[1:]:
        total = ad.add(total, h)
    return ad.scale(total, 1.0 / len(heads))


def feed_forward(X, p, prefix, dropout=0.0, train=False, rng=None):
    h = ad.dropout(ad.relu(ad.linear(X, p[f"{prefix}.ff0.W"], p[f"{prefix}.ff0.b"])), dropout, train, rng)
    return ad.dropout(ad.linear(h, p[f"{prefix}.ff1.W"], p[f"{prefix}.ff1.b"]), dropout, train, rng)


def _norm(X, p, name):
    return ad.layer_norm(X, p[f"{name}.gamma"], p[f"{name}.beta"])


def gat_mlp_layer(X, edges: Edges, p, prefix, spec: LayerSpec, train=False, rng=None):
    """Attention sublayer then feed-forward sublayer, each with residual + layer norm."""
    out = X
    sublayers = []
    if spec.use_multigat:
        sublayers.append(("norm_gat", lambda h: multi_gat(h, edges, p, prefix, spec)))
    if spec.use_feedforward:
        sublayers.append(("norm_ff", lambda h: feed_forward(h, p, prefix, spec.dropout, train, rng)))
    for norm_name, fn in sublayers:
        norm = f"{prefix}.{norm_name}"
        if spec.norm_position == "post":
            h = fn(out)
            out = _norm(ad.add(h, out) if spec.skip_connection else h, p, norm)
        else:
            h = fn(_norm(out, p, norm))
            out = ad.add(h, out) if spec.skip_connection else h
    return out


def init_stack(init: ParamInit, prefix, spec: LayerSpec, num_layers, num_types):
    for layer in range(num_layers):
        init_layer(init, f"{prefix}.layer{layer}", spec, num_types)


def gat_mlp_stack(X, edges: Edges, p, prefix, spec: LayerSpec, num_layers, train=False, rng=None):
    for layer in range(num_layers):
        X = gat_mlp_layer(X, edges, p, f"{prefix}.layer{layer}", spec, train, rng)
    return X
