"""Uni-modal encoders, speaker injection and the shared/separate subspace maps.

Inputs may hold several dialogues stacked row-wise; ``lengths`` gives the
utterance count of each in order. Only the text encoder mixes rows.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .params import ParamInit


def init_encoders(init: ParamInit, dims, width, max_speakers, speaker_embedding=True,
                  modalities=("t", "a", "v")):
    hidden = max(1, width // 2)
    if "t" in modalities:
        init.lstm("enc.t.fwd", dims["t"], hidden)
        init.lstm("enc.t.rev", dims["t"], hidden)
        init.linear("enc.t.proj", 2 * hidden, width)
    for m in ("a", "v"):
        if m in modalities:
            init.linear(f"enc.{m}", dims[m], width)
    if speaker_embedding:
        init.normal("enc.speaker", (max_speakers, width), std=1.0 / np.sqrt(width))


def _sequence_rows(lengths, reverse):
    """Row index per (step, sequence); padded steps point at the sequence's first row."""
    lengths = np.asarray(lengths, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    steps = int(lengths.max())
    t = np.arange(steps)[:, None]
    pos = (lengths[None, :] - 1 - t) if reverse else np.broadcast_to(t, (steps, len(lengths)))
    pos = np.where(t < lengths[None, :], pos, 0)
    return offsets[None, :] + pos


def _lstm_pass(x_proj, lengths, U, reverse):
    """Run one LSTM direction over every sequence; returns (N, h) in row order."""
    hidden = U.shape[0]
    batch = len(lengths)
    rows = _sequence_rows(lengths, reverse)
    h = ad.const(np.zeros((batch, hidden)))
    c = ad.const(np.zeros((batch, hidden)))
    outputs = []
    for step_rows in rows:
        gates = ad.add(ad.take_rows(x_proj, step_rows), ad.matmul(h, U))
        i = ad.sigmoid(ad.slice_(gates, 0, hidden, axis=-1))
        f = ad.sigmoid(ad.slice_(gates, hidden, 2 * hidden, axis=-1))
        g = ad.tanh(ad.slice_(gates, 2 * hidden, 3 * hidden, axis=-1))
        o = ad.sigmoid(ad.slice_(gates, 3 * hidden, 4 * hidden, axis=-1))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outputs.append(h)
    stacked = ad.concat(outputs, axis=0)  # row = step * batch + sequence
    gather = []
    for b, n in enumerate(lengths):
        steps = np.arange(n)
        if reverse:
            steps = n - 1 - steps
        gather.extend(steps * batch + b)
    return ad.take_rows(stacked, np.array(gather, dtype=np.int64))


def bilstm(X, lengths, p, prefix="enc.t"):
    """Forward and backward hidden states, each (N, h), aligned to utterances."""
    fwd_in = ad.linear(X, p[f"{prefix}.fwd.W"], p[f"{prefix}.fwd.b"])
    rev_in = ad.linear(X, p[f"{prefix}.rev.W"], p[f"{prefix}.rev.b"])
    return (_lstm_pass(fwd_in, lengths, p[f"{prefix}.fwd.U"], reverse=False),
            _lstm_pass(rev_in, lengths, p[f"{prefix}.rev.U"], reverse=True))


def encode_text(X, lengths, p, prefix="enc.t"):
    expected = p[f"{prefix}.fwd.W"].shape[0]
    if X.shape[-1] != expected:
        raise ad.ShapeError(f"encode_text: feature dim {X.shape[-1]} != {expected}")
    hf, hr = bilstm(X, lengths, p, prefix)
    return ad.linear(ad.concat([hf, hr], axis=-1), p[f"{prefix}.proj.W"], p[f"{prefix}.proj.b"])


def encode_ff(X, modality, p):
    W = p[f"enc.{modality}.W"]
    if X.shape[-1] != W.shape[0]:
        raise ad.ShapeError(f"encode_ff[{modality}]: feature dim {X.shape[-1]} != {W.shape[0]}")
    return ad.tanh(ad.linear(X, W, p[f"enc.{modality}.b"]))


def inject_speaker(X, speakers, mu, table):
    if not 0.0 <= mu <= 1.0:
        raise ad.ContractError(f"inject_speaker: mu={mu} outside [0, 1]")
    return ad.add(ad.scale(ad.embedding(table, speakers), mu), X)


# --------------------------------------------------------------------------
# subspace maps
# --------------------------------------------------------------------------

def init_mapping(init: ParamInit, prefix, width_in, width):
    init.linear(f"{prefix}.lin0", width_in, width)
    init.linear(f"{prefix}.lin1", width, width)
    init.layer_norm(f"{prefix}.norm", width)


def mapping(X, p, prefix, dropout=0.0, train=False, rng=None):
    """Norm(Drop(Lin(Drop(ReLU(Lin(X))))))."""
    h = ad.relu(ad.linear(X, p[f"{prefix}.lin0.W"], p[f"{prefix}.lin0.b"]))
    h = ad.dropout(h, dropout, train, rng)
    h = ad.dropout(ad.linear(h, p[f"{prefix}.lin1.W"], p[f"{prefix}.lin1.b"]), dropout, train, rng)
    return ad.layer_norm(h, p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"])


def init_subspaces(init: ParamInit, width, modalities=("t", "a", "v"), shared=True):
    if shared:
        init_mapping(init, "sub.shr", width, width)
        init.linear("sub.shr_fuse", len(modalities) * width, width)
    for m in modalities:
        init_mapping(init, f"sub.sep.{m}", width, width)


def subspace_extract(inputs, p, dropout=0.0, train=False, rng=None, shared=True):
    """Separate features per modality plus the fused shared feature.

    ``inputs`` maps modality -> speaker-aware features; the shared map is
    applied to modalities in (v, a, t) order before fusion.
    """
    order = [m for m in ("v", "a", "t") if m in inputs]
    sep = {m: mapping(inputs[m], p, f"sub.sep.{m}", dropout, train, rng) for m in order}
    if not shared:
        return sep, None
    shr = [mapping(inputs[m], p, "sub.shr", dropout, train, rng) for m in order]
    fused = ad.linear(ad.concat(shr, axis=-1), p["sub.shr_fuse.W"], p["sub.shr_fuse.b"])
    return sep, fused
