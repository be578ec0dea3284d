"""Segment (scatter/gather) kernels used by graph attention.

Every graph-attention step reduces edge-level quantities onto destination
nodes, so these loops sit on the hot path of both forward and backward.
Each kernel has a numba ``@njit`` implementation and a pure-numpy
implementation with identical accumulation order.  Sums agree bitwise;
softmax can differ in the last bit because numba and numpy ship different
``exp`` implementations.

Set ``GCFC_DISABLE_NUMBA=1`` to force the numpy path (also used
automatically when numba cannot be imported).
"""
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("GCFC_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def segment_sum_numpy(values, segment_ids, num_segments):
    out = np.zeros((num_segments,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, segment_ids, values)
    return out


def segment_softmax_numpy(scores, segment_ids, num_segments):
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segment_ids, scores)
    ex = np.exp(scores - seg_max[segment_ids])
    denom = np.zeros(num_segments)
    np.add.at(denom, segment_ids, ex)
    return ex / denom[segment_ids]


def segment_softmax_backward_numpy(alpha, grad_out, segment_ids, num_segments):
    weighted = alpha * grad_out
    dot = np.zeros(num_segments)
    np.add.at(dot, segment_ids, weighted)
    return weighted - alpha * dot[segment_ids]


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _segment_sum_2d(values, segment_ids, num_segments):
        n, d = values.shape
        out = np.zeros((num_segments, d))
        for e in range(n):
            s = segment_ids[e]
            for c in range(d):
                out[s, c] += values[e, c]
        return out

    @njit(cache=True)
    def _segment_sum_1d(values, segment_ids, num_segments):
        out = np.zeros(num_segments)
        for e in range(values.shape[0]):
            out[segment_ids[e]] += values[e]
        return out

    @njit(cache=True)
    def _segment_softmax(scores, segment_ids, num_segments):
        n = scores.shape[0]
        seg_max = np.full(num_segments, -np.inf)
        for e in range(n):
            s = segment_ids[e]
            if scores[e] > seg_max[s]:
                seg_max[s] = scores[e]
        ex = np.empty(n)
        denom = np.zeros(num_segments)
        for e in range(n):
            s = segment_ids[e]
            ex[e] = np.exp(scores[e] - seg_max[s])
            denom[s] += ex[e]
        for e in range(n):
            ex[e] = ex[e] / denom[segment_ids[e]]
        return ex

    @njit(cache=True)
    def _segment_softmax_backward(alpha, grad_out, segment_ids, num_segments):
        n = alpha.shape[0]
        weighted = np.empty(n)
        dot = np.zeros(num_segments)
        for e in range(n):
            weighted[e] = alpha[e] * grad_out[e]
            dot[segment_ids[e]] += weighted[e]
        out = np.empty(n)
        for e in range(n):
            out[e] = weighted[e] - alpha[e] * dot[segment_ids[e]]
        return out

    def segment_sum_numba(values, segment_ids, num_segments):
        values = np.ascontiguousarray(values, dtype=np.float64)
        segment_ids = np.ascontiguousarray(segment_ids, dtype=np.int64)
        if values.ndim == 1:
            return _segment_sum_1d(values, segment_ids, num_segments)
        if values.ndim == 2:
            return _segment_sum_2d(values, segment_ids, num_segments)
        return segment_sum_numpy(values, segment_ids, num_segments)

    def segment_softmax_numba(scores, segment_ids, num_segments):
        return _segment_softmax(
            np.ascontiguousarray(scores, dtype=np.float64),
            np.ascontiguousarray(segment_ids, dtype=np.int64),
            num_segments,
        )

    def segment_softmax_backward_numba(alpha, grad_out, segment_ids, num_segments):
        return _segment_softmax_backward(
            np.ascontiguousarray(alpha, dtype=np.float64),
            np.ascontiguousarray(grad_out, dtype=np.float64),
            np.ascontiguousarray(segment_ids, dtype=np.int64),
            num_segments,
        )


def backend():
    return "numba" if USE_NUMBA else "numpy"


if USE_NUMBA:
    segment_sum = segment_sum_numba
    segment_softmax = segment_softmax_numba
    segment_softmax_backward = segment_softmax_backward_numba
else:
    segment_sum = segment_sum_numpy
    segment_softmax = segment_softmax_numpy
    segment_softmax_backward = segment_softmax_backward_numpy
