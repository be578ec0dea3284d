import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcfc import kernels

needs_numba = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not importable")


@st.composite
def segments(draw):
    num_segments = draw(st.integers(1, 12))
    n = draw(st.integers(1, 60))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.integers(0, num_segments, n), num_segments, rng


def _loop_softmax(scores, ids, num_segments):
    out = np.empty_like(scores)
    for s in range(num_segments):
        mask = ids == s
        if mask.any():
            e = np.exp(scores[mask] - scores[mask].max())
            out[mask] = e / e.sum()
    return out


@settings(max_examples=50, deadline=None)
@given(segments())
def test_numpy_softmax_matches_per_segment_loop(case):
    ids, k, rng = case
    scores = rng.normal(scale=5, size=len(ids))
    np.testing.assert_allclose(kernels.segment_softmax_numpy(scores, ids, k), _loop_softmax(scores, ids, k),
                               rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(segments())
def test_numpy_segment_sum_matches_one_hot_product(case):
    ids, k, rng = case
    values = rng.normal(size=(len(ids), 3))
    onehot = np.eye(k)[ids].T
    np.testing.assert_allclose(kernels.segment_sum_numpy(values, ids, k), onehot @ values, atol=1e-12)


@needs_numba
@settings(max_examples=50, deadline=None)
@given(segments())
def test_numba_and_numpy_paths_agree(case):
    ids, k, rng = case
    scores, grad = rng.normal(size=len(ids)), rng.normal(size=len(ids))
    values = rng.normal(size=(len(ids), 4))
    np.testing.assert_array_equal(kernels.segment_sum_numba(values, ids, k), kernels.segment_sum_numpy(values, ids, k))
    np.testing.assert_array_equal(kernels.segment_sum_numba(scores, ids, k), kernels.segment_sum_numpy(scores, ids, k))
    a_nb = kernels.segment_softmax_numba(scores, ids, k)
    a_np = kernels.segment_softmax_numpy(scores, ids, k)
    np.testing.assert_allclose(a_nb, a_np, rtol=1e-14, atol=0)
    np.testing.assert_allclose(kernels.segment_softmax_backward_numba(a_np, grad, ids, k),
                               kernels.segment_softmax_backward_numpy(a_np, grad, ids, k), rtol=1e-13, atol=1e-15)


def test_softmax_backward_matches_jacobian():
    rng = np.random.default_rng(0)
    ids = np.array([0, 0, 1, 1, 1, 2])
    scores, grad = rng.normal(size=6), rng.normal(size=6)
    alpha = kernels.segment_softmax_numpy(scores, ids, 3)
    same = ids[:, None] == ids[None, :]
    jac = same * (np.diag(alpha) - np.outer(alpha, alpha))
    np.testing.assert_allclose(kernels.segment_softmax_backward(alpha, grad, ids, 3), jac.T @ grad, atol=1e-14)


def test_empty_segments_sum_to_zero():
    out = kernels.segment_sum(np.ones((2, 3)), np.array([0, 0]), 3)
    np.testing.assert_array_equal(out, [[2, 2, 2], [0, 0, 0], [0, 0, 0]])


def test_environment_flag_selects_numpy_backend():
    env = dict(os.environ, GCFC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from graphcfc import kernels; print(kernels.backend())"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"
