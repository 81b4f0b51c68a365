import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from audiorank.exceptions import (
    DegenerateVector,
    DimensionMismatch,
    EmptyInput,
    NonFiniteInput,
    NonPositiveTemperature,
)
from audiorank.linalg import cosine_similarity, pairwise_cosine, stable_softmax

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_cosine_errors():
    with pytest.raises(DimensionMismatch):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(DegenerateVector):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DegenerateVector):
        cosine_similarity([1, 0], [1e-13, 0])


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)).filter(lambda a: np.linalg.norm(a) > 1e-3),
       st.floats(0.01, 100))
def test_cosine_scale(a, lam):
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(a, lam * a) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(a, -lam * a) == pytest.approx(-1.0, abs=1e-12)


def test_pairwise_examples():
    eye = np.eye(2)
    np.testing.assert_array_equal(pairwise_cosine(eye, eye), eye)
    np.testing.assert_allclose(pairwise_cosine([[1, 0]], [[1, 1]]), [[1 / math.sqrt(2)]], atol=1e-12)


def test_pairwise_degenerate_row_reports_index():
    with pytest.raises(DegenerateVector) as info:
        pairwise_cosine([[1.0, 0.0], [0.0, 0.0]], [[1.0, 1.0]])
    assert info.value.index == 1


def test_pairwise_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        pairwise_cosine(np.ones((2, 3)), np.ones((2, 4)))


def test_pairwise_matches_scalar_and_transpose(rng):
    A = rng.standard_normal((7, 5))
    B = rng.standard_normal((4, 5))
    S = pairwise_cosine(A, B)
    for i in range(7):
        for j in range(4):
            assert S[i, j] == pytest.approx(cosine_similarity(A[i], B[j]), abs=1e-12)
    np.testing.assert_allclose(pairwise_cosine(B, A), S.T, atol=1e-12)


def test_softmax_examples():
    np.testing.assert_allclose(stable_softmax([0, 0], 1), [0.5, 0.5])
    # e^-20 terms evaluated with mpmath at 40 digits
    np.testing.assert_allclose(
        stable_softmax([1, 0, 0, 0], 0.05),
        [0.999999993816539, 2.0611536096935e-9, 2.0611536096935e-9, 2.0611536096935e-9],
        rtol=1e-12,
    )
    for c in (-1e3, 0.0, 7.5, 1e3):
        np.testing.assert_allclose(stable_softmax(np.array([5, 5, 5]) + c, 1), [1 / 3] * 3, atol=1e-15)


def test_softmax_errors():
    with pytest.raises(EmptyInput):
        stable_softmax([], 1.0)
    with pytest.raises(NonPositiveTemperature):
        stable_softmax([1.0], 0.0)
    with pytest.raises(NonPositiveTemperature):
        stable_softmax([1.0], -1.0)
    with pytest.raises(NonFiniteInput):
        stable_softmax([1.0, np.nan], 1.0)


def test_softmax_no_overflow():
    p = stable_softmax([1000.0, -1000.0], 0.01)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 1000), elements=finite),
       st.sampled_from([0.01, 0.05, 1.0, 10.0]),
       st.floats(-100, 100))
def test_softmax_properties(s, temperature, shift):
    p = stable_softmax(s, temperature)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(stable_softmax(s + shift, temperature), p, atol=1e-12)
