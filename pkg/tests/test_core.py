import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cos_dist_loop
from slic.core import (
    DomainError,
    UsageError,
    cosine_distance,
    l2_normalize,
    pairwise_cosine_distances,
    rng_stream,
)


def test_cosine_distance_examples():
    assert cosine_distance([2.0, 5.0], [2.0, 5.0]) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    assert cosine_distance([1, 0], [1, 1]) == pytest.approx(1 - 1 / np.sqrt(2), abs=1e-12)
    assert cosine_distance([1, 0], [-3, 0]) == pytest.approx(2.0)


def test_cosine_distance_zero_norm():
    with pytest.raises(DomainError):
        cosine_distance([0, 0], [1, 0])
    with pytest.raises(UsageError):
        cosine_distance([1, 0], [1, 0, 0])


def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(DomainError):
        l2_normalize([0, 0])


def test_pairwise_examples():
    np.testing.assert_allclose(pairwise_cosine_distances([[1, 0]], [[1, 0]]), [[0.0]])
    a = np.eye(2)
    np.testing.assert_allclose(pairwise_cosine_distances(a, a), [[0, 1], [1, 0]], atol=1e-15)


def test_pairwise_matches_scalar_loop():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((3, 5))
    d = pairwise_cosine_distances(a, b, block=2)
    for i in range(7):
        for j in range(3):
            assert abs(d[i, j] - cos_dist_loop(a[i], b[j])) <= 1e-12


def test_pairwise_errors_name_row():
    with pytest.raises(UsageError):
        pairwise_cosine_distances(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(DomainError, match="row 1"):
        pairwise_cosine_distances([[1, 0], [0, 0]], [[1, 0]])


vec = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_symmetry_scale_and_range(u, v, c1, c2):
    d = cosine_distance(u, v)
    assert 0.0 <= d <= 2.0
    assert d == cosine_distance(v, u)
    assert cosine_distance(c1 * u, c2 * v) == pytest.approx(d, abs=1e-12)


def test_rng_streams_reproducible_and_independent():
    a = rng_stream(7, "sampling").random(10**6)
    b = rng_stream(7, "sampling").random(10**6)
    np.testing.assert_array_equal(a, b)
    c = rng_stream(7, "augment").random(10**6)
    assert not np.array_equal(a[:100], c[:100])
    assert not np.array_equal(a[:100], rng_stream(8, "sampling").random(100))
    # named and numeric ids address the same stream
    np.testing.assert_array_equal(rng_stream(7, 2).random(5), a[:5])
