import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sighedge.errors import InputError
from sighedge.signature_core import (DiscretePath, batch_signatures, chen_concat, path_signature,
                                     prefix_signatures, prefix_values, segment_signature)
from sighedge.tensor_words import FreeTensor, pair, shuffle, tensor_product, tensor_size


def rand_path(rng, n, m, times=None):
    t = np.cumsum(rng.uniform(0.1, 1.0, n)) if times is None else times
    return DiscretePath(t, rng.standard_normal((n, m)))


def test_discrete_path_validation():
    with pytest.raises(InputError):
        DiscretePath([0.0], [[1.0]])
    with pytest.raises(InputError):
        DiscretePath([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(InputError):
        DiscretePath([0.0, 1.0], [1.0, np.nan])


def test_segment_signature_examples():
    s = segment_signature([1.0, 1.0], 2)
    assert np.array_equal(s.level(1), [1.0, 1.0])
    assert np.array_equal(s.level(2), [0.5] * 4)
    z = segment_signature([0.0, 0.0, 0.0], 4)
    assert z.allclose(FreeTensor.unit(3, 4), rtol=0, atol=0)
    a = 1.7
    assert np.allclose(segment_signature([a], 3).data, [1, a, a**2 / 2, a**3 / 6], rtol=1e-15)


def test_chen_identity_element():
    S = path_signature(rand_path(np.random.default_rng(0), 5, 2), 4)
    assert chen_concat(S, FreeTensor.unit(2, 4)).allclose(S, rtol=1e-15, atol=0)


def test_chen_splitting_a_straight_line():
    h = np.array([0.3, -1.2])
    S = chen_concat(segment_signature(0.4 * h, 5), segment_signature(0.6 * h, 5))
    assert S.allclose(segment_signature(h, 5), rtol=1e-13, atol=1e-15)


def test_chen_halves_of_random_path():
    rng = np.random.default_rng(1)
    p = rand_path(rng, 6, 3)
    first = DiscretePath(p.times[:4], p.values[:4])
    second = DiscretePath(p.times[3:], p.values[3:])
    S = chen_concat(path_signature(first, 4), path_signature(second, 4))
    full = path_signature(p, 4)
    assert np.allclose(S.data, full.data, rtol=1e-12, atol=1e-12)
    assert S.interval == (p.times[0], p.times[-1])


def test_chen_rejects_disjoint_intervals():
    rng = np.random.default_rng(2)
    a = path_signature(DiscretePath([0.0, 1.0], rng.standard_normal((2, 2))), 2)
    b = path_signature(DiscretePath([2.0, 3.0], rng.standard_normal((2, 2))), 2)
    with pytest.raises(InputError):
        chen_concat(a, b)


@pytest.mark.parametrize("dim,order", [(1, 5), (2, 4), (3, 3), (4, 3)])
def test_path_signature_matches_oracle(dim, order):
    rng = np.random.default_rng(dim + 7 * order)
    vals = rng.standard_normal((6, dim))
    got = oracles.to_dict(path_signature(vals, order))
    want = oracles.signature(vals, order)
    for w in oracles.words(dim, order):
        assert got[w] == pytest.approx(want[w], rel=1e-12, abs=1e-13)


def test_path_signature_examples():
    a = -0.8
    S = path_signature(np.array([[0.0], [0.5], [a]]), 2)
    assert S.coefficient((1, 1)) == pytest.approx(a**2 / 2, rel=1e-14)
    p = rand_path(np.random.default_rng(3), 7, 2)
    S = path_signature(p, 3)
    assert S.data[0] == 1.0
    assert np.allclose(S.level(1), p.values[-1] - p.values[0], rtol=1e-14)
    with pytest.raises(InputError):
        path_signature(np.zeros((1, 2)), 2)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_reversed_path_is_the_inverse(order):
    vals = np.random.default_rng(4).standard_normal((5, 2))
    S = path_signature(vals, order)
    R = path_signature(vals[::-1], order)
    assert np.allclose(tensor_product(S, R).data, FreeTensor.unit(2, order).data, atol=1e-12)


def test_prefix_signatures():
    p = rand_path(np.random.default_rng(5), 8, 2)
    pre = prefix_signatures(p, 4)
    assert len(pre) == 8
    assert pre[0].allclose(FreeTensor.unit(2, 4), rtol=0, atol=0)
    assert np.allclose(pre[-1].data, path_signature(p, 4).data, rtol=1e-14, atol=1e-14)
    for k, h in enumerate(p.increments()):
        step = tensor_product(pre[k], segment_signature(h, 4))
        assert np.allclose(pre[k + 1].data, step.data, rtol=1e-12, atol=1e-12)


def test_prefix_values_match_pairings():
    rng = np.random.default_rng(6)
    p = rand_path(rng, 9, 2)
    ells = [FreeTensor(2, 3, rng.standard_normal(15)) for _ in range(2)]
    vals = prefix_values(p.increments()[None], 3, ells)[0]
    pre = prefix_signatures(p, 3)
    for k in range(9):
        for j, ell in enumerate(ells):
            assert vals[k, j] == pytest.approx(pair(ell, pre[k]), rel=1e-12, abs=1e-13)


def test_batch_matches_single():
    rng = np.random.default_rng(7)
    incs = rng.standard_normal((3, 10, 4))
    out = batch_signatures(incs, 3)
    assert out.shape == (3, tensor_size(4, 3))
    for i in range(3):
        assert np.allclose(out[i], path_signature(np.vstack([np.zeros(4), np.cumsum(incs[i], 0)]),
                                                  3).data, rtol=1e-13, atol=1e-14)


def test_repeated_samples_contribute_nothing():
    vals = np.random.default_rng(8).standard_normal((4, 2))
    doubled = np.repeat(vals, 2, axis=0)
    assert np.allclose(path_signature(vals, 4).data, path_signature(doubled, 4).data,
                       rtol=1e-13, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_reparametrization_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((6, 2))
    t1 = np.cumsum(rng.uniform(0.1, 1, 6))
    t2 = scale * np.cumsum(rng.uniform(0.1, 1, 6))
    a = path_signature(DiscretePath(t1, vals), 4)
    b = path_signature(DiscretePath(t2, vals), 4)
    assert np.array_equal(a.data, b.data)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_signatures_are_group_like(seed):
    rng = np.random.default_rng(seed)
    S = path_signature(rng.standard_normal((6, 3)), 4)
    a = FreeTensor(3, 2, rng.standard_normal(13))
    b = FreeTensor(3, 2, rng.standard_normal(13))
    lhs = pair(a, S) * pair(b, S)
    rhs = pair(shuffle(a, b, 4), S)
    assert rhs == pytest.approx(lhs, rel=1e-10, abs=1e-10 * max(1.0, abs(lhs)))


@pytest.mark.parametrize("k", range(6))
def test_time_words_are_exact(k):
    rng = np.random.default_rng(9)
    t = np.sort(rng.uniform(0, 2, 12))
    T = t[-1] - t[0]
    p = DiscretePath(t, np.column_stack([t, rng.standard_normal(12)]))
    S = path_signature(p, 5)
    assert S.coefficient((1,) * k) == pytest.approx(T**k / math.factorial(k), rel=1e-13)
