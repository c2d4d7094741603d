import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sighedge.errors import CapacityError, InputError
from sighedge.tensor_words import (FreeTensor, concat_letter, embed_lag, index_word,
                                   level_offset, pair, poly_shuffle_lift, restrict_letters,
                                   shuffle, shuffle_pairing, tensor_product, tensor_size,
                                   word_index)


def W(*letters, dim=4, order=None, c=1.0):
    return FreeTensor.word(letters, dim, order, c)


def random_tensor(rng, dim, order, scale=1.0):
    return FreeTensor(dim, order, scale * rng.standard_normal(tensor_size(dim, order)))


# word indexing -------------------------------------------------------------


def test_word_index_examples():
    assert word_index((), 4) == 0
    assert word_index((1,), 4) == 0
    assert word_index((4,), 4) == 3
    assert word_index((2, 1), 2) == 2


def test_word_index_enumeration_order():
    listed = [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert [word_index(w, 2) for w in listed] == [0, 1, 2, 3]


@pytest.mark.parametrize("dim", [1, 2, 3, 4])
def test_word_index_is_bijective_per_level(dim):
    for k in range(6):
        seen = sorted(word_index(w, dim) for w in itertools.product(range(1, dim + 1), repeat=k))
        assert seen == list(range(dim**k))
        for w in itertools.product(range(1, dim + 1), repeat=k):
            assert index_word(k, word_index(w, dim), dim) == w


def test_word_index_rejects_bad_letters():
    with pytest.raises(InputError):
        word_index((0,), 4)
    with pytest.raises(InputError):
        word_index((5,), 4)


def test_sizes():
    assert tensor_size(4, 5) == (4**6 - 1) // 3 == 1365
    assert level_offset(2, 3) == 1 + 2 + 4


# shuffle -------------------------------------------------------------------


def test_shuffle_small_examples():
    out = shuffle(W(1, 2), W(3), 3)
    assert out.allclose(FreeTensor.from_words({(1, 2, 3): 1, (1, 3, 2): 1, (3, 1, 2): 1}, 4, 3))
    out = shuffle(W(1, 2), W(3, 4), 4)
    expect = {w: 1 for w in [(1, 2, 3, 4), (1, 3, 2, 4), (1, 3, 4, 2),
                             (3, 1, 2, 4), (3, 1, 4, 2), (3, 4, 1, 2)]}
    assert out.allclose(FreeTensor.from_words(expect, 4, 4))


@pytest.mark.parametrize("w", [(), (2,), (1, 3), (4, 4, 1)])
def test_shuffle_unit(w):
    e = FreeTensor.unit(4, 3)
    assert shuffle(W(*w, order=3), e, 3).allclose(W(*w, order=3))
    assert shuffle(e, W(*w, order=3), 3).allclose(W(*w, order=3))


@pytest.mark.parametrize("dim,order", [(2, 4), (3, 4), (4, 3)])
def test_shuffle_matches_recursive_definition(dim, order):
    rng = np.random.default_rng(dim * 10 + order)
    a = random_tensor(rng, dim, 2)
    b = random_tensor(rng, dim, 2)
    got = oracles.to_dict(shuffle(a, b, order))
    want = oracles.shuffle(oracles.to_dict(a), oracles.to_dict(b), order)
    for w in oracles.words(dim, order):
        assert got[w] == pytest.approx(want.get(w, 0.0), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("m,n", [(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)])
def test_shuffle_term_count_is_binomial(m, n):
    letters = list(range(1, m + n + 1))
    a = FreeTensor.word(letters[:m], m + n)
    b = FreeTensor.word(letters[m:], m + n)
    out = shuffle(a, b, m + n)
    assert np.count_nonzero(out.data) == math.comb(m + n, n)
    assert set(np.unique(out.data)) <= {0.0, 1.0}


tensor_args = st.tuples(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**31 - 1))


@settings(max_examples=40, deadline=None)
@given(tensor_args)
def test_shuffle_commutative(args):
    dim, order, seed = args
    rng = np.random.default_rng(seed)
    a, b = random_tensor(rng, dim, order), random_tensor(rng, dim, order)
    assert shuffle(a, b, order).allclose(shuffle(b, a, order), rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(tensor_args)
def test_shuffle_associative(args):
    dim, order, seed = args
    rng = np.random.default_rng(seed)
    a, b, c = (random_tensor(rng, dim, order) for _ in range(3))
    left = shuffle(shuffle(a, b, order), c, order)
    right = shuffle(a, shuffle(b, c, order), order)
    scale = max(1.0, float(np.abs(left.data).max()))
    assert np.allclose(left.data, right.data, rtol=1e-12, atol=1e-12 * scale)


def test_shuffle_dimension_mismatch():
    with pytest.raises(InputError):
        shuffle(FreeTensor.unit(2, 2), FreeTensor.unit(3, 2), 2)


def test_shuffle_pairing_matches_materialised_shuffle():
    rng = np.random.default_rng(3)
    a, b = random_tensor(rng, 4, 2), random_tensor(rng, 4, 3)
    S = random_tensor(rng, 4, 5)
    assert shuffle_pairing(a, b, S) == pytest.approx(pair(shuffle(a, b, 5), S), rel=1e-12)
    with pytest.raises(CapacityError):
        shuffle_pairing(a, b, random_tensor(rng, 4, 4))
    # truncated pairing drops the words above the tensor order
    S4 = random_tensor(rng, 4, 4)
    assert shuffle_pairing(a, b, S4, truncate=True) == pytest.approx(
        pair(shuffle(a, b, 4), S4), rel=1e-12)


# polynomial lift -------------------------------------------------------------


def test_poly_lift_square_of_letter():
    out = poly_shuffle_lift([0, 0, 1], FreeTensor.word((1,), 2), 2)
    assert out.allclose(FreeTensor.from_words({(1, 1): 2.0}, 2, 2))


def test_poly_lift_constant():
    ell = random_tensor(np.random.default_rng(0), 2, 2)
    assert poly_shuffle_lift([1.0], ell, 4).allclose(FreeTensor.unit(2, 4))


def test_poly_lift_vanishing_polynomial_of_unit():
    out = poly_shuffle_lift([1, -2, 1], FreeTensor.unit(2, 2), 2)
    assert np.all(out.data == 0.0)


def test_poly_lift_capacity():
    ell = FreeTensor.word((1, 2), 2)
    with pytest.raises(CapacityError):
        poly_shuffle_lift([0, 0, 1], ell, 3)
    out = poly_shuffle_lift([0, 0, 1], ell, 3, allow_truncation=True)
    assert np.all(out.data == 0.0)


def test_poly_lift_matches_oracle_powers():
    rng = np.random.default_rng(5)
    ell = random_tensor(rng, 2, 1)
    coeffs = [0.3, -1.0, 0.5, 2.0]
    got = oracles.to_dict(poly_shuffle_lift(coeffs, ell, 3))
    e = oracles.to_dict(ell)
    want = {(): coeffs[0]}
    power = {(): 1.0}
    for k in range(1, 4):
        power = oracles.shuffle(power, e, 3)
        for w, c in power.items():
            want[w] = want.get(w, 0.0) + coeffs[k] * c
    for w in oracles.words(2, 3):
        assert got[w] == pytest.approx(want.get(w, 0.0), rel=1e-12, abs=1e-12)


# concatenation, pairing, embedding ---------------------------------------------


def test_concat_letter_examples():
    assert concat_letter(FreeTensor.unit(4, 0), 4).allclose(W(4))
    ell = FreeTensor.from_words({(1, 2): 2.0, (2,): 1.0}, 4, 2)
    expect = FreeTensor.from_words({(1, 2, 4): 2.0, (2, 4): 1.0}, 4, 3)
    assert concat_letter(ell, 4).allclose(expect)


def test_concat_letter_rejects_bad_letter():
    with pytest.raises(InputError):
        concat_letter(FreeTensor.unit(2, 1), 3)


def test_pair_examples():
    S = oracles.signature(np.random.default_rng(1).standard_normal((5, 2)), 3)
    sig = FreeTensor.from_words(S, 2, 3)
    assert pair(FreeTensor.unit(2, 0), sig) == 1.0
    ell = FreeTensor.from_words({(): 2.0, (2,): 1.0, (1, 1, 1): 1.0}, 2, 3)
    a = FreeTensor.from_words({(): -1.0, (1, 1, 1): 3.0}, 2, 3)
    assert pair(ell, a) == 1.0
    ell = FreeTensor.from_words({(1, 2): 1.0, (2, 1): 1.0}, 2, 2)
    a = FreeTensor.from_words({(1, 2): 1.0, (2, 1): -1.0}, 2, 2)
    assert pair(ell, a) == 0.0


def test_pair_capacity():
    with pytest.raises(CapacityError):
        pair(FreeTensor.word((1, 1, 1), 2), FreeTensor.unit(2, 2))
    # zero mass above the tensor order is fine
    assert pair(FreeTensor.word((1,), 2, 3), FreeTensor.unit(2, 2)) == 0.0


def test_embed_lag_examples():
    assert embed_lag(FreeTensor.unit(2, 0)).allclose(FreeTensor.unit(4, 0))
    assert embed_lag(FreeTensor.word((1, 2), 2)).allclose(W(1, 2))


def test_restrict_letters_inverts_embedding():
    ell = random_tensor(np.random.default_rng(2), 2, 3)
    assert restrict_letters(embed_lag(ell), (1, 2)).allclose(ell)


def test_tensor_product_matches_oracle():
    rng = np.random.default_rng(4)
    a, b = random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)
    got = oracles.to_dict(tensor_product(a, b, 3))
    want = oracles.product(oracles.to_dict(a), oracles.to_dict(b), 3)
    for w in oracles.words(3, 3):
        assert got[w] == pytest.approx(want.get(w, 0.0), rel=1e-12, abs=1e-12)


def test_json_round_trip():
    t = random_tensor(np.random.default_rng(6), 4, 3)
    d = t.to_dict()
    assert d["dimension"] == 4 and d["order"] == 3
    assert [len(lv) for lv in d["levels"]] == [1, 4, 16, 64]
    assert FreeTensor.from_dict(d).allclose(t, rtol=0, atol=0)


def test_linear_structure():
    rng = np.random.default_rng(7)
    a, b = random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)
    assert np.allclose((2.0 * a + b).data, 2.0 * a.data + b.data)
    assert (a - a).degree() < 0 or np.all((a - a).data == 0)
