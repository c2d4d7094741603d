import math

import numpy as np
import pytest

from sighedge.errors import CapacityError, InputError, NumericalError
from sighedge.leadlag import augment, leadlag_signature
from sighedge.market import ModelSpec, PathEnsemble, expected_signature_mc, sample_paths
from sighedge.payoffs import (PayoffSpec, SignaturePayoff, SignatureRegression,
                              asian_forward_functional, evaluate_payoff, evaluate_payoffs,
                              fit_signature_payoff, forward_functional, price_payoff)
from sighedge.signature_core import DiscretePath
from sighedge.tensor_words import FreeTensor, pair, tensor_size


@pytest.fixture(scope="module")
def bs_paths():
    return sample_paths(ModelSpec.black_scholes(0.2), 1.0, 20, 3000, seed=12)


@pytest.fixture(scope="module")
def bs_es():
    ens = sample_paths(ModelSpec.black_scholes(0.2, rate=0.03), 1.0, 20, 50_000, seed=13)
    return expected_signature_mc(ens, 2, letters=(1, 2, 4))


def rand_path(rng, n=12, T=1.0):
    return DiscretePath(np.linspace(0, T, n), np.exp(np.cumsum(0.1 * rng.standard_normal(n))))


def test_spec_validation_and_round_trip():
    with pytest.raises(InputError):
        PayoffSpec("digital", {"K": 1.0})
    with pytest.raises(InputError):
        PayoffSpec("european_call", {})
    with pytest.raises(InputError):
        PayoffSpec("forward", {"K": float("inf")})
    spec = PayoffSpec("barrier_up_out_call", {"K": 1.0, "B": 1.2})
    assert PayoffSpec.from_dict(spec.to_dict()) == spec
    custom = PayoffSpec("custom_signature", {"f": forward_functional(1.0)})
    back = PayoffSpec.from_dict(custom.to_dict())
    assert back["f"].allclose(custom["f"], rtol=0, atol=0)


def test_forward_on_flat_path():
    p = DiscretePath([0.0, 0.5, 1.0], [1.0, 1.0, 1.0])
    assert evaluate_payoff(PayoffSpec("forward", {"K": 0.9}), p) == pytest.approx(0.1, rel=1e-15)


def test_closed_form_payoffs():
    t = np.linspace(0, 1, 5)
    x = np.array([[1.0, 1.2, 0.9, 1.3, 1.1]])
    assert evaluate_payoffs(PayoffSpec("european_call", {"K": 1.0}), t, x)[0] == pytest.approx(0.1)
    assert evaluate_payoffs(PayoffSpec("european_put", {"K": 1.2}), t, x)[0] == pytest.approx(0.1)
    assert evaluate_payoffs(PayoffSpec("asian_call", {"K": 1.0}), t, x)[0] == pytest.approx(0.1)
    assert evaluate_payoffs(PayoffSpec("barrier_up_out_call", {"K": 1.0, "B": 1.3}), t, x)[0] == 0.0
    assert evaluate_payoffs(PayoffSpec("barrier_up_out_call", {"K": 1.0, "B": 1.31}), t, x)[0] == \
        pytest.approx(0.1)
    assert evaluate_payoffs(PayoffSpec("lookback_call_float"), t, x)[0] == pytest.approx(0.2)
    qv = np.sum(np.diff(np.log(x[0])) ** 2)
    assert evaluate_payoffs(PayoffSpec("variance_swap", {"K_var": 0.04}), t, x)[0] == \
        pytest.approx(qv - 0.04, rel=1e-14)
    with pytest.raises(InputError):
        evaluate_payoffs(PayoffSpec("variance_swap", {"K_var": 0.0}), t, -x)


@pytest.mark.parametrize("seed", range(3))
def test_forward_is_a_signature_payoff(seed):
    p = rand_path(np.random.default_rng(seed))
    a = augment(p)
    S = leadlag_signature(a, 2)
    K = 1.05
    assert pair(forward_functional(K), S) == pytest.approx(a.prices[-1] - K, rel=1e-13)
    custom = PayoffSpec("custom_signature", {"f": forward_functional(K)})
    assert evaluate_payoff(custom, DiscretePath(p.times, a.prices)) == pytest.approx(
        a.prices[-1] - K, rel=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_asian_forward_is_a_signature_payoff(seed):
    rng = np.random.default_rng(seed)
    T = 0.8
    p = rand_path(rng, 15, T)
    a = augment(p)
    S = leadlag_signature(a, 2)
    K = 0.95
    x, t = a.prices, a.times
    avg = float(np.sum(0.5 * (x[1:] + x[:-1]) * np.diff(t))) / T
    assert pair(asian_forward_functional(K, T), S) == pytest.approx(avg - K, rel=1e-10, abs=1e-12)


def test_fit_recovers_the_forward(bs_paths):
    # time-only words are constant across paths, so the design has a null space
    sp = fit_signature_payoff(PayoffSpec("forward", {"K": 1.1}), bs_paths, 2)
    assert sp.diagnostics["r2"] == pytest.approx(1.0, abs=1e-10)
    test = sample_paths(ModelSpec.black_scholes(0.2), 1.0, 20, 100, seed=99)
    want = evaluate_payoffs(PayoffSpec("forward", {"K": 1.1}), test.times, test.prices)
    got = evaluate_payoffs(PayoffSpec("custom_signature", {"f": sp.f}), test.times,
                           test.normalized())
    assert np.allclose(got, want, atol=1e-8)


def test_fit_reproduces_a_custom_functional(bs_paths):
    rng = np.random.default_rng(3)
    f0 = FreeTensor(4, 2, rng.standard_normal(tensor_size(4, 2)))
    spec = PayoffSpec("custom_signature", {"f": f0})
    sp = fit_signature_payoff(spec, bs_paths, 2)
    test = sample_paths(ModelSpec.black_scholes(0.2), 1.0, 20, 200, seed=98)
    y = evaluate_payoffs(spec, test.times, test.prices)
    yhat = evaluate_payoffs(PayoffSpec("custom_signature", {"f": sp.f}), test.times, test.prices)
    r2 = 1 - np.sum((y - yhat) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 == pytest.approx(1.0, abs=1e-8)


def test_asian_call_fit_on_heston():
    ens = sample_paths(ModelSpec.heston(), 1.0, 252, 5000, seed=14)
    sp = fit_signature_payoff(PayoffSpec("asian_call", {"K": 1.0}), ens, 5)
    assert sp.diagnostics["r2"] >= 0.99


def test_unregularized_singular_design():
    ens = PathEnsemble(np.linspace(0, 1, 4), [[1.0, 1.1, 1.0, 1.2], [1.0, 0.9, 1.0, 1.1]])
    with pytest.raises(NumericalError, match="ridge"):
        SignatureRegression(ens, 3, ridge=0.0)


def test_signature_payoff_round_trip(bs_paths):
    sp = fit_signature_payoff(PayoffSpec("european_call", {"K": 1.0}), bs_paths, 2)
    back = SignaturePayoff.from_dict(sp.to_dict())
    assert back.f.allclose(sp.f, rtol=0, atol=0) and back.spec == sp.spec


def test_price_of_empty_word(bs_paths):
    es = expected_signature_mc(bs_paths, 2, discount=0.02)
    assert price_payoff(FreeTensor.unit(4, 0), es) == pytest.approx(math.exp(-0.02), rel=1e-15)
    assert price_payoff(FreeTensor.unit(4, 0), es) == pytest.approx(0.98030, abs=2e-4)


def test_martingale_prices(bs_es):
    r = 0.03
    growth = bs_es.pair(FreeTensor.word((2,), 4))
    assert abs(growth - (math.exp(r) - 1)) < 3 * bs_es.pair_se(FreeTensor.word((2,), 4))
    Z = math.exp(-r)
    es_d = type(bs_es)(Z * bs_es.tensor, bs_es.n_paths, Z * bs_es.standard_errors, True,
                       letters=bs_es.letters, rate=r)
    f = forward_functional(1.0)
    assert abs(price_payoff(f, es_d) - Z * (math.exp(r) - 1)) < 3 * es_d.pair_se(f)


def test_pricing_is_linear(bs_es):
    rng = np.random.default_rng(4)
    mask = bs_es.support_mask()
    f = FreeTensor(4, 2, rng.standard_normal(21) * mask)
    g = FreeTensor(4, 2, rng.standard_normal(21) * mask)
    lhs = price_payoff(2.5 * f - 0.5 * g, bs_es)
    rhs = 2.5 * price_payoff(f, bs_es) - 0.5 * price_payoff(g, bs_es)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-14)


def test_pricing_order_mismatch(bs_es):
    with pytest.raises(CapacityError):
        price_payoff(FreeTensor.word((2, 2, 2), 4), bs_es)


def test_fitted_call_prices_decrease_with_strike(bs_paths):
    es = expected_signature_mc(bs_paths, 3)
    reg = SignatureRegression(bs_paths, 3)
    prices = [price_payoff(reg.fit(PayoffSpec("european_call", {"K": k})), es)
              for k in np.linspace(0.8, 1.2, 9)]
    assert all(b <= a + 1e-12 for a, b in zip(prices, prices[1:]))
