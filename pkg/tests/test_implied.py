import math

import numpy as np
import pytest

from sighedge.errors import DataQualityError, InputError
from sighedge.implied import (ImpliedExpectedSignature, Quote, QuoteSet, extract_discount,
                              implied_expected_signature, predict_prices, r_squared)
from sighedge.market import ExpectedSignature, ModelSpec, expected_signature_mc, sample_paths
from sighedge.payoffs import PayoffSpec, SignatureRegression, forward_functional
from sighedge.tensor_words import FreeTensor, pair, tensor_size

ORDER = 3


@pytest.fixture(scope="module")
def setup():
    ens = sample_paths(ModelSpec.heston(), 1.0, 50, 2000, seed=21)
    es0 = expected_signature_mc(sample_paths(ModelSpec.heston(), 1.0, 50, 2000, seed=22),
                                ORDER, discount=0.02)
    reg = SignatureRegression(ens, ORDER)
    specs = ([PayoffSpec("european_call", {"K": k}) for k in (0.8, 0.9, 1.0, 1.1, 1.2)]
             + [PayoffSpec("european_put", {"K": k}) for k in (0.85, 0.95, 1.05)]
             + [PayoffSpec("asian_call", {"K": k}) for k in (0.9, 1.0, 1.1)]
             + [PayoffSpec("lookback_call_float")])
    return ens, es0, reg, specs


def exact_quotes(specs, reg, es0, split="train"):
    rows = [reg.fit(s).f for s in specs]
    return QuoteSet(tuple(Quote(s, pair(f, es0.tensor), str(i), split)
                          for i, (s, f) in enumerate(zip(specs, rows)))), \
        np.array([f.data for f in rows])


def test_quote_validation():
    spec = PayoffSpec("forward", {"K": 1.0})
    with pytest.raises(InputError):
        QuoteSet((Quote(spec, float("nan")),))
    with pytest.raises(InputError):
        QuoteSet((Quote(spec, 1.0, split="validate"),))
    with pytest.raises(InputError):
        QuoteSet((Quote(spec, 1.0),), T=0.0)
    qs = QuoteSet(tuple(Quote(spec, float(i)) for i in range(10))).with_random_split(4, seed=1)
    assert len(qs.train) == 4 and len(qs.test) == 6


def test_round_trip_predictions(setup):
    ens, es0, reg, specs = setup
    quotes, L = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg)
    assert isinstance(ies, ImpliedExpectedSignature) and ies.discounted
    # portfolios of training payoffs lie in the span of the quoted functionals
    W = np.random.default_rng(0).standard_normal((6, len(specs)))
    test = QuoteSet(tuple(Quote(specs[0], float(p), split="test") for p in W @ quotes.prices))
    pred, r2, _ = predict_prices(ies, test, functionals=W @ L)
    assert np.allclose(pred, test.prices, rtol=0, atol=1e-8)
    with pytest.raises(InputError):
        predict_prices(ies, quotes, functionals=L[:3])


def test_span_consistency(setup):
    ens, es0, reg, specs = setup
    quotes, _ = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg)
    assert ies.diagnostics["train_max_abs_residual"] < 1e-10
    loose = implied_expected_signature(quotes, None, ORDER, reg=1e-3, regression=reg)
    assert loose.diagnostics["train_max_abs_residual"] > ies.diagnostics["train_max_abs_residual"]


def test_time_words_are_constrained(setup):
    ens, es0, reg, specs = setup
    quotes, _ = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg)
    Z = ies.discount_factor
    for k in range(1, ORDER + 1):
        assert ies.tensor.coefficient((1,) * k) == pytest.approx(Z / math.factorial(k), rel=1e-12)
    free = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg,
                                      time_constraints=False)
    assert not free.diagnostics["time_constraints"]


def test_single_quote_is_reproduced():
    f = forward_functional(1.0, ORDER)
    q = QuoteSet((Quote(PayoffSpec("forward", {"K": 1.0}), 0.013),))
    ies = implied_expected_signature(q, None, ORDER, reg=0.0, functionals=f.data[None])
    assert pair(f, ies.tensor) == pytest.approx(0.013, rel=1e-12)


def test_identical_payoffs_warn(setup):
    ens, es0, reg, _ = setup
    spec = PayoffSpec("european_call", {"K": 1.0})
    quotes, _ = exact_quotes([spec, spec, spec], reg, es0)
    with pytest.warns(RuntimeWarning, match="rank"):
        ies = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg)
    assert ies.diagnostics["train_max_abs_residual"] < 1e-10


def test_test_equals_train(setup):
    ens, es0, reg, specs = setup
    quotes, _ = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, reg=0.0, regression=reg)
    _, r2, report = predict_prices(ies, quotes, regression=reg)
    assert r2 == pytest.approx(1.0, abs=1e-10) and report["r2_defined"]


def test_constant_quotes_flag_undefined_r2():
    f = forward_functional(1.0, 1)
    q = QuoteSet(tuple(Quote(PayoffSpec("forward", {"K": 1.0}), 0.5) for _ in range(3)))
    es = ExpectedSignature(FreeTensor.unit(4, 1), 1, discounted=True)
    _, r2, report = predict_prices(es, q, functionals=np.tile(f.data, (3, 1)))
    assert math.isnan(r2) and not report["r2_defined"]
    assert math.isnan(r_squared([1.0, 1.0], [0.0, 2.0]))


def test_prediction_is_linear(setup):
    ens, es0, reg, specs = setup
    quotes, L = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, reg=1e-8, regression=reg)
    w = np.array([0.5, -2.0, 1.5])
    pred, _, _ = predict_prices(ies, QuoteSet(quotes.quotes[:3]), functionals=L[:3])
    combo, _, _ = predict_prices(ies, QuoteSet((quotes.quotes[0],)), functionals=(w @ L[:3])[None])
    assert combo[0] == pytest.approx(w @ pred, rel=1e-12, abs=1e-14)


def test_discount_extraction():
    unit = ExpectedSignature(FreeTensor.unit(4, 2), 1, discounted=True)
    assert extract_discount(unit) == {"Z_T": 1.0, "short_rate": 0.0, "T": 1.0}
    ens = sample_paths(ModelSpec.black_scholes(0.2), 2.0, 10, 10, seed=0)
    es = expected_signature_mc(ens, 2, discount=0.035)
    assert extract_discount(es)["short_rate"] == pytest.approx(0.035, rel=1e-12)
    with pytest.raises(DataQualityError):
        extract_discount(ExpectedSignature(-1.0 * FreeTensor.unit(4, 2), 1))
    with pytest.raises(InputError):
        extract_discount(unit, T=0.0)


def test_implied_validation(setup):
    ens, es0, reg, specs = setup
    quotes, _ = exact_quotes(specs[:2], reg, es0)
    with pytest.raises(InputError):
        implied_expected_signature(QuoteSet(()), ens, ORDER)
    with pytest.raises(InputError):
        implied_expected_signature(quotes, ens, ORDER, reg=-1.0)
    with pytest.raises(InputError):
        implied_expected_signature(quotes, None, ORDER)
    with pytest.raises(InputError):
        implied_expected_signature(quotes, None, ORDER, functionals=np.zeros((2, 5)))


def test_implied_json_round_trip(setup):
    ens, es0, reg, specs = setup
    quotes, _ = exact_quotes(specs, reg, es0)
    ies = implied_expected_signature(quotes, None, ORDER, regression=reg)
    back = ExpectedSignature.from_dict(ies.to_dict())
    assert back.tensor.allclose(ies.tensor, rtol=0, atol=0)
    assert back.diagnostics["rank"] == ies.diagnostics["rank"]
    assert tensor_size(4, ORDER) == back.tensor.data.size
