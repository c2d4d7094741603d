"""Reproducible synthetic experiments.

Each runner draws its own ensembles from fixed seeds and returns a result
object holding both summary numbers and the raw arrays needed to audit them.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .hedging import (BacktestReport, HedgeProblem, HedgeSolution, backtest_strategy,
                      delta_hedge, solve_general, solve_mean_variance)
from .implied import Quote, QuoteSet, extract_discount, implied_expected_signature, predict_prices
from .market import ExpectedSignature, ModelSpec, PathEnsemble, expected_signature_mc, sample_paths
from .payoffs import PayoffSpec, SignatureRegression, evaluate_payoffs
from .tensor_words import FreeTensor

STEPS = 252


def square_payoff() -> FreeTensor:
    """``X_T**2`` on paths starting at 1: ``∅ + 2 (2) + 2 (2,2)``."""
    return FreeTensor.from_words({(): 1.0, (2,): 2.0, (2, 2): 2.0}, 4, 2)


def bs_square_delta(times: np.ndarray, prices: np.ndarray, sigma: float, T: float) -> np.ndarray:
    """Closed-form delta of ``X_T**2`` under driftless Black-Scholes."""
    return 2.0 * prices * np.exp(sigma**2 * (T - times))


# ---------------------------------------------------------------------------


@dataclass
class ToyResult:
    es: ExpectedSignature
    problem: HedgeProblem
    solution: HedgeSolution
    test: PathEnsemble
    signature: BacktestReport
    delta: BacktestReport
    sigma: float
    seconds: float

    def summary(self) -> dict:
        t = self.test.times
        x = self.test.normalized()
        mid = len(t) // 2
        exact = bs_square_delta(t[mid], x[:, mid], self.sigma, t[-1])
        rel = np.abs(self.signature.positions[:, mid] / exact - 1.0)
        return {"objective": self.solution.objective_value,
                "unhedged_objective": self.solution.info["unhedged_objective"],
                "mid_delta_rel_err_max": float(rel.max()),
                "mid_delta_rel_err_median": float(np.median(rel)),
                "signature_pnl": self.signature.summary(), "delta_pnl": self.delta.summary(),
                "std_ratio": float(self.signature.terminal.std() / self.delta.terminal.std()),
                "es_paths": self.es.n_paths, "seconds": self.seconds}


def toy_black_scholes(n_es: int = 100_000, n_test: int = 100, order: int = 8, M: int = 3,
                      sigma: float = 0.2, T: float = 1.0, steps: int = STEPS,
                      seed: int = 11, test_seed: int = 999,
                      es: ExpectedSignature | None = None) -> ToyResult:
    """Mean-variance hedge of ``X_T**2`` under Black-Scholes versus the exact delta."""
    start = time.perf_counter()
    model = ModelSpec.black_scholes(sigma)
    if es is None:
        ens = sample_paths(model, T, steps, n_es, seed, discounted=True)
        es = expected_signature_mc(ens, order, letters=(1, 2, 4))
    problem = HedgeProblem(P=(0.0, 0.0, 1.0), f=square_payoff(), M=M)
    sol = solve_mean_variance(problem, es)
    test = sample_paths(model, T, steps, n_test, test_seed, discounted=True)
    sig_bt = backtest_strategy(sol, test, problem)
    x = test.normalized()
    deltas = bs_square_delta(test.times[:-1], x[:, :-1], sigma, T)
    d_bt = delta_hedge(test.times, x, deltas, sol.p0, x[:, -1] ** 2)
    return ToyResult(es, problem, sol, test, sig_bt, d_bt, sigma, time.perf_counter() - start)


# ---------------------------------------------------------------------------

HESTON_HEDGE_PAYOFFS = (
    PayoffSpec("asian_call", {"K": 1.0}),
    PayoffSpec("barrier_up_out_call", {"K": 1.0, "B": 1.3}),
    PayoffSpec("lookback_call_float"),
    PayoffSpec("variance_swap", {"K_var": 0.04}),
)


@dataclass
class HestonHedgeResult:
    rows: list
    seconds: float
    config: dict

    def summary(self) -> dict:
        return {"payoffs": self.rows, "seconds": self.seconds, "config": self.config}


def heston_hedging(payoffs=HESTON_HEDGE_PAYOFFS, n_fit: int = 20_000, n_es: int = 100_000,
                   n_test: int = 10_000, fit_order: int = 4, es_order: int = 8, M: int = 3,
                   letters=(1, 2, 4), seed: int = 21, model: ModelSpec | None = None,
                   risk=None, keep_reports: bool = False) -> HestonHedgeResult:
    """Signature hedges of path-dependent claims on discounted Heston paths.

    Payoffs are projected on signatures over ``letters`` at ``fit_order``,
    priced and hedged with an expected signature at ``es_order``, and the
    hedge is run on independent test paths against the true payoffs.
    """
    start = time.perf_counter()
    model = model or ModelSpec.heston()
    fit = sample_paths(model, 1.0, STEPS, n_fit, seed, discounted=True)
    es_ens = sample_paths(model, 1.0, STEPS, n_es, seed + 1, discounted=True)
    test = sample_paths(model, 1.0, STEPS, n_test, seed + 2, discounted=True)
    reg = SignatureRegression(fit, fit_order, 1e-10, letters)
    es = expected_signature_mc(es_ens, es_order, letters=letters)
    rows = []
    for spec in payoffs:
        sp = reg.fit(spec)
        problem = HedgeProblem(P=risk or (0.0, 0.0, 1.0), f=sp, M=M)
        sol = solve_mean_variance(problem, es) if problem.q == 2 else solve_general(problem, es)
        bt = backtest_strategy(sol, test, problem)
        F = bt.payoff
        unhedged = sol.p0 - F
        s = bt.summary()
        row = {"kind": spec.kind, "params": spec.to_dict()["params"], "fit_r2": sp.diagnostics["r2"],
               "p0": sol.p0, "payoff_mean": float(F.mean()),
               "unhedged_var": float(unhedged.var(ddof=1)), "hedged_var": float(bt.terminal.var(ddof=1)),
               "variance_reduction": float(1.0 - bt.terminal.var(ddof=1) / unhedged.var(ddof=1)),
               "hedged_mean": s["mean"], "hedged_se": s["se_mean"],
               "mean_z": s["mean"] / s["se_mean"] if s["se_mean"] > 0 else float("nan"),
               "p5": s["p5"], "p95": s["p95"], "objective": sol.objective_value}
        if keep_reports:
            row["_report"] = bt
            row["_solution"] = sol
        rows.append(row)
    config = {"n_fit": n_fit, "n_es": n_es, "n_test": n_test, "fit_order": fit_order,
              "es_order": es_order, "M": M, "letters": list(letters), "seed": seed,
              "model": model.to_dict()}
    return HestonHedgeResult(rows, time.perf_counter() - start, config)


# ---------------------------------------------------------------------------


def synthetic_quote_specs(seed: int = 2024, n_each: int = 50) -> tuple[list, dict]:
    """European calls, up-and-out calls and variance swaps on random grids."""
    rng = np.random.default_rng(seed)
    ks = rng.uniform(0.8, 1.2, n_each)
    kb = rng.uniform(0.8, 1.2, n_each)
    bb = rng.uniform(1.05, 1.5, n_each)
    kv = rng.uniform(0.02, 0.06, n_each)
    specs = [PayoffSpec("european_call", {"K": k}) for k in ks]
    specs += [PayoffSpec("barrier_up_out_call", {"K": k, "B": b}) for k, b in zip(kb, bb)]
    specs += [PayoffSpec("variance_swap", {"K_var": k}) for k in kv]
    grids = {"call_K": [0.8, 1.2], "barrier_K": [0.8, 1.2], "barrier_B": [1.05, 1.5],
             "varswap_K": [0.02, 0.06]}
    return specs, grids


def synthetic_quotes(model: ModelSpec, specs, n_paths: int, seed: int, T: float = 1.0,
                     steps: int = STEPS) -> QuoteSet:
    """Discounted Monte Carlo prices of ``specs`` under ``model``."""
    ens = sample_paths(model, T, steps, n_paths, seed, discounted=False)
    Z = math.exp(-model.rate * T)
    quotes = tuple(Quote(s, Z * float(evaluate_payoffs(s, ens.times, ens.prices).mean()), f"q{i:03d}")
                   for i, s in enumerate(specs))
    return QuoteSet(quotes, T)


@dataclass
class ImpliedResult:
    quotes: QuoteSet
    implied: ExpectedSignature
    predicted: np.ndarray
    test_r2: float
    train_r2: float
    discount: dict
    seconds: float
    config: dict

    def summary(self) -> dict:
        return {"test_r2": self.test_r2, "train_r2": self.train_r2, "discount": self.discount,
                "implied_diagnostics": self.implied.diagnostics, "seconds": self.seconds,
                "config": self.config}


def implied_replica(order: int = 5, rate: float = 0.02, n_quote_paths: int = 100_000,
                    n_reg: int = 20_000, n_train: int = 75, reg: float = 1e-10,
                    payoff_ridge: float = 1e-8, seed: int = 31) -> ImpliedResult:
    """Heston quotes, implied expected signature, out-of-sample prediction."""
    start = time.perf_counter()
    model = ModelSpec.heston(rate=rate)
    specs, grids = synthetic_quote_specs(seed)
    quotes = synthetic_quotes(model, specs, n_quote_paths, seed + 1).with_random_split(n_train, seed + 2)
    reg_ens = sample_paths(model, 1.0, STEPS, n_reg, seed + 3, discounted=False)
    regression = SignatureRegression(reg_ens, order, payoff_ridge)
    with warnings.catch_warnings():
        # variance swaps with different strikes share one functional up to ∅
        warnings.simplefilter("ignore", RuntimeWarning)
        ies = implied_expected_signature(quotes.train, None, order, reg=reg, regression=regression)
    pred, r2, _ = predict_prices(ies, quotes.test, regression=regression)
    _, r2_train, _ = predict_prices(ies, quotes.train, regression=regression)
    config = {"order": order, "rate": rate, "n_quote_paths": n_quote_paths, "n_reg": n_reg,
              "n_train": n_train, "reg": reg, "payoff_ridge": payoff_ridge, "seed": seed,
              "grids": grids, "model": model.to_dict()}
    return ImpliedResult(quotes, ies, pred, r2, r2_train, extract_discount(ies, 1.0),
                         time.perf_counter() - start, config)


# ---------------------------------------------------------------------------


@dataclass
class CostResult:
    aware: HedgeSolution
    ignorant: HedgeSolution
    aware_bt: BacktestReport
    ignorant_bt: BacktestReport
    delta_bt: BacktestReport
    alpha: float
    seconds: float

    def summary(self) -> dict:
        q = (0.0, 0.0, 1.0)
        diff = self.aware_bt.terminal**2 - self.ignorant_bt.terminal**2
        return {"alpha": self.alpha,
                "aware_test_objective": self.aware_bt.objective(q),
                "ignorant_test_objective": self.ignorant_bt.objective(q),
                "paired_difference": float(diff.mean()),
                "paired_difference_se": float(diff.std(ddof=1) / math.sqrt(diff.size)),
                "aware_model_objective": self.aware.objective_value,
                "delta_with_costs_objective": self.delta_bt.objective(q),
                "aware_pnl": self.aware_bt.summary(), "ignorant_pnl": self.ignorant_bt.summary(),
                "delta_pnl": self.delta_bt.summary(), "seconds": self.seconds}


def transaction_costs(es: ExpectedSignature, alpha: float = 1e-6, M: int = 1, sigma: float = 0.2,
                      n_test: int = 1000, test_seed: int = 4242, T: float = 1.0,
                      steps: int = STEPS) -> CostResult:
    """Cost-aware versus cost-ignorant speed hedges of ``X_T**2``, both charged costs."""
    start = time.perf_counter()
    f = square_payoff()
    aware_p = HedgeProblem(P=(0.0, 0.0, 1.0), f=f, M=M, mode="fixed_cost", alpha=alpha)
    naive_p = HedgeProblem(P=(0.0, 0.0, 1.0), f=f, M=M, mode="fixed_cost", alpha=0.0)
    aware = solve_mean_variance(aware_p, es)
    naive = solve_mean_variance(naive_p, es)
    test = sample_paths(ModelSpec.black_scholes(sigma), T, steps, n_test, test_seed, discounted=True)
    # both strategies pay the same costs
    a_bt = backtest_strategy(aware, test, aware_p)
    n_bt = backtest_strategy(naive, test, aware_p)
    x = test.normalized()
    deltas = bs_square_delta(test.times[:-1], x[:, :-1], sigma, T)
    d_bt = delta_hedge(test.times, x, deltas, aware.p0, x[:, -1] ** 2, alpha)
    return CostResult(aware, naive, a_bt, n_bt, d_bt, alpha, time.perf_counter() - start)
