"""Implied expected signature from derivative quotes.

Each quoted payoff is first projected onto lead-lag signature payoffs by
regression on a path ensemble; the discounted expected signature ``E`` is
then the minimum-norm (ridge) solution of ``<ell_i, E> = p_i``.  Because
time is deterministic, the coordinates on the words ``(1, ..., 1)`` are
known up to the discount factor, ``E[1^k] = Z T^k / k!`` with ``Z = E[∅]``;
by default these relations are imposed exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataQualityError, InputError
from .market import ExpectedSignature, PathEnsemble
from .payoffs import PayoffSpec, SignatureRegression, _factorial_scale
from .tensor_words import FreeTensor, level_offset, remap_letters, restrict_letters, tensor_size

SPLITS = ("train", "test")


@dataclass(frozen=True)
class Quote:
    payoff: PayoffSpec
    price: float
    payoff_id: str = ""
    split: str = "train"


@dataclass(frozen=True)
class QuoteSet:
    """Quoted prices of payoffs sharing one maturity."""

    quotes: tuple
    T: float = 1.0

    def __post_init__(self):
        quotes = tuple(self.quotes)
        for i, q in enumerate(quotes):
            if not isinstance(q, Quote):
                raise InputError("QuoteSet entries must be Quote records")
            if not math.isfinite(q.price):
                raise InputError(f"quote {q.payoff_id or i} has a non-finite price")
            if q.split not in SPLITS:
                raise InputError(f"unknown split label {q.split!r}")
        if not self.T > 0:
            raise InputError("maturity must be positive")
        object.__setattr__(self, "quotes", quotes)

    def __len__(self) -> int:
        return len(self.quotes)

    @property
    def prices(self) -> np.ndarray:
        return np.array([q.price for q in self.quotes])

    @property
    def payoffs(self) -> list[PayoffSpec]:
        return [q.payoff for q in self.quotes]

    def part(self, split: str) -> "QuoteSet":
        return QuoteSet(tuple(q for q in self.quotes if q.split == split), self.T)

    @property
    def train(self) -> "QuoteSet":
        return self.part("train")

    @property
    def test(self) -> "QuoteSet":
        return self.part("test")

    def with_random_split(self, n_train: int, seed: int) -> "QuoteSet":
        """Relabel a uniformly random subset of ``n_train`` quotes as training."""
        if not 0 <= n_train <= len(self):
            raise InputError("n_train out of range")
        rng = np.random.default_rng(seed)
        chosen = set(rng.permutation(len(self))[:n_train].tolist())
        return QuoteSet(tuple(Quote(q.payoff, q.price, q.payoff_id,
                                    "train" if i in chosen else "test")
                              for i, q in enumerate(self.quotes)), self.T)


@dataclass(frozen=True)
class ImpliedExpectedSignature(ExpectedSignature):
    """Discounted expected signature recovered from quotes."""


def _time_word_index(dim: int, order: int) -> np.ndarray:
    return np.array([level_offset(dim, k) for k in range(1, order + 1)], dtype=np.int64)


def _functional_matrix(payoffs: Sequence[PayoffSpec], regression: SignatureRegression) -> np.ndarray:
    """Rows are the fitted functionals over the regression letters."""
    ens = regression.ensemble
    from .payoffs import evaluate_payoffs
    rows = []
    for spec in payoffs:
        coef, _ = regression.coefficients(evaluate_payoffs(spec, ens.times, ens.prices))
        rows.append(coef)
    return np.array(rows).reshape(len(payoffs), -1)


def implied_expected_signature(quotes: QuoteSet, ensemble: PathEnsemble | None, order: int,
                               reg: float = 1e-10, letters: Sequence[int] = (1, 2, 3, 4),
                               time_constraints: bool = True, payoff_ridge: float = 1e-8,
                               regression: SignatureRegression | None = None,
                               functionals: np.ndarray | None = None) -> ImpliedExpectedSignature:
    """Solve ``<ell_i, E> = p_i`` for the discounted expected signature.

    Parameters
    ----------
    quotes : QuoteSet
        Training quotes (all entries are used, whatever their split label).
    ensemble : PathEnsemble
        Paths for the payoff regressions (ignored if ``regression`` is given).
    order : int
        Signature order.
    reg : float
        Ridge strength relative to the largest squared singular value of the
        scaled system.  ``0`` gives the minimum-norm least-squares solution.
    letters : sequence of int
        Lead-lag letters used by the payoff regressions.
    time_constraints : bool
        Impose ``E[1^k] = E[∅] T^k / k!`` exactly.
    functionals : ndarray, optional
        Precomputed functionals, one row per quote, over ``letters`` at
        ``order`` (skips the regression step).
    """
    if len(quotes) < 1:
        raise InputError("at least one quote is needed")
    if reg < 0:
        raise InputError("reg must be non-negative")
    letters = tuple(sorted(int(a) for a in letters))
    dl = len(letters)
    if functionals is None:
        if regression is None:
            if ensemble is None:
                raise InputError("an ensemble or a fitted regression is required")
            regression = SignatureRegression(ensemble, order, payoff_ridge, letters)
        if regression.order != order or regression.letters != letters:
            raise InputError("regression order/letters do not match the request")
        L = _functional_matrix(quotes.payoffs, regression)
    else:
        L = np.asarray(functionals, dtype=float)
    D = tensor_size(dl, order)
    if L.shape != (len(quotes), D):
        raise InputError("functional matrix has the wrong shape")
    p = quotes.prices
    T = quotes.T
    scale = _factorial_scale(dl, order)
    # unknowns z_w = k! E_w; then <ell, E> = sum_w (ell_w / k!) z_w
    A = L / scale
    use_time = time_constraints and 1 in letters
    if use_time:
        tw = _time_word_index(dl, order)  # letter 1 sorts first
        powers = T ** np.arange(1, order + 1)
        # z_{1^k} = T^k z_∅; fold those columns into the ∅ column
        A = A.copy()
        A[:, 0] += A[:, tw] @ powers
        free = np.ones(D, dtype=bool)
        free[tw] = False
        A_free = A[:, free]
    else:
        free = np.ones(D, dtype=bool)
        A_free = A
    U, s, Vt = np.linalg.svd(A_free, full_matrices=False)
    top = s[0] if s.size else 0.0
    rank = int(np.sum(s > 1e-12 * top)) if top > 0 else 0
    lam = reg * top**2
    with np.errstate(divide="ignore", invalid="ignore"):
        filt = np.where(s > 1e-14 * top, s / (s**2 + lam), 0.0)
    u = Vt.T @ (filt * (U.T @ p))
    z = np.zeros(D)
    z[free] = u
    if use_time:
        z[tw] = powers * z[0]
    E = z / scale
    fitted = L @ E
    resid = p - fitted
    if rank < min(len(quotes), A_free.shape[1]):
        warnings.warn(f"quote system is rank deficient (rank {rank} for {len(quotes)} quotes); "
                      "returning the minimum-norm solution", RuntimeWarning, stacklevel=2)
    tensor = remap_letters(FreeTensor(dl, order, E), letters, 4)
    Z = float(E[0])
    diag = {"train_rmse": float(np.sqrt(np.mean(resid**2))),
            "train_max_abs_residual": float(np.abs(resid).max()),
            "reg": float(reg), "rank": rank, "n_quotes": len(quotes),
            "time_constraints": bool(use_time), "discount_in_range": bool(0 < Z <= 1)}
    return ImpliedExpectedSignature(tensor=tensor, n_paths=0 if ensemble is None else ensemble.n_paths,
                                    standard_errors=None, discounted=True, T=T, seed=None,
                                    rate=-math.log(Z) / T if Z > 0 else float("nan"),
                                    letters=letters, diagnostics=diag)


def r_squared(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Coefficient of determination; NaN when the actual values are constant."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    sst = float(np.sum((actual - actual.mean()) ** 2))
    if sst == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((actual - predicted) ** 2)) / sst


def predict_prices(ies: ExpectedSignature, quotes: QuoteSet, ensemble: PathEnsemble | None = None,
                   payoff_ridge: float = 1e-8, regression: SignatureRegression | None = None,
                   functionals: np.ndarray | None = None) -> tuple[np.ndarray, float, dict]:
    """Price quoted payoffs with an (implied) expected signature.

    Returns:
        (predicted prices, R² against the quoted prices, report). R² is NaN
        and ``report["r2_defined"]`` is False when the quotes are constant.
    """
    letters = tuple(ies.letters)
    order = ies.order
    if functionals is None:
        if regression is None:
            if ensemble is None:
                raise InputError("an ensemble or a fitted regression is required")
            regression = SignatureRegression(ensemble, order, payoff_ridge, letters)
        L = _functional_matrix(quotes.payoffs, regression)
    else:
        L = np.asarray(functionals, dtype=float)
        if L.ndim != 2 or L.shape[0] != len(quotes):
            raise InputError("need one functional row per quote")
    E = restrict_letters(ies.tensor, letters).data
    pred = L @ E
    r2 = r_squared(quotes.prices, pred)
    report = {"r2": r2, "r2_defined": not math.isnan(r2), "n_quotes": len(quotes),
              "rmse": float(np.sqrt(np.mean((quotes.prices - pred) ** 2))) if len(quotes) else 0.0}
    return pred, r2, report


def extract_discount(ies: ExpectedSignature, T: float | None = None) -> dict:
    """Discount factor ``Z_T = <∅, E>`` and the implied continuously compounded rate."""
    T = ies.T if T is None else T
    if not T > 0:
        raise InputError("maturity must be positive")
    Z = float(ies.tensor.data[0])
    if not Z > 0:
        raise DataQualityError(f"implied discount factor {Z} is not positive")
    return {"Z_T": Z, "short_rate": -math.log(Z) / T, "T": float(T)}
