"""Payoffs on discrete paths and their projection onto signature payoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, NumericalError
from .leadlag import leadlag_increments
from .market import ExpectedSignature, PathEnsemble
from .signature_core import DiscretePath, batch_signatures
from .tensor_words import FreeTensor, level_offset, remap_letters, tensor_size

KINDS = ("forward", "european_call", "european_put", "asian_call",
         "barrier_up_out_call", "lookback_call_float", "variance_swap",
         "custom_signature")

_REQUIRED = {
    "forward": ("K",),
    "european_call": ("K",),
    "european_put": ("K",),
    "asian_call": ("K",),
    "barrier_up_out_call": ("K", "B"),
    "lookback_call_float": (),
    "variance_swap": ("K_var",),
    "custom_signature": ("f",),
}


@dataclass(frozen=True)
class PayoffSpec:
    """A payoff kind with its parameters.

    For ``custom_signature`` the parameter ``f`` is a FreeTensor over the
    lead-lag alphabet; the others are floats.
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown payoff kind {self.kind!r}")
        params = dict(self.params)
        for name in _REQUIRED[self.kind]:
            if name not in params:
                raise InputError(f"{self.kind} needs parameter {name!r}")
        for name, val in params.items():
            if name == "f":
                if not isinstance(val, FreeTensor):
                    val = FreeTensor.from_dict(val)
                if val.dim != 4:
                    raise InputError("custom signature payoffs live on 4 letters")
                params[name] = val
            else:
                val = float(val)
                if not math.isfinite(val):
                    raise InputError(f"parameter {name} must be finite")
                params[name] = val
        object.__setattr__(self, "params", params)

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        params = {k: (v.to_dict() if isinstance(v, FreeTensor) else v)
                  for k, v in self.params.items()}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "PayoffSpec":
        if "kind" not in obj:
            raise InputError("payoff record needs a 'kind'")
        return cls(obj["kind"], dict(obj.get("params", {})))


def evaluate_payoffs(spec: PayoffSpec, times: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Vectorised payoff evaluation over paths stored row-wise in ``prices``."""
    x = np.atleast_2d(np.asarray(prices, dtype=float))
    p = spec.params
    kind = spec.kind
    xT = x[:, -1]
    if kind == "forward":
        return xT - p["K"]
    if kind == "european_call":
        return np.maximum(xT - p["K"], 0.0)
    if kind == "european_put":
        return np.maximum(p["K"] - xT, 0.0)
    if kind == "asian_call":
        return np.maximum(x.mean(axis=1) - p["K"], 0.0)
    if kind == "barrier_up_out_call":
        alive = x.max(axis=1) < p["B"]
        return np.where(alive, np.maximum(xT - p["K"], 0.0), 0.0)
    if kind == "lookback_call_float":
        return xT - x.min(axis=1)
    if kind == "variance_swap":
        if np.any(x <= 0):
            raise InputError("variance swaps need strictly positive prices")
        return np.sum(np.diff(np.log(x), axis=1) ** 2, axis=1) - p["K_var"]
    # custom signature payoff
    f = p["f"]
    order = max(f.degree(), 1)
    sig = batch_signatures(leadlag_increments(times, x), order)
    return sig @ f.with_order(order).data


def evaluate_payoff(spec: PayoffSpec, path: DiscretePath) -> float:
    """Payoff of one price path."""
    if path.dim != 1:
        raise InputError("payoffs are defined on one-dimensional price paths")
    return float(evaluate_payoffs(spec, path.times, path.values[:, 0][None])[0])


@dataclass(frozen=True)
class SignaturePayoff:
    """A linear functional ``f`` on lead-lag signatures plus fit diagnostics."""

    f: FreeTensor
    diagnostics: dict = field(default_factory=dict)
    spec: PayoffSpec | None = None

    def __post_init__(self):
        if self.f.dim != 4:
            raise InputError("signature payoffs live on the 4-letter lead-lag alphabet")

    @property
    def order(self) -> int:
        return self.f.order

    def to_dict(self) -> dict:
        out = self.f.to_dict()
        out["diagnostics"] = self.diagnostics
        out["spec"] = None if self.spec is None else self.spec.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SignaturePayoff":
        spec = obj.get("spec")
        return cls(FreeTensor.from_dict(obj), dict(obj.get("diagnostics", {})),
                   None if spec is None else PayoffSpec.from_dict(spec))


def forward_functional(K: float, order: int = 1) -> FreeTensor:
    """``(1 - K) ∅ + (2)``: pays ``X_T - K`` on paths starting at 1."""
    return FreeTensor.from_words({(): 1.0 - K, (2,): 1.0}, 4, order)


def asian_forward_functional(K: float, T: float, order: int = 2) -> FreeTensor:
    """``(1 - K) ∅ + (2, 1) / T``: pays the time-average of X minus K."""
    return FreeTensor.from_words({(): 1.0 - K, (2, 1): 1.0 / T}, 4, order)


def _factorial_scale(dim: int, order: int) -> np.ndarray:
    scale = np.empty(tensor_size(dim, order))
    for k in range(order + 1):
        scale[level_offset(dim, k):level_offset(dim, k + 1)] = math.factorial(k)
    return scale


def ensemble_features(ensemble: PathEnsemble, order: int, letters: Sequence[int] = (1, 2, 3, 4),
                      chunk: int = 2048) -> np.ndarray:
    """Lead-lag signatures (restricted to ``letters``) of every normalized path."""
    prices = ensemble.normalized()
    parts = []
    for s in range(0, ensemble.n_paths, chunk):
        incs = leadlag_increments(ensemble.times, prices[s:s + chunk], letters)
        parts.append(batch_signatures(incs, order))
    return np.vstack(parts)


class SignatureRegression:
    """Ridge regression of payoff values on lead-lag signature coordinates.

    The design is factorised once, so many payoffs can be fitted on the same
    ensemble cheaply.  Level-k coordinates are multiplied by k! before the
    fit, the intercept (empty word) is left unpenalised by centering, and
    the ridge strength is relative to the largest eigenvalue of the centred
    normal matrix.

    Parameters
    ----------
    ensemble : PathEnsemble
    order : int
    ridge : float
    letters : sequence of int
        Lead-lag letters whose words are used as features.
    features : ndarray, optional
        Precomputed output of :func:`ensemble_features`.
    """

    def __init__(self, ensemble: PathEnsemble, order: int, ridge: float = 1e-8,
                 letters: Sequence[int] = (1, 2, 3, 4), features: np.ndarray | None = None):
        if ensemble.n_paths < 2:
            raise InputError("regression needs at least 2 paths")
        if order < 1:
            raise InputError("order must be >= 1")
        if ridge < 0:
            raise InputError("ridge must be non-negative")
        self.ensemble = ensemble
        self.order = order
        self.ridge = float(ridge)
        self.letters = tuple(sorted(int(a) for a in letters))
        dl = len(self.letters)
        X = ensemble_features(ensemble, order, self.letters) if features is None else features
        if X.shape != (ensemble.n_paths, tensor_size(dl, order)):
            raise InputError("feature matrix has the wrong shape")
        scale = _factorial_scale(dl, order)[1:]
        Xs = X[:, 1:] * scale
        self._scale = scale
        self._mean = Xs.mean(axis=0)
        self._Xc = Xs - self._mean
        G = self._Xc.T @ self._Xc
        evals, evecs = np.linalg.eigh(G)
        top = max(evals[-1], 0.0)
        self._shift = self.ridge * top
        floor = evals + self._shift
        if self.ridge == 0 and (top == 0 or evals[0] <= 1e-13 * top):
            raise NumericalError("normal matrix is singular; increase the ridge parameter")
        self._evals = floor
        self._evecs = evecs
        self.rank = int(np.sum(evals > 1e-12 * top)) if top > 0 else 0

    def coefficients(self, y: np.ndarray) -> tuple[np.ndarray, dict]:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self._Xc.shape[0]:
            raise InputError("one target value per path is required")
        ybar = y.mean()
        rhs = self._evecs.T @ (self._Xc.T @ (y - ybar))
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = self._evecs @ np.where(self._evals > 0, rhs / self._evals, 0.0)
        fitted = self._Xc @ beta + ybar
        resid = y - fitted
        sst = float(np.sum((y - ybar) ** 2))
        r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else float("nan")
        coef = np.empty(beta.size + 1)
        coef[0] = ybar - float(self._mean @ beta)
        coef[1:] = beta * self._scale
        diag = {"r2": r2, "rmse": float(np.sqrt(np.mean(resid**2))), "ridge": self.ridge,
                "order": self.order, "n_paths": int(y.size), "letters": list(self.letters),
                "rank": self.rank}
        return coef, diag

    def fit_values(self, y: np.ndarray, spec: PayoffSpec | None = None) -> SignaturePayoff:
        coef, diag = self.coefficients(y)
        f = remap_letters(FreeTensor(len(self.letters), self.order, coef), self.letters, 4)
        return SignaturePayoff(f, diag, spec)

    def fit(self, spec: PayoffSpec) -> SignaturePayoff:
        ens = self.ensemble
        return self.fit_values(evaluate_payoffs(spec, ens.times, ens.prices), spec)


def fit_signature_payoff(spec: PayoffSpec, ensemble: PathEnsemble, order: int,
                         ridge: float = 1e-8, letters: Sequence[int] = (1, 2, 3, 4)) -> SignaturePayoff:
    """Least-squares projection of a payoff onto lead-lag signature payoffs."""
    return SignatureRegression(ensemble, order, ridge, letters).fit(spec)


def price_payoff(f, es: ExpectedSignature) -> float:
    """Pair a signature payoff with an (optionally discounted) expected signature."""
    ell = f.f if isinstance(f, SignaturePayoff) else f
    return es.pair(ell)
