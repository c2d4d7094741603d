"""Synthetic market models and Monte Carlo expected lead-lag signatures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, InputError
from .leadlag import leadlag_increments
from .signature_core import DiscretePath, from_internal, signature_moments
from .tensor_words import (FreeTensor, letter_support_mask, level_offset,
                           remap_letters, tensor_size)

RISK_NEUTRAL = "risk_neutral"
OBJECTIVE = "objective"
STEPS_PER_YEAR = 252

# Artifact defaults for the stochastic-volatility experiments.
HESTON_DEFAULTS = dict(v0=0.04, kappa=2.0, theta=0.04, xi=0.3, rho=-0.7, rate=0.02)


@dataclass(frozen=True)
class ModelSpec:
    """Black-Scholes or Heston dynamics for the underlying.

    Under ``measure="objective"`` the price drifts at ``mu``; under
    ``measure="risk_neutral"`` it drifts at ``rate``.
    """

    kind: str
    sigma: float = 0.2
    rate: float = 0.0
    v0: float = 0.04
    kappa: float = 2.0
    theta: float = 0.04
    xi: float = 0.3
    rho: float = -0.7
    measure: str = RISK_NEUTRAL
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("black_scholes", "heston"):
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.measure not in (RISK_NEUTRAL, OBJECTIVE):
            raise InputError(f"unknown measure {self.measure!r}")
        if self.kind == "black_scholes" and not self.sigma >= 0:
            raise InputError("sigma must be non-negative")
        if self.kind == "heston":
            if self.v0 < 0 or self.theta < 0 or self.xi < 0 or self.kappa < 0:
                raise InputError("Heston v0, theta, xi, kappa must be non-negative")
            if abs(self.rho) > 1:
                raise InputError("rho must lie in [-1, 1]")
        for name in ("sigma", "rate", "v0", "kappa", "theta", "xi", "rho", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")

    @classmethod
    def black_scholes(cls, sigma: float, rate: float = 0.0, **kw) -> "ModelSpec":
        return cls(kind="black_scholes", sigma=sigma, rate=rate, **kw)

    @classmethod
    def heston(cls, **kw) -> "ModelSpec":
        params = dict(HESTON_DEFAULTS)
        params.update(kw)
        return cls(kind="heston", **params)

    def drift(self, discounted: bool) -> float:
        mu = self.rate if self.measure == RISK_NEUTRAL else self.mu
        return mu - self.rate if discounted else mu

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelSpec":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise InputError(f"malformed model record: {exc}") from exc


@dataclass(frozen=True)
class PathEnsemble:
    """Price paths on a shared time grid.

    Attributes
    ----------
    times : ndarray (n + 1,)
    prices : ndarray (n_paths, n + 1)
    variances : ndarray or None
        Instantaneous variance paths (Heston only).
    """

    times: np.ndarray
    prices: np.ndarray
    seed: int | None = None
    model: ModelSpec | None = None
    discounted: bool = False
    variances: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        x = np.atleast_2d(np.asarray(self.prices, dtype=float))
        if x.shape[1] != t.size:
            raise InputError("prices must have one column per grid time")
        if t.size < 2 or not np.all(np.diff(t) > 0):
            raise InputError("time grid must be strictly increasing with >= 2 points")
        if not np.all(np.isfinite(x)):
            raise InputError("ensemble contains non-finite prices")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "prices", x)

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    def __len__(self) -> int:
        return self.n_paths

    def path(self, i: int) -> DiscretePath:
        return DiscretePath(self.times, self.prices[i])

    def __iter__(self) -> Iterator[DiscretePath]:
        for i in range(self.n_paths):
            yield self.path(i)

    @property
    def paths(self) -> list[DiscretePath]:
        return list(self)

    def subset(self, idx) -> "PathEnsemble":
        v = None if self.variances is None else self.variances[idx]
        return PathEnsemble(self.times, self.prices[idx], self.seed, self.model,
                            self.discounted, v)

    def normalized(self) -> np.ndarray:
        x0 = self.prices[:, :1]
        if np.any(x0 == 0):
            raise InputError("cannot normalize paths starting at 0")
        return self.prices / x0


def _normals(seed: int, index: int, size: int) -> np.ndarray:
    """Standard normals of the stream owned by path ``index``."""
    gen = np.random.Generator(np.random.Philox(key=seed, counter=int(index) << 128))
    return gen.standard_normal(size)


def _draw(seed: int, first: int, n_paths: int, size: int) -> np.ndarray:
    out = np.empty((n_paths, size))
    for i in range(n_paths):
        out[i] = _normals(seed, first + i, size)
    return out


def sample_paths(model: ModelSpec, T: float, steps: int, n_paths: int, seed: int,
                 discounted: bool = False, x0: float = 1.0, v_init: float | None = None,
                 t0: float = 0.0, first_index: int = 0) -> PathEnsemble:
    """Simulate price paths on a uniform grid over ``[t0, t0 + T]``.

    Black-Scholes paths are stepped exactly in log space.  Heston uses a
    full-truncation Euler step for the variance and a log-Euler step for the
    price.  Path ``i`` draws its normals from its own counter-based stream
    keyed by ``seed``, so any subset of paths can be regenerated on its own.
    """
    if steps < 2 or n_paths < 1:
        raise InputError("need steps >= 2 and n_paths >= 1")
    if not T > 0:
        raise InputError("horizon must be positive")
    if seed < 0:
        raise InputError("seed must be non-negative")
    dt = T / steps
    times = t0 + dt * np.arange(steps + 1)
    mu = model.drift(discounted)
    logx = np.empty((n_paths, steps + 1))
    logx[:, 0] = math.log(x0)
    variances = None
    if model.kind == "black_scholes":
        z = _draw(seed, first_index, n_paths, steps)
        inc = (mu - 0.5 * model.sigma**2) * dt + model.sigma * math.sqrt(dt) * z
        logx[:, 1:] = logx[:, :1] + np.cumsum(inc, axis=1)
    else:
        z = _draw(seed, first_index, n_paths, 2 * steps)
        zx, zp = z[:, :steps], z[:, steps:]
        zv = model.rho * zx + math.sqrt(max(0.0, 1.0 - model.rho**2)) * zp
        v = np.full(n_paths, model.v0 if v_init is None else float(v_init))
        variances = np.empty((n_paths, steps + 1))
        variances[:, 0] = v
        sq = math.sqrt(dt)
        for k in range(steps):
            vp = np.maximum(v, 0.0)
            sv = np.sqrt(vp)
            logx[:, k + 1] = logx[:, k] + (mu - 0.5 * vp) * dt + sv * sq * zx[:, k]
            v = v + model.kappa * (model.theta - vp) * dt + model.xi * sv * sq * zv[:, k]
            variances[:, k + 1] = v
    return PathEnsemble(times, np.exp(logx), seed, model, discounted, variances)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpectedSignature:
    """Monte Carlo (or implied) expected lead-lag signature.

    ``letters`` lists the lead-lag letters the estimate covers; coefficients
    of words using other letters are unknown and pairing a functional that
    needs them raises :class:`CapacityError`.
    """

    tensor: FreeTensor
    n_paths: int
    standard_errors: FreeTensor | None = None
    discounted: bool = False
    T: float = 1.0
    seed: int | None = None
    rate: float = 0.0
    letters: tuple = (1, 2, 3, 4)
    diagnostics: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return self.tensor.order

    @property
    def dim(self) -> int:
        return self.tensor.dim

    @property
    def discount_factor(self) -> float:
        return float(self.tensor.data[0])

    def support_mask(self) -> np.ndarray:
        return letter_support_mask(self.dim, self.order, self.letters)

    def check_functional(self, ell: FreeTensor) -> None:
        if ell.dim != self.dim:
            raise InputError(f"functional over {ell.dim} letters, expected {self.dim}")
        if ell.degree() > self.order:
            raise CapacityError(
                f"functional reaches level {ell.degree()} but the expected "
                f"signature has order {self.order}")
        if tuple(self.letters) != tuple(range(1, self.dim + 1)):
            data = ell.with_order(self.order).data
            if np.any(data[~self.support_mask()]):
                raise CapacityError(
                    f"functional uses letters outside the estimated alphabet {self.letters}")

    def pair(self, ell: FreeTensor) -> float:
        self.check_functional(ell)
        return float(ell.with_order(self.order).data @ self.tensor.data)

    def pair_se(self, ell: FreeTensor) -> float:
        """Crude standard error of a pairing (coefficient errors combined as independent)."""
        if self.standard_errors is None:
            return float("nan")
        data = ell.with_order(self.order).data
        return float(np.sqrt(np.sum((data * self.standard_errors.data) ** 2)))

    def to_dict(self) -> dict:
        out = self.tensor.to_dict()
        out.update({
            "n_paths": self.n_paths,
            "seed": self.seed,
            "T": self.T,
            "discounted": self.discounted,
            "rate": self.rate,
            "letters": list(self.letters),
            "standard_errors": (None if self.standard_errors is None
                                else self.standard_errors.to_dict()["levels"]),
        })
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExpectedSignature":
        tensor = FreeTensor.from_dict(obj)
        se = obj.get("standard_errors")
        try:
            return cls(
                tensor=tensor,
                n_paths=int(obj.get("n_paths", 0)),
                standard_errors=None if se is None else FreeTensor.from_levels(se, tensor.dim),
                discounted=bool(obj.get("discounted", False)),
                T=float(obj.get("T", 1.0)),
                seed=obj.get("seed"),
                rate=float(obj.get("rate", 0.0)),
                letters=tuple(obj.get("letters", range(1, tensor.dim + 1))),
                diagnostics=dict(obj.get("diagnostics", {})),
            )
        except (TypeError, ValueError) as exc:
            raise InputError(f"malformed expected-signature record: {exc}") from exc


def _time_word_positions(dim: int, order: int) -> list[tuple[int, int]]:
    """(flat index, k) of the words (1, ..., 1)."""
    return [(level_offset(dim, k), k) for k in range(order + 1)]


def expected_signature_mc(ensemble: PathEnsemble, order: int, discount: float | None = None,
                          letters: Sequence[int] = (1, 2, 3, 4), normalize: bool = True,
                          scheme: str = "adapted", chunk: int = 1024) -> ExpectedSignature:
    """Average the lead-lag signatures of an ensemble.

    Parameters
    ----------
    ensemble : PathEnsemble
    order : int
        Truncation order ``N``.
    discount : float, optional
        If given, every coefficient is multiplied by ``exp(-discount * T)``.
    letters : sequence of int
        Lead-lag letters to estimate.  Restricting the alphabet is exact (the
        signature of a coordinate projection is the restriction of the
        signature) and much cheaper at high order.
    normalize : bool
        Divide each path by its initial price first.
    chunk : int
        Paths per batch; results do not depend on it beyond summation order.
    """
    if ensemble.n_paths < 1:
        raise InputError("empty ensemble")
    if order < 1:
        raise InputError("order must be >= 1")
    letters = tuple(int(a) for a in letters)
    if len(set(letters)) != len(letters) or not set(letters) <= {1, 2, 3, 4}:
        raise InputError("letters must be distinct elements of {1, 2, 3, 4}")
    letters = tuple(sorted(letters))
    prices = ensemble.normalized() if normalize else ensemble.prices
    dl = len(letters)
    size = tensor_size(dl, order)
    total = np.zeros(size)
    total_sq = np.zeros(size)
    n = ensemble.n_paths
    for s in range(0, n, chunk):
        incs = leadlag_increments(ensemble.times, prices[s:s + chunk], letters, scheme)
        signature_moments(incs, order, total, total_sq)
    mean = from_internal(total / n, dl, order)
    if n > 1:
        var = np.maximum(from_internal(total_sq, dl, order) - n * mean**2, 0.0) / (n - 1)
        se = np.sqrt(var / n)
    else:
        se = np.full(size, np.nan)
    letter_map = letters
    mean_t = remap_letters(FreeTensor(dl, order, mean), letter_map, 4)
    se_t = remap_letters(FreeTensor(dl, order, se), letter_map, 4)
    mean_d = mean_t.data.copy()
    se_d = se_t.data.copy()
    T = ensemble.T
    if 1 in letters:
        for pos, k in _time_word_positions(4, order):
            mean_d[pos] = T**k / math.factorial(k)
            se_d[pos] = 0.0
    rate = 0.0
    if discount is not None:
        rate = float(discount)
        z = math.exp(-rate * T)
        mean_d *= z
        se_d *= z
    return ExpectedSignature(FreeTensor(4, order, mean_d), n, FreeTensor(4, order, se_d),
                             discounted=discount is not None, T=T, seed=ensemble.seed,
                             rate=rate, letters=letters)


def conditional_expected_signature(model: ModelSpec, state: dict, T: float, order: int,
                                   n_paths: int, seed: int, steps: int | None = None,
                                   discounted: bool = False, discount: float | None = None,
                                   letters: Sequence[int] = (1, 2, 3, 4)) -> ExpectedSignature:
    """Expected lead-lag signature over ``[t, T]`` given the state at ``t``.

    ``state`` holds ``t``, ``x`` (price level at ``t``, kept un-normalized)
    and ``v`` (Heston variance).  Paths restart from this state; the time
    coordinate runs over ``[t, T]``.
    """
    try:
        t = float(state["t"])
        x = float(state["x"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError("state needs numeric 't' and 'x'") from exc
    if not t < T:
        raise InputError("conditioning time must be before the horizon")
    v = state.get("v")
    if model.kind == "heston" and v is None:
        raise InputError("Heston conditioning needs the variance 'v'")
    remaining = T - t
    if steps is None:
        steps = max(2, int(round(remaining * STEPS_PER_YEAR)))
    ens = sample_paths(model, remaining, steps, n_paths, seed, discounted=discounted,
                       x0=x, v_init=v, t0=t)
    return expected_signature_mc(ens, order, discount=discount, letters=letters,
                                 normalize=False)
