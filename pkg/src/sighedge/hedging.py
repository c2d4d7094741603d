"""Polynomial hedging with linear signature strategies.

A strategy is a functional ``ell`` over the augmented alphabet (1 = time,
2 = price); holding ``<ell, S_{0,t}>`` units of the asset is the trading rule.
Its terminal residual ``f - p0 ∅ - embed(ell) 4`` is linear in the lead-lag
signature, so for a polynomial risk ``P`` the expected risk is the pairing of
``P`` lifted through the shuffle product against the expected signature.  The
lift is expanded here into an explicit polynomial in the coefficients of
``ell`` (and of any static weights), which is then minimised.

Sign conventions: the residual is the short claim's terminal shortfall
``F - p0 - gains + costs`` and the hedger's P&L is its negative.  Costs are
always added to the residual.

Modes
-----
``plain``       holdings ``<ell, S>``.
``fixed_cost``  holdings ``int <v, S> du`` (trading speed v), cost
                ``alpha int <v, S>^2 du``.
``prop_cost``   as ``fixed_cost`` with cost ``alpha int (<v, S> X)^2 du``.
``liquidity``   speed parametrisation with ``||v||_2 <= M_liq``.
``semistatic``  adds static positions ``beta_i`` in signature payoffs ``g_i``.
``delayed``     hedging starts at ``t`` with capital ``p_t``; the past enters
                through the prefix signature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import optimize

from .errors import CapacityError, DataQualityError, InputError, NumericalError
from .leadlag import leadlag_increments
from .market import ExpectedSignature, PathEnsemble
from .payoffs import PayoffSpec, SignaturePayoff, evaluate_payoffs
from .signature_core import DiscretePath, batch_signatures, prefix_values
from .tensor_words import (FreeTensor, concat_letter, embed_lag, letter_support_mask,
                           pair, restrict_letters, shuffle, shuffle_pairing,
                           tensor_product)

MODES = ("plain", "fixed_cost", "prop_cost", "liquidity", "semistatic", "delayed")
SPEED_MODES = ("fixed_cost", "prop_cost", "liquidity")


# ---------------------------------------------------------------------------
# risk polynomials


def exponential_risk(lam: float, degree: int = 6) -> tuple:
    """Taylor coefficients of ``exp(lam * r)``, i.e. ``exp(-lam * PnL)``."""
    if lam <= 0 or degree < 1:
        raise InputError("exponential risk needs lam > 0 and degree >= 1")
    return tuple(lam**k / math.factorial(k) for k in range(degree + 1))


def risk_coefficients(spec) -> tuple:
    """Normalise a risk description to polynomial coefficients ``a_0..a_q``.

    Accepts a coefficient sequence or a mapping such as
    ``{"kind": "exponential", "lam": 0.25, "degree": 6}`` or
    ``{"kind": "polynomial", "coefficients": [0, 0, 1]}``.
    """
    if isinstance(spec, Mapping):
        kind = spec.get("kind", "polynomial")
        if kind == "exponential":
            return exponential_risk(float(spec.get("lam", 0.25)), int(spec.get("degree", 6)))
        if kind == "mean_variance":
            return (0.0, 0.0, 1.0)
        if kind != "polynomial":
            raise InputError(f"unknown risk kind {kind!r}")
        spec = spec.get("coefficients")
        if spec is None:
            raise InputError("polynomial risk needs 'coefficients'")
    coeffs = [float(c) for c in spec]
    while len(coeffs) > 1 and coeffs[-1] == 0.0:
        coeffs.pop()
    if len(coeffs) < 2 or not all(math.isfinite(c) for c in coeffs):
        raise InputError("risk polynomial must have finite coefficients and degree >= 1")
    return tuple(coeffs)


# ---------------------------------------------------------------------------
# problem and solution records


@dataclass(frozen=True)
class DelaySpec:
    """Hedging starts at ``t`` given the lead-lag signature of the past."""

    t: float
    prefix: FreeTensor
    p_t: float

    def __post_init__(self):
        if self.prefix.dim != 4:
            raise InputError("the prefix must be a lead-lag signature over 4 letters")
        if self.t < 0:
            raise InputError("delay time must be non-negative")


@dataclass(frozen=True)
class HedgeProblem:
    """Everything that defines a hedging problem except the expected signature.

    Parameters
    ----------
    P : sequence of float or mapping
        Risk polynomial, see :func:`risk_coefficients`.
    f : SignaturePayoff or FreeTensor
        Claim as a functional on lead-lag signatures.
    p0 : float, optional
        Initial capital; defaults to the model price ``<f, es>``.
    M : int
        Top word length of the strategy functional.
    mode : str
        One of :data:`MODES`.
    alpha : float
        Cost intensity for the cost modes (and optional in liquidity mode).
    M_liq : float
        Euclidean bound on the speed coefficients in liquidity mode.
    basket : sequence of FreeTensor
        Static hedging instruments in semistatic mode.
    box : sequence of (low, high), optional
        Bounds on the static weights; ``None`` means unconstrained.
    delay : DelaySpec, optional
        Required in delayed mode.
    truncate : bool
        Drop shuffle terms above the expected-signature order instead of
        failing.  The objective is then only approximate.
    """

    P: tuple = (0.0, 0.0, 1.0)
    f: FreeTensor | SignaturePayoff = None
    p0: float | None = None
    M: int = 2
    mode: str = "plain"
    alpha: float = 0.0
    M_liq: float = math.inf
    basket: tuple = ()
    box: tuple | None = None
    delay: DelaySpec | None = None
    truncate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "P", risk_coefficients(self.P))
        if self.f is None:
            raise InputError("a payoff functional is required")
        ftensor = self.f.f if isinstance(self.f, SignaturePayoff) else self.f
        if not isinstance(ftensor, FreeTensor) or ftensor.dim != 4:
            raise InputError("the payoff must be a functional over the 4 lead-lag letters")
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if int(self.M) != self.M or self.M < 0:
            raise InputError("strategy order M must be a non-negative integer")
        object.__setattr__(self, "M", int(self.M))
        if not self.alpha >= 0 or not math.isfinite(self.alpha):
            raise InputError("alpha must be finite and >= 0")
        if not self.M_liq >= 0:
            raise InputError("M_liq must be >= 0")
        basket = tuple(g.f if isinstance(g, SignaturePayoff) else g for g in self.basket)
        for g in basket:
            if not isinstance(g, FreeTensor) or g.dim != 4:
                raise InputError("basket payoffs must be functionals over 4 letters")
        object.__setattr__(self, "basket", basket)
        if self.box is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(box) != len(basket):
                raise InputError("one (low, high) pair per basket payoff is required")
            if any(lo > hi for lo, hi in box):
                raise InputError("box bounds must satisfy low <= high")
            object.__setattr__(self, "box", box)
        if self.mode == "delayed" and self.delay is None:
            raise InputError("delayed mode needs a DelaySpec")
        if self.p0 is not None:
            object.__setattr__(self, "p0", float(self.p0))

    def to_dict(self) -> dict:
        f = self.f if isinstance(self.f, SignaturePayoff) else SignaturePayoff(self.f)
        out = {"P": list(self.P), "f": f.to_dict(), "p0": self.p0, "M": self.M,
               "mode": self.mode, "alpha": self.alpha,
               "M_liq": None if math.isinf(self.M_liq) else self.M_liq,
               "basket": [g.to_dict() for g in self.basket],
               "box": None if self.box is None else [list(b) for b in self.box],
               "truncate": self.truncate, "delay": None}
        if self.delay is not None:
            out["delay"] = {"t": self.delay.t, "p_t": self.delay.p_t,
                            "prefix": self.delay.prefix.to_dict()}
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "HedgeProblem":
        try:
            delay = obj.get("delay")
            if delay is not None:
                delay = DelaySpec(float(delay["t"]), FreeTensor.from_dict(delay["prefix"]),
                                  float(delay["p_t"]))
            m_liq = obj.get("M_liq")
            return cls(P=obj.get("P", (0.0, 0.0, 1.0)), f=SignaturePayoff.from_dict(obj["f"]),
                       p0=obj.get("p0"), M=int(obj.get("M", 2)), mode=obj.get("mode", "plain"),
                       alpha=float(obj.get("alpha", 0.0)),
                       M_liq=math.inf if m_liq is None else float(m_liq),
                       basket=tuple(FreeTensor.from_dict(g) for g in obj.get("basket", ())),
                       box=obj.get("box"), delay=delay, truncate=bool(obj.get("truncate", False)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed hedge problem: {exc}") from exc

    @property
    def payoff(self) -> FreeTensor:
        return self.f.f if isinstance(self.f, SignaturePayoff) else self.f

    @property
    def parametrization(self) -> str:
        return "speed" if self.mode in SPEED_MODES else "position"

    @property
    def q(self) -> int:
        return len(self.P) - 1

    @property
    def n_strategy(self) -> int:
        return 2 ** (self.M + 1) - 1

    @property
    def n_static(self) -> int:
        return len(self.basket) if self.mode == "semistatic" else 0

    @property
    def cost_kind(self) -> str | None:
        if self.alpha == 0:
            return None
        if self.mode == "prop_cost":
            return "proportional"
        if self.mode in ("fixed_cost", "liquidity"):
            return "fixed"
        return None


@dataclass(frozen=True)
class HedgeSolution:
    """Optimal strategy functional with its objective value."""

    strategy: FreeTensor
    objective_value: float
    required_es_order: int
    mode: str = "plain"
    parametrization: str = "position"
    beta: tuple = ()
    p0: float = 0.0
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = self.strategy.to_dict()
        out.update({"objective": self.objective_value, "mode": self.mode,
                    "parametrization": self.parametrization, "beta": list(self.beta),
                    "required_es_order": self.required_es_order, "p0": self.p0,
                    "info": self.info})
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "HedgeSolution":
        try:
            return cls(FreeTensor.from_dict(obj), float(obj["objective"]),
                       int(obj["required_es_order"]), obj.get("mode", "plain"),
                       obj.get("parametrization", "position"),
                       tuple(float(b) for b in obj.get("beta", ())),
                       float(obj.get("p0", 0.0)), dict(obj.get("info", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed hedge solution: {exc}") from exc


# ---------------------------------------------------------------------------
# polynomials in the strategy coefficients


@dataclass(frozen=True)
class Polynomial:
    """Sparse multivariate polynomial ``sum_t c_t prod_j x_j**E[t, j]``."""

    exponents: np.ndarray
    coefficients: np.ndarray

    @classmethod
    def from_terms(cls, terms: Mapping[tuple, float], n_vars: int) -> "Polynomial":
        keys = [k for k, v in terms.items() if v != 0.0]
        E = np.array(keys, dtype=np.int64).reshape(len(keys), n_vars)
        c = np.array([terms[k] for k in keys], dtype=float)
        return cls(E, c)

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if self.coefficients.size else 0

    def terms(self) -> dict:
        return {tuple(int(e) for e in row): float(c)
                for row, c in zip(self.exponents, self.coefficients)}

    def _powers(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_vars:
            raise InputError(f"expected {self.n_vars} variables, got {x.size}")
        return x, x[None, :] ** self.exponents

    def __call__(self, x) -> float:
        _, pw = self._powers(x)
        return float(self.coefficients @ pw.prod(axis=1))

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        x, pw = self._powers(x)
        E, c = self.exponents, self.coefficients
        T, n = pw.shape
        # products over all columns except j, without dividing
        left = np.ones((T, n + 1))
        right = np.ones((T, n + 1))
        np.cumprod(pw, axis=1, out=left[:, 1:])
        np.cumprod(pw[:, ::-1], axis=1, out=right[:, 1:])
        others = left[:, :n] * right[:, n - 1::-1]
        dpow = np.where(E > 0, E * x[None, :] ** np.maximum(E - 1, 0), 0.0)
        grad = (c[:, None] * dpow * others).sum(axis=0)
        return float(c @ left[:, n]), grad

    def gradient(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def quadratic_form(self) -> tuple[float, np.ndarray, np.ndarray]:
        """``(c, b, A)`` with ``p(x) = c - 2 b.x + x.A.x``; degree must be <= 2."""
        if self.degree > 2:
            raise InputError("polynomial has degree above 2")
        n = self.n_vars
        c, b, A = 0.0, np.zeros(n), np.zeros((n, n))
        for row, coef in zip(self.exponents, self.coefficients):
            nz = np.flatnonzero(row)
            s = int(row.sum())
            if s == 0:
                c += coef
            elif s == 1:
                b[nz[0]] -= coef / 2
            elif nz.size == 1:
                A[nz[0], nz[0]] += coef
            else:
                A[nz[0], nz[1]] += coef / 2
                A[nz[1], nz[0]] += coef / 2
        return c, b, A

    def truncated(self, max_degree: int) -> "Polynomial":
        keep = self.exponents.sum(axis=1) <= max_degree
        return Polynomial(self.exponents[keep], self.coefficients[keep])


@dataclass(frozen=True)
class HedgeObjective:
    """Assembled objective: a polynomial in ``(strategy coefficients, static weights)``."""

    polynomial: Polynomial
    n_strategy: int
    n_static: int
    required_order: int
    p0: float
    es_order: int
    truncated: bool

    def __call__(self, x) -> float:
        return self.polynomial(x)

    @property
    def n_vars(self) -> int:
        return self.n_strategy + self.n_static


# ---------------------------------------------------------------------------
# assembly


def strategy_words(M: int) -> list[tuple]:
    """Words over {1, 2} of length <= M in coefficient order."""
    from .tensor_words import index_word
    return [index_word(k, i, 2) for k in range(M + 1) for i in range(2**k)]


def _unit_vectors(M: int) -> list[FreeTensor]:
    n = 2 ** (M + 1) - 1
    return [FreeTensor(2, M, np.eye(n)[i]) for i in range(n)]


def _gain_functional(e: FreeTensor, speed: bool) -> FreeTensor:
    """Lead-lag functional whose pairing is the trading gain of strategy ``e``."""
    lag = embed_lag(e)
    if speed:
        lag = concat_letter(lag, 1)
    return concat_letter(lag, 4)


def _cost_base(e: FreeTensor, kind: str) -> FreeTensor:
    """Speed-to-cost-rate factor over the lag letters (before squaring)."""
    lag = embed_lag(e)
    if kind == "proportional":
        price = FreeTensor.from_words({(): 1.0, (2,): 1.0}, 4, 1)
        lag = shuffle(lag, price, lag.order + 1)
    return lag


@dataclass
class _Basis:
    tensors: list
    exps: list
    n_vars: int


def _residual_basis(problem: HedgeProblem, p0: float, prefix: FreeTensor | None) -> _Basis:
    """Residual as ``sum_a u_a x^{e_a}``, with ``u_a`` lead-lag functionals."""
    n, k = problem.n_strategy, problem.n_static
    nv = n + k
    zero = (0,) * nv

    def unit_exp(*idx):
        e = [0] * nv
        for i in idx:
            e[i] += 1
        return tuple(e)

    f = problem.payoff
    g0 = f - FreeTensor.from_words({(): p0}, 4, f.order)
    tensors, exps = [g0], [zero]
    speed = problem.parametrization == "speed"
    units = _unit_vectors(problem.M)
    for i, e in enumerate(units):
        h = _gain_functional(e, speed)
        if prefix is not None:
            already = pair(h, prefix)
            h = h - FreeTensor.from_words({(): already}, 4, h.order)
        tensors.append(-1.0 * h)
        exps.append(unit_exp(i))
    kind = problem.cost_kind
    if kind is not None:
        bases = [_cost_base(e, kind) for e in units]
        for i in range(n):
            for j in range(i, n):
                prod = shuffle(bases[i], bases[j], bases[i].order + bases[j].order)
                c = problem.alpha * (1.0 if i == j else 2.0)
                tensors.append(c * concat_letter(prod, 1))
                exps.append(unit_exp(i, j))
    for j in range(k):
        tensors.append(-1.0 * problem.basket[j])
        exps.append(unit_exp(n + j))
    return _Basis(tensors, exps, nv)


def _check_support(es_letters: tuple, u: FreeTensor) -> None:
    if tuple(es_letters) == (1, 2, 3, 4):
        return
    mask = letter_support_mask(4, u.order, es_letters)
    if np.any(u.data[~mask]):
        raise CapacityError(
            f"objective needs words outside the estimated letters {tuple(es_letters)}")


def _expand(basis: _Basis, P: tuple, E: FreeTensor, truncate: bool) -> dict:
    """Expand ``<P(sum_a u_a x^{e_a}) under shuffle, E>`` into monomials."""
    N = E.order
    us = [u.with_order(N) if u.order > N else u for u in basis.tensors]
    lows = []
    for u in us:
        lo = 0
        while lo <= u.order and not np.any(u.level(lo)):
            lo += 1
        lows.append(lo)
    exps = [np.array(e, dtype=np.int64) for e in basis.exps]
    q = len(P) - 1
    terms: dict = {}
    zero = (0,) * basis.n_vars
    terms[zero] = P[0] * float(E.data[0])
    B = len(us)

    def add(key, val):
        terms[key] = terms.get(key, 0.0) + val

    def visit(start, m, prod, exp_sum, low_sum, last, run, multinom):
        for a in range(start, B):
            lo = low_sum + lows[a]
            if lo > N:
                continue
            new_m = m + 1
            new_run = run + 1 if a == last else 1
            new_multi = multinom * new_m / new_run
            new_exp = exp_sum + exps[a]
            if P[new_m] != 0.0:
                val = (pair(us[a], E) if prod is None
                       else shuffle_pairing(prod, us[a], E, truncate=True))
                if val != 0.0:
                    add(tuple(int(v) for v in new_exp), P[new_m] * new_multi * val)
            if new_m < q:
                nxt = us[a] if prod is None else shuffle(prod, us[a], N)
                visit(a, new_m, nxt, new_exp, lo, a, new_run, new_multi)

    if q >= 1:
        visit(0, 0, None, np.zeros(basis.n_vars, dtype=np.int64), 0, -1, 0, 1.0)
    return terms


def _delayed_measure(problem: HedgeProblem, es: ExpectedSignature) -> tuple[FreeTensor, FreeTensor]:
    prefix = problem.delay.prefix
    if prefix.order < es.order:
        raise CapacityError(
            f"prefix order {prefix.order} is below the conditional expected signature order {es.order}")
    if tuple(es.letters) != (1, 2, 3, 4):
        from .tensor_words import remap_letters
        prefix_r = remap_letters(restrict_letters(prefix, es.letters), es.letters, 4)
    else:
        prefix_r = prefix
    return tensor_product(prefix_r.with_order(es.order), es.tensor, es.order), prefix


def assemble_objective(problem: HedgeProblem, es: ExpectedSignature) -> HedgeObjective:
    """Explicit polynomial form of the expected risk of the hedged position.

    Raises
    ------
    CapacityError
        If the shuffle powers exceed the expected-signature order and
        ``problem.truncate`` is not set, or the objective needs letters the
        expected signature does not cover.
    """
    if es.dim != 4:
        raise InputError("expected signature must be over the 4 lead-lag letters")
    prefix = None
    E = es.tensor
    if problem.mode == "delayed":
        E, prefix = _delayed_measure(problem, es)
        p0 = problem.delay.p_t
    else:
        p0 = problem.p0 if problem.p0 is not None else es.pair(problem.payoff)
    basis = _residual_basis(problem, p0, prefix)
    deg = max(u.degree() for u in basis.tensors)
    required = problem.q * max(deg, 0)
    if required > es.order and not problem.truncate:
        raise CapacityError(
            f"objective needs expected-signature order {required} but only {es.order} "
            "is available; raise the order, lower M, or enable truncation")
    for u in basis.tensors:
        _check_support(es.letters, u)
    terms = _expand(basis, problem.P, E, problem.truncate)
    poly = Polynomial.from_terms(terms, basis.n_vars)
    return HedgeObjective(poly, problem.n_strategy, problem.n_static, required, float(p0),
                          es.order, bool(problem.truncate and required > es.order))


# ---------------------------------------------------------------------------
# solvers


def _min_quadratic(c, b, A, psd_tol: float = 1e-8) -> tuple[np.ndarray, dict]:
    """Minimum-norm minimiser of ``c - 2 b.x + x.A.x`` for PSD ``A``."""
    A = 0.5 * (A + A.T)
    n = b.size
    if n == 0:
        return np.zeros(0), {"rank": 0, "min_eigenvalue": 0.0}
    w, V = np.linalg.eigh(A)
    scale = max(float(np.trace(A)), 0.0)
    if scale == 0.0:
        scale = float(np.abs(w).max()) if w.size else 0.0
    if w[0] < -psd_tol * max(scale, 1e-300):
        raise DataQualityError(
            f"objective is not convex (eigenvalue {w[0]:.3e}); the expected signature "
            "is too noisy or too truncated for this problem")
    floor = 1e-12 * scale
    keep = w > floor
    x = V[:, keep] @ ((V[:, keep].T @ b) / w[keep])
    return x, {"rank": int(keep.sum()), "min_eigenvalue": float(w[0]),
               "max_eigenvalue": float(w[-1]), "_eig": (w, V, keep)}


def _split(problem: HedgeProblem, x: np.ndarray) -> tuple[FreeTensor, tuple]:
    n = problem.n_strategy
    return FreeTensor(2, problem.M, x[:n]), tuple(float(v) for v in x[n:])


def _solution(problem, obj: HedgeObjective, x, info) -> HedgeSolution:
    strat, beta = _split(problem, np.asarray(x, dtype=float))
    info = {k: v for k, v in info.items() if not k.startswith("_")}
    info.setdefault("unhedged_objective", obj(np.zeros(obj.n_vars)))
    info["truncated"] = obj.truncated
    return HedgeSolution(strat, obj(x), obj.required_order, problem.mode,
                         problem.parametrization, beta, obj.p0, info)


def _check_problem_es(problem, es):
    if problem.mode == "delayed" and es is None:
        raise InputError("delayed mode needs a conditional expected signature")


def solve_mean_variance(problem: HedgeProblem, es: ExpectedSignature,
                        objective: HedgeObjective | None = None,
                        psd_tol: float = 1e-8) -> HedgeSolution:
    """Exact minimiser for a quadratic risk via one symmetric linear solve.

    Degree-4 objectives (quadratic risk with costs) are passed on to
    :func:`solve_general`.
    """
    if problem.q != 2:
        raise InputError("mean-variance solve needs a quadratic risk polynomial")
    obj = objective or assemble_objective(problem, es)
    if obj.polynomial.degree > 2:
        return solve_general(problem, es, objective=obj)
    c, b, A = obj.polynomial.quadratic_form()
    x, info = _min_quadratic(c, b, A, psd_tol)
    info["method"] = "linear"
    info["gradient_norm"] = float(np.linalg.norm(2 * (A @ x - b)))
    info["converged"] = True
    return _solution(problem, obj, x, info)


def _warm_start(obj: HedgeObjective) -> np.ndarray | None:
    """Minimiser of the quadratic part of the objective, if it is convex."""
    try:
        c, b, A = obj.polynomial.truncated(2).quadratic_form()
        return _min_quadratic(c, b, A)[0]
    except DataQualityError:
        return None


def solve_general(problem: HedgeProblem, es: ExpectedSignature,
                  objective: HedgeObjective | None = None, maxiter: int = 500,
                  seed: int = 0, gtol: float = 1e-10) -> HedgeSolution:
    """Quasi-Newton minimisation of an arbitrary polynomial objective.

    Three starts are tried: the origin, the minimiser of the quadratic part
    (the mean-variance solution for quadratic risks) and a small random
    point; the best end point is returned.  Static weights with box bounds
    are handled with L-BFGS-B.

    Raises
    ------
    NumericalError
        If no start reaches a stationary point within ``maxiter`` iterations.
        The best point found is attached as ``best``.
    """
    obj = objective or assemble_objective(problem, es)
    poly = obj.polynomial
    n = obj.n_vars
    bounds = None
    if problem.mode == "semistatic" and problem.box is not None:
        bounds = [(None, None)] * obj.n_strategy + [
            (None if math.isinf(lo) else lo, None if math.isinf(hi) else hi)
            for lo, hi in problem.box]
    starts = [np.zeros(n)]
    warm = _warm_start(obj)
    if warm is not None:
        starts.append(warm)
    rng = np.random.default_rng(seed)
    starts.append(1e-2 * rng.standard_normal(n))
    if bounds is not None:
        lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
        hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
        starts = [np.clip(s, lo, hi) for s in starts]
    scale = max(1.0, float(np.abs(poly.coefficients).max(initial=0.0)))
    best = None
    for x0 in starts:
        res = optimize.minimize(poly.value_and_grad, x0, jac=True,
                                method="L-BFGS-B" if bounds else "BFGS", bounds=bounds,
                                options={"maxiter": maxiter, "gtol": gtol * scale})
        if best is None or res.fun < best.fun:
            best = res
    val, grad = poly.value_and_grad(best.x)
    if bounds is not None:
        # projected gradient: ignore components pushing against an active bound
        pg = best.x - np.clip(best.x - grad, lo, hi)
        gnorm = float(np.linalg.norm(pg))
    else:
        gnorm = float(np.linalg.norm(grad))
    converged = bool(best.success) or gnorm <= 1e-6 * scale
    info = {"method": "L-BFGS-B" if bounds else "BFGS", "iterations": int(best.nit),
            "gradient_norm": gnorm, "converged": converged, "starts": len(starts)}
    sol = _solution(problem, obj, best.x, info)
    if not converged:
        err = NumericalError(f"optimiser did not converge (gradient norm {gnorm:.3e})")
        err.best = sol
        raise err
    return sol


def solve(problem: HedgeProblem, es: ExpectedSignature, **kw) -> HedgeSolution:
    """Dispatch on the problem mode and risk degree."""
    if problem.mode == "liquidity":
        return solve_with_liquidity(problem, es, **kw)
    if problem.mode == "semistatic":
        return solve_semistatic(problem, es, **kw)
    if problem.mode == "delayed":
        return solve_delayed(problem, es, **kw)
    if problem.q == 2:
        return solve_mean_variance(problem, es, **kw)
    return solve_general(problem, es, **kw)


def solve_semistatic(problem: HedgeProblem, es: ExpectedSignature,
                     max_sweeps: int = 10000, tol: float = 1e-14) -> HedgeSolution:
    """Joint optimisation over the dynamic strategy and static weights.

    Quadratic risks with unbounded weights need a single linear solve.  With
    box bounds the dynamic part is eliminated exactly and projected
    coordinate descent runs on the reduced quadratic in the static weights.
    """
    if problem.mode != "semistatic":
        problem = replace(problem, mode="semistatic")
    obj = assemble_objective(problem, es)
    if problem.q != 2 or obj.polynomial.degree > 2:
        return solve_general(problem, es, objective=obj)
    box = problem.box
    if box is None or all(math.isinf(lo) and math.isinf(hi) for lo, hi in box):
        return solve_mean_variance(problem, es, objective=obj)
    c, b, A = obj.polynomial.quadratic_form()
    A = 0.5 * (A + A.T)
    n = obj.n_strategy
    Ass, Asb, Abb = A[:n, :n], A[:n, n:], A[n:, n:]
    bs, bb = b[:n], b[n:]
    w, V = np.linalg.eigh(Ass)
    scale = max(float(np.trace(Ass)), 1e-300)
    if w[0] < -1e-8 * scale:
        raise DataQualityError("objective is not convex in the dynamic strategy")
    keep = w > 1e-12 * scale
    pinv = (V[:, keep] / w[keep]) @ V[:, keep].T
    H = Abb - Asb.T @ pinv @ Asb
    H = 0.5 * (H + H.T)
    r = bb - Asb.T @ pinv @ bs
    lo = np.array([b_[0] for b_ in box])
    hi = np.array([b_[1] for b_ in box])
    beta = np.clip(np.zeros(len(box)), lo, hi)
    hscale = max(float(np.abs(np.diag(H)).max(initial=0.0)), 1e-300)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for j in range(beta.size):
            g = r[j] - H[j] @ beta + H[j, j] * beta[j]
            if H[j, j] > 1e-12 * hscale:
                new = np.clip(g / H[j, j], lo[j], hi[j])
            elif g > 0:
                new = hi[j] if math.isfinite(hi[j]) else beta[j]
            elif g < 0:
                new = lo[j] if math.isfinite(lo[j]) else beta[j]
            else:
                new = beta[j]
            change = max(change, abs(new - beta[j]))
            beta[j] = new
        if change <= tol * (1.0 + float(np.abs(beta).max(initial=0.0))):
            break
    theta = pinv @ (bs - Asb @ beta)
    x = np.concatenate([theta, beta])
    info = {"method": "projected_coordinate_descent", "sweeps": sweeps,
            "active_bounds": [bool(beta[j] in (lo[j], hi[j])) for j in range(beta.size)],
            "converged": sweeps < max_sweeps}
    return _solution(problem, obj, x, info)


def solve_delayed(problem: HedgeProblem, es: ExpectedSignature, **kw) -> HedgeSolution:
    """Hedge from time ``t`` on, pairing against ``prefix ⊗ conditional es``."""
    if problem.mode != "delayed":
        raise InputError("solve_delayed needs a problem in delayed mode")
    obj = assemble_objective(problem, es)
    if problem.q == 2 and obj.polynomial.degree <= 2:
        return solve_mean_variance(problem, es, objective=obj, **kw)
    return solve_general(problem, es, objective=obj, **kw)


def solve_with_liquidity(problem: HedgeProblem, es: ExpectedSignature,
                         maxiter: int = 5000) -> HedgeSolution:
    """Speed-parametrised hedge with ``||v||_2 <= M_liq``.

    For quadratic objectives this is a trust-region subproblem solved exactly
    through the secular equation; higher degrees use projected gradient
    descent with backtracking.
    """
    if problem.mode != "liquidity":
        problem = replace(problem, mode="liquidity")
    obj = assemble_objective(problem, es)
    bound = float(problem.M_liq)
    n = obj.n_vars
    poly = obj.polynomial
    if bound == 0.0:
        return _solution(problem, obj, np.zeros(n), {"method": "trivial", "binding": True,
                                                      "converged": True})
    if poly.degree <= 2:
        c, b, A = poly.quadratic_form()
        x, info = _min_quadratic(c, b, A)
        w, V, _ = info.pop("_eig")
        if np.linalg.norm(x) <= bound:
            info.update(method="linear", binding=False, converged=True, multiplier=0.0)
            return _solution(problem, obj, x, info)
        cb = V.T @ b
        w = np.maximum(w, 0.0)

        def excess(mu):
            d = w + mu
            with np.errstate(divide="ignore", invalid="ignore"):
                comp = np.where(d > 0, cb / d, 0.0)
            return float(np.linalg.norm(comp)) - bound

        hi = float(np.linalg.norm(b)) / bound * 1.01 + 1e-300
        mu = optimize.brentq(excess, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
        x = V @ (cb / (w + mu))
        x *= min(1.0, bound / np.linalg.norm(x))
        info.update(method="secular", binding=True, converged=True, multiplier=float(mu))
        return _solution(problem, obj, x, info)

    def project(z):
        nz = np.linalg.norm(z)
        return z if nz <= bound else z * (bound / nz)

    x = project(_warm_start(obj) if _warm_start(obj) is not None else np.zeros(n))
    val, g = poly.value_and_grad(x)
    step = 1.0
    it = 0
    for it in range(1, maxiter + 1):
        while True:
            cand = project(x - step * g)
            cval = poly(cand)
            if cval <= val - 1e-4 / step * float(np.sum((cand - x) ** 2)) or step < 1e-20:
                break
            step *= 0.5
        moved = float(np.linalg.norm(cand - x))
        x, (val, g) = cand, poly.value_and_grad(cand)
        step *= 2.0
        if moved <= 1e-13 * (1.0 + np.linalg.norm(x)):
            break
    info = {"method": "projected_gradient", "iterations": it,
            "binding": bool(np.linalg.norm(x) >= bound * (1 - 1e-9)),
            "converged": it < maxiter}
    return _solution(problem, obj, x, info)


# ---------------------------------------------------------------------------
# backtesting


@dataclass(frozen=True)
class BacktestReport:
    """Per-step positions and P&L of a strategy over a set of paths.

    All amounts are in units of the initial asset price.  ``pnl[:, k]`` is
    the running trading result up to ``t_k``; the last column is the
    terminal P&L after paying the claim.
    """

    times: np.ndarray
    positions: np.ndarray
    cash: np.ndarray
    pnl: np.ndarray
    costs: np.ndarray
    payoff: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.pnl[:, -1]

    def objective(self, P) -> float:
        """Sample mean of ``P`` applied to the residual ``-PnL``."""
        coeffs = risk_coefficients(P)
        return float(np.mean(np.polynomial.polynomial.polyval(-self.terminal, coeffs)))

    def summary(self) -> dict:
        pnl = self.terminal
        n = pnl.size
        return {"n_paths": int(n), "mean": float(pnl.mean()),
                "std": float(pnl.std(ddof=1)) if n > 1 else 0.0,
                "se_mean": float(pnl.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                "p5": float(np.percentile(pnl, 5)), "p95": float(np.percentile(pnl, 95)),
                "mean_cost": float(self.costs.mean())}


def _as_grid(paths) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(paths, PathEnsemble):
        return paths.times, paths.normalized()
    if isinstance(paths, DiscretePath):
        if paths.dim != 1:
            raise InputError("backtests run on one-dimensional price paths")
        x = paths.values[:, 0]
        if x[0] == 0:
            raise InputError("price path starts at 0")
        return paths.times, (x / x[0])[None]
    raise InputError("expected a PathEnsemble or DiscretePath")


def realized_payoff(f, times: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Payoff per path: from the payoff spec if known, else the functional."""
    if isinstance(f, SignaturePayoff) and f.spec is not None:
        return evaluate_payoffs(f.spec, times, prices)
    if isinstance(f, PayoffSpec):
        return evaluate_payoffs(f, times, prices)
    ell = f.f if isinstance(f, SignaturePayoff) else f
    order = max(ell.degree(), 1)
    sig = batch_signatures(leadlag_increments(times, prices), order)
    return sig @ ell.with_order(order).data


def backtest_positions(times: np.ndarray, prices: np.ndarray, positions: np.ndarray,
                       capital: float, payoff: np.ndarray, costs: np.ndarray | None = None,
                       growth: float = 1.0, start: int = 0) -> BacktestReport:
    """Self-financing P&L of given holdings.

    Args:
        times: grid ``t_0..t_n``.
        prices: (B, n + 1) price paths.
        positions: (B, n) holdings over ``[t_k, t_{k+1})``.
        capital: initial capital (grown by ``growth`` at maturity).
        payoff: (B,) realized claim.
        costs: (B, n + 1) cumulative trading costs, optional.
        start: first rebalancing index; earlier holdings are ignored.
    """
    x = np.atleast_2d(np.asarray(prices, dtype=float))
    B, n1 = x.shape
    pos = np.asarray(positions, dtype=float).reshape(B, n1 - 1).copy()
    pos[:, :start] = 0.0
    if costs is None:
        costs = np.zeros((B, n1))
    dx = np.diff(x, axis=1)
    gains = np.concatenate([np.zeros((B, 1)), np.cumsum(pos * dx, axis=1)], axis=1)
    pnl = gains - costs
    pnl[:, -1] += capital * growth - np.asarray(payoff, dtype=float).reshape(B)
    full_pos = np.concatenate([pos, np.zeros((B, 1))], axis=1)
    wealth = capital + gains - costs
    cash = wealth - full_pos * x
    return BacktestReport(np.asarray(times, dtype=float), full_pos, cash, pnl,
                          costs[:, -1], np.asarray(payoff, dtype=float).reshape(B))


def delta_hedge(times: np.ndarray, prices: np.ndarray, deltas: np.ndarray, capital: float,
                payoff: np.ndarray, alpha: float = 0.0) -> BacktestReport:
    """Discrete hedge with given deltas and fixed quadratic costs on rebalancing.

    The cost of moving from ``delta_{k-1}`` to ``delta_k`` is
    ``alpha * (delta_k - delta_{k-1})**2 / dt``, the discrete analogue of
    ``alpha int speed**2 dt``; the initial purchase is free.
    """
    d = np.atleast_2d(np.asarray(deltas, dtype=float))
    dt = np.diff(np.asarray(times, dtype=float))
    step = np.zeros_like(d)
    step[:, 1:] = alpha * np.diff(d, axis=1) ** 2 / dt[None, 1:]
    costs = np.concatenate([np.zeros((d.shape[0], 1)), np.cumsum(step, axis=1)], axis=1)
    return backtest_positions(times, prices, d, capital, payoff, costs)


def strategy_functionals(solution: HedgeSolution, problem: HedgeProblem) -> tuple[FreeTensor, FreeTensor | None]:
    """Holding functional and cumulative-cost functional over (time, price)."""
    v = solution.strategy
    if solution.parametrization == "speed":
        hold = concat_letter(v, 1)
        kind = problem.cost_kind
        if kind is None:
            return hold, None
        base = v
        if kind == "proportional":
            base = shuffle(v, FreeTensor.from_words({(): 1.0, (2,): 1.0}, 2, 1), v.order + 1)
        cost = problem.alpha * concat_letter(shuffle(base, base, 2 * base.order), 1)
        return hold, cost
    return v, None


def backtest_strategy(solution: HedgeSolution, paths, problem: HedgeProblem,
                      payoff=None, growth: float = 1.0) -> BacktestReport:
    """Run a solved strategy over test paths.

    Holdings at ``t_k`` are ``<ell, S_{0,t_k}>`` of the normalised
    augmented path (``<v 1, S_{0,t_k}>`` for speed strategies).  Costs are
    the exact integrals of the cost rate along the piecewise-linear path.

    Args:
        solution: output of a solver.
        paths: PathEnsemble or single DiscretePath.
        problem: the problem that was solved.
        payoff: realized claim values, a PayoffSpec, or None to use the
            problem's payoff.
        growth: growth factor applied to the initial capital.
    """
    times, x = _as_grid(paths)
    B, n1 = x.shape
    if n1 < 2:
        raise InputError("need at least two sample times")
    if solution.strategy.dim != 2:
        raise InputError("strategy must be a functional over (time, price)")
    hold, cost = strategy_functionals(solution, problem)
    fns = [hold] + ([cost] if cost is not None else [])
    order = max(max(fn.order for fn in fns), 1)
    aug = np.stack([np.broadcast_to(times, x.shape), x], axis=-1)
    vals = prefix_values(np.diff(aug, axis=1), order, [fn.with_order(order) for fn in fns])
    positions = vals[:, :-1, 0]
    costs = vals[:, :, 1] if cost is not None else None
    if payoff is None:
        payoff = realized_payoff(problem.f, times, x)
    elif isinstance(payoff, (PayoffSpec, SignaturePayoff, FreeTensor)):
        payoff = realized_payoff(payoff, times, x)
    payoff = np.asarray(payoff, dtype=float).reshape(B)
    start = 0
    capital = solution.p0
    if problem.mode == "delayed":
        t = problem.delay.t
        hits = np.flatnonzero(np.isclose(times, t, rtol=0, atol=1e-12))
        if hits.size == 0:
            raise InputError("delay time is not on the path grid")
        start = int(hits[0])
        capital = problem.delay.p_t
        if costs is not None:
            costs = costs - costs[:, [start]]
            costs[:, :start] = 0.0
    if solution.beta:
        basket_vals = np.column_stack([realized_payoff(g, times, x) for g in problem.basket])
        payoff = payoff - basket_vals @ np.asarray(solution.beta)
    return backtest_positions(times, x, positions, capital, payoff, costs, growth, start)
