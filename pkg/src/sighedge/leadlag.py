"""Time augmentation and the lead-lag transform of sampled price paths.

The lead-lag path lives in R^4 with letters

    1 = lag time, 2 = lag price, 3 = lead time, 4 = lead price.

With the default ``"adapted"`` scheme the knots are

    (Z_0, Z_0), (Z_0, Z_1), (Z_1, Z_1), (Z_1, Z_2), ..., (Z_n, Z_n)

where ``Z_k = (t_k, X_k)`` and each knot is written (lag, lead): the lead
copy moves first and the lag copy catches up.  At a knot ``(Z_k, Z_{k+1})``
the lead is exactly one sample ahead.  For this scheme integrals against the
lead price are left-point sums, and the Lévy area between the two price
copies is the realized quadratic variation, both without discretization
error.

The ``"two_step"`` scheme follows the other common indexing, where the lead
runs up to two samples ahead inside each block:

    (Z_0, Z_0), (Z_0, Z_1), (Z_0, Z_2), (Z_1, Z_2), (Z_1, Z_3), ..., (Z_n, Z_n)

It has the same lag and lead projections and converges to the same limit,
but its cross integrals use the lag value two samples back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .signature_core import (DiscretePath, TruncatedSignature, batch_signatures,
                             prefix_values)
from .tensor_words import FreeTensor

SCHEMES = ("adapted", "two_step")

LAG_TIME, LAG_PRICE, LEAD_TIME, LEAD_PRICE = 1, 2, 3, 4


@dataclass(frozen=True)
class AugmentedPath:
    """A (time, price) path; ``path.values[:, 0]`` equals ``path.times``."""

    path: DiscretePath
    normalized: bool = False

    def __post_init__(self):
        if self.path.dim != 2:
            raise InputError("an augmented path has exactly two coordinates")
        if not np.allclose(self.path.values[:, 0], self.path.times, rtol=0, atol=0):
            raise InputError("first coordinate must equal the sample times")

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def prices(self) -> np.ndarray:
        return self.path.values[:, 1]

    def __len__(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class LeadLagPath:
    """Knot values of a lead-lag path in R^4 (knot times are not kept)."""

    knots: np.ndarray
    source: AugmentedPath
    scheme: str = "adapted"


def augment(path: DiscretePath, normalize: bool = True) -> AugmentedPath:
    """Prepend time to a one-dimensional price path.

    If ``normalize`` is set, prices are divided by the initial price.
    """
    if path.dim != 1:
        raise InputError("augment expects a one-dimensional price path")
    x = path.values[:, 0]
    if normalize:
        if x[0] == 0:
            raise InputError("cannot normalize a path starting at 0")
        x = x / x[0]
    return AugmentedPath(DiscretePath(path.times, np.column_stack([path.times, x])),
                         normalized=normalize)


def _as_augmented(path) -> AugmentedPath:
    if isinstance(path, AugmentedPath):
        return path
    if isinstance(path, DiscretePath):
        if path.dim == 1:
            return augment(path, normalize=False)
        return AugmentedPath(path)
    raise InputError("expected an AugmentedPath or DiscretePath")


def leadlag_knots(Z: np.ndarray, scheme: str = "adapted") -> np.ndarray:
    """Lead-lag knot values for sample arrays.

    Parameters
    ----------
    Z : ndarray, shape (..., n + 1, m)
        Sampled values; leading axes are batch axes.
    scheme : {"adapted", "two_step"}

    Returns
    -------
    ndarray, shape (..., K, 2 m)
        Knots as (lag, lead) pairs.
    """
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[-2] - 1
    if n < 1:
        raise InputError("need at least two samples")
    if scheme == "adapted":
        lag_idx = np.repeat(np.arange(n + 1), 2)[:-1]
        lead_idx = np.concatenate([[0], np.repeat(np.arange(1, n + 1), 2)])
    elif scheme == "two_step":
        if n < 2:
            raise InputError("the two-step scheme needs at least three samples")
        lag = [0, 0]
        lead = [0, 1]
        for k in range(n - 1):
            lag += [k, k + 1]
            lead += [k + 2, k + 2]
        lag.append(n)
        lead.append(n)
        lag_idx, lead_idx = np.array(lag), np.array(lead)
    else:
        raise InputError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return np.concatenate([Z[..., lag_idx, :], Z[..., lead_idx, :]], axis=-1)


def hoff_transform(path, scheme: str = "adapted") -> LeadLagPath:
    """Lead-lag transform of an augmented path."""
    aug = _as_augmented(path)
    if len(aug) < 3:
        raise InputError("the lead-lag transform needs at least three samples")
    return LeadLagPath(leadlag_knots(aug.path.values, scheme), aug, scheme)


def leadlag_increments(times: np.ndarray, prices: np.ndarray,
                       letters=(1, 2, 3, 4), scheme: str = "adapted") -> np.ndarray:
    """Segment increments of lead-lag paths for a batch of price paths.

    Args:
        times: shared sample grid, shape (n + 1,).
        prices: shape (n_paths, n + 1).
        letters: lead-lag letters to keep (projection onto those coordinates).
        scheme: knot scheme.

    Returns:
        Array (n_paths, n_segments, len(letters)).
    """
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    t = np.broadcast_to(np.asarray(times, dtype=float), prices.shape)
    Z = np.stack([t, prices], axis=-1)
    knots = leadlag_knots(Z, scheme)[..., [a - 1 for a in letters]]
    return np.ascontiguousarray(np.diff(knots, axis=-2))


def leadlag_signature(path, order: int, scheme: str = "adapted") -> TruncatedSignature:
    """Signature of the lead-lag transform over the 4-letter alphabet."""
    ll = hoff_transform(path, scheme)
    incs = np.diff(ll.knots, axis=0)
    data = batch_signatures(incs[None], order)[0]
    t = ll.source.times
    return TruncatedSignature(4, order, data, (t[0], t[-1]))


def realized_qv(path) -> float:
    """Sum of squared increments of a one-dimensional path."""
    if isinstance(path, AugmentedPath):
        x = path.prices
    elif isinstance(path, DiscretePath):
        if path.dim != 1:
            raise InputError("realized_qv expects a one-dimensional path")
        x = path.values[:, 0]
    else:
        x = np.asarray(path, dtype=float).reshape(-1)
    return float(np.sum(np.diff(x) ** 2))


def left_point_integral(ell: FreeTensor, path) -> float:
    """Left-point sum  sum_k <ell, S_{0,t_k}> (X_{k+1} - X_k).

    ``S_{0,t_k}`` is the signature of the augmented path up to ``t_k`` and
    ``ell`` is a functional over the letters (time, price).
    """
    aug = _as_augmented(path)
    if ell.dim != 2:
        raise InputError("the integrand must be a functional over 2 letters")
    incs = np.diff(aug.path.values, axis=0)
    order = max(ell.degree(), 0)
    vals = prefix_values(incs[None], order, [ell.with_order(order)])[0, :-1, 0]
    return float(vals @ incs[:, 1])
