"""Truncated signatures of piecewise-linear paths.

The signature of a piecewise-linear path is the ordered tensor product of the
tensor exponentials of its increments.  The compiled kernels below apply
``S <- S ⊗ exp(h)`` in place with a Horner scheme.  Internally they store each
level with the *first* letter as the least significant digit, so that
right-multiplication by a letter scales a contiguous block; results are
permuted back to the canonical base-d order before leaving this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .errors import InputError
from .tensor_words import FreeTensor, _digits, level_offset, tensor_size, tensor_product


@dataclass(frozen=True)
class DiscretePath:
    """Time-stamped samples of a path in R^m.

    Attributes
    ----------
    times : ndarray, shape (n,)
        Strictly increasing sample times.
    values : ndarray, shape (n, m)
        Sample values; a 1-d input is read as m = 1.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.size:
            raise InputError("times and values must have the same number of samples")
        if t.size < 2:
            raise InputError("a path needs at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise InputError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InputError("path contains non-finite values")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.size

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


class TruncatedSignature(FreeTensor):
    """A group-like FreeTensor together with the interval it covers."""

    __slots__ = ("interval",)

    def __init__(self, dim: int, order: int, data=None, interval=(0.0, 0.0)):
        super().__init__(dim, order, data)
        self.interval = (float(interval[0]), float(interval[1]))

    @classmethod
    def wrap(cls, tensor: FreeTensor, interval) -> "TruncatedSignature":
        return cls(tensor.dim, tensor.order, tensor.data, interval)


# ---------------------------------------------------------------------------
# layout helpers


@lru_cache(maxsize=None)
def _layout(dim: int, order: int):
    off = np.array([level_offset(dim, k) for k in range(order + 2)], dtype=np.int64)
    pw = np.array([dim**k for k in range(order + 1)], dtype=np.int64)
    return off, pw


@lru_cache(maxsize=None)
def _to_canonical(dim: int, order: int) -> np.ndarray:
    """``canonical = reversed[perm]`` for flat vectors."""
    perm = np.empty(tensor_size(dim, order), dtype=np.int64)
    for k in range(order + 1):
        start = level_offset(dim, k)
        digits = _digits(dim, k)
        weights = dim ** np.arange(k, dtype=np.int64)
        perm[start:start + dim**k] = start + (digits @ weights if k else 0)
    perm.flags.writeable = False
    return perm


@lru_cache(maxsize=None)
def _to_reversed(dim: int, order: int) -> np.ndarray:
    perm = np.argsort(_to_canonical(dim, order))
    perm.flags.writeable = False
    return perm


# ---------------------------------------------------------------------------
# compiled kernels (reversed layout)


@njit(cache=True, fastmath=True)
def _mul_exp(S, h, d, N, off, pw, cur, nxt, src, nz):
    r = 0
    for a in range(d):
        if h[a] != 0.0:
            nz[r] = a
            r += 1
    if r == 0:
        return
    for m in range(N, 0, -1):
        for j in range(r):
            cur[j] = S[0] * h[nz[j]] / m
        for i in range(1, m):
            sz = pw[i]
            blk = pw[i - 1]
            oi = off[i]
            for w in range(sz):
                src[w] = S[oi + w]
            for j in range(r):
                base = nz[j] * blk
                cb = j * blk
                for w in range(blk):
                    src[base + w] += cur[cb + w]
            c = 1.0 / (m - i)
            for j in range(r):
                ha = h[nz[j]] * c
                nb = j * sz
                for w in range(sz):
                    nxt[nb + w] = src[w] * ha
            tmp = cur
            cur = nxt
            nxt = tmp
        om = off[m]
        blk = pw[m - 1]
        for j in range(r):
            base = om + nz[j] * blk
            cb = j * blk
            for w in range(blk):
                S[base + w] += cur[cb + w]


@njit(cache=True)
def _buffers(d, N):
    n = d**N if N > 0 else 1
    return np.empty(n), np.empty(n), np.empty(n), np.empty(d, np.int64)


@njit(cache=True)
def _sig_many(incs, N, off, pw):
    B, n, d = incs.shape
    out = np.zeros((B, off[N + 1]))
    cur, nxt, src, nz = _buffers(d, N)
    for p in range(B):
        S = out[p]
        S[0] = 1.0
        for k in range(n):
            _mul_exp(S, incs[p, k], d, N, off, pw, cur, nxt, src, nz)
    return out


@njit(cache=True)
def _sig_moments(incs, N, off, pw, total, total_sq):
    B, n, d = incs.shape
    S = np.empty(off[N + 1])
    cur, nxt, src, nz = _buffers(d, N)
    for p in range(B):
        S[:] = 0.0
        S[0] = 1.0
        for k in range(n):
            _mul_exp(S, incs[p, k], d, N, off, pw, cur, nxt, src, nz)
        for i in range(S.size):
            total[i] += S[i]
            total_sq[i] += S[i] * S[i]


@njit(cache=True)
def _sig_prefix(incs, N, off, pw):
    n, d = incs.shape
    out = np.zeros((n + 1, off[N + 1]))
    S = np.zeros(off[N + 1])
    S[0] = 1.0
    out[0] = S
    cur, nxt, src, nz = _buffers(d, N)
    for k in range(n):
        _mul_exp(S, incs[k], d, N, off, pw, cur, nxt, src, nz)
        out[k + 1] = S
    return out


@njit(cache=True)
def _prefix_pairings(incs, N, off, pw, L):
    """Values <L_j, S_{0,t_k}> for every path p, sample k and functional j."""
    B, n, d = incs.shape
    F = L.shape[0]
    out = np.zeros((B, n + 1, F))
    S = np.empty(off[N + 1])
    cur, nxt, src, nz = _buffers(d, N)
    for p in range(B):
        S[:] = 0.0
        S[0] = 1.0
        for j in range(F):
            out[p, 0, j] = L[j, 0]
        for k in range(n):
            _mul_exp(S, incs[p, k], d, N, off, pw, cur, nxt, src, nz)
            for j in range(F):
                acc = 0.0
                for i in range(S.size):
                    acc += L[j, i] * S[i]
                out[p, k + 1, j] = acc
    return out


# ---------------------------------------------------------------------------
# array-level API


def _as_increments(increments) -> np.ndarray:
    a = np.ascontiguousarray(increments, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise InputError("increments must have shape (n_paths, n_segments, d)")
    return a


def batch_signatures(increments: np.ndarray, order: int) -> np.ndarray:
    """Signatures of many piecewise-linear paths.

    Args:
        increments: array (n_paths, n_segments, d) of segment increments.
        order: truncation level.

    Returns:
        Array (n_paths, tensor_size(d, order)) in canonical word order.
    """
    incs = _as_increments(increments)
    d = incs.shape[2]
    off, pw = _layout(d, order)
    raw = _sig_many(incs, order, off, pw)
    return raw[:, _to_canonical(d, order)]


def signature_moments(increments: np.ndarray, order: int,
                      total: np.ndarray | None = None,
                      total_sq: np.ndarray | None = None):
    """Accumulate coefficient-wise sums and sums of squares of signatures.

    The accumulators are in the internal (reversed) layout; convert the final
    result with :func:`from_internal`.  Paths are added in index order, so the
    result is bit-reproducible for a fixed chunking.
    """
    incs = _as_increments(increments)
    d = incs.shape[2]
    off, pw = _layout(d, order)
    n = tensor_size(d, order)
    if total is None:
        total = np.zeros(n)
    if total_sq is None:
        total_sq = np.zeros(n)
    _sig_moments(incs, order, off, pw, total, total_sq)
    return total, total_sq


def from_internal(raw: np.ndarray, dim: int, order: int) -> np.ndarray:
    return raw[..., _to_canonical(dim, order)]


def to_internal(flat: np.ndarray, dim: int, order: int) -> np.ndarray:
    return flat[..., _to_reversed(dim, order)]


def prefix_values(increments: np.ndarray, order: int, functionals: Sequence[FreeTensor]) -> np.ndarray:
    """Pair functionals with every prefix signature of every path.

    Returns an array (n_paths, n_segments + 1, n_functionals).
    """
    incs = _as_increments(increments)
    d = incs.shape[2]
    off, pw = _layout(d, order)
    L = np.zeros((len(functionals), tensor_size(d, order)))
    for j, ell in enumerate(functionals):
        if ell.dim != d:
            raise InputError("functional dimension does not match the path")
        L[j] = to_internal(ell.with_order(order, strict=True).data, d, order)
    return _prefix_pairings(incs, order, off, pw, L)


# ---------------------------------------------------------------------------
# object-level API


def segment_signature(increment: Sequence[float], order: int) -> TruncatedSignature:
    """Tensor exponential of one linear segment: level k is ``h^{⊗k}/k!``."""
    h = np.asarray(increment, dtype=float).reshape(-1)
    d = h.size
    if d < 1:
        raise InputError("increment must be non-empty")
    parts = [np.ones(1)]
    lv = np.ones(1)
    for k in range(1, order + 1):
        lv = np.outer(lv, h).reshape(-1) / k
        parts.append(lv)
    return TruncatedSignature(d, order, np.concatenate(parts), (0.0, 1.0))


def chen_concat(S1: FreeTensor, S2: FreeTensor) -> TruncatedSignature:
    """Signature over the concatenated interval: ``S1 ⊗ S2`` truncated."""
    if S1.dim != S2.dim or S1.order != S2.order:
        raise InputError("signatures must share dimension and order")
    i1 = getattr(S1, "interval", None)
    i2 = getattr(S2, "interval", None)
    if i1 is not None and i2 is not None and i1 != i2:
        if not np.isclose(i1[1], i2[0]):
            raise InputError(f"intervals {i1} and {i2} do not join")
        interval = (i1[0], i2[1])
    else:
        interval = i1 or i2 or (0.0, 0.0)
    return TruncatedSignature.wrap(tensor_product(S1, S2), interval)


def _path_increments(path) -> tuple[np.ndarray, tuple[float, float]]:
    if isinstance(path, DiscretePath):
        return path.increments(), (path.times[0], path.times[-1])
    values = np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] < 2:
        raise InputError("a path needs at least 2 samples")
    return np.diff(values, axis=0), (0.0, 1.0)


def path_signature(path, order: int) -> TruncatedSignature:
    """Signature of the piecewise-linear interpolation of ``path``.

    ``path`` is a :class:`DiscretePath` or an array of knot values (n, m).
    """
    incs, interval = _path_increments(path)
    d = incs.shape[1]
    data = batch_signatures(incs[None], order)[0]
    return TruncatedSignature(d, order, data, interval)


def prefix_signatures(path, order: int) -> list[TruncatedSignature]:
    """``S_{0,t_k}`` for every sample index ``k`` (the first is the identity)."""
    incs, interval = _path_increments(path)
    d = incs.shape[1]
    off, pw = _layout(d, order)
    raw = _sig_prefix(np.ascontiguousarray(incs), order, off, pw)
    flat = from_internal(raw, d, order)
    times = path.times if isinstance(path, DiscretePath) else np.linspace(*interval, len(flat))
    return [TruncatedSignature(d, order, flat[k], (times[0], times[k])) for k in range(len(flat))]
