"""Truncated free tensor algebra over a finite alphabet.

Words over the letters ``1..d`` index the coordinates of a :class:`FreeTensor`.
Coefficients are stored densely, level by level, in base-``d`` order: the word
``(a_1, ..., a_k)`` sits at flat index ``sum_j (a_j - 1) * d**(k - j)`` inside
level ``k``.  The same container represents signatures (elements of the tensor
algebra) and linear functionals on them; :func:`pair` connects the two.

Words are passed around as plain tuples of ints.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import CapacityError, InputError

Word = tuple

# Work arrays above this many entries are processed in chunks.
_CHUNK = 1 << 22


def level_size(dim: int, k: int) -> int:
    return dim**k


def tensor_size(dim: int, order: int) -> int:
    """Total number of coefficients of a tensor truncated at ``order``."""
    if dim == 1:
        return order + 1
    return (dim ** (order + 1) - 1) // (dim - 1)


def level_offset(dim: int, k: int) -> int:
    """Flat position where level ``k`` starts."""
    return tensor_size(dim, k - 1) if k > 0 else 0


def _check_word(word: Sequence[int], dim: int) -> tuple:
    w = tuple(int(a) for a in word)
    for a in w:
        if a < 1 or a > dim:
            raise InputError(f"letter {a} outside the alphabet 1..{dim}")
    return w


def word_index(word: Sequence[int], dim: int) -> int:
    """Index of ``word`` inside its level (base-``dim`` enumeration).

    Examples
    --------
    >>> word_index((2, 1), 2)
    2
    """
    w = _check_word(word, dim)
    idx = 0
    for a in w:
        idx = idx * dim + (a - 1)
    return idx


def index_word(level: int, index: int, dim: int) -> tuple:
    """Inverse of :func:`word_index` for a word of length ``level``."""
    if index < 0 or index >= dim**level:
        raise InputError(f"index {index} out of range for level {level}")
    letters = []
    for _ in range(level):
        index, r = divmod(index, dim)
        letters.append(r + 1)
    return tuple(reversed(letters))


@lru_cache(maxsize=None)
def _digits(dim: int, k: int) -> np.ndarray:
    """Zero-based letters of every level-k word, shape (dim**k, k)."""
    idx = np.arange(dim**k, dtype=np.int64)
    out = np.empty((dim**k, k), dtype=np.int64)
    for j in range(k - 1, -1, -1):
        out[:, j] = idx % dim
        idx //= dim
    out.flags.writeable = False
    return out


class FreeTensor:
    """Element of the truncated tensor algebra, or a linear functional on it.

    Parameters
    ----------
    dim : int
        Alphabet size ``d``.
    order : int
        Truncation level ``N``.
    data : array_like, optional
        Flat coefficient vector of length ``tensor_size(dim, order)``.
        Defaults to zeros.
    """

    __slots__ = ("dim", "order", "_data")

    def __init__(self, dim: int, order: int, data=None):
        if dim < 1 or order < 0:
            raise InputError("dimension must be >= 1 and order >= 0")
        self.dim = int(dim)
        self.order = int(order)
        n = tensor_size(self.dim, self.order)
        if data is None:
            arr = np.zeros(n)
        else:
            arr = np.array(data, dtype=float).reshape(-1)
            if arr.size != n:
                raise InputError(f"expected {n} coefficients, got {arr.size}")
        arr.flags.writeable = False
        self._data = arr

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, dim: int, order: int) -> "FreeTensor":
        return cls(dim, order)

    @classmethod
    def unit(cls, dim: int, order: int) -> "FreeTensor":
        """The empty word, i.e. the identity of the tensor algebra."""
        data = np.zeros(tensor_size(dim, order))
        data[0] = 1.0
        return cls(dim, order, data)

    @classmethod
    def from_words(cls, coeffs: Mapping[Sequence[int], float] | Iterable,
                   dim: int, order: int | None = None) -> "FreeTensor":
        """Build from a word -> coefficient mapping (or iterable of pairs).

        The order defaults to the longest word present.
        """
        items = list(coeffs.items()) if isinstance(coeffs, Mapping) else list(coeffs)
        words = [(_check_word(w, dim), float(c)) for w, c in items]
        top = max((len(w) for w, _ in words), default=0)
        if order is None:
            order = top
        elif top > order:
            raise CapacityError(f"word of length {top} exceeds order {order}")
        data = np.zeros(tensor_size(dim, order))
        for w, c in words:
            data[level_offset(dim, len(w)) + word_index(w, dim)] += c
        return cls(dim, order, data)

    @classmethod
    def word(cls, letters: Sequence[int], dim: int, order: int | None = None,
             coeff: float = 1.0) -> "FreeTensor":
        return cls.from_words({tuple(letters): coeff}, dim, order)

    @classmethod
    def from_levels(cls, levels: Sequence[Sequence[float]], dim: int) -> "FreeTensor":
        order = len(levels) - 1
        if order < 0:
            raise InputError("at least one level is required")
        parts = []
        for k, lv in enumerate(levels):
            a = np.asarray(lv, dtype=float).reshape(-1)
            if a.size != dim**k:
                raise InputError(f"level {k} must have {dim**k} coefficients")
            parts.append(a)
        return cls(dim, order, np.concatenate(parts))

    # access -------------------------------------------------------------
    @property
    def data(self) -> np.ndarray:
        """Read-only flat coefficient vector."""
        return self._data

    def level(self, k: int) -> np.ndarray:
        if k < 0 or k > self.order:
            raise InputError(f"level {k} outside 0..{self.order}")
        start = level_offset(self.dim, k)
        return self._data[start:start + self.dim**k]

    def levels(self) -> list[np.ndarray]:
        return [self.level(k) for k in range(self.order + 1)]

    def coefficient(self, word: Sequence[int]) -> float:
        w = _check_word(word, self.dim)
        if len(w) > self.order:
            return 0.0
        return float(self._data[level_offset(self.dim, len(w)) + word_index(w, self.dim)])

    __getitem__ = coefficient

    def degree(self) -> int:
        """Highest level carrying a nonzero coefficient (-1 for zero)."""
        for k in range(self.order, -1, -1):
            if np.any(self.level(k)):
                return k
        return -1

    def items(self) -> Iterator[tuple[tuple, float]]:
        """Iterate over ``(word, coefficient)`` for nonzero coefficients."""
        for k in range(self.order + 1):
            lv = self.level(k)
            for i in np.flatnonzero(lv):
                yield index_word(k, int(i), self.dim), float(lv[i])

    def to_dict(self) -> dict:
        return {"dimension": self.dim, "order": self.order,
                "levels": [lv.tolist() for lv in self.levels()]}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FreeTensor":
        try:
            dim = int(obj["dimension"])
            levels = obj["levels"]
            order = int(obj.get("order", len(levels) - 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed tensor record: {exc}") from exc
        if order != len(levels) - 1:
            raise InputError("order does not match the number of levels")
        return cls.from_levels(levels, dim)

    # reshaping ----------------------------------------------------------
    def with_order(self, order: int, strict: bool = False) -> "FreeTensor":
        """Pad with zeros or truncate to ``order``.

        With ``strict=True``, dropping nonzero coefficients raises.
        """
        if order == self.order:
            return self
        n = tensor_size(self.dim, order)
        if order > self.order:
            data = np.zeros(n)
            data[:self._data.size] = self._data
        else:
            if strict and np.any(self._data[n:]):
                raise CapacityError(f"nonzero coefficients above order {order}")
            data = self._data[:n]
        return FreeTensor(self.dim, order, data)

    # arithmetic ---------------------------------------------------------
    def _aligned(self, other: "FreeTensor") -> tuple[np.ndarray, np.ndarray, int]:
        if not isinstance(other, FreeTensor):
            raise InputError("operand is not a FreeTensor")
        if other.dim != self.dim:
            raise InputError(f"dimension mismatch: {self.dim} vs {other.dim}")
        order = max(self.order, other.order)
        return self.with_order(order)._data, other.with_order(order)._data, order

    def __add__(self, other):
        a, b, order = self._aligned(other)
        return FreeTensor(self.dim, order, a + b)

    def __sub__(self, other):
        a, b, order = self._aligned(other)
        return FreeTensor(self.dim, order, a - b)

    def __mul__(self, c):
        if isinstance(c, FreeTensor):
            return NotImplemented
        return FreeTensor(self.dim, self.order, self._data * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return FreeTensor(self.dim, self.order, self._data / float(c))

    def __neg__(self):
        return FreeTensor(self.dim, self.order, -self._data)

    def __eq__(self, other):
        if not isinstance(other, FreeTensor):
            return NotImplemented
        return (self.dim == other.dim and self.order == other.order
                and np.array_equal(self._data, other._data))

    __hash__ = None

    def allclose(self, other: "FreeTensor", rtol=1e-12, atol=1e-12) -> bool:
        a, b, _ = self._aligned(other)
        return bool(np.allclose(a, b, rtol=rtol, atol=atol))

    def __repr__(self) -> str:
        terms = [f"{c:+.6g}*{''.join(map(str, w)) or 'e'}" for w, c in list(self.items())[:8]]
        more = " ..." if sum(1 for _ in self.items()) > 8 else ""
        return f"FreeTensor(d={self.dim}, N={self.order}: {' '.join(terms) or '0'}{more})"


# ---------------------------------------------------------------------------
# products


def tensor_product(a: FreeTensor, b: FreeTensor, order: int | None = None) -> FreeTensor:
    """Truncated concatenation (tensor) product ``a ⊗ b``."""
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if order is None:
        order = min(a.order, b.order)
    d = a.dim
    out = np.zeros(tensor_size(d, order))
    for m in range(order + 1):
        start = level_offset(d, m)
        acc = out[start:start + d**m]
        for p in range(m + 1):
            q = m - p
            if p > a.order or q > b.order:
                continue
            ap, bq = a.level(p), b.level(q)
            if not ap.any() or not bq.any():
                continue
            acc += np.outer(ap, bq).reshape(-1)
    return FreeTensor(d, order, out)


@lru_cache(maxsize=None)
def _interleavings(p: int, q: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Index tables for the shuffles of a length-p word with a length-q word.

    Row ``s`` lists, for every word index of each operand, its contribution
    to the flat index of the interleaved word under interleaving ``s``; the
    result index is ``A[s, i] + B[s, j]``.
    """
    n = p + q
    pos_a = []
    pos_b = []
    for chosen in combinations(range(n), p):
        rest = [i for i in range(n) if i not in chosen]
        pos_a.append(chosen)
        pos_b.append(rest)
    weights_a = np.array([[dim ** (n - 1 - s) for s in row] for row in pos_a],
                         dtype=np.int64).reshape(len(pos_a), p)
    weights_b = np.array([[dim ** (n - 1 - s) for s in row] for row in pos_b],
                         dtype=np.int64).reshape(len(pos_b), q)
    A = weights_a @ _digits(dim, p).T
    B = weights_b @ _digits(dim, q).T
    A.flags.writeable = False
    B.flags.writeable = False
    return A, B


def _block_pairs(a: FreeTensor, b: FreeTensor, order: int):
    """Yield nonzero level blocks (p, ia, va, q, ib, vb) with p + q <= order."""
    nz_a = []
    for p in range(min(a.order, order) + 1):
        lv = a.level(p)
        ia = np.flatnonzero(lv)
        if ia.size:
            nz_a.append((p, ia, lv[ia]))
    nz_b = []
    for q in range(min(b.order, order) + 1):
        lv = b.level(q)
        ib = np.flatnonzero(lv)
        if ib.size:
            nz_b.append((q, ib, lv[ib]))
    for p, ia, va in nz_a:
        for q, ib, vb in nz_b:
            if p + q <= order:
                yield p, ia, va, q, ib, vb


def _pattern_chunks(n_pat: int, na: int, nb: int):
    step = max(1, _CHUNK // max(1, na * nb))
    for s in range(0, n_pat, step):
        yield slice(s, min(n_pat, s + step))


def shuffle(a: FreeTensor, b: FreeTensor, order: int | None = None) -> FreeTensor:
    """Shuffle product ``a ⧢ b`` truncated at ``order``.

    Terms above ``order`` are dropped.  The default order is
    ``a.order + b.order``.
    """
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    d = a.dim
    if order is None:
        order = a.order + b.order
    out = np.zeros(tensor_size(d, order))
    for p, ia, va, q, ib, vb in _block_pairs(a, b, order):
        start = level_offset(d, p + q)
        size = d ** (p + q)
        if p == 0 or q == 0:
            # one operand is a multiple of the empty word
            if p == 0:
                out[start + ib] += va[0] * vb
            else:
                out[start + ia] += vb[0] * va
            continue
        A, B = _interleavings(p, q, d)
        vals = np.outer(va, vb)
        for sl in _pattern_chunks(A.shape[0], ia.size, ib.size):
            idx = A[sl, ia][:, :, None] + B[sl, ib][:, None, :]
            w = np.broadcast_to(vals, idx.shape)
            out[start:start + size] += np.bincount(idx.ravel(), weights=w.ravel(),
                                                   minlength=size)
    return FreeTensor(d, order, out)


def shuffle_pairing(a: FreeTensor, b: FreeTensor, S: FreeTensor,
                    truncate: bool = False) -> float:
    """``<a ⧢ b, S>`` without materialising the shuffle.

    Unless ``truncate`` is set, terms above ``S.order`` must vanish;
    otherwise a :class:`CapacityError` is raised.
    """
    if not (a.dim == b.dim == S.dim):
        raise InputError("dimension mismatch")
    da, db = a.degree(), b.degree()
    if not truncate and da >= 0 and db >= 0 and da + db > S.order:
        raise CapacityError(f"shuffle reaches order {da + db} > {S.order}")
    d = a.dim
    total = 0.0
    for p, ia, va, q, ib, vb in _block_pairs(a, b, S.order):
        lv = S.level(p + q)
        if p == 0 or q == 0:
            total += float(va[0] * (vb @ lv[ib])) if p == 0 else float(vb[0] * (va @ lv[ia]))
            continue
        A, B = _interleavings(p, q, d)
        for sl in _pattern_chunks(A.shape[0], ia.size, ib.size):
            idx = A[sl, ia][:, :, None] + B[sl, ib][:, None, :]
            total += float(np.einsum("i,sij,j->", va, lv[idx], vb))
    return total


def shuffle_power(ell: FreeTensor, n: int, order: int) -> FreeTensor:
    """``ell ⧢ ... ⧢ ell`` (``n`` factors), truncated at ``order``."""
    result = FreeTensor.unit(ell.dim, order)
    for _ in range(n):
        result = shuffle(result, ell, order)
    return result


def poly_shuffle_lift(coeffs: Sequence[float], ell: FreeTensor, order: int,
                      allow_truncation: bool = False) -> FreeTensor:
    """Apply a polynomial to ``ell`` with multiplication replaced by shuffle.

    Parameters
    ----------
    coeffs : sequence of float
        ``a_0, ..., a_q`` of ``P(x) = sum_k a_k x**k``.
    ell : FreeTensor
        The functional to lift.
    order : int
        Truncation order of the result.
    allow_truncation : bool
        If False, require ``q * degree(ell) <= order`` so that nothing is lost.
    """
    coeffs = [float(c) for c in coeffs]
    q = len(coeffs) - 1
    while q > 0 and coeffs[q] == 0.0:
        q -= 1
    deg = ell.degree()
    if not allow_truncation and deg > 0 and q * deg > order:
        raise CapacityError(
            f"shuffle powers reach order {q * deg} > {order}; "
            "raise the order or allow truncation")
    result = coeffs[0] * FreeTensor.unit(ell.dim, order)
    power = FreeTensor.unit(ell.dim, order)
    for k in range(1, q + 1):
        power = shuffle(power, ell, order)
        if coeffs[k] != 0.0:
            result = result + coeffs[k] * power
    return result


def concat_letter(ell: FreeTensor, letter: int, order: int | None = None) -> FreeTensor:
    """Append ``letter`` to every word of ``ell`` (the map ``w -> w·letter``)."""
    d = ell.dim
    if letter < 1 or letter > d:
        raise InputError(f"letter {letter} outside the alphabet 1..{d}")
    if order is None:
        order = ell.order + 1
    deg = ell.degree()
    if deg + 1 > order:
        raise CapacityError(f"concatenation reaches order {deg + 1} > {order}")
    out = np.zeros(tensor_size(d, order))
    for k in range(min(ell.order, order - 1) + 1):
        lv = ell.level(k)
        start = level_offset(d, k + 1)
        out[start + np.arange(d**k) * d + (letter - 1)] = lv
    return FreeTensor(d, order, out)


def pair(ell: FreeTensor, S: FreeTensor) -> float:
    """Dual pairing ``<ell, S> = sum_w ell_w S_w``."""
    if ell.dim != S.dim:
        raise InputError(f"dimension mismatch: {ell.dim} vs {S.dim}")
    if ell.order > S.order:
        if ell.degree() > S.order:
            raise CapacityError(
                f"functional has mass at level {ell.degree()} > tensor order {S.order}")
        ell = ell.with_order(S.order)
    n = ell.data.size
    return float(ell.data @ S.data[:n])


def remap_letters(ell: FreeTensor, letter_map: Sequence[int], dim: int) -> FreeTensor:
    """Rename letters: letter ``a`` becomes ``letter_map[a - 1]`` in a ``dim``-letter alphabet."""
    lm = np.asarray(letter_map, dtype=np.int64)
    if lm.size != ell.dim or lm.min() < 1 or lm.max() > dim:
        raise InputError("invalid letter map")
    out = np.zeros(tensor_size(dim, ell.order))
    for k in range(ell.order + 1):
        out[level_offset(dim, k) + _remap_index(ell.dim, dim, tuple(lm.tolist()), k)] = ell.level(k)
    return FreeTensor(dim, ell.order, out)


@lru_cache(maxsize=None)
def _remap_index(src_dim: int, dim: int, letter_map: tuple, k: int) -> np.ndarray:
    digits = np.asarray(letter_map, dtype=np.int64)[_digits(src_dim, k)] - 1
    weights = dim ** np.arange(k - 1, -1, -1, dtype=np.int64)
    out = digits @ weights if k else np.zeros(1, dtype=np.int64)
    out.flags.writeable = False
    return out


def embed_lag(ell: FreeTensor) -> FreeTensor:
    """Embed a functional on (time, price) into the lead-lag alphabet.

    Letters 1 and 2 keep their names and become the lag time and lag price
    letters of the 4-letter alphabet.
    """
    if ell.dim != 2:
        raise InputError("embed_lag expects a functional over 2 letters")
    return remap_letters(ell, (1, 2), 4)


def restrict_letters(S: FreeTensor, letters: Sequence[int]) -> FreeTensor:
    """Coordinates of ``S`` on words over ``letters``, relabelled ``1..len(letters)``.

    For a signature this is the signature of the projected path.
    """
    letters = tuple(int(a) for a in letters)
    out = np.empty(tensor_size(len(letters), S.order))
    for k in range(S.order + 1):
        idx = _remap_index(len(letters), S.dim, letters, k)
        out[level_offset(len(letters), k):level_offset(len(letters), k + 1)] = S.level(k)[idx]
    return FreeTensor(len(letters), S.order, out)


def letter_support_mask(dim: int, order: int, letters: Sequence[int]) -> np.ndarray:
    """Boolean mask of the coefficients indexed by words over ``letters``."""
    mask = np.zeros(tensor_size(dim, order), dtype=bool)
    letters = tuple(int(a) for a in letters)
    for k in range(order + 1):
        mask[level_offset(dim, k) + _remap_index(len(letters), dim, letters, k)] = True
    return mask
