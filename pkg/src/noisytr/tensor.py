"""Dense tensor primitives: linear indexing, permutations and unfoldings.

Tensors are plain :class:`numpy.ndarray` objects.  Every reshape in this
module uses column-major (Fortran) order so that the first index varies
fastest, which is what the multi-index map below describes.  Mode numbers
and element indices at the public API are 1-based; everything internal is
0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, prod
from typing import Sequence

import numpy as np


def _check_mode(k: int, K: int) -> None:
    if not 1 <= k <= K:
        raise ValueError(f"mode {k} out of range for an order-{K} tensor")


def as_tensor(t) -> np.ndarray:
    """Validate and return `t` as a float ndarray of order >= 2."""
    t = np.asarray(t, dtype=float)
    if t.ndim < 2:
        raise ValueError(f"tensors must have order >= 2, got {t.ndim}")
    return t


def multi_index(indices: Sequence[int], dims: Sequence[int]) -> int:
    """Column-major linear index of a 1-based index tuple (1-based result).

    >>> multi_index((2, 3), (3, 4))
    8
    """
    if len(indices) != len(dims):
        raise ValueError(f"got {len(indices)} indices for {len(dims)} modes")
    lin = 0
    stride = 1
    for mode, (i, d) in enumerate(zip(indices, dims), start=1):
        if not 1 <= i <= d:
            raise IndexError(f"index {i} out of bounds for mode {mode} of extent {d}")
        lin += (i - 1) * stride
        stride *= d
    return lin + 1


def linear_to_subscripts(lin: int, dims: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`multi_index` (both 1-based)."""
    D = prod(dims)
    if not 1 <= lin <= D:
        raise IndexError(f"linear index {lin} out of bounds for size {D}")
    sub = np.unravel_index(lin - 1, tuple(dims), order="F")
    return tuple(int(s) + 1 for s in sub)


def permute(t: np.ndarray, order: Sequence[int]) -> np.ndarray:
    """MATLAB-style ``permute`` with a 1-based mode order.

    Result mode ``j`` is input mode ``order[j]``.
    """
    K = np.ndim(t)
    order = list(order)
    if sorted(order) != list(range(1, K + 1)):
        raise ValueError(f"{order} is not a permutation of 1..{K}")
    return np.transpose(t, [o - 1 for o in order])


def inverse_permutation(order: Sequence[int]) -> list[int]:
    inv = [0] * len(order)
    for pos, o in enumerate(order, start=1):
        inv[o - 1] = pos
    return inv


def vec(t: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.reshape(t, -1, order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return np.reshape(v, tuple(dims), order="F")


def _unfold(t: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    # rows/cols are 0-based mode lists
    shape = t.shape
    d1 = prod(shape[m] for m in rows)
    d2 = prod(shape[m] for m in cols)
    return np.reshape(np.transpose(t, list(rows) + list(cols)), (d1, d2), order="F")


def _fold(m: np.ndarray, rows: Sequence[int], cols: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    perm = list(rows) + list(cols)
    expected = (prod(dims[p] for p in rows), prod(dims[p] for p in cols))
    if m.shape != expected:
        raise ValueError(f"matrix of shape {m.shape} cannot fold to dims {tuple(dims)}")
    pdims = [dims[p] for p in perm]
    return np.transpose(np.reshape(m, pdims, order="F"), np.argsort(perm))


def canonical_unfold(t: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` unfolding: ``d_k x (D / d_k)``, remaining modes in natural order."""
    K = np.ndim(t)
    _check_mode(k, K)
    rest = [m for m in range(K) if m != k - 1]
    return _unfold(t, [k - 1], rest)


def canonical_fold(m: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    K = len(dims)
    _check_mode(k, K)
    rest = [j for j in range(K) if j != k - 1]
    return _fold(m, [k - 1], rest, dims)


def first_k_unfold(t: np.ndarray, k: int) -> np.ndarray:
    """First-``k``-modes unfolding (the tensor-train matricization)."""
    K = np.ndim(t)
    if not 1 <= k < K:
        raise ValueError(f"first-k unfolding needs 1 <= k < {K}, got {k}")
    return np.reshape(t, (prod(t.shape[:k]), -1), order="F")


def first_k_fold(m: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    if not 1 <= k < len(dims):
        raise ValueError(f"first-k unfolding needs 1 <= k < {len(dims)}, got {k}")
    return np.reshape(m, tuple(dims), order="F")


def default_s(K: int) -> int:
    return ceil(K / 2)


@dataclass(frozen=True)
class UnfoldingSpec:
    """Geometry of the circular mode-(k, s) unfolding of a tensor.

    Column modes are the ``s`` circularly consecutive modes starting at
    ``k``; row modes are the remaining ones, walked circularly from
    ``l + 1``.  All mode numbers here are 1-based.
    """

    dims: tuple[int, ...]
    k: int
    s: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        K = len(self.dims)
        if K < 2:
            raise ValueError("circular unfoldings need order >= 2")
        _check_mode(self.k, K)
        if not 1 <= self.s <= K - 1:
            raise ValueError(f"s must lie in [1, {K - 1}], got {self.s}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"extents must be positive, got {self.dims}")

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def l(self) -> int:
        k, s, K = self.k, self.s, self.K
        return k + s - 1 if k + s <= K else k + s - 1 - K

    @property
    def col_modes(self) -> tuple[int, ...]:
        return tuple((self.k - 1 + j) % self.K + 1 for j in range(self.s))

    @property
    def row_modes(self) -> tuple[int, ...]:
        start = self.k - 1 + self.s
        return tuple((start + j) % self.K + 1 for j in range(self.K - self.s))

    @property
    def d1(self) -> int:
        return prod(self.dims[m - 1] for m in self.row_modes)

    @property
    def d2(self) -> int:
        return prod(self.dims[m - 1] for m in self.col_modes)

    @property
    def d_sum(self) -> int:
        return self.d1 + self.d2

    @property
    def d_min(self) -> int:
        return min(self.d1, self.d2)

    @property
    def d_max(self) -> int:
        return max(self.d1, self.d2)

    @property
    def permutation(self) -> list[int]:
        """1-based ``permute`` order: row modes first, then column modes."""
        return list(self.row_modes) + list(self.col_modes)


def circular_specs(dims: Sequence[int], s: int | None = None) -> list[UnfoldingSpec]:
    """The K circular unfolding specs of a tensor shape."""
    if s is None:
        s = default_s(len(dims))
    return [UnfoldingSpec(tuple(dims), k, s) for k in range(1, len(dims) + 1)]


def critical_mode(dims: Sequence[int], s: int | None = None) -> UnfoldingSpec:
    """Spec of the unfolding with the smallest ``min(d1, d2)`` (first on ties)."""
    return min(circular_specs(dims, s), key=lambda sp: sp.d_min)


def _resolve(t_dims, spec_or_k, s):
    if isinstance(spec_or_k, UnfoldingSpec):
        if tuple(spec_or_k.dims) != tuple(t_dims):
            raise ValueError(f"unfolding spec dims {spec_or_k.dims} do not match {tuple(t_dims)}")
        return spec_or_k
    K = len(t_dims)
    return UnfoldingSpec(tuple(t_dims), int(spec_or_k), default_s(K) if s is None else s)


def circular_unfold(t: np.ndarray, spec: UnfoldingSpec | int, s: int | None = None) -> np.ndarray:
    """Circular mode-(k, s) unfolding, a ``d1 x d2`` matrix.

    `spec` is either an :class:`UnfoldingSpec` or the mode ``k`` (with `s`
    defaulting to ``ceil(K/2)``).
    """
    sp = _resolve(np.shape(t), spec, s)
    rows = [m - 1 for m in sp.row_modes]
    cols = [m - 1 for m in sp.col_modes]
    return _unfold(np.asarray(t), rows, cols)


def circular_fold(m: np.ndarray, spec: UnfoldingSpec) -> np.ndarray:
    rows = [j - 1 for j in spec.row_modes]
    cols = [j - 1 for j in spec.col_modes]
    return _fold(np.asarray(m), rows, cols, spec.dims)


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.vdot(a, b))


def fro_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(t)))


def inf_norm(t: np.ndarray) -> float:
    t = np.asarray(t)
    return float(np.max(np.abs(t))) if t.size else 0.0


def mode_k_product(t: np.ndarray, m: np.ndarray, k: int) -> np.ndarray:
    """``t x_k m``: multiply every mode-``k`` fiber of `t` by the matrix `m`."""
    t = np.asarray(t)
    m = np.asarray(m)
    K = t.ndim
    _check_mode(k, K)
    if m.ndim != 2 or m.shape[1] != t.shape[k - 1]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot act on mode {k} of extent {t.shape[k - 1]}"
        )
    out = np.tensordot(m, t, axes=([1], [k - 1]))
    return np.moveaxis(out, 0, k - 1)


def multi_mode_product(t: np.ndarray, mats: Sequence[np.ndarray | None],
                       transpose: bool = False) -> np.ndarray:
    """Apply ``t x_1 m_1 x_2 m_2 ...``; ``None`` entries are skipped."""
    out = np.asarray(t)
    for k, m in enumerate(mats, start=1):
        if m is None:
            continue
        out = mode_k_product(out, m.T if transpose else m, k)
    return out


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))
