"""Tensor-ring and Tucker formats, conversions and the tensor ring nuclear norm."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import prox
from .tensor import (
    UnfoldingSpec,
    canonical_fold,
    canonical_unfold,
    circular_unfold,
    default_s,
    multi_mode_product,
)


@dataclass
class TRFormat:
    """A ring of third-order cores; core ``k`` has shape ``(r_k, d_k, r_{k+1})``."""

    cores: list[np.ndarray]

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=float) for c in self.cores]
        K = len(self.cores)
        if K < 2:
            raise ValueError("a tensor ring needs at least two cores")
        for k, c in enumerate(self.cores):
            if c.ndim != 3:
                raise ValueError(f"core {k + 1} must be third order, got shape {c.shape}")
            if min(c.shape) < 1:
                raise ValueError(f"core {k + 1} has an empty extent: {c.shape}")
            nxt = self.cores[(k + 1) % K]
            if c.shape[2] != nxt.shape[0]:
                raise ValueError(
                    f"bond mismatch between core {k + 1} ({c.shape}) and core "
                    f"{(k + 1) % K + 1} ({nxt.shape})"
                )

    @property
    def rank(self) -> list[int]:
        return [c.shape[0] for c in self.cores]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)


@dataclass
class TuckerFormat:
    """Core tensor with one column-orthonormal factor per mode."""

    core: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=float)
        self.factors = [np.asarray(u, dtype=float) for u in self.factors]
        if len(self.factors) != self.core.ndim:
            raise ValueError(f"{len(self.factors)} factors for an order-{self.core.ndim} core")
        for k, u in enumerate(self.factors):
            if u.ndim != 2 or u.shape[1] != self.core.shape[k]:
                raise ValueError(f"factor {k + 1} of shape {u.shape} does not match core "
                                 f"extent {self.core.shape[k]}")
            if u.shape[1] > u.shape[0]:
                raise ValueError(f"factor {k + 1} has more columns than rows: {u.shape}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape


def _check_rank(dims: Sequence[int], rank: Sequence[int]) -> None:
    if len(dims) != len(rank):
        raise ValueError(f"{len(rank)} ranks for {len(dims)} modes")
    if len(dims) < 2:
        raise ValueError("order must be at least 2")
    if any(r < 1 for r in rank) or any(d < 1 for d in dims):
        raise ValueError("ranks and extents must be positive")


def tr_reconstruct(f: TRFormat) -> np.ndarray:
    """Full tensor of a tensor ring by sequential core merging and a final trace."""
    cores = f.cores
    acc = cores[0]
    for g in cores[1:]:
        r0, n, _ = acc.shape
        merged = np.tensordot(acc, g, axes=([2], [0]))  # (r1, n, d, r_next)
        acc = np.reshape(merged, (r0, n * g.shape[1], g.shape[2]), order="F")
    vals = np.einsum("aia->i", acc)
    return np.reshape(vals, f.dims, order="F")


def random_tr(dims: Sequence[int], rank: Sequence[int], rng=None) -> TRFormat:
    """Random ring with i.i.d. U[0, 1) core entries.

    `rng` is a seed or a :class:`numpy.random.Generator`; cores are drawn in
    mode order.
    """
    _check_rank(dims, rank)
    rng = np.random.default_rng(rng)
    K = len(dims)
    cores = [rng.random((rank[k], dims[k], rank[(k + 1) % K])) for k in range(K)]
    return TRFormat(cores)


def tr_to_tucker(f: TRFormat) -> TuckerFormat:
    """Exact Tucker representation of a tensor ring.

    Modes with ``d_k > r_k r_{k+1}`` get the left singular vectors of the
    core's mode-2 unfolding as factor; all others use the identity.
    """
    factors = []
    new_cores = []
    for g in f.cores:
        r0, d, r1 = g.shape
        if d > r0 * r1:
            U, S, V = prox.svd(canonical_unfold(g, 2))
            factors.append(U)
            new_cores.append(canonical_fold(S[:, None] * V.T, 2, (r0, len(S), r1)))
        else:
            factors.append(np.eye(d))
            new_cores.append(g)
    return TuckerFormat(tr_reconstruct(TRFormat(new_cores)), factors)


def tucker_reconstruct(t: TuckerFormat) -> np.ndarray:
    return multi_mode_product(t.core, t.factors)


def _weights(alpha, K: int) -> np.ndarray:
    if alpha is None:
        return np.full(K, 1.0 / K)
    a = np.asarray(alpha, dtype=float)
    if a.shape != (K,):
        raise ValueError(f"expected {K} weights, got {a.shape}")
    if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-10:
        raise ValueError(f"weights must be nonnegative and sum to 1, got {a.tolist()}")
    return a


def check_weights(alpha, K: int) -> np.ndarray:
    """Validated mode weights; ``None`` gives the uniform ``1/K``."""
    return _weights(alpha, K)


def trnn(t: np.ndarray, s: int | None = None, alpha=None) -> float:
    """Tensor ring nuclear norm: weighted sum of circular-unfolding nuclear norms."""
    t = np.asarray(t, dtype=float)
    K = t.ndim
    s = default_s(K) if s is None else s
    a = _weights(alpha, K)
    total = 0.0
    for k in range(1, K + 1):
        if a[k - 1] == 0:
            continue
        total += a[k - 1] * prox.nuclear_norm(circular_unfold(t, UnfoldingSpec(t.shape, k, s)))
    return total


def trnn_dual_upper(t: np.ndarray, s: int | None = None, alpha=None) -> float:
    """Upper bound on the dual TRNN from single-component decompositions.

    ``min_k ||T_(k,s)|| / alpha_k`` (modes with zero weight are skipped).
    """
    t = np.asarray(t, dtype=float)
    K = t.ndim
    s = default_s(K) if s is None else s
    a = _weights(alpha, K)
    best = np.inf
    for k in range(1, K + 1):
        if a[k - 1] == 0:
            continue
        val = prox.spectral_norm(circular_unfold(t, UnfoldingSpec(t.shape, k, s))) / a[k - 1]
        best = min(best, val)
    return float(best)


def classify_state(dims: Sequence[int], rank: Sequence[int]) -> list[str]:
    """Per-mode ring state comparing ``d_k`` with ``r_k r_{k+1}``."""
    _check_rank(dims, rank)
    K = len(dims)
    out = []
    for k in range(K):
        rr = rank[k] * rank[(k + 1) % K]
        if dims[k] > rr:
            out.append("subcritical")
        elif dims[k] == rr:
            out.append("critical")
        else:
            out.append("supercritical")
    return out


def unfolding_rank(t: np.ndarray, k: int, s: int | None = None, tol: float = 1e-8) -> int:
    if tol <= 0:
        raise ValueError("tol must be positive")
    t = np.asarray(t, dtype=float)
    s = default_s(t.ndim) if s is None else s
    return prox.numerical_rank(circular_unfold(t, UnfoldingSpec(t.shape, k, s)), tol)


def circular_rank_bound(rank: Sequence[int], k: int, s: int) -> int:
    """``r_k * r_{k+s}`` (1-based ``k``, indices taken modulo K)."""
    K = len(rank)
    return rank[k - 1] * rank[(k - 1 + s) % K]
