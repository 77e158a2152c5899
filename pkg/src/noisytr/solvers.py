"""ADMM solvers for noisy tensor completion with a tensor-ring nuclear norm.

Both solvers minimize::

    1/2 ||y - X(T)||^2 + lam * sum_k alpha_k ||T_(k,s)||_*   s.t. ||T||_inf <= delta

``ntrc_solve`` splits the norm over K full-size auxiliary tensors.
``fantrc_solve`` writes ``T = core x_1 U_1 ... x_K U_K`` with orthonormal
factors and applies the norm to the small core instead, so its singular
value thresholding works on matrices of size ``prod(R)`` rather than
``prod(d)``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from math import floor
from typing import Sequence

import numpy as np

from . import prox
from .sampling import ObservationSet, apply_X
from .tensor import (
    UnfoldingSpec,
    canonical_unfold,
    circular_fold,
    circular_unfold,
    default_s,
    multi_mode_product,
)
from .tr import check_weights, trnn

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class SolverConfig:
    lam: float
    alpha: Sequence[float] | None = None
    delta: float = np.inf
    s: int | None = None
    penalty0: float = 1e-4
    growth: float = 1.1
    penalty_max: float = 1e10
    tol: float = 1e-6
    max_iter: int = 500
    fantrc_rank: Sequence[int] | None = None
    tr_rank: Sequence[int] | None = None  # known ring rank, only used for diagnostics
    track_objective: bool = True
    threads: int = 1

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.growth > 1:
            raise ValueError(f"growth must exceed 1, got {self.growth}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not self.penalty0 > 0 or self.penalty_max < self.penalty0:
            raise ValueError("need 0 < penalty0 <= penalty_max")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def weights(self, K: int) -> np.ndarray:
        return check_weights(self.alpha, K)

    def unfold_s(self, K: int) -> int:
        return default_s(K) if self.s is None else self.s


@dataclass
class SolveReport:
    solver: str
    iterations: int = 0
    converged: bool = False
    rel_change: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    aux_residual: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("solver", "iterations", "converged", "seconds", "warnings",
                                  "rel_change", "objective", "primal_residual",
                                  "aux_residual")}


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    den = np.linalg.norm(old.ravel())
    num = np.linalg.norm((new - old).ravel())
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return float(num / den)


def _project_inf(f: np.ndarray, delta: float) -> np.ndarray:
    if np.isinf(delta):
        return f
    return np.sign(f) * np.minimum(np.abs(f), delta)


def _map_modes(fn, K: int, threads: int):
    if threads > 1 and K > 1:
        with ThreadPoolExecutor(max_workers=min(threads, K)) as ex:
            return list(ex.map(fn, range(K)))
    return [fn(k) for k in range(K)]


def _svt_fold(x: np.ndarray, spec: UnfoldingSpec, tau: float) -> np.ndarray:
    return circular_fold(prox.svt(circular_unfold(x, spec), tau), spec)


def objective(t: np.ndarray, obs: ObservationSet, lam: float, s=None, alpha=None) -> float:
    """``1/2 ||y - X(T)||^2 + lam * trnn(T)`` (the box constraint is not checked)."""
    r = obs.y - apply_X(t, obs)
    return float(0.5 * r @ r + lam * trnn(t, s, alpha))


# ---------------------------------------------------------------- NTRC


@dataclass
class NTRCState:
    T: np.ndarray
    M: list
    Q: list
    mu: float
    iter: int = 0

    @classmethod
    def zeros(cls, dims, mu: float) -> "NTRCState":
        K = len(dims)
        return cls(np.zeros(dims), [np.zeros(dims) for _ in range(K)],
                   [np.zeros(dims) for _ in range(K)], mu)


def ntrc_update_M(state: NTRCState, cfg: SolverConfig) -> list:
    T = state.T
    K = T.ndim
    s = cfg.unfold_s(K)
    a = cfg.weights(K)
    mu = state.mu

    def one(k):
        spec = UnfoldingSpec(T.shape, k + 1, s)
        return _svt_fold(T - state.Q[k] / mu, spec, cfg.lam * a[k] / mu)

    return _map_modes(one, K, cfg.threads)


def ntrc_update_T(state: NTRCState, obs: ObservationSet, cfg: SolverConfig,
                  counts: np.ndarray | None = None, sums: np.ndarray | None = None) -> np.ndarray:
    """Exact minimizer of the augmented Lagrangian over the box ``||T||_inf <= delta``.

    The sampling Gram operator is diagonal (entry multiplicities), so the
    normal equations decouple per entry.
    """
    c = obs.counts() if counts is None else counts
    b = obs.observed_sums() if sums is None else sums
    K = len(state.M)
    mu = state.mu
    acc = np.zeros_like(state.T)
    for Mk, Qk in zip(state.M, state.Q):
        acc += Qk + mu * Mk
    f = (b + acc) / (c + mu * K)
    return _project_inf(f, cfg.delta)


def ntrc_update_Q(state: NTRCState, cfg: SolverConfig) -> tuple[list, float]:
    Q = [Qk + state.mu * (Mk - state.T) for Qk, Mk in zip(state.Q, state.M)]
    return Q, min(cfg.penalty_max, cfg.growth * state.mu)


def ntrc_solve(obs: ObservationSet, cfg: SolverConfig, callback=None):
    """NTRC: ADMM over K auxiliary copies of the estimate.

    Returns the final estimate and a :class:`SolveReport`.  `callback`, if
    given, is called as ``callback(iteration, state)`` after every sweep.
    """
    start = time.perf_counter()
    dims = obs.dims
    K = len(dims)
    s = cfg.unfold_s(K)
    alpha = cfg.weights(K)
    counts = obs.counts()
    sums = obs.observed_sums()
    state = NTRCState.zeros(dims, cfg.penalty0)
    report = SolveReport("ntrc")

    for it in range(1, cfg.max_iter + 1):
        state.M = ntrc_update_M(state, cfg)
        T_new = ntrc_update_T(state, obs, cfg, counts, sums)
        change = _rel_change(T_new, state.T)
        state.T = T_new
        state.Q, mu_next = ntrc_update_Q(state, cfg)

        report.rel_change.append(change)
        report.primal_residual.append(
            max(float(np.linalg.norm((Mk - state.T).ravel())) for Mk in state.M))
        if cfg.track_objective:
            report.objective.append(objective(state.T, obs, cfg.lam, s, alpha))
        state.mu = mu_next
        state.iter = it
        if callback is not None:
            callback(it, state)
        if change <= cfg.tol:
            report.converged = True
            break

    report.iterations = state.iter
    report.seconds = time.perf_counter() - start
    if not report.converged:
        report.warnings.append(f"no convergence within {cfg.max_iter} iterations")
    log.debug("ntrc: %d iterations, converged=%s", report.iterations, report.converged)
    return state.T, report


# -------------------------------------------------------------- FaNTRC


@dataclass
class FaNTRCState:
    T: np.ndarray
    core: np.ndarray
    U: list
    L: list
    R: list
    P: np.ndarray
    eta: float
    iter: int = 0

    @classmethod
    def initial(cls, dims, ranks, eta: float) -> "FaNTRCState":
        K = len(dims)
        ranks = tuple(ranks)
        U = [np.eye(d, r) for d, r in zip(dims, ranks)]
        return cls(np.zeros(dims), np.zeros(ranks), U,
                   [np.zeros(ranks) for _ in range(K)], [np.zeros(ranks) for _ in range(K)],
                   np.zeros(dims), eta)

    def expand(self) -> np.ndarray:
        """``core x_1 U_1 ... x_K U_K``."""
        return multi_mode_product(self.core, self.U)


def default_fantrc_rank(dims: Sequence[int], tr_rank: Sequence[int], factor: float = 1.2) -> list:
    """``min(round(factor * r_k r_{k+1}), d_k)`` with halves rounded up."""
    K = len(dims)
    return [min(int(floor(factor * tr_rank[k] * tr_rank[(k + 1) % K] + 0.5)), dims[k])
            for k in range(K)]


def fantrc_update_U(state: FaNTRCState, cfg: SolverConfig) -> list:
    """Sequential orthogonal Procrustes updates of the factors.

    For mode k the maximized objective is ``<core x U, P/eta + T>``; it is
    evaluated by projecting ``P/eta + T`` onto the other factors, which
    avoids expanding the core to full size.
    """
    Z = state.P / state.eta + state.T
    U = list(state.U)
    K = len(U)
    core_unf = [canonical_unfold(state.core, k + 1) for k in range(K)]
    for k in range(K):
        proj = multi_mode_product(Z, [None if m == k else U[m] for m in range(K)],
                                  transpose=True)
        G = canonical_unfold(proj, k + 1) @ core_unf[k].T
        if not np.any(G):
            continue
        U[k] = prox.procrustes(G)
    return U


def fantrc_update_core(state: FaNTRCState, cfg: SolverConfig) -> np.ndarray:
    K = len(state.U)
    eta = state.eta
    acc = multi_mode_product(state.P / eta + state.T, state.U, transpose=True)
    for Lk, Rk in zip(state.L, state.R):
        acc = acc + Rk / eta + Lk
    return acc / (K + 1)


def fantrc_update_L(state: FaNTRCState, cfg: SolverConfig) -> list:
    core = state.core
    K = core.ndim
    s = cfg.unfold_s(K)
    a = cfg.weights(K)
    eta = state.eta

    def one(k):
        spec = UnfoldingSpec(core.shape, k + 1, s)
        return _svt_fold(core - state.R[k] / eta, spec, cfg.lam * a[k] / eta)

    return _map_modes(one, K, cfg.threads)


def fantrc_update_T(state: FaNTRCState, obs: ObservationSet, cfg: SolverConfig,
                    counts: np.ndarray | None = None, sums: np.ndarray | None = None,
                    W: np.ndarray | None = None) -> np.ndarray:
    c = obs.counts() if counts is None else counts
    b = obs.observed_sums() if sums is None else sums
    W = state.expand() if W is None else W
    f = (b - state.P + state.eta * W) / (c + state.eta)
    return _project_inf(f, cfg.delta)


def fantrc_update_duals(state: FaNTRCState, cfg: SolverConfig,
                        W: np.ndarray | None = None) -> tuple[np.ndarray, list, float]:
    W = state.expand() if W is None else W
    eta = state.eta
    P = state.P + eta * (state.T - W)
    R = [Rk + eta * (Lk - state.core) for Rk, Lk in zip(state.R, state.L)]
    return P, R, min(cfg.penalty_max, cfg.growth * eta)


def _resolve_fantrc_rank(dims, cfg: SolverConfig) -> list:
    if cfg.fantrc_rank is not None:
        ranks = [int(r) for r in cfg.fantrc_rank]
        if len(ranks) != len(dims):
            raise ValueError(f"{len(ranks)} factor ranks for {len(dims)} modes")
        for k, (r, d) in enumerate(zip(ranks, dims), start=1):
            if not 1 <= r <= d:
                raise ValueError(f"factor rank {r} of mode {k} must lie in [1, {d}]")
        return ranks
    if cfg.tr_rank is not None:
        return default_fantrc_rank(dims, cfg.tr_rank)
    raise ValueError("fantrc needs fantrc_rank (or tr_rank to derive a default)")


def fantrc_rank_warnings(dims, ranks, tr_rank) -> list:
    if tr_rank is None:
        return []
    K = len(dims)
    out = []
    for k in range(K):
        need = min(tr_rank[k] * tr_rank[(k + 1) % K], dims[k])
        if ranks[k] < need:
            out.append(f"factor rank R_{k + 1}={ranks[k]} is below min(r_k r_k+1, d_k)={need}; "
                       "equivalence with the full-size problem is not guaranteed")
    return out


def fantrc_solve(obs: ObservationSet, cfg: SolverConfig, callback=None):
    """FaNTRC: ADMM on a Tucker-factored estimate with the norm on the core."""
    start = time.perf_counter()
    dims = obs.dims
    K = len(dims)
    if K < 2:
        raise ValueError("order must be at least 2")
    s = cfg.unfold_s(K)
    alpha = cfg.weights(K)
    ranks = _resolve_fantrc_rank(dims, cfg)
    counts = obs.counts()
    sums = obs.observed_sums()
    state = FaNTRCState.initial(dims, ranks, cfg.penalty0)
    report = SolveReport("fantrc", warnings=fantrc_rank_warnings(dims, ranks, cfg.tr_rank))

    for it in range(1, cfg.max_iter + 1):
        state.U = fantrc_update_U(state, cfg)
        state.core = fantrc_update_core(state, cfg)
        state.L = fantrc_update_L(state, cfg)
        W = state.expand()
        T_new = fantrc_update_T(state, obs, cfg, counts, sums, W)
        change = _rel_change(T_new, state.T)
        state.T = T_new
        state.P, state.R, eta_next = fantrc_update_duals(state, cfg, W)

        report.rel_change.append(change)
        report.primal_residual.append(float(np.linalg.norm((state.T - W).ravel())))
        report.aux_residual.append(
            max(float(np.linalg.norm((Lk - state.core).ravel())) for Lk in state.L))
        if cfg.track_objective:
            r = obs.y - apply_X(state.T, obs)
            report.objective.append(float(0.5 * r @ r + cfg.lam * trnn(state.core, s, alpha)))
        state.eta = eta_next
        state.iter = it
        if callback is not None:
            callback(it, state)
        if change <= cfg.tol:
            report.converged = True
            break

    report.iterations = state.iter
    report.seconds = time.perf_counter() - start
    if not report.converged:
        report.warnings.append(f"no convergence within {cfg.max_iter} iterations")
    log.debug("fantrc: %d iterations, converged=%s", report.iterations, report.converged)
    return state.T, report


SOLVERS = {"ntrc": ntrc_solve, "fantrc": fantrc_solve}


def solve(obs: ObservationSet, cfg: SolverConfig, solver: str = "ntrc", callback=None):
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; expected one of {sorted(SOLVERS)}") from None
    return fn(obs, cfg, callback)
