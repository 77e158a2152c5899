"""Metrics and synthetic experiment protocols.

Each protocol expands an :class:`ExperimentSpec` into grid cells (one per
coordinate combination and trial).  A cell draws a random tensor ring,
samples and corrupts it, searches the regularization multiplier grid and
records the best solve.  Every cell seeds its own generator from the master
seed and the cell coordinates, so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, fields, replace
from math import ceil, floor, log, sqrt
from typing import Iterable, Sequence

import numpy as np

from . import sampling
from .sampling import LAMBDA_MULTIPLIERS, NoiseModel, ObservationSet
from .solvers import SolverConfig, default_fantrc_rank, solve
from .tr import random_tr, tr_reconstruct

log_ = logging.getLogger(__name__)

PROTOCOLS = ("sharpness", "rank_scaling", "noise_families", "multistate",
             "fantrc_rank_sweep", "custom")


def relative_error(hat: np.ndarray, star: np.ndarray) -> float:
    hat = np.asarray(hat, dtype=float)
    star = np.asarray(star, dtype=float)
    if hat.shape != star.shape:
        raise ValueError(f"shape mismatch: {hat.shape} vs {star.shape}")
    ref = np.linalg.norm(star.ravel())
    if ref == 0:
        raise ValueError("relative error undefined for a zero reference")
    return float(np.linalg.norm((hat - star).ravel()) / ref)


def estimation_error(hat: np.ndarray, star: np.ndarray) -> float:
    """Squared Frobenius distance."""
    diff = np.asarray(hat, dtype=float) - np.asarray(star, dtype=float)
    return float(diff.ravel() @ diff.ravel())


def psnr(hat: np.ndarray, star: np.ndarray, squared: bool = False) -> float:
    """Peak signal-to-noise ratio in dB.

    The default is ``10 log10(D ||hat||_inf / ||hat - star||_F)``.  With
    ``squared=True`` the conventional ``10 log10(D ||hat||_inf^2 / ||hat - star||_F^2)``
    is returned instead.  An exact reconstruction gives ``inf``.
    """
    hat = np.asarray(hat, dtype=float)
    star = np.asarray(star, dtype=float)
    if hat.shape != star.shape:
        raise ValueError(f"shape mismatch: {hat.shape} vs {star.shape}")
    err = np.linalg.norm((hat - star).ravel())
    if err == 0:
        return float("inf")
    peak = np.max(np.abs(hat))
    if squared:
        return float(10 * np.log10(hat.size * peak ** 2 / err ** 2))
    return float(10 * np.log10(hat.size * peak / err))


def sample_complexity(d: int, K: int, r: int) -> float:
    """``r^2 K d^ceil(K/2) log(d^floor(K/2) + d^ceil(K/2))``."""
    hi, lo = ceil(K / 2), floor(K / 2)
    return float(r * r * K * d ** hi * log(d ** lo + d ** hi))


def rescaled_samples(N: int, dims: Sequence[int], rank: Sequence[int], s: int | None = None) -> float:
    """Rescaled observation count ``N_0 = N / sample_complexity``.

    Only defined for cubical shapes with a uniform ring rank.
    """
    if len(set(dims)) != 1 or len(set(rank)) != 1 or len(dims) != len(rank):
        raise ValueError("rescaled sample count needs equal extents and a uniform rank")
    K = len(dims)
    if s is not None and s != ceil(K / 2):
        raise ValueError("rescaled sample count assumes s = ceil(K/2)")
    return N / sample_complexity(dims[0], K, rank[0])


def effective_rank(rank: Sequence[int], s: int | None = None, alpha=None) -> float:
    """``(sum_k alpha_k sqrt(r_k r_{k+s}))^2``."""
    K = len(rank)
    s = ceil(K / 2) if s is None else s
    a = np.full(K, 1.0 / K) if alpha is None else np.asarray(alpha, dtype=float)
    total = sum(a[k] * sqrt(rank[k] * rank[(k + s) % K]) for k in range(K))
    return float(total ** 2)


def log_rank(d: int) -> int:
    """``ceil(sqrt(log d))``, the rank rule used with growing sizes."""
    return int(ceil(sqrt(log(d))))


def fit_linear(xs, ys) -> tuple[float, float, float]:
    """Ordinary least squares ``y = slope * x + intercept``; returns ``(slope, intercept, R^2)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx == 0:
        raise ValueError("xs are all equal")
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if sst == 0 else 1.0 - float(resid @ resid) / sst
    return slope, intercept, r2


@dataclass
class ExperimentSpec:
    """Grid definition of a synthetic experiment.

    Exactly one of `sr_grid` and `n0_grid` sets the number of samples.  A
    rank grid of ``None`` uses ``ceil(sqrt(log d))`` for each size.
    `fantrc_factors` (FaNTRC only) sets ``R = round(f r^2)``; ``None``
    uses ``round(1.2 r r)``.
    """

    protocol: str = "custom"
    dims_grid: Sequence[int] = (10,)
    order: int = 4
    rank_grid: Sequence[int] | None = (2,)
    sr_grid: Sequence[float] | None = (0.4,)
    n0_grid: Sequence[float] | None = None
    noise_families: Sequence[str] = ("gaussian",)
    noise_levels: Sequence[float] = (0.01,)
    trials: int = 10
    seed: int = 0
    solver: str = "ntrc"
    lambda_multipliers: Sequence[float] = LAMBDA_MULTIPLIERS
    normalize: bool = False
    fantrc_factors: Sequence[float] | None = None
    max_iter: int = 500
    tol: float = 1e-6
    threads: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if (self.sr_grid is None) == (self.n0_grid is None):
            raise ValueError("give exactly one of sr_grid and n0_grid")
        for name in ("dims_grid", "noise_families", "noise_levels", "lambda_multipliers"):
            if not len(getattr(self, name)):
                raise ValueError(f"{name} must be non-empty")
        if self.rank_grid is not None and not len(self.rank_grid):
            raise ValueError("rank_grid must be non-empty (or None)")
        grid = self.sr_grid if self.sr_grid is not None else self.n0_grid
        if not len(grid):
            raise ValueError("sample grid must be non-empty")


@dataclass
class MetricRecord:
    protocol: str
    solver: str
    d: int
    order: int
    r: int
    fantrc_R: int
    noise: str
    c: float
    sigma: float
    sr: float
    N: int
    n0: float
    trial: int
    lam_mult: float
    lam: float
    re: float
    psnr: float
    est_error: float
    iterations: int
    converged: bool
    error: str = ""
    seconds: float = 0.0


RECORD_FIELDS = [f.name for f in fields(MetricRecord)]
GROUP_FIELDS = ("protocol", "solver", "d", "order", "r", "fantrc_R", "noise", "c", "sr", "N", "n0")


def cell_rng(seed: int, coords: Iterable[int]) -> np.random.Generator:
    """Generator for one grid cell, keyed by the master seed and integer coordinates."""
    return np.random.default_rng([int(seed), *[int(c) for c in coords]])


def _sample_count(spec: ExperimentSpec, d: int, r: int, value: float) -> int:
    D = d ** spec.order
    if spec.sr_grid is not None:
        N = int(round(value * D))
    else:
        N = int(round(value * sample_complexity(d, spec.order, r)))
    if not 1 <= N <= D:
        raise ValueError(f"sample count {N} outside [1, {D}] for d={d}")
    return N


def _cells(spec: ExperimentSpec):
    ranks_for = (lambda d: [log_rank(d)]) if spec.rank_grid is None else (lambda d: list(spec.rank_grid))
    samples = list(spec.sr_grid if spec.sr_grid is not None else spec.n0_grid)
    factors = list(spec.fantrc_factors) if spec.fantrc_factors is not None else [None]
    for di, d in enumerate(spec.dims_grid):
        for r in ranks_for(d):
            for si, sv in enumerate(samples):
                for fi, fam in enumerate(spec.noise_families):
                    for ci, c in enumerate(spec.noise_levels):
                        for trial in range(spec.trials):
                            # the tensor/noise stream ignores the FaNTRC factor so a rank
                            # sweep compares factor ranks on identical instances
                            coords = (di, r, si, fi, ci, trial)
                            for fac in factors:
                                yield d, r, sv, fam, c, trial, fac, coords


def make_instance(spec: ExperimentSpec, d: int, r: int, sample_value: float, family: str,
                  c: float, coords) -> tuple[np.ndarray, ObservationSet, float, float]:
    """Ground truth, observations, noise scale and base lambda of one grid cell."""
    rng = cell_rng(spec.seed, coords)
    dims = (d,) * spec.order
    star = tr_reconstruct(random_tr(dims, [r] * spec.order, rng))
    if spec.normalize:
        star = star / np.linalg.norm(star.ravel())
    N = _sample_count(spec, d, r, sample_value)
    idx = sampling.sample_uniform(dims, N, replace=False, rng=rng)
    sigma = sampling.noise_sigma(c, star)
    obs = sampling.observe(star, idx, NoiseModel(family, sigma), rng=rng)
    # uniform and poisson draws are not unit variance; the base lambda uses the
    # same sigma either way
    lam0 = sampling.lambda0(sigma, N, dims)
    if lam0 == 0:
        lam0 = 1e-8 * np.linalg.norm(obs.y) / sqrt(max(N, 1))
    return star, obs, sigma, lam0


def run_cell(spec: ExperimentSpec, d: int, r: int, sample_value: float, family: str, c: float,
             trial: int, factor, coords) -> MetricRecord:
    K = spec.order
    dims = (d,) * K
    rank = [r] * K
    star, obs, sigma, lam0 = make_instance(spec, d, r, sample_value, family, c, coords)
    N = obs.N
    if factor is None:
        fR = default_fantrc_rank(dims, rank)
    else:
        fR = [min(int(floor(factor * r * r + 0.5)), d)] * K

    record = MetricRecord(
        protocol=spec.protocol, solver=spec.solver, d=d, order=K, r=r,
        fantrc_R=fR[0] if spec.solver == "fantrc" else 0, noise=family, c=float(c),
        sigma=sigma, sr=N / d ** K, N=N, n0=N / sample_complexity(d, K, r), trial=trial,
        lam_mult=float("nan"), lam=float("nan"), re=float("nan"), psnr=float("nan"),
        est_error=float("nan"), iterations=0, converged=False)
    start = time.perf_counter()
    best = None
    errors = []
    for mult in spec.lambda_multipliers:
        cfg = SolverConfig(lam=mult * lam0, fantrc_rank=fR if spec.solver == "fantrc" else None,
                           tr_rank=rank, track_objective=False, max_iter=spec.max_iter,
                           tol=spec.tol, threads=spec.threads)
        try:
            hat, rep = solve(obs, cfg, spec.solver)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            errors.append(f"mult={mult}: {exc}")
            continue
        re = relative_error(hat, star)
        if not np.isfinite(re):
            errors.append(f"mult={mult}: non-finite estimate")
            continue
        if best is None or re < best[0]:
            best = (re, mult, hat, rep)
    record.seconds = time.perf_counter() - start
    record.error = "; ".join(errors)
    if best is not None:
        re, mult, hat, rep = best
        record.lam_mult = float(mult)
        record.lam = float(mult * lam0)
        record.re = re
        record.psnr = psnr(hat, star)
        record.est_error = estimation_error(hat, star)
        record.iterations = rep.iterations
        record.converged = rep.converged
    return record


def run_protocol(spec: ExperimentSpec, progress=None) -> list[MetricRecord]:
    records = []
    for cell in _cells(spec):
        rec = run_cell(spec, *cell)
        log_.info("%s d=%d r=%d N=%d trial=%d re=%.4g", spec.protocol, rec.d, rec.r, rec.N,
                  rec.trial, rec.re)
        if progress is not None:
            progress(rec)
        records.append(rec)
    return records


def summarize(records: Sequence[MetricRecord]) -> list[dict]:
    """Mean and standard deviation of the metrics over trials, per grid point."""
    groups = defaultdict(list)
    for rec in records:
        groups[tuple(getattr(rec, f) for f in GROUP_FIELDS)].append(rec)
    out = []
    for key, recs in groups.items():
        row = dict(zip(GROUP_FIELDS, key))
        row["trials"] = len(recs)
        for metric in ("re", "psnr", "est_error", "iterations"):
            vals = np.array([getattr(r, metric) for r in recs], dtype=float)
            row[f"{metric}_mean"] = float(np.mean(vals))
            row[f"{metric}_std"] = float(np.std(vals))
        out.append(row)
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: Sequence[MetricRecord], timing: bool = False) -> str:
    """CSV text of `records`; wall-clock time is only included when `timing`."""
    cols = [f for f in RECORD_FIELDS if timing or f != "seconds"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in records:
        d = asdict(rec)
        w.writerow([_fmt(d[c]) for c in cols])
    return buf.getvalue()


def summary_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0])
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def protocol_spec(name: str, full: bool = False, **overrides) -> ExperimentSpec:
    """Preset grids for the named protocol.

    The defaults are reduced so each protocol finishes in minutes on one
    core; ``full=True`` selects the larger published grids.
    """
    if name == "sharpness":
        spec = ExperimentSpec(
            protocol=name, dims_grid=(10, 20, 30) if full else (10, 20), rank_grid=None,
            sr_grid=None, n0_grid=(0.3, 0.5, 0.7, 0.9), trials=25 if full else 10,
            normalize=True)
    elif name == "rank_scaling":
        spec = ExperimentSpec(
            protocol=name, dims_grid=(10, 20) if full else (10,),
            rank_grid=(1, 2, 3, 4, 5, 6) if full else (1, 2, 3, 4, 5), sr_grid=(0.4,),
            trials=25 if full else 10, normalize=True)
    elif name == "noise_families":
        spec = ExperimentSpec(
            protocol=name, dims_grid=(10, 20) if full else (10,), rank_grid=None,
            sr_grid=(0.1, 0.3, 0.5, 0.7, 0.9),
            noise_families=("gaussian", "uniform", "poisson"), trials=25 if full else 5)
    elif name == "multistate":
        spec = ExperimentSpec(
            protocol=name, dims_grid=(30,) if full else (12,),
            rank_grid=(2, 3, 4, 5, 6, 7) if full else (2, 3, 4), sr_grid=(0.4,),
            noise_levels=(0.01, 0.05), trials=25 if full else 3)
    elif name == "fantrc_rank_sweep":
        spec = ExperimentSpec(
            protocol=name, dims_grid=(30, 50) if full else (30,),
            rank_grid=(3, 4, 5, 6) if full else (4,), sr_grid=(0.4,), solver="fantrc",
            fantrc_factors=tuple(round(0.7 + 0.1 * i, 1) for i in range(9)),
            trials=25 if full else 5)
    elif name == "custom":
        spec = ExperimentSpec(protocol=name)
    else:
        raise ValueError(f"unknown protocol {name!r}; expected one of {PROTOCOLS}")
    return replace(spec, **overrides) if overrides else spec
