"""Uniform entry sampling, the sampling operator and its adjoint, noise, and
the regularization heuristic."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log, prod, sqrt
from typing import Sequence

import numpy as np

from .tensor import critical_mode, vec

NOISE_FAMILIES = ("gaussian", "uniform", "poisson", "none")
LAMBDA_MULTIPLIERS = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


@dataclass
class ObservationSet:
    """``N`` sampled entries of a tensor of shape `dims`.

    `indices` is an ``(N, K)`` array of 1-based subscripts (duplicates are
    allowed) and `y` the matching observed values.
    """

    dims: tuple[int, ...]
    indices: np.ndarray
    y: np.ndarray
    _linear: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, len(self.dims))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if len(self.indices) != len(self.y):
            raise ValueError(f"{len(self.indices)} indices but {len(self.y)} values")
        for m, d in enumerate(self.dims):
            col = self.indices[:, m]
            bad = (col < 1) | (col > d)
            if np.any(bad):
                n = int(np.argmax(bad))
                raise IndexError(f"sample {n + 1}: index {col[n]} out of bounds for mode "
                                 f"{m + 1} of extent {d}")
        if len(self.indices):
            self._linear = np.ravel_multi_index(tuple((self.indices - 1).T), self.dims, order="F")
        else:
            self._linear = np.zeros(0, dtype=np.int64)

    @classmethod
    def from_linear(cls, dims, linear, y) -> "ObservationSet":
        """Build from 0-based column-major linear indices."""
        sub = np.stack(np.unravel_index(np.asarray(linear, dtype=np.int64), tuple(dims),
                                        order="F"), axis=1) + 1
        return cls(tuple(dims), sub.reshape(-1, len(dims)), y)

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def D(self) -> int:
        return prod(self.dims)

    @property
    def sampling_ratio(self) -> float:
        return self.N / self.D

    @property
    def linear(self) -> np.ndarray:
        """0-based column-major linear index of every sample."""
        return self._linear

    def counts(self) -> np.ndarray:
        """Per-entry sample multiplicity as a tensor."""
        c = np.bincount(self._linear, minlength=self.D).astype(float)
        return np.reshape(c, self.dims, order="F")

    def observed_sums(self) -> np.ndarray:
        """Per-entry sum of observed values, i.e. the adjoint applied to `y`."""
        return adjoint_X(self.y, self)


def sample_uniform(dims: Sequence[int], N: int, replace: bool = False, rng=None) -> np.ndarray:
    """Draw ``N`` uniformly random 1-based subscripts as an ``(N, K)`` array."""
    D = prod(dims)
    if N < 0:
        raise ValueError("N must be nonnegative")
    if not replace and N > D:
        raise ValueError(f"cannot draw {N} distinct entries from {D}")
    rng = np.random.default_rng(rng)
    if replace:
        lin = rng.integers(0, D, size=N)
    else:
        lin = rng.choice(D, size=N, replace=False)
    return np.stack(np.unravel_index(lin, tuple(dims), order="F"), axis=1) + 1


def draw_noise(family: str, n: int, rng=None) -> np.ndarray:
    """Standardized noise draws before scaling by sigma.

    ``uniform`` is U[-0.5, 0.5] and ``poisson`` is Pois(0.01), used as is
    (not recentred or rescaled).
    """
    rng = np.random.default_rng(rng)
    if family == "gaussian":
        return rng.standard_normal(n)
    if family == "uniform":
        return rng.uniform(-0.5, 0.5, n)
    if family == "poisson":
        return rng.poisson(0.01, n).astype(float)
    if family == "none":
        return np.zeros(n)
    raise ValueError(f"unknown noise family {family!r}; expected one of {NOISE_FAMILIES}")


@dataclass
class NoiseModel:
    family: str = "gaussian"
    sigma: float = 0.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @classmethod
    def from_level(cls, family: str, c: float, t: np.ndarray) -> "NoiseModel":
        """Noise with ``sigma = c ||T||_F / sqrt(D)``."""
        t = np.asarray(t)
        return cls(family, noise_sigma(c, t))


def noise_sigma(c: float, t: np.ndarray) -> float:
    t = np.asarray(t)
    return float(c * np.linalg.norm(t.ravel()) / sqrt(t.size))


def observe(t: np.ndarray, indices: np.ndarray, noise: NoiseModel | None = None,
            rng=None) -> ObservationSet:
    """Noisy observations ``y_n = T(idx_n) + sigma * xi_n``."""
    t = np.asarray(t, dtype=float)
    obs = ObservationSet(t.shape, indices, np.zeros(len(indices)))
    clean = vec(t)[obs.linear]
    if noise is None or noise.family == "none" or noise.sigma == 0:
        obs.y = clean
    else:
        obs.y = clean + noise.sigma * draw_noise(noise.family, len(clean), rng)
    return obs


def apply_X(t: np.ndarray, obs: ObservationSet) -> np.ndarray:
    """Sampled entries of `t`, in sample order."""
    t = np.asarray(t)
    if t.shape != obs.dims:
        raise ValueError(f"tensor shape {t.shape} does not match observations {obs.dims}")
    return vec(t)[obs.linear]


def adjoint_X(v: np.ndarray, obs: ObservationSet) -> np.ndarray:
    """Scatter-add a length-``N`` vector into a tensor (duplicates accumulate)."""
    v = np.asarray(v, dtype=float).ravel()
    if len(v) != obs.N:
        raise ValueError(f"vector of length {len(v)} for {obs.N} samples")
    out = np.bincount(obs.linear, weights=v, minlength=obs.D)
    return np.reshape(out, obs.dims, order="F")


def lambda0(sigma: float, N: int, dims: Sequence[int], s: int | None = None) -> float:
    """Base regularization ``sigma * sqrt(N log(d1 + d2) / min(d1, d2))``.

    Evaluated at the circular unfolding with the smallest ``min(d1, d2)``.
    """
    if sigma < 0 or N < 1:
        raise ValueError("need sigma >= 0 and N >= 1")
    sp = critical_mode(dims, s)
    return float(sigma * sqrt(N * log(sp.d_sum) / sp.d_min))
