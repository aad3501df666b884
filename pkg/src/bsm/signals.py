"""Bounded sources, linear mixing and batch whitening."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "SourceSpec",
    "SourceBatch",
    "MixingModel",
    "WhiteningTransform",
    "generate_uniform_sources",
    "standardize_known",
    "standardize_sample",
    "inject_corners",
    "random_orthogonal",
    "random_mixing",
    "mix",
    "whiten_batch",
    "EIG_FLOOR",
]

EIG_FLOOR = 1e-10
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class SourceSpec:
    """Independent bounded sources; source ``i`` lives in ``[low[i], high[i]]``."""

    dim: int
    low: np.ndarray
    high: np.ndarray
    rng_seed: int = 0
    family: str = "uniform"

    def __post_init__(self):
        low = np.broadcast_to(np.asarray(self.low, dtype=float), (self.dim,)).copy()
        high = np.broadcast_to(np.asarray(self.high, dtype=float), (self.dim,)).copy()
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.family != "uniform":
            raise ValueError(f"unsupported source family {self.family!r}")
        if not np.all(low < high):
            raise ValueError("each source needs low < high")

    @classmethod
    def random_uniform(cls, dim: int, seed: int, max_range=(2.0, 7.0)) -> "SourceSpec":
        """Sources ``U[0, B_i]`` with each ``B_i`` drawn from ``U[max_range]``."""
        rng = np.random.default_rng(seed)
        high = rng.uniform(*max_range, size=dim)
        return cls(dim=dim, low=np.zeros(dim), high=high, rng_seed=int(rng.integers(2**63)))

    @property
    def ranges(self) -> np.ndarray:
        return self.high - self.low

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def std(self) -> np.ndarray:
        return self.ranges / np.sqrt(12.0)

    @property
    def bounds_b(self) -> np.ndarray:
        # (r/2) / (r/sqrt(12)) for every uniform source
        return np.full(self.dim, SQRT3)


@dataclass
class SourceBatch:
    """Samples (columns) of ``d`` sources with their standardized forms.

    ``standardized`` is zero-mean unit-variance; ``scaled`` divides that by
    the bounds ``b`` so every entry lies in [-1, 1].
    """

    raw: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    bounds_b: np.ndarray
    standardized: np.ndarray = field(repr=False)
    scaled: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.raw.shape[0]

    @property
    def n_samples(self) -> int:
        return self.raw.shape[1]


def generate_uniform_sources(spec: SourceSpec, count: int) -> SourceBatch:
    """Draw ``count`` i.i.d. samples; moments and bounds are the analytic ones."""
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count}")
    rng = np.random.default_rng(spec.rng_seed)
    raw = spec.low[:, None] + spec.ranges[:, None] * rng.random((spec.dim, int(count)))
    batch = SourceBatch(raw, spec.mean, spec.std, spec.bounds_b, None, None)
    batch.standardized, batch.scaled = standardize_known(batch)
    return batch


def standardize_known(batch: SourceBatch):
    """Return ``(s_bar, s_tilde)`` from the batch's own mean, std and bounds."""
    std = np.asarray(batch.std, dtype=float)
    if np.any(std <= 0):
        raise ValueError("zero-variance source cannot be standardized")
    s_bar = (batch.raw - batch.mean[:, None]) / std[:, None]
    s_tilde = s_bar / batch.bounds_b[:, None]
    return s_bar, s_tilde


def standardize_sample(raw) -> SourceBatch:
    """Standardize with sample moments (for data without a known law, e.g. images).

    The bound of each source is taken as ``max |s_bar|``, the tightest
    symmetric bound, so ``scaled`` stays inside [-1, 1].
    """
    raw = np.asarray(raw, dtype=float)
    mean = raw.mean(axis=1)
    std = raw.std(axis=1)
    if np.any(std <= 0):
        raise ValueError("zero-variance source cannot be standardized")
    s_bar = (raw - mean[:, None]) / std[:, None]
    b = np.abs(s_bar).max(axis=1)
    return SourceBatch(raw, mean, std, b, s_bar, s_bar / b[:, None])


def inject_corners(batch: SourceBatch) -> SourceBatch:
    """Append all ``2**d`` sign corners of the scaled box as extra samples."""
    d = batch.dim
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=d))).T
    s_bar = batch.bounds_b[:, None] * corners
    raw = batch.mean[:, None] + batch.std[:, None] * s_bar
    return SourceBatch(
        np.hstack([batch.raw, raw]),
        batch.mean,
        batch.std,
        batch.bounds_b,
        np.hstack([batch.standardized, s_bar]),
        np.hstack([batch.scaled, corners]),
    )


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim}")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


@dataclass
class MixingModel:
    A: np.ndarray
    mu_m: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = np.array(self.A, dtype=float, ndmin=2)
        q, d = self.A.shape
        if q < d:
            raise ValueError(f"underdetermined mixing ({q} mixtures < {d} sources) is not supported")
        if np.linalg.matrix_rank(self.A) != d:
            raise ValueError("mixing matrix must have full column rank")
        if self.mu_m is not None:
            self.mu_m = np.asarray(self.mu_m, dtype=float)

    @property
    def n_sources(self) -> int:
        return self.A.shape[1]


def random_mixing(n_mixtures: int, n_sources: int, seed: int) -> MixingModel:
    """Gaussian ``q x d`` mixing matrix; orthogonal when ``q == d``."""
    if n_mixtures == n_sources:
        return MixingModel(random_orthogonal(n_sources, seed))
    rng = np.random.default_rng(seed)
    return MixingModel(rng.standard_normal((n_mixtures, n_sources)))


def mix(model: MixingModel, sources) -> np.ndarray:
    """``m_t = A s_t`` for every column."""
    S = np.asarray(sources, dtype=float)
    if S.ndim != 2 or S.shape[0] != model.n_sources:
        raise ValueError(f"expected {model.n_sources} source rows, got shape {S.shape}")
    return model.A @ S


@dataclass
class WhiteningTransform:
    W_pre: np.ndarray
    mu_m: np.ndarray

    def apply(self, mixtures) -> np.ndarray:
        m = np.asarray(mixtures, dtype=float)
        return self.W_pre @ (m - self.mu_m[:, None])


def whiten_batch(mixtures, target_dim: int, eig_floor: float = EIG_FLOOR):
    """Mean-remove and whiten a batch of mixtures.

    Covariance is the 1/T sample covariance. With ``target_dim == q`` the
    symmetric inverse square root is used; otherwise the top ``target_dim``
    principal directions are kept and scaled to unit variance.

    Returns
    -------
    x : ndarray, shape (target_dim, T)
    transform : WhiteningTransform
    """
    m = np.asarray(mixtures, dtype=float)
    if m.ndim != 2:
        raise ValueError("mixtures must be a 2-D array (channels x samples)")
    q, T = m.shape
    if T <= q:
        raise ValueError(f"need more samples than channels (T={T}, q={q})")
    if int(target_dim) != target_dim or not 1 <= target_dim <= q:
        raise ValueError(f"target_dim must be in 1..{q}, got {target_dim}")
    mu = m.mean(axis=1)
    mc = m - mu[:, None]
    C = mc @ mc.T / T
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1][:target_dim]
    evals, evecs = evals[order], evecs[:, order]
    if evals.min() <= eig_floor * max(evals.max(), 0.0) or evals.min() <= 0:
        raise ValueError("mixture covariance is rank deficient for the requested dimension")
    W_pre = evecs.T / np.sqrt(evals)[:, None]
    if target_dim == q:
        W_pre = evecs @ W_pre
    x = W_pre @ mc
    return x, WhiteningTransform(W_pre, mu)
