"""Offline checks of the BSM program and separation-quality metrics."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .network import NetworkState
from .signals import random_orthogonal

__all__ = [
    "BatchData",
    "BoundCheck",
    "AlignmentReport",
    "SirReport",
    "wsm_cost",
    "constraint_residual",
    "bsm_objective",
    "is_signed_permutation",
    "theorem_bound_check",
    "theorem_sweep",
    "construct_optimum",
    "align_outputs",
    "sir",
    "windowed_sir",
    "ei_balance",
    "SIR_CEILING_DB",
]

SIR_CEILING_DB = 160.0
SIGNED_PERM_TOL = 1e-9
_BLOCK = 2048


@dataclass
class BatchData:
    """Inputs X, outputs Y (both d x T), gains D, and time weighting gamma_sq.

    ``gamma_sq = 1`` is the unweighted program.
    """

    X: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    gamma_sq: float = 1.0

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float, ndmin=2)
        self.Y = np.array(self.Y, dtype=float, ndmin=2)
        self.D = np.array(self.D, dtype=float, ndmin=1)
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError(f"X and Y need the same number of samples, got {self.X.shape[1]} and {self.Y.shape[1]}")
        if self.D.shape != (self.Y.shape[0],):
            raise ValueError(f"D must have length {self.Y.shape[0]}")
        if np.any(self.D <= 0):
            raise ValueError("D must be positive")
        if not 0 < self.gamma_sq <= 1:
            raise ValueError("gamma_sq must lie in (0, 1]")

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    def time_weights(self) -> np.ndarray:
        """gamma^(T-1), ..., gamma, 1 for the columns."""
        T = self.n_samples
        return np.sqrt(self.gamma_sq) ** np.arange(T - 1, -1, -1)

    def kappa(self) -> float:
        """Finite-window kappa_T = sum_{k<T} gamma^(2k); equals T when unweighted."""
        if self.gamma_sq == 1:
            return float(self.n_samples)
        return (1 - self.gamma_sq**self.n_samples) / (1 - self.gamma_sq)


def _gram_gap_sq(A, B, D):
    # ||A^T A - B^T diag(D) B||_F^2 formed block by block; the expanded trace
    # identity cancels catastrophically near zero
    T = A.shape[1]
    BD = B * D[:, None]
    total = 0.0
    for s in range(0, T, _BLOCK):
        blk = slice(s, min(s + _BLOCK, T))
        diff = A.T @ A[:, blk] - BD.T @ B[:, blk]
        total += float(np.sum(diff * diff))
    return total


def wsm_cost(batch: BatchData, kappa: Optional[float] = None) -> float:
    """(1/kappa^2) ||Xw^T Xw - Yw^T D Yw||_F^2 with time-weighted columns.

    ``kappa`` defaults to the finite-window value of the batch.
    """
    w = batch.time_weights()
    k = batch.kappa() if kappa is None else kappa
    return _gram_gap_sq(batch.X * w, batch.Y * w, batch.D) / k**2


def constraint_residual(batch: BatchData) -> float:
    """Frobenius norm of ``X^T X - Y^T D Y`` (unweighted)."""
    return float(np.sqrt(_gram_gap_sq(batch.X, batch.Y, batch.D)))


def bsm_objective(D) -> float:
    D = np.asarray(D, dtype=float)
    if np.any(D <= 0):
        raise ValueError("BSM weights must be positive")
    return float(np.sum(D * D))


def is_signed_permutation(G, tol: float = SIGNED_PERM_TOL) -> bool:
    """True when each row has one dominant entry, the others below ``tol`` relative
    to the row norm, and the dominant entries hit every column once."""
    G = np.asarray(G, dtype=float)
    absG = np.abs(G)
    lead = absG.argmax(axis=1)
    norms = np.linalg.norm(G, axis=1)
    rest = absG.copy()
    rest[np.arange(len(G)), lead] = 0.0
    off = np.linalg.norm(rest, axis=1)
    if np.any(norms == 0) or np.any(off > tol * norms):
        return False
    return len(set(lead.tolist())) == G.shape[1] == G.shape[0]


@dataclass
class BoundCheck:
    cost_proxy: float
    lower_bound: float
    is_signed_permutation: bool

    @property
    def holds(self) -> bool:
        return self.cost_proxy >= self.lower_bound * (1 - 1e-12)

    @property
    def tight(self) -> bool:
        return abs(self.cost_proxy - self.lower_bound) <= 1e-9 * max(1.0, self.lower_bound)


def theorem_bound_check(G, b) -> BoundCheck:
    """Compare the minimal feasible cost for a transfer ``G`` with its lower bound.

    With corner coverage the gain of output ``i`` must be at least
    ``||(G diag(b))_i||_1^2``; summed over outputs this never drops below
    ``sum b_i^2``, with equality exactly for signed permutations.
    """
    G = np.array(G, dtype=float, ndmin=2)
    b = np.asarray(b, dtype=float)
    d = G.shape[0]
    if G.shape != (d, d) or b.shape != (d,):
        raise ValueError("G must be square and match the length of b")
    if np.max(np.abs(G.T @ G - np.eye(d))) > 1e-10:
        raise ValueError("G must be orthogonal")
    if np.any(b < 1):
        raise ValueError("bounds of standardized sources are at least 1")
    Phi = G * b[None, :]
    proxy = float(np.sum(np.sum(np.abs(Phi), axis=1) ** 2))
    return BoundCheck(proxy, float(np.sum(b * b)), is_signed_permutation(G))


def _random_signed_permutation(d, rng):
    P = np.eye(d)[rng.permutation(d)]
    return P * rng.choice([-1.0, 1.0], size=d)[:, None]


def theorem_sweep(trials: int, seed: int, max_dim: int = 5, perm_every: int = 10):
    """Randomized sweep of :func:`theorem_bound_check`.

    Each trial draws ``d`` in 2..max_dim, bounds in [1, 3], and a Haar
    orthogonal ``G``; every ``perm_every``-th trial uses a random signed
    permutation instead so the equality case is exercised.
    Returns a list of (d, BoundCheck).
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(trials):
        d = int(rng.integers(2, max_dim + 1))
        b = rng.uniform(1.0, 3.0, size=d)
        if perm_every and k % perm_every == perm_every - 1:
            G = _random_signed_permutation(d, rng)
        else:
            G = random_orthogonal(d, int(rng.integers(2**63)))
        out.append((d, theorem_bound_check(G, b)))
    return out


def construct_optimum(scaled, bounds_b, perm, signs):
    """Build the separating solution ``Y = diag(signs) P s_tilde`` and its gains.

    Output ``i`` carries source ``perm[i]``, so ``D_ii = b[perm[i]]^2``.
    """
    perm = np.asarray(perm)
    signs = np.asarray(signs, dtype=float)
    Y = signs[:, None] * np.asarray(scaled)[perm]
    D = np.asarray(bounds_b, dtype=float)[perm] ** 2
    return Y, D


@dataclass
class AlignmentReport:
    permutation: np.ndarray
    signs: np.ndarray
    scales: np.ndarray
    residual_energy: float
    correlation: np.ndarray

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def _correlations(Y, S):
    Yc = Y - Y.mean(axis=1, keepdims=True)
    Sc = S - S.mean(axis=1, keepdims=True)
    ny = np.linalg.norm(Yc, axis=1)
    ns = np.linalg.norm(Sc, axis=1)
    if np.any(ny == 0) or np.any(ns == 0):
        raise ValueError("zero-variance row cannot be aligned")
    return (Yc @ Sc.T) / np.outer(ny, ns), Yc, Sc


def align_outputs(Y, S_ref, method: str = "greedy") -> AlignmentReport:
    """Match outputs to reference sources up to sign, permutation and scale.

    ``permutation[i]`` is the source index assigned to output ``i``. The
    greedy matcher repeatedly takes the largest remaining |correlation|;
    ``method="exhaustive"`` maximizes the summed |correlation| over all
    permutations (d <= 8).
    """
    Y = np.asarray(Y, dtype=float)
    S = np.asarray(S_ref, dtype=float)
    if Y.shape != S.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {S.shape}")
    d = Y.shape[0]
    if d > 12:
        raise ValueError("alignment supports at most 12 signals")
    C, Yc, Sc = _correlations(Y, S)
    A = np.abs(C)
    if method == "greedy":
        perm = np.full(d, -1)
        work = A.copy()
        for _ in range(d):
            i, j = np.unravel_index(np.argmax(work), work.shape)
            perm[i] = j
            work[i, :] = -1.0
            work[:, j] = -1.0
    elif method == "exhaustive":
        if d > 8:
            raise ValueError("exhaustive matching is limited to d <= 8")
        rows = np.arange(d)
        best = max(itertools.permutations(range(d)), key=lambda p: A[rows, list(p)].sum())
        perm = np.array(best)
    else:
        raise ValueError(f"unknown method {method!r}")
    matched = Sc[perm]
    scales = np.sum(Yc * matched, axis=1) / np.sum(matched * matched, axis=1)
    signs = np.where(scales < 0, -1, 1)
    resid = float(np.sum((Yc - scales[:, None] * matched) ** 2))
    return AlignmentReport(perm, signs, scales, resid, C)


@dataclass
class SirReport:
    per_output_db: np.ndarray
    mean_db: float
    H: np.ndarray

    def to_dict(self):
        return {
            "per_output_db": self.per_output_db.tolist(),
            "mean_db": self.mean_db,
            "H": self.H.tolist(),
        }


def sir(Y, S_bar) -> SirReport:
    """Signal-to-interference ratio of each output, in dB.

    ``H`` regresses the (centred) outputs on the (centred) reference
    sources. For output ``i`` the strongest source is the signal and the
    rest is interference. Outputs with numerically zero interference are
    reported at ``SIR_CEILING_DB``.
    """
    Y = np.asarray(Y, dtype=float)
    S = np.asarray(S_bar, dtype=float)
    if Y.shape[1] != S.shape[1]:
        raise ValueError("outputs and sources need the same number of samples")
    if S.shape[1] < S.shape[0]:
        raise ValueError("fewer samples than sources; regression is singular")
    Yc = Y - Y.mean(axis=1, keepdims=True)
    Sc = S - S.mean(axis=1, keepdims=True)
    G = Sc @ Sc.T
    if np.linalg.matrix_rank(G) < S.shape[0]:
        raise ValueError("reference sources are linearly dependent; regression is singular")
    H = np.linalg.solve(G, Sc @ Yc.T).T
    P = H * H
    lead = P.argmax(axis=1)
    sig = P[np.arange(len(P)), lead]
    interf = P.sum(axis=1) - sig
    with np.errstate(divide="ignore"):
        db = np.where(
            interf <= sig * 10 ** (-SIR_CEILING_DB / 10),
            SIR_CEILING_DB,
            10 * np.log10(sig / np.where(interf > 0, interf, 1.0)),
        )
    return SirReport(db, float(db.mean()), H)


def windowed_sir(Y, S_bar, window: int, ends):
    """Mean SIR over the ``window`` samples ending at each index in ``ends``."""
    return np.array([sir(Y[:, max(0, e - window):e], S_bar[:, max(0, e - window):e]).mean_db for e in ends])


def ei_balance(state: NetworkState):
    """Per-neuron excitation ``||W_i||^2``, inhibition ``||M_i||_D^2`` and their gap.

    The gap is what drives the gain update; at a gain fixed point it equals
    ``beta D_ii / eta``.
    """
    excitation = np.sum(state.W**2, axis=1)
    inhibition = (state.M**2) @ state.D
    return {"excitation": excitation, "inhibition": inhibition, "gap": excitation - inhibition}
