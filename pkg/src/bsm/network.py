"""Online bounded similarity matching network.

A recurrent network with clipping (or clipped soft-threshold) activations.
Feedforward weights ``W`` are Hebbian, lateral weights ``M`` anti-Hebbian,
and the per-neuron inner-product weights ``D`` act as inverse activation
gains adjusted by the balance of excitation and inhibition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from . import _kernels

__all__ = [
    "Activation",
    "DynamicsConfig",
    "NetworkConfig",
    "NetworkState",
    "StepDiagnostics",
    "DivergenceError",
    "effective_window",
    "clip",
    "sparse_activation",
    "online_cost",
    "grad_y",
    "grad_D",
    "run_dynamics",
    "update_weights",
    "init_state",
    "step",
    "run_stream",
]


class DivergenceError(ArithmeticError):
    """Raised when the recurrent dynamics produce non-finite values."""


@dataclass(frozen=True)
class Activation:
    """Output nonlinearity: ``clip`` onto [-1, 1] or ``sparse`` a_{T,lambda}."""

    kind: Literal["clip", "sparse"] = "clip"
    T: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("clip", "sparse"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "sparse":
            _check_sparse_params(self.T, self.lam)

    @property
    def bound(self) -> float:
        return 1.0 if self.kind == "clip" else self.T

    def _codes(self):
        if self.kind == "clip":
            return _kernels.CLIP, 1.0, 0.0
        return _kernels.SPARSE, float(self.T), float(self.lam)

    def __call__(self, z):
        if self.kind == "clip":
            return clip(z)
        return sparse_activation(z, self.T, self.lam)


@dataclass(frozen=True)
class DynamicsConfig:
    step: float = 0.1
    tol: float = 1e-6
    max_iters: int = 500
    u_init: Literal["zero", "warm"] = "zero"

    def __post_init__(self):
        if not 0 < self.step <= 1:
            raise ValueError(f"Euler step must lie in (0, 1], got {self.step}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.u_init not in ("zero", "warm"):
            raise ValueError(f"u_init must be 'zero' or 'warm', got {self.u_init!r}")


@dataclass(frozen=True)
class NetworkConfig:
    """Hyperparameters of the online network.

    Defaults are the ten-source experiment values: ``1 - gamma_sq = 4e-3``,
    ``eta = 1e-3`` and ``beta = 1e-6``. ``beta = 2 * eta * alpha_D``.
    """

    gamma_sq: float = 0.996
    eta: float = 1e-3
    beta: float = 1e-6
    activation: Activation = field(default_factory=Activation)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    init_seed: int = 0
    d_floor: float = 1e-6
    upsilon_floor: float = 1e-8

    def __post_init__(self):
        if not 0 < self.gamma_sq < 1:
            raise ValueError(f"gamma_sq must lie in (0, 1), got {self.gamma_sq}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not (self.d_floor > 0 and self.upsilon_floor > 0):
            raise ValueError("d_floor and upsilon_floor must be positive")

    @property
    def kappa(self) -> float:
        return effective_window(self.gamma_sq)

    @property
    def alpha_D(self) -> float:
        return self.beta / (2.0 * self.eta)


@dataclass
class NetworkState:
    """Synaptic state of a network with ``d`` outputs.

    ``M`` is stored whole; :attr:`M_bar` and :attr:`upsilon` are its
    off-diagonal and diagonal parts.
    """

    W: np.ndarray
    M: np.ndarray
    D: np.ndarray
    t: int = 0
    u: Optional[np.ndarray] = None

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float, ndmin=2)
        self.M = np.array(self.M, dtype=float, ndmin=2)
        self.D = np.array(self.D, dtype=float, ndmin=1)
        d = self.D.shape[0]
        if self.W.shape[0] != d or self.M.shape != (d, d) or self.D.ndim != 1:
            raise ValueError(
                f"inconsistent shapes W{self.W.shape}, M{self.M.shape}, D{self.D.shape}"
            )
        if self.u is None:
            self.u = np.zeros(d)
        else:
            self.u = np.array(self.u, dtype=float)

    @property
    def dim(self) -> int:
        return self.D.shape[0]

    @property
    def M_bar(self) -> np.ndarray:
        return self.M - np.diag(np.diag(self.M))

    @property
    def upsilon(self) -> np.ndarray:
        return np.diag(self.M).copy()

    def copy(self) -> "NetworkState":
        return NetworkState(self.W.copy(), self.M.copy(), self.D.copy(), self.t, self.u.copy())


@dataclass
class StepDiagnostics:
    y: np.ndarray
    iterations: int
    converged: bool
    max_preactivation: float
    h_value: float
    u: np.ndarray
    path: Optional[np.ndarray] = None


def effective_window(gamma_sq: float) -> float:
    """Effective averaging window ``kappa = 1 / (1 - gamma_sq)``."""
    if not 0 < gamma_sq < 1:
        raise ValueError(f"gamma_sq must lie in (0, 1), got {gamma_sq}")
    return 1.0 / (1.0 - gamma_sq)


def _check_sparse_params(T, lam):
    if not T > 0:
        raise ValueError(f"sparse activation needs T > 0, got {T}")
    if not lam >= 0:
        raise ValueError(f"sparse activation needs lambda >= 0, got {lam}")


def clip(z):
    """Project onto [-1, 1]; identity inside, ``sign(z)`` outside."""
    z = np.asarray(z, dtype=float)
    if np.isnan(z).any():
        raise ValueError("clip received NaN")
    out = np.clip(z, -1.0, 1.0)
    return out.item() if out.ndim == 0 else out


def sparse_activation(z, T: float, lam: float):
    """Clipped soft threshold: dead zone ``|z| < lam``, saturation at ``+-T``."""
    _check_sparse_params(T, lam)
    z = np.asarray(z, dtype=float)
    if np.isnan(z).any():
        raise ValueError("sparse_activation received NaN")
    out = np.where(
        z >= T + lam,
        T,
        np.where(
            z >= lam,
            z - lam,
            np.where(z <= -(T + lam), -T, np.where(z < -lam, z + lam, 0.0)),
        ),
    )
    return out.item() if out.ndim == 0 else out


def _vector(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def online_cost(state: NetworkState, x, y, kappa: float, alpha_D: float) -> float:
    """Per-sample online cost h(y, D) minimised by the network.

    kappa Tr(MDMD) - 2 kappa Tr(W^T D W) + 2 y^T D M D y - 4 y^T D W x
    + 2 alpha_D sum D_ii^2
    """
    W, M, D = state.W, state.M, state.D
    x = _vector(x, W.shape[1], "x")
    y = _vector(y, state.dim, "y")
    DM = D[:, None] * M
    return float(
        kappa * np.trace(DM @ DM)
        - 2 * kappa * np.sum(D[:, None] * W * W)
        + 2 * (D * y) @ M @ (D * y)
        - 4 * (D * y) @ (W @ x)
        + 2 * alpha_D * np.sum(D * D)
    )


def grad_y(state: NetworkState, x, y) -> np.ndarray:
    """Quarter gradient of :func:`online_cost` in y: ``D M D y - D W x``."""
    x = _vector(x, state.W.shape[1], "x")
    y = _vector(y, state.dim, "y")
    D = state.D
    return D * (state.M @ (D * y)) - D * (state.W @ x)


def grad_D(state: NetworkState, kappa: float, alpha_D: float, x=None, y=None) -> np.ndarray:
    """Quarter gradient of :func:`online_cost` in the diagonal of D.

    Without ``x`` and ``y`` this is the accumulated-statistics part,
    ``(kappa/2) (||M_i||_D^2 - ||W_i||^2) + alpha_D D_ii``, which drives the
    gain update. Passing the current sample adds its own contribution
    ``y_i (M D y - W x)_i`` so the result is the exact partial derivative.
    """
    W, M, D = state.W, state.M, state.D
    if (x is None) != (y is None):
        raise ValueError("pass both x and y, or neither")
    g = 0.5 * kappa * ((M * M) @ D - np.sum(W * W, axis=1)) + alpha_D * D
    if y is not None:
        x = _vector(x, W.shape[1], "x")
        y = _vector(y, state.dim, "y")
        g = g + y * (M @ (D * y) - W @ x)
    return g


def _check_state(state: NetworkState, cfg: NetworkConfig):
    if np.any(np.diag(state.M) < cfg.upsilon_floor):
        raise ValueError("diag(M) below upsilon_floor")
    if np.any(state.D < cfg.d_floor):
        raise ValueError("D below d_floor")


def run_dynamics(
    state: NetworkState,
    x,
    cfg: NetworkConfig,
    *,
    u0=None,
    record_path: bool = False,
) -> StepDiagnostics:
    """Integrate the recurrent dynamics for one input until y settles.

    Stops when ``max|y_{k+1} - y_k| < tol`` and every saturated (or, for the
    sparse activation, silenced) neuron would stay where it is, or after
    ``max_iters`` Euler steps.

    Parameters
    ----------
    state : NetworkState
        Weights; not modified.
    x : array_like
        Whitened input sample.
    cfg : NetworkConfig
    u0 : array_like, optional
        Initial internal state. Defaults to zero, or to ``state.u`` when
        ``cfg.dynamics.u_init == "warm"``.
    record_path : bool
        Keep every iterate of y in ``StepDiagnostics.path``.

    Raises
    ------
    DivergenceError
        If u becomes non-finite.
    """
    _check_state(state, cfg)
    x = _vector(x, state.W.shape[1], "x")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    dyn = cfg.dynamics
    d = state.dim
    if u0 is not None:
        u = _vector(u0, d, "u0").copy()
    elif dyn.u_init == "warm":
        u = state.u.copy()
    else:
        u = np.zeros(d)
    y = np.empty(d)
    path = np.full((dyn.max_iters + 1 if record_path else 0, d), np.nan)
    kind, T, lam = cfg.activation._codes()
    k, status = _kernels.dynamics(
        state.W, state.M, state.D, x, u, y,
        float(dyn.step), float(dyn.tol), int(dyn.max_iters), kind, T, lam, path,
    )
    if status == _kernels.NONFINITE:
        raise DivergenceError(f"dynamics diverged after {k} iterations; reduce the Euler step")
    gain = np.diag(state.M) * state.D
    return StepDiagnostics(
        y=y,
        iterations=int(k),
        converged=status == _kernels.CONVERGED,
        max_preactivation=float(np.max(np.abs(u / gain))),
        h_value=online_cost(state, x, y, cfg.kappa, cfg.alpha_D),
        u=u,
        path=path[: k + 1] if record_path else None,
    )


def update_weights(state: NetworkState, x, y, cfg: NetworkConfig) -> NetworkState:
    """Apply the Hebbian, anti-Hebbian and gain updates after one sample.

    ``W`` then ``M`` are moved toward ``y x^T`` and ``y y^T``; the gains then
    follow ``D_ii <- (1 - beta) D_ii + eta (||W_i||^2 - ||M_i||^2_D)`` with
    the norm weighted by the pre-update D. Returns a new state.
    """
    x = _vector(x, state.W.shape[1], "x")
    y = _vector(y, state.dim, "y")
    new = state.copy()
    _kernels.update(
        new.W, new.M, new.D, x, y, cfg.gamma_sq, cfg.eta, cfg.beta,
        cfg.d_floor, cfg.upsilon_floor,
    )
    return new


def init_state(d: int, cfg: NetworkConfig, *, zero_W: bool = False, n_inputs: Optional[int] = None) -> NetworkState:
    """Fresh state: ``W ~ U[-0.1, 0.1]`` from ``cfg.init_seed``, ``M = I``, ``D = 1``.

    ``zero_W`` leaves the network silent forever, since nothing ever excites
    the Hebbian updates.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    n = d if n_inputs is None else n_inputs
    if zero_W:
        W = np.zeros((d, n))
    else:
        W = np.random.default_rng(cfg.init_seed).uniform(-0.1, 0.1, size=(d, n))
    return NetworkState(W=W, M=np.eye(d), D=np.ones(d), t=0)


def step(state: NetworkState, x, cfg: NetworkConfig):
    """One online step: settle the dynamics, then learn. Returns (state, diagnostics)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    diag = run_dynamics(state, x, cfg)
    new = update_weights(state, x, diag.y, cfg)
    new.t = state.t + 1
    new.u = diag.u.copy()
    return new, diag


@dataclass
class StreamResult:
    Y: np.ndarray
    iterations: np.ndarray
    max_preactivation: np.ndarray
    unconverged: int


def run_stream(state: NetworkState, X, cfg: NetworkConfig):
    """Process the columns of ``X`` in order. Returns (new state, StreamResult).

    Equivalent to calling :func:`step` on every column, without the Python
    overhead.
    """
    _check_state(state, cfg)
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != state.W.shape[1]:
        raise ValueError(f"X must have {state.W.shape[1]} rows, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    new = state.copy()
    n = X.shape[1]
    Y = np.empty((state.dim, n))
    iters = np.empty(n, dtype=np.int64)
    peak = np.empty(n)
    dyn = cfg.dynamics
    kind, T, lam = cfg.activation._codes()
    done, status, unconverged = _kernels.stream(
        new.W, new.M, new.D, new.u, X, Y, iters, peak, dyn.u_init == "warm",
        float(dyn.step), float(dyn.tol), int(dyn.max_iters), kind, T, lam,
        cfg.gamma_sq, cfg.eta, cfg.beta, cfg.d_floor, cfg.upsilon_floor,
    )
    if status == _kernels.NONFINITE:
        raise DivergenceError(f"dynamics diverged at sample {state.t + done}")
    new.t = state.t + n
    return new, StreamResult(Y, iters, peak, int(unconverged))


def with_dynamics(cfg: NetworkConfig, **changes) -> NetworkConfig:
    """Copy of ``cfg`` with fields of its DynamicsConfig replaced."""
    return replace(cfg, dynamics=replace(cfg.dynamics, **changes))
