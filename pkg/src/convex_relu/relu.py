"""Constrained convex ReLU training by an augmented Lagrangian method.

The primal variable stacks ``V`` and ``W`` (each ``(P, d, c)``) into one
``(2P, d, c)`` array so the inner problem is a group-lasso-shaped problem
solved by the same accelerated proximal method as the gated model. Each
constraint ``(2 D_i - I) X v_i >= 0`` carries a multiplier per row and class.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, _masks, batched_adjoint, batched_forward
from .fista import CONVERGED, MAX_ITERS, GReLUConfig, SolverReport, group_penalty, minimize
from .network import ReLUNetwork, relu_weights_to_network

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReLUWeights:
    """Blocks ``v`` and ``w`` of shape ``(P, d, c)``; the model uses ``v_i - w_i``."""

    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if v.ndim == 2:
            v, w = v[:, :, None], w[:, :, None]
        if v.shape != w.shape or v.ndim != 3:
            raise ValueError(f"v {v.shape} and w {w.shape} must be matching (P, d, c) arrays")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("ReLU weights must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, P: int, d: int, c: int) -> "ReLUWeights":
        return cls(np.zeros((P, d, c)), np.zeros((P, d, c)))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])

    @classmethod
    def from_stacked(cls, x: np.ndarray) -> "ReLUWeights":
        P = x.shape[0] // 2
        return cls(x[:P].copy(), x[P:].copy())

    def group_norm(self) -> float:
        return group_penalty(self.v, 1.0) + group_penalty(self.w, 1.0)


@dataclass(frozen=True)
class DualVars:
    """Nonnegative multipliers ``gamma`` (for ``v``) and ``zeta`` (for ``w``), ``(P, n, c)``."""

    gamma: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zeros(cls, P: int, n: int, c: int) -> "DualVars":
        return cls(np.zeros((P, n, c)), np.zeros((P, n, c)))


@dataclass(frozen=True)
class ALConfig:
    lam: float = 0.0
    delta0: float = 100.0
    r_l: float = 1e-3
    r_u: float = 1e-2
    window_tol: float = 10 ** -1.5
    inner: GReLUConfig = GReLUConfig(max_iters=1000)
    gap_tol: float = 1e-3
    stat_tol: float = 1e-3
    total_inner_budget: int = 10000
    max_window_steps: int = 30
    windowing: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.delta0 <= 0:
            raise ValueError("delta0 must be > 0")
        if not 0 < self.r_l < self.r_u:
            raise ValueError("window must satisfy 0 < r_l < r_u")
        if self.window_tol <= 0 or self.gap_tol < 0 or self.stat_tol < 0:
            raise ValueError("tolerances must be positive")
        if self.total_inner_budget < 1:
            raise ValueError("total_inner_budget must be >= 1")

    def replace(self, **changes) -> "ALConfig":
        return dataclasses.replace(self, **changes)


def _signs(masks: np.ndarray) -> np.ndarray:
    return np.where(masks, 1.0, -1.0)[:, :, None]


def _as_blocks(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, :, None] if a.ndim == 2 else a


class ALSmooth:
    """Smooth part of the augmented Lagrangian over stacked ``(2P, d, c)`` blocks.

    ``0.5 ||sum D_i X (v_i - w_i) - Y||^2 / (n c)
      + delta / 2 * sum_i ||(gamma_i / delta - Xs_i v_i)_+||^2 + ||(zeta_i / delta - Xs_i w_i)_+||^2``
    """

    def __init__(self, patterns, X, Y, duals: DualVars, delta: float):
        if delta <= 0:
            raise ValueError("delta must be > 0")
        self.masks = _masks(patterns)
        self.D = self.masks.astype(float)[:, :, None]
        self.S = _signs(self.masks)
        self.X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        self.scale = 1.0 / self.Y.size
        self.delta = float(delta)
        self.shift = np.concatenate([duals.gamma, duals.zeta]) / self.delta
        self.signs2 = np.concatenate([self.S, self.S])
        P, n = self.masks.shape
        if self.shift.shape != (2 * P, n, self.Y.shape[1]):
            raise ValueError(f"dual shape {self.shift.shape[1:]} inconsistent with problem")

    def _parts(self, x):
        P = self.masks.shape[0]
        XU = batched_forward(self.X, x)  # (2P, n, c)
        pred = np.sum(self.D * (XU[:P] - XU[P:]), axis=0)
        r = pred - self.Y
        q = np.maximum(self.shift - self.signs2 * XU, 0.0)
        loss = 0.5 * self.scale * float(np.vdot(r, r))
        penalty = 0.5 * self.delta * float(np.vdot(q, q))
        return r, q, loss, penalty

    def value(self, x) -> float:
        _, _, loss, penalty = self._parts(x)
        return loss + penalty

    def value_and_grad(self, x):
        r, q, loss, penalty = self._parts(x)
        Dr = self.scale * self.D * r[None]
        residual = np.concatenate([Dr, -Dr]) - self.delta * self.signs2 * q
        return loss + penalty, batched_adjoint(self.X, residual)

    def penalty(self, x) -> float:
        return self._parts(x)[3]


def relu_objective(V, W, patterns, X, Y, lam: float) -> float:
    """Convex ReLU objective: normalized squared loss of ``sum D_i X (v_i - w_i)`` plus group norms."""
    V, W = _as_blocks(V), _as_blocks(W)
    masks = _masks(patterns).astype(float)[:, :, None]
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    pred = np.sum(masks * batched_forward(np.asarray(X, dtype=float), V - W), axis=0)
    r = pred - Y
    return 0.5 * float(np.vdot(r, r)) / Y.size + group_penalty(V, lam) + group_penalty(W, lam)


def augmented_lagrangian(V, W, duals: DualVars, delta, dataset: Dataset, patterns, lam) -> float:
    x = np.concatenate([_as_blocks(V), _as_blocks(W)])
    smooth = ALSmooth(patterns, dataset.features, dataset.targets, duals, delta)
    return smooth.value(x) + group_penalty(x, lam)


def al_grad(V, W, duals: DualVars, delta, dataset: Dataset, patterns) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the smooth part of the augmented Lagrangian with respect to ``(V, W)``."""
    V, W = _as_blocks(V), _as_blocks(W)
    smooth = ALSmooth(patterns, dataset.features, dataset.targets, duals, delta)
    _, g = smooth.value_and_grad(np.concatenate([V, W]))
    P = V.shape[0]
    return g[:P], g[P:]


def dual_update(duals: DualVars, V, W, delta: float, patterns, X) -> DualVars:
    """``gamma_i <- (gamma_i - delta Xs_i v_i)_+`` and likewise for ``zeta``."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    S = _signs(_masks(patterns))
    X = np.asarray(X, dtype=float)
    gamma = np.maximum(duals.gamma - delta * S * batched_forward(X, _as_blocks(V)), 0.0)
    zeta = np.maximum(duals.zeta - delta * S * batched_forward(X, _as_blocks(W)), 0.0)
    return DualVars(gamma, zeta)


def constraint_gap(V, W, patterns, X) -> float:
    """``sum_i ||(Xs_i v_i)_-||^2 + ||(Xs_i w_i)_-||^2``."""
    S = _signs(_masks(patterns))
    X = np.asarray(X, dtype=float)
    zv = np.minimum(S * batched_forward(X, _as_blocks(V)), 0.0)
    zw = np.minimum(S * batched_forward(X, _as_blocks(W)), 0.0)
    return float(np.vdot(zv, zv) + np.vdot(zw, zw))


@dataclass
class _Progress:
    """Bookkeeping shared by windowing and the outer loop."""

    x: np.ndarray
    eta: float
    iterations: int = 0
    passes: int = 0
    last: SolverReport | None = None
    gaps: list[float] = field(default_factory=list)


def _inner_solve(dataset, patterns, config: ALConfig, duals, delta, state: _Progress, grad_tol):
    budget = config.total_inner_budget - state.iterations
    inner = config.inner.replace(
        lam=config.lam, grad_tol=grad_tol, eta0=state.eta,
        max_iters=max(0, min(config.inner.max_iters, budget)),
    )
    smooth = ALSmooth(patterns, dataset.features, dataset.targets, duals, delta)
    x, report = minimize(smooth, state.x, inner)
    state.x = x
    state.iterations += report.iterations
    state.passes += report.data_passes
    if np.isfinite(report.final_step):
        state.eta = report.final_step
    state.last = report
    P = x.shape[0] // 2
    gap = constraint_gap(x[:P], x[P:], patterns, dataset.features)
    return report, gap, smooth


def windowing(delta: float, dataset: Dataset, patterns, config: ALConfig, state: _Progress | None = None):
    """Tune ``delta`` so the constraint gap with zero multipliers lands in ``[r_l, r_u]``.

    Returns ``(delta, state)``; ``state`` carries the warm start for the
    outer loop. A gap of exactly zero stops the search since no smaller
    penalty can make the iterate infeasible in a useful way.
    """
    P = len(_masks(patterns))
    if state is None:
        state = _Progress(np.zeros((2 * P, dataset.d, dataset.c)), config.inner.eta0)
    zeros = DualVars.zeros(P, dataset.n, dataset.c)
    tol = config.window_tol
    for step in range(config.max_window_steps + 1):
        _, gap, _ = _inner_solve(dataset, patterns, config, zeros, delta, state, tol**2)
        state.gaps.append(gap)
        if config.r_l <= gap <= config.r_u or gap == 0.0:
            return delta, state
        if state.iterations >= config.total_inner_budget or step == config.max_window_steps:
            break
        if gap > config.r_u:
            delta *= 2.0
        else:
            delta /= 2.0
            tol /= 2.0
    logger.warning("windowing stopped with gap %.3e outside [%g, %g]; keeping delta=%g",
                   state.gaps[-1], config.r_l, config.r_u, delta)
    return delta, state


def solve_relu(
    dataset: Dataset,
    patterns,
    config: ALConfig = ALConfig(),
    warm_start: ReLUWeights | None = None,
) -> tuple[ReLUWeights, DualVars, SolverReport]:
    """Augmented Lagrangian method for the constrained convex ReLU problem.

    Stops when the constraint gap is at most ``gap_tol`` and the inner
    min-norm subgradient of the augmented Lagrangian is at most
    ``stat_tol`` (norm), or when the total inner iteration budget runs out.
    """
    start = time.perf_counter()
    P = len(_masks(patterns))
    X, Y = dataset.features, dataset.targets
    shape = (2 * P, dataset.d, dataset.c)
    x0 = np.zeros(shape) if warm_start is None else warm_start.stacked()
    if x0.shape != shape:
        raise ValueError(f"warm start shape {x0.shape} != {shape}")
    state = _Progress(x0, config.inner.eta0)

    delta = config.delta0
    if config.windowing:
        delta, state = windowing(delta, dataset, patterns, config, state)

    duals = DualVars.zeros(P, dataset.n, dataset.c)
    obj_trace, sub_trace, gap_trace, al_trace = [], [], [], []
    status = MAX_ITERS
    outer = 0
    while state.iterations < config.total_inner_budget or outer == 0:
        outer += 1
        report, gap, smooth = _inner_solve(dataset, patterns, config, duals, delta, state, config.stat_tol**2)
        x = state.x
        obj_trace.append(relu_objective(x[:P], x[P:], patterns, X, Y, config.lam))
        sub_trace.append(report.final_subgrad_sq)
        gap_trace.append(gap)
        constant = (float(np.vdot(duals.gamma, duals.gamma)) + float(np.vdot(duals.zeta, duals.zeta))) / (2 * delta)
        al_trace.append(smooth.value(x) + group_penalty(x, config.lam) - constant)
        if gap <= config.gap_tol and report.final_subgrad_sq <= config.stat_tol**2:
            status = CONVERGED
            break
        if report.status == "diverged":
            status = "diverged"
            break
        duals = dual_update(duals, x[:P], x[P:], delta, patterns, X)
        if state.iterations >= config.total_inner_budget:
            break

    if status != CONVERGED:
        logger.warning("augmented Lagrangian stopped with status %s after %d inner iterations",
                       status, state.iterations)
    result = SolverReport(
        status=status,
        iterations=state.iterations,
        data_passes=state.passes,
        objective_trace=obj_trace,
        subgrad_sq_trace=sub_trace,
        wall_time=time.perf_counter() - start,
        final_step=state.eta,
        outer_iterations=outer,
        constraint_gap_trace=gap_trace,
        al_value_trace=al_trace,
        delta=delta,
    )
    return ReLUWeights.from_stacked(state.x), duals, result


def relu_to_network(weights: ReLUWeights, drop_tol: float = 1e-8) -> ReLUNetwork:
    """Balanced two-layer ReLU network with one neuron per nonzero ``v_i`` or ``w_i`` column."""
    return relu_weights_to_network(weights.v, weights.w, drop_tol)
