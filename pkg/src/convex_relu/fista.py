"""Accelerated proximal gradient for group-l1 regularized smooth problems.

Variables are arrays of shape ``(G, d, c)`` (or ``(d, c)``). Every column of
every block is one group: the penalty is ``lam * sum ||x[g, :, k]||_2``. For a
single output column this is the usual block norm; for several columns it is
the one-vs-all group structure, one group per (pattern, class) pair.

The smooth part is any object with ``value(x)`` and ``value_and_grad(x)``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

logger = logging.getLogger(__name__)

VARIANTS = ("rfista", "fista", "pgdls", "pgd")

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"
STOPPED = "stopped"

MIN_STEP = 1e-16
class StepUnderflowError(FloatingPointError):
    """The line search shrank the step below ``MIN_STEP``."""


class Smooth(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class GReLUConfig:
    """Solver settings. ``grad_tol`` bounds the *squared* min-norm subgradient."""

    lam: float = 0.0
    max_iters: int = 10000
    grad_tol: float = 1e-6
    beta: float = 0.8
    alpha: float = 1.25
    c: float = 5.0
    eta0: float = 1.0
    variant: str = "rfista"
    fixed_step: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be >= 0")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")
        if self.c < 1:
            raise ValueError("c must be >= 1")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    def replace(self, **changes) -> "GReLUConfig":
        return dataclasses.replace(self, **changes)

    @property
    def uses_line_search(self) -> bool:
        return self.variant != "pgd" and not self.fixed_step

    @property
    def uses_momentum(self) -> bool:
        return self.variant in ("rfista", "fista")


@dataclass
class FistaState:
    u: np.ndarray
    y: np.ndarray
    t: float = 1.0
    eta: float = 1.0


@dataclass
class SolverReport:
    status: str
    iterations: int
    data_passes: int
    objective_trace: list[float]
    subgrad_sq_trace: list[float]
    wall_time: float
    restarts: int = 0
    final_step: float = float("nan")
    # augmented Lagrangian runs only
    outer_iterations: int = 0
    constraint_gap_trace: list[float] = field(default_factory=list)
    al_value_trace: list[float] = field(default_factory=list)
    delta: float | None = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def final_subgrad_sq(self) -> float:
        return self.subgrad_sq_trace[-1]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def group_norms(x: np.ndarray) -> np.ndarray:
    """Column norms over the feature axis (-2), keeping dims."""
    return np.sqrt(np.sum(x * x, axis=-2, keepdims=True))


def group_penalty(x: np.ndarray, lam: float) -> float:
    if lam == 0:
        return 0.0
    return lam * float(np.sum(group_norms(x)))


def group_prox(z: np.ndarray, threshold: float) -> np.ndarray:
    """Group soft-thresholding: ``(1 - threshold/||z_g||)_+ z_g`` for each group."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    z = np.asarray(z, dtype=float)
    if threshold == 0:
        return z.copy()
    norms = group_norms(z)
    keep = norms > threshold
    scale = np.where(keep, 1.0 - threshold / np.where(keep, norms, 1.0), 0.0)
    return z * scale


def min_norm_subgrad_sq(u: np.ndarray, grad: np.ndarray, lam: float) -> float:
    """Squared norm of the minimum-norm subgradient of ``f + lam * group norms``."""
    norms = group_norms(u)
    nonzero = norms > 0
    moved = grad + lam * u / np.where(nonzero, norms, 1.0)
    at_nonzero = np.sum(moved * moved, axis=-2, keepdims=True)
    at_zero = np.maximum(group_norms(grad) - lam, 0.0) ** 2
    return float(np.sum(np.where(nonzero, at_nonzero, at_zero)))


def line_search(smooth: Smooth, y, f_y, grad_y, eta, lam, beta):
    """Backtrack along the proximal arc from ``y`` until the majorizer holds.

    A trial that fails the value test gets a second, cancellation-free
    check: for convex ``f``, ``f(u) - f(y) - <grad(y), d> <= <grad(u) - grad(y), d>``
    with ``d = u - y``, so ``<grad(u) - grad(y), d> <= ||d||^2 / (2 eta)`` also
    certifies the bound. Near a minimizer the function differences are
    swamped by rounding while the gradient differences are not.
    Returns ``(u, f(u), eta, evals)`` for the accepted step.
    """
    evals = 0
    while True:
        if eta < MIN_STEP:
            raise StepUnderflowError(f"step size {eta:.3e} underflowed in line search")
        u = group_prox(y - eta * grad_y, eta * lam)
        f_u = smooth.value(u)
        evals += 1
        diff = u - y
        quad = float(np.vdot(diff, diff)) / (2 * eta)
        if f_u <= f_y + float(np.vdot(grad_y, diff)) + quad:
            return u, f_u, eta, evals
        _, g_u = smooth.value_and_grad(u)
        evals += 1
        if float(np.vdot(g_u - grad_y, diff)) <= quad:
            return u, f_u, eta, evals
        eta *= beta


def step_init(prev_eta, u, y_prev, f_u, f_y, grad_y, alpha, c) -> float:
    """Grow the step by ``alpha`` when the last quadratic bound was loose.

    The looseness ratio compares the majorizer curvature ``1/eta`` with the
    curvature actually observed between ``y_prev`` and ``u``.
    """
    diff = u - y_prev
    gap = f_u - (f_y + float(np.vdot(grad_y, diff)))
    if gap <= 1e-14:
        return alpha * prev_eta
    omega = float(np.vdot(diff, diff)) / (2 * prev_eta * gap)
    return alpha * prev_eta if omega >= c else prev_eta


def restart_check(u_next, u, y) -> bool:
    """True when ``u_next`` is not a descent step for the gradient mapping at ``y``.

    The gradient mapping at ``y`` is proportional to ``y - u_next``; the step
    ``u_next - u`` fails to descend when their inner product is positive.
    """
    return float(np.vdot(y - u_next, u_next - u)) > 0


def minimize(
    smooth: Smooth,
    x0: np.ndarray,
    config: GReLUConfig,
    callback: Callable[[int, np.ndarray, float], bool] | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Minimize ``smooth(x) + config.lam * group norms`` from ``x0``.

    ``callback(k, u, objective)`` runs after each iteration; returning True
    stops the solve with status ``"stopped"``.
    """
    start = time.perf_counter()
    lam = config.lam
    u = np.array(x0, dtype=float, copy=True)
    f_u, g_u = smooth.value_and_grad(u)
    passes = 1
    obj_trace = [f_u + group_penalty(u, lam)]
    sub_trace = [min_norm_subgrad_sq(u, g_u, lam)]
    state = FistaState(u=u, y=u, t=1.0, eta=config.eta0)
    f_y, g_y = f_u, g_u
    status = CONVERGED if sub_trace[-1] <= config.grad_tol else MAX_ITERS
    restarts = 0
    last_eta = config.eta0
    k = 0

    while status == MAX_ITERS and k < config.max_iters:
        k += 1
        y = state.y
        if config.uses_line_search:
            u_new, f_new, eta, evals = line_search(
                smooth, y, f_y, g_y, state.eta, lam, config.beta
            )
            passes += evals
            f_new, g_new = smooth.value_and_grad(u_new)
            passes += 1
            state.eta = step_init(eta, u_new, y, f_new, f_y, g_y, config.alpha, config.c)
            last_eta = eta
        else:
            last_eta = state.eta
            u_new = group_prox(y - last_eta * g_y, last_eta * lam)
            f_new, g_new = smooth.value_and_grad(u_new)
            passes += 1

        obj = f_new + group_penalty(u_new, lam)
        sub = min_norm_subgrad_sq(u_new, g_new, lam)
        obj_trace.append(obj)
        sub_trace.append(sub)

        if not math.isfinite(obj) or not math.isfinite(sub):
            status = DIVERGED
            state.u = u_new
            break
        if sub <= config.grad_tol:
            status = CONVERGED
            state.u = u_new
            break
        if callback is not None and callback(k, u_new, obj):
            status = STOPPED
            state.u = u_new
            break

        if not config.uses_momentum:
            state.y = u_new
            f_y, g_y = f_new, g_new
        elif config.variant == "rfista" and restart_check(u_new, state.u, y):
            state.y, state.t = u_new, 1.0
            f_y, g_y = f_new, g_new
            restarts += 1
        else:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * state.t**2)) / 2.0
            coef = (state.t - 1.0) / t_next
            state.y = u_new + coef * (u_new - state.u)
            state.t = t_next
            if coef == 0.0:
                f_y, g_y = f_new, g_new
            else:
                f_y, g_y = smooth.value_and_grad(state.y)
                passes += 1
        state.u = u_new

    report = SolverReport(
        status=status,
        iterations=k,
        data_passes=passes,
        objective_trace=obj_trace,
        subgrad_sq_trace=sub_trace,
        wall_time=time.perf_counter() - start,
        restarts=restarts,
        final_step=last_eta,
    )
    if status == DIVERGED:
        logger.warning("solver diverged after %d iterations", k)
    return state.u, report


class OneSidedQuadratic:
    """``0.5 * ||(b - A x)_+||^2`` for a single block ``x`` of shape ``(1, d, c)``."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        self.b = b[:, None] if b.ndim == 1 else b

    def residual(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.b - self.A @ x[0], 0.0)

    def value(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return 0.5 * float(np.vdot(r, r))

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        r = self.residual(x)
        return 0.5 * float(np.vdot(r, r)), -(self.A.T @ r)[None]
