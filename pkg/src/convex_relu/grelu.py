"""Convex Gated-ReLU training: group lasso over the expanded operator."""

from __future__ import annotations

import logging

import numpy as np

from .data import Dataset, _masks, batched_adjoint, batched_forward
from .fista import GReLUConfig, SolverReport, group_penalty, minimize

logger = logging.getLogger(__name__)


class SquaredLoss:
    """``0.5 * ||sum_i D_i X u_i - Y||_F^2 / (n * c)`` over blocks ``(P, d, c)``."""

    def __init__(self, patterns, X: np.ndarray, Y: np.ndarray):
        self.masks = _masks(patterns).astype(float)
        self.X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        n, c = self.Y.shape
        if self.X.shape[0] != n or self.masks.shape[1] != n:
            raise ValueError(
                f"shape mismatch: masks {self.masks.shape}, X {self.X.shape}, Y {self.Y.shape}"
            )
        self.scale = 1.0 / (n * c)

    def predict(self, U: np.ndarray) -> np.ndarray:
        return np.einsum("pn,pnc->nc", self.masks, batched_forward(self.X, U))

    def value(self, U: np.ndarray) -> float:
        r = self.predict(U) - self.Y
        return 0.5 * self.scale * float(np.vdot(r, r))

    def value_and_grad(self, U: np.ndarray) -> tuple[float, np.ndarray]:
        r = self.predict(U) - self.Y
        grad = batched_adjoint(self.X, self.masks[:, :, None] * r[None]) * self.scale
        return 0.5 * self.scale * float(np.vdot(r, r)), grad


def _blocks(U, c: int) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        if c != 1:
            raise ValueError("2-D weights require a single target column")
        U = U[:, :, None]
    return U


def objective(U, patterns, X, Y, lam: float) -> float:
    """Convex Gated-ReLU objective: normalized squared loss plus group-l1 penalty."""
    loss = SquaredLoss(patterns, X, Y)
    U = _blocks(U, loss.Y.shape[1])
    if U.shape[0] != loss.masks.shape[0] or U.shape[1:] != (loss.X.shape[1], loss.Y.shape[1]):
        raise ValueError(f"weights shape {U.shape} inconsistent with problem")
    return loss.value(U) + group_penalty(U, lam)


def _looks_normalized(X: np.ndarray) -> bool:
    norms = np.linalg.norm(X, axis=0)
    return bool(np.all((np.abs(norms - 1.0) < 1e-8) | (norms == 0)))


def solve_grelu(
    dataset: Dataset,
    patterns,
    config: GReLUConfig = GReLUConfig(),
    warm_start: np.ndarray | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Fit the convex Gated-ReLU model; returns blocks ``(P, d, c)`` and a report."""
    loss = SquaredLoss(patterns, dataset.features, dataset.targets)
    if not _looks_normalized(dataset.features):
        logger.warning("features are not column-normalized; thresholding may be ill-conditioned")
    shape = (loss.masks.shape[0], dataset.d, dataset.c)
    if warm_start is None:
        U0 = np.zeros(shape)
    else:
        U0 = _blocks(warm_start, dataset.c)
        if U0.shape != shape:
            raise ValueError(f"warm start shape {U0.shape} != {shape}")
    return minimize(loss, U0, config)
