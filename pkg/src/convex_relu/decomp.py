"""Cone decompositions ``u = v - w`` with ``v, w`` in the activation cone.

For a mask ``D`` and ``Xs = (2D - I) X`` the cone is ``{z : Xs z >= 0}``.
Both decompositions below take ``v = u + w``, so reconstruction is exact by
construction; the work goes into making ``w`` satisfy ``Xs w >= b`` with
``b = (-Xs u)_+``, which puts ``w`` and ``u + w`` in the cone simultaneously.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import _masks
from .fista import GReLUConfig, OneSidedQuadratic, minimize
from .patterns import cone_gap, signed_matrix
from .relu import ReLUWeights

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-8
PINV_RCOND = 1e-10


class RankDeficientError(ValueError):
    """The closed-form decomposition needs a full row-rank data matrix."""


def _col_norm_sum(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return float(np.linalg.norm(a))
    return float(np.sum(np.linalg.norm(a, axis=0)))


@dataclass(frozen=True)
class Decomposition:
    """One block's decomposition; residuals are squared cone gaps."""

    v: np.ndarray
    w: np.ndarray
    residual_v: float
    residual_w: float
    blowup: float
    converged: bool = True

    @property
    def residual_norm(self) -> float:
        """``||(Xs v)_-|| + ||(Xs w)_-||`` (unsquared)."""
        return float(np.sqrt(self.residual_v) + np.sqrt(self.residual_w))


def _finish(pattern, X, u, w, converged=True) -> Decomposition:
    v = u + w
    norm_u = _col_norm_sum(u)
    blowup = (_col_norm_sum(v) + _col_norm_sum(w)) / norm_u if norm_u > 0 else float("inf")
    return Decomposition(v, w, cone_gap(pattern, X, v), cone_gap(pattern, X, w), blowup, converged)


def singular_values(A: np.ndarray) -> np.ndarray:
    if A.size == 0:
        return np.zeros(0)
    return np.linalg.svd(A, compute_uv=False)


def is_full_row_rank(X: np.ndarray, rtol: float = RANK_RTOL) -> bool:
    """``n <= d`` and the smallest singular value exceeds ``rtol * sigma_max``."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n > d:
        return False
    s = singular_values(X)
    return bool(s[0] > 0 and s[-1] > rtol * s[0])


def closed_form_decompose(pattern, X: np.ndarray, u: np.ndarray, rtol: float = RANK_RTOL) -> Decomposition:
    """Exact decomposition for full row-rank ``X``.

    With ``I = {i : <xs_i, u> < 0}``, ``w`` is the minimum-norm solution of
    ``Xs_I w = -Xs_I u`` and ``Xs_J w = 0`` on the remaining rows ``J``, i.e.
    ``w = pinv(Xs) (-Xs u)_+``. Then ``Xs w = (-Xs u)_+ >= 0`` and
    ``Xs v = (Xs u)_+ >= 0``. Columns of a ``(d, c)`` input are handled
    independently.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    if not is_full_row_rank(X, rtol):
        s = singular_values(X)
        raise RankDeficientError(
            f"X is {X.shape[0]}x{X.shape[1]} with singular value ratio "
            f"{(s[-1] / s[0]) if s.size and s[0] > 0 else 0.0:.3e}; need n <= d and ratio > {rtol:g}"
        )
    Xs = signed_matrix(pattern, X)
    b = np.maximum(-(Xs @ u), 0.0)
    w = np.linalg.pinv(Xs, rcond=PINV_RCOND) @ b
    return _finish(pattern, X, u, w)


def default_subsolver(rho: float) -> GReLUConfig:
    """Subsolver settings; stationarity must be resolved well below ``rho``."""
    return GReLUConfig(lam=rho, max_iters=20000, grad_tol=max((1e-3 * rho) ** 2, 1e-30))


@dataclass(frozen=True)
class CdaConfig:
    rho: float = 1e-10
    subsolver: GReLUConfig | None = None

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")

    def solver_config(self) -> GReLUConfig:
        base = self.subsolver if self.subsolver is not None else default_subsolver(self.rho)
        return base.replace(lam=self.rho)


def continuation_path(rho: float, rho_max: float, factor: float = 100.0) -> list[float]:
    """Geometric path from below ``rho_max`` down to ``rho`` with ratios at most ``factor``."""
    floor = max(rho, 1e-12 * rho_max)
    if rho_max <= floor:
        return [rho]
    stages = int(np.ceil(np.log(rho_max / floor) / np.log(factor)))
    path = [float(r) for r in np.geomspace(rho_max, floor, stages + 1)[1:-1]]
    return path + [rho]


def cd_approx(pattern, X: np.ndarray, u: np.ndarray, config: CdaConfig = CdaConfig()) -> Decomposition:
    """Approximate decomposition through the regularized one-sided quadratic

    ``min_w 0.5 ||(b - Xs w)_+||^2 + rho ||w||``,  ``b = (-Xs u)_+``,

    solved with the accelerated proximal method. A tiny ``rho`` barely pulls
    the iterates toward the minimum-norm solution, so the solve walks down
    a continuation path from ``||Xs^T b||`` (where ``w = 0`` is optimal),
    warm starting each stage from the previous one.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    vector = u.ndim == 1
    U = u[:, None] if vector else u
    Xs = signed_matrix(pattern, X)
    b = np.maximum(-(Xs @ U), 0.0)
    smooth = OneSidedQuadratic(Xs, b)
    w = np.zeros((1,) + U.shape)
    final = config.solver_config()
    report = None
    for rho in continuation_path(config.rho, float(np.linalg.norm(Xs.T @ b))):
        stage = final if rho == config.rho else final.replace(
            lam=rho, grad_tol=default_subsolver(rho).grad_tol)
        w, report = minimize(smooth, w, stage)
    w = w[0, :, 0] if vector else w[0]
    return _finish(pattern, X, u, w, report.converged)


def active_rows(pattern, X: np.ndarray, u: np.ndarray, w: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Rows where ``Xs w >= (-Xs u)_+`` holds with equality (up to ``tol``)."""
    Xs = signed_matrix(pattern, X)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    slack = Xs @ w - np.maximum(-(Xs @ u), 0.0)
    if slack.ndim > 1:
        return np.any(np.abs(slack) <= tol, axis=1)
    return np.abs(slack) <= tol


def condition_number(A: np.ndarray, rtol: float = 1e-12) -> float:
    """Ratio of the largest and smallest nonzero singular values (1 for empty input)."""
    s = singular_values(A)
    if s.size == 0 or s[0] == 0:
        return 1.0
    s = s[s > rtol * s[0]]
    return float(s[0] / s[-1])


def active_condition_number(pattern, X, u, w, tol: float = 1e-6) -> float:
    """Condition number of the signed data restricted to the decomposition's tight rows."""
    rows = active_rows(pattern, X, u, w, tol)
    return condition_number(signed_matrix(pattern, X)[rows])


@dataclass
class DecompositionReport:
    method: str
    blowup: float
    max_residual: float
    failed: list[int] = field(default_factory=list)
    blocks: list[Decomposition] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "blowup": self.blowup,
            "max_residual": self.max_residual,
            "failed": list(self.failed),
        }


def decompose_model(
    U: np.ndarray,
    patterns,
    X: np.ndarray,
    config: CdaConfig = CdaConfig(),
    method: str = "auto",
    fail_tol: float = 1e-6,
) -> tuple[ReLUWeights, DecompositionReport]:
    """Decompose every block of a Gated-ReLU solution ``U`` of shape ``(P, d, c)``.

    ``method`` is ``"closed_form"``, ``"cd_approx"`` or ``"auto"`` (closed
    form when ``X`` has full row rank). A block whose subsolver did not
    converge and whose summed squared residuals exceed ``fail_tol`` falls
    back to ``(u_i, 0)``; its index is listed in ``report.failed``.
    """
    masks = _masks(patterns)
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[:, :, None]
    if U.shape[0] != masks.shape[0] or U.shape[1] != X.shape[1]:
        raise ValueError(f"weights {U.shape} inconsistent with {masks.shape[0]} patterns and X {X.shape}")
    if method == "auto":
        method = "closed_form" if is_full_row_rank(X) else "cd_approx"
    if method not in ("closed_form", "cd_approx"):
        raise ValueError(f"unknown decomposition method {method!r}")

    V = np.zeros_like(U)
    W = np.zeros_like(U)
    blocks, failed = [], []
    for i, (mask, u) in enumerate(zip(masks, U)):
        if not np.any(u):
            dec = _finish(mask, X, u, np.zeros_like(u))
        elif method == "closed_form":
            dec = closed_form_decompose(mask, X, u)
        else:
            dec = cd_approx(mask, X, u, config)
            if not dec.converged and dec.residual_v + dec.residual_w > fail_tol:
                logger.warning(
                    "block %d: decomposition residual %.3e after non-converged subsolve; using (u, 0)",
                    i, dec.residual_v + dec.residual_w,
                )
                failed.append(i)
                dec = _finish(mask, X, u, np.zeros_like(u), converged=False)
        V[i], W[i] = dec.v, dec.w
        blocks.append(dec)

    total_u = sum(_col_norm_sum(u) for u in U)
    total_vw = sum(_col_norm_sum(v) + _col_norm_sum(w) for v, w in zip(V, W))
    blowup = total_vw / total_u if total_u > 0 else float("inf")
    max_res = max((max(b.residual_v, b.residual_w) for b in blocks), default=0.0)
    report = DecompositionReport(method, blowup, max_res, failed, blocks)
    return ReLUWeights(V, W), report
