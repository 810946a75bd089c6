"""Datasets, column normalization and the matrix-free expanded operator.

The expanded operator ``M = [D_1 X, ..., D_P X]`` is never materialized.
Weights are stored as a stack of blocks with shape ``(P, d, c)``; block ``i``
holds the ``d x c`` data-local model for activation pattern ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``features`` (n x d) with targets ``targets`` (n x c).

    One-dimensional targets are promoted to a single column.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str] | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        Y = np.asarray(self.targets, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("features and targets must be matrices")
        n, d = X.shape
        if n < 1 or d < 1 or Y.shape[1] < 1:
            raise ValueError(f"empty dataset: features {X.shape}, targets {Y.shape}")
        if Y.shape[0] != n:
            raise ValueError(f"targets have {Y.shape[0]} rows, features have {n}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains NaN or Inf entries")
        if self.feature_names is not None and len(self.feature_names) != d:
            raise ValueError("feature_names length does not match column count")
        object.__setattr__(self, "features", _freeze(X))
        object.__setattr__(self, "targets", _freeze(Y))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.targets.shape[1]

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        """Split rows into ``[:n_first]`` and ``[n_first:]``."""
        if not 0 < n_first < self.n:
            raise ValueError(f"split point {n_first} outside (0, {self.n})")
        X, Y = self.features, self.targets
        return (
            Dataset(X[:n_first], Y[:n_first], self.feature_names),
            Dataset(X[n_first:], Y[n_first:], self.feature_names),
        )


@dataclass(frozen=True)
class ColumnScaler:
    """Original column norms of a normalized feature matrix.

    Zero columns keep norm 0; they stay zero after normalization.
    """

    norms: np.ndarray
    applied: bool = True

    def __post_init__(self):
        norms = np.asarray(self.norms, dtype=float)
        if norms.ndim != 1 or np.any(norms < 0) or not np.all(np.isfinite(norms)):
            raise ValueError("column norms must be a finite nonnegative vector")
        object.__setattr__(self, "norms", _freeze(norms))

    @classmethod
    def identity(cls, d: int) -> "ColumnScaler":
        return cls(np.ones(d), applied=False)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Normalize raw features with the stored column norms."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.norms.shape[0]:
            raise ValueError(f"expected {self.norms.shape[0]} columns, got {X.shape[-1]}")
        safe = np.where(self.norms > 0, self.norms, 1.0)
        return X / safe

    def to_dict(self) -> dict:
        return {"norms": self.norms.tolist(), "applied": self.applied}

    @classmethod
    def from_dict(cls, doc: dict) -> "ColumnScaler":
        return cls(np.asarray(doc["norms"], dtype=float), bool(doc.get("applied", True)))


def normalize_columns(data: Dataset) -> tuple[Dataset, ColumnScaler]:
    """Scale every nonzero column of the features to unit l2 norm."""
    norms = np.linalg.norm(data.features, axis=0)
    scaler = ColumnScaler(norms, applied=True)
    return Dataset(scaler.transform(data.features), data.targets, data.feature_names), scaler


def denormalize_weights(weights: np.ndarray, scaler: ColumnScaler) -> np.ndarray:
    """Map weights fit on normalized features back to raw feature space.

    ``weights`` has the feature dimension on axis -2 when it is at least 2-D
    (blocks ``(P, d, c)`` or a single ``(d, c)`` block) and on axis -1 for a
    single vector. Rows belonging to zero columns are set to zero.
    """
    if not scaler.applied:
        raise ValueError("scaler was not applied; nothing to undo")
    W = np.asarray(weights, dtype=float)
    norms = scaler.norms
    axis = -1 if W.ndim == 1 else -2
    if W.shape[axis] != norms.shape[0]:
        raise ValueError(f"block dimension {W.shape[axis]} != {norms.shape[0]} columns")
    safe = np.where(norms > 0, norms, 1.0)
    inv = np.where(norms > 0, 1.0 / safe, 0.0)
    shape = [1] * W.ndim
    shape[axis] = -1
    return W * inv.reshape(shape)


def renormalize_weights(weights: np.ndarray, scaler: ColumnScaler) -> np.ndarray:
    """Inverse of :func:`denormalize_weights` (up to zero columns)."""
    W = np.asarray(weights, dtype=float)
    axis = -1 if W.ndim == 1 else -2
    shape = [1] * W.ndim
    shape[axis] = -1
    return W * scaler.norms.reshape(shape)


def _masks(patterns) -> np.ndarray:
    masks = getattr(patterns, "masks", patterns)
    return np.asarray(masks, dtype=bool)


def _as_blocks(U: np.ndarray) -> tuple[np.ndarray, bool]:
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        return U[:, :, None], True
    if U.ndim != 3:
        raise ValueError(f"weights must have shape (P, d) or (P, d, c), got {U.shape}")
    return U, False


def batched_forward(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Return ``X @ U[i]`` for every block as an array ``(P, n, c)``."""
    P, d, c = U.shape
    n = X.shape[0]
    flat = U.transpose(1, 0, 2).reshape(d, P * c)
    return (X @ flat).reshape(n, P, c).transpose(1, 0, 2)


def batched_adjoint(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Return ``X.T @ R[i]`` for every block as an array ``(P, d, c)``."""
    P, n, c = R.shape
    d = X.shape[1]
    flat = R.transpose(1, 0, 2).reshape(n, P * c)
    return (X.T @ flat).reshape(d, P, c).transpose(1, 0, 2)


def apply_expanded(patterns, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Compute ``sum_i D_i X u_i`` without forming the expanded matrix."""
    masks = _masks(patterns)
    X = np.asarray(X, dtype=float)
    blocks, vector = _as_blocks(U)
    P, n = masks.shape
    if blocks.shape[0] != P or X.shape[0] != n or blocks.shape[1] != X.shape[1]:
        raise ValueError(
            f"shape mismatch: masks {masks.shape}, X {X.shape}, weights {blocks.shape}"
        )
    out = np.einsum("pn,pnc->nc", masks.astype(float), batched_forward(X, blocks))
    return out[:, 0] if vector else out


def apply_expanded_adjoint(patterns, X: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Compute the blocks ``X^T D_i r``; the adjoint of :func:`apply_expanded`."""
    masks = _masks(patterns)
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    vector = r.ndim == 1
    R = r[:, None] if vector else r
    if R.shape[0] != X.shape[0] or masks.shape[1] != X.shape[0]:
        raise ValueError(f"shape mismatch: masks {masks.shape}, X {X.shape}, r {r.shape}")
    out = batched_adjoint(X, masks[:, :, None] * R[None, :, :])
    return out[:, :, 0] if vector else out


def estimate_operator_norm(patterns, X: np.ndarray, iters: int = 100, seed=0) -> float:
    """Power-iteration estimate of ``lambda_max(M^T M)`` for the expanded matrix.

    Returns the Rayleigh quotient of the last iterate, which is nondecreasing
    in ``iters`` for a positive semi-definite operator.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    masks = _masks(patterns)
    X = np.asarray(X, dtype=float)
    P = masks.shape[0]
    if P == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((P, X.shape[1], 1))
    U /= np.linalg.norm(U)
    for _ in range(iters):
        V = apply_expanded_adjoint(masks, X, apply_expanded(masks, X, U))
        norm = np.linalg.norm(V)
        if norm == 0.0:
            return 0.0
        U = V / norm
    MU = apply_expanded(masks, X, U)
    return float(np.vdot(MU, MU))
