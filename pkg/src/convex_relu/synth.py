"""Realizable synthetic classification problems."""

from __future__ import annotations

import numpy as np

from .data import Dataset


def covariance(d: int, cond: float, rng) -> np.ndarray:
    """Random covariance with a uniformly random eigenbasis and condition number ``cond``.

    Eigenvalues are uniform on ``[1, cond]`` with the extremes pinned to ``1`` and ``cond``.
    """
    if cond < 1:
        raise ValueError("cond must be >= 1")
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    eig = rng.uniform(1.0, cond, size=d)
    eig[0] = cond
    if d > 1:
        eig[-1] = 1.0
    return (Q * eig) @ Q.T


def synth_realizable(n: int, d: int, m_teacher: int, cond: float = 10.0, seed=0) -> Dataset:
    """``X ~ N(0, Sigma)`` labelled by the sign of a random two-layer ReLU teacher.

    Labels are in ``{-1, +1}``; zero teacher outputs are labelled ``+1``.
    """
    if min(n, d, m_teacher) < 1:
        raise ValueError("n, d and m_teacher must be >= 1")
    rng = np.random.default_rng(seed)
    sigma = covariance(d, cond, rng)
    X = rng.multivariate_normal(np.zeros(d), sigma, size=n, method="cholesky")
    W1 = rng.standard_normal((d, m_teacher))
    w2 = rng.standard_normal(m_teacher)
    y = np.where(np.maximum(X @ W1, 0.0) @ w2 >= 0, 1.0, -1.0)
    return Dataset(X, y)
