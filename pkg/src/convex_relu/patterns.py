"""Activation patterns: sampling, harvesting, enumeration and cone geometry.

A pattern is a boolean mask over the training rows; ``True`` marks a row on
which the neuron is active. Sampled patterns use ``X g >= 0`` while patterns
harvested from trained weights use the strict ``X w > 0``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .fista import GReLUConfig, OneSidedQuadratic, minimize

logger = logging.getLogger(__name__)

MAX_ENUMERATION_ROWS = 20


class InconclusiveError(RuntimeError):
    """A feasibility solve stopped too close to the tolerance to decide."""


@dataclass(frozen=True)
class PatternSet:
    """Ordered, duplicate-free set of nonzero activation masks.

    ``masks`` has shape ``(P, n)``. ``gates`` (shape ``(P, d)``), when present,
    holds one generating gate per pattern so gated models can be evaluated on
    new data. Use :meth:`from_masks` to deduplicate raw masks.
    """

    masks: np.ndarray
    gates: np.ndarray | None = None

    def __post_init__(self):
        masks = np.array(self.masks, dtype=bool, copy=True)
        if masks.ndim != 2:
            raise ValueError(f"masks must be (P, n), got shape {masks.shape}")
        if masks.shape[0] and not masks.any(axis=1).all():
            raise ValueError("pattern set contains the all-zero pattern")
        if len({row.tobytes() for row in masks}) != masks.shape[0]:
            raise ValueError("pattern set contains duplicates")
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)
        if self.gates is not None:
            gates = np.array(self.gates, dtype=float, copy=True)
            if gates.ndim != 2 or gates.shape[0] != masks.shape[0]:
                raise ValueError(f"gates shape {gates.shape} does not match {masks.shape[0]} patterns")
            gates.setflags(write=False)
            object.__setattr__(self, "gates", gates)

    @classmethod
    def from_masks(cls, masks, gates=None) -> "PatternSet":
        """Drop zero and repeated masks, keeping first occurrences in order."""
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim != 2:
            raise ValueError(f"masks must be (P, n), got shape {masks.shape}")
        seen: set[bytes] = set()
        keep = []
        for i, row in enumerate(masks):
            key = row.tobytes()
            if row.any() and key not in seen:
                seen.add(key)
                keep.append(i)
        kept_gates = None if gates is None else np.asarray(gates, dtype=float)[keep]
        return cls(masks[keep], kept_gates)

    @classmethod
    def empty(cls, n: int, d: int | None = None) -> "PatternSet":
        gates = None if d is None else np.zeros((0, d))
        return cls(np.zeros((0, n), dtype=bool), gates)

    @property
    def n(self) -> int:
        return self.masks.shape[1]

    def __len__(self) -> int:
        return self.masks.shape[0]

    def as_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(b) for b in row) for row in self.masks}


def _gaussian_gates(rng, p: int, d: int) -> np.ndarray:
    return rng.standard_normal((p, d))


def _patch_gates(rng, p: int, d: int, patch: tuple[int, int], image_shape) -> np.ndarray:
    if image_shape is None:
        raise ValueError("patch sampling requires image_shape")
    shape = tuple(int(s) for s in image_shape)
    if len(shape) == 2:
        shape = shape + (1,)
    H, W, C = shape
    if H * W * C != d:
        raise ValueError(f"image shape {shape} has {H * W * C} entries, data has {d} columns")
    ph, pw = patch
    if not (1 <= ph <= H and 1 <= pw <= W):
        raise ValueError(f"patch {ph}x{pw} does not fit image {H}x{W}")
    gates = np.zeros((p, H, W, C))
    for k in range(p):
        r = rng.integers(0, H - ph + 1)
        s = rng.integers(0, W - pw + 1)
        gates[k, r : r + ph, s : s + pw, :] = rng.standard_normal((ph, pw, C))
    return gates.reshape(p, d)


def parse_gate_sampler(tag: str) -> tuple[str, tuple[int, int] | None]:
    """Parse ``"gaussian"`` or ``"patch:<h>x<w>"``."""
    if tag == "gaussian":
        return "gaussian", None
    m = re.fullmatch(r"patch:(\d+)x(\d+)", tag)
    if m is None:
        raise ValueError(f"unknown gate sampler {tag!r}; use 'gaussian' or 'patch:<h>x<w>'")
    return "patch", (int(m.group(1)), int(m.group(2)))


def sample_gate_patterns(
    X: np.ndarray,
    p: int,
    seed=0,
    gate_sampler: str = "gaussian",
    image_shape=None,
) -> PatternSet:
    """Draw ``p`` gates and keep the distinct nonzero masks ``X g >= 0``.

    Patch gates are nonzero on a random ``h x w`` window of an image laid
    out row-major as ``(height, width, channels)``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    kind, patch = parse_gate_sampler(gate_sampler)
    if kind == "gaussian":
        gates = _gaussian_gates(rng, p, d)
    else:
        gates = _patch_gates(rng, p, d, patch, image_shape)
    result = PatternSet.from_masks((X @ gates.T >= 0).T, gates)
    if len(result) == 0:
        logger.warning("all %d sampled patterns were zero; the data look degenerate", p)
    return result


def patterns_from_weights(X: np.ndarray, W1: np.ndarray) -> PatternSet:
    """Harvest the strict activation masks ``X W1[:, j] > 0`` of trained neurons."""
    X = np.asarray(X, dtype=float)
    W1 = np.asarray(W1, dtype=float)
    if W1.ndim == 1:
        W1 = W1[:, None]
    if W1.shape[0] != X.shape[1]:
        raise ValueError(f"W1 has {W1.shape[0]} rows, data has {X.shape[1]} columns")
    return PatternSet.from_masks((X @ W1 > 0).T, W1.T)


def union(a: PatternSet, b: PatternSet) -> PatternSet:
    """Patterns of ``a`` followed by the patterns of ``b`` not already in ``a``."""
    if a.n != b.n:
        raise ValueError(f"pattern sets disagree on n: {a.n} vs {b.n}")
    gates = None
    if a.gates is not None and b.gates is not None:
        gates = np.concatenate([a.gates, b.gates])
    return PatternSet.from_masks(np.concatenate([a.masks, b.masks]), gates)


def _signs(pattern) -> np.ndarray:
    return np.where(np.asarray(pattern, dtype=bool), 1.0, -1.0)


def signed_matrix(pattern, X: np.ndarray) -> np.ndarray:
    """``(2 D - I) X`` for a single mask."""
    X = np.asarray(X, dtype=float)
    s = _signs(pattern)
    if s.shape != (X.shape[0],):
        raise ValueError(f"mask length {s.shape} does not match {X.shape[0]} rows")
    return s[:, None] * X


def signed_matrix_apply(pattern, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Return ``(2 D - I) X u``."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape[0] != X.shape[1]:
        raise ValueError(f"u has {u.shape[0]} rows, X has {X.shape[1]} columns")
    return signed_matrix(pattern, X) @ u


def cone_gap(pattern, X: np.ndarray, u: np.ndarray) -> float:
    """Squared norm of the negative part of ``(2 D - I) X u``; zero iff ``u`` is in the cone."""
    z = np.minimum(signed_matrix_apply(pattern, X, u), 0.0)
    return float(np.vdot(z, z))


def _solve_strict(A: np.ndarray, max_iters: int, tol: float, radius: float):
    """Decide whether ``A g >= 1`` has a solution; returns ``(feasible, g)``.

    Minimizes ``0.5 ||(1 - A g)_+||^2`` from ``g = 0`` and stops early on
    either certificate:

    * feasible: ``A g > 0`` holds exactly, so a rescaling of ``g`` works;
    * infeasible: by convexity ``f(g) - f(g*) <= ||grad f(g)|| ||g - g*||``,
      so ``f(g) - tol > ||grad f(g)|| * radius`` rules out every solution
      within ``radius`` of ``g``. ``radius`` is scaled by the largest row norm.

    Otherwise the final objective is compared with ``tol``.
    """
    n, d = A.shape
    smooth = OneSidedQuadratic(A, np.ones(n))
    scale = float(np.max(np.linalg.norm(A, axis=1))) if n else 0.0
    if scale == 0.0:
        return n == 0, np.zeros(d)
    reach = radius / scale
    verdict: list[bool] = []

    def stop(_k, x, obj):
        g = x[0, :, 0]
        if np.all(A @ g > 0):
            verdict.append(True)
            return True
        _, grad = smooth.value_and_grad(x)
        if obj - tol > float(np.linalg.norm(grad)) * reach:
            verdict.append(False)
            return True
        return False

    config = GReLUConfig(lam=0.0, max_iters=max_iters, grad_tol=0.0)
    x, report = minimize(smooth, np.zeros((1, d, 1)), config, callback=stop)
    g = x[0, :, 0]
    if verdict:
        return verdict[0], g
    value = report.final_objective
    if value <= tol:
        return True, g
    if report.status == "max_iters" and value <= 10 * tol:
        raise InconclusiveError(
            f"feasibility objective {value:.3e} within 10x of tolerance {tol:.1e} "
            f"after {max_iters} iterations"
        )
    return False, g


def strict_witness(pattern, X: np.ndarray, max_iters: int = 100000, tol: float = 1e-10, radius: float = 1e6):
    """Return ``(feasible, g)`` with ``g`` approximately solving ``(2D - I) X g >= 1``."""
    return _solve_strict(signed_matrix(pattern, X), max_iters, tol, radius)


def strict_feasibility(
    pattern, X: np.ndarray, max_iters: int = 100000, tol: float = 1e-10, radius: float = 1e6
) -> bool:
    """True iff the cone of ``pattern`` has nonempty interior.

    Decided by minimizing ``0.5 ||(1 - (2D - I) X g)_+||^2``: feasible when
    the value reaches ``tol`` (or ``(2D - I) X g > 0`` is seen exactly).
    ``radius`` bounds how far from the iterate a solution is searched for,
    relative to the largest row norm. Raises :class:`InconclusiveError` when
    the iteration cap is hit with the value in ``(tol, 10 tol]``.
    """
    return strict_witness(pattern, X, max_iters, tol, radius)[0]


def enumerate_all_patterns(X: np.ndarray, max_iters: int = 100000, tol: float = 1e-10) -> PatternSet:
    """All nonzero masks ``1(X g >= 0)`` of open regions, plus the all-ones mask.

    Depth-first search over sign prefixes with :func:`strict_feasibility`
    style solves; an infeasible prefix prunes its subtree and a parent's
    witness is reused whenever it already satisfies the child. The all-ones
    mask (``g = 0``) is always included. For data in general position every
    other boundary mask coincides with the mask of a neighbouring region, so
    nothing else is missed. Each pattern carries a witness gate.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n > MAX_ENUMERATION_ROWS:
        raise ValueError(f"enumeration is limited to n <= {MAX_ENUMERATION_ROWS} rows, got {n}")
    masks, gates = [np.ones(n, dtype=bool)], [np.zeros(d)]
    # entries: (sign prefix, witness g with strict signs on the prefix)
    stack = [(np.zeros(0, dtype=bool), None)]
    while stack:
        prefix, g = stack.pop()
        k = prefix.size
        if k == n:
            if prefix.any() and not prefix.all():
                masks.append(prefix)
                gates.append(g)
            continue
        children = []
        for active in (True, False):
            child = np.append(prefix, active)
            if g is not None:
                z = X[k] @ g
                if (z > 0) if active else (z < 0):
                    children.append((child, g))
                    continue
            feasible, witness = strict_witness(child, X[: k + 1], max_iters, tol)
            if feasible:
                children.append((child, witness))
        stack.extend(reversed(children))
    return PatternSet(np.array(masks), np.array(gates))


def with_witness_gates(patterns: PatternSet, X: np.ndarray, max_iters: int = 100000, tol: float = 1e-10) -> PatternSet:
    """Attach a witness gate to every pattern of a gate-less set.

    The all-ones mask gets ``g = 0``. Raises ``ValueError`` for any other
    mask whose cone has empty interior.
    """
    if patterns.gates is not None:
        return patterns
    X = np.asarray(X, dtype=float)
    gates = np.zeros((len(patterns), X.shape[1]))
    for i, mask in enumerate(patterns.masks):
        if mask.all():
            continue
        feasible, g = strict_witness(mask, X, max_iters, tol)
        if not feasible:
            raise ValueError(f"pattern {i} has no interior witness on the given data")
        gates[i] = g
    return PatternSet(patterns.masks, gates)
