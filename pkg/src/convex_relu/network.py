"""Two-layer ReLU and Gated-ReLU networks built from convex solutions.

Neurons are stored row-wise: ``W1`` is ``(m, d)`` and ``W2`` is ``(m, c)``.
A Gated-ReLU network additionally stores one gate per neuron in ``gates``
(``(m, d)``); neuron ``j`` outputs ``1(X g_j >= 0) * (X W1_j) * W2_j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ColumnScaler, Dataset, denormalize_weights, renormalize_weights

FORMAT = "convex-relu-model"
VERSION = 1
DROP_TOL = 1e-8


def _matrix(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.size == 0 and a.ndim != 2:
        a = a.reshape(0, 0)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReLUNetwork:
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        W1 = _matrix(self.W1, "W1")
        W2 = _matrix(self.W2, "W2")
        if W1.shape[0] != W2.shape[0]:
            raise ValueError(f"W1 has {W1.shape[0]} neurons, W2 has {W2.shape[0]}")
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)

    @property
    def width(self) -> int:
        return self.W1.shape[0]


@dataclass(frozen=True)
class GReLUNetwork:
    gates: np.ndarray
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        gates = _matrix(self.gates, "gates")
        W1 = _matrix(self.W1, "W1")
        W2 = _matrix(self.W2, "W2")
        if not (gates.shape[0] == W1.shape[0] == W2.shape[0]):
            raise ValueError("gates, W1 and W2 must have one row per neuron")
        if gates.shape[1] != W1.shape[1]:
            raise ValueError("gates and W1 must have the same input dimension")
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)

    @property
    def width(self) -> int:
        return self.W1.shape[0]


def _check_input(net, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("inputs must be a matrix")
    if net.width and X.shape[1] != net.W1.shape[1]:
        raise ValueError(f"inputs have {X.shape[1]} columns, network expects {net.W1.shape[1]}")
    return X


def predict_relu(net: ReLUNetwork, X) -> np.ndarray:
    """``sum_j (X W1_j)_+ W2_j``; an empty network predicts zeros."""
    X = _check_input(net, X)
    c = net.W2.shape[1] if net.W2.shape[1] else 1
    if net.width == 0:
        return np.zeros((X.shape[0], c))
    return np.maximum(X @ net.W1.T, 0.0) @ net.W2


def predict_grelu(net: GReLUNetwork, X) -> np.ndarray:
    """``sum_j 1(X g_j >= 0) (X W1_j) W2_j``; an empty network predicts zeros."""
    X = _check_input(net, X)
    c = net.W2.shape[1] if net.W2.shape[1] else 1
    if net.width == 0:
        return np.zeros((X.shape[0], c))
    return ((X @ net.gates.T >= 0) * (X @ net.W1.T)) @ net.W2


def predict(net, X) -> np.ndarray:
    return predict_grelu(net, X) if isinstance(net, GReLUNetwork) else predict_relu(net, X)


def _balanced_neurons(blocks: np.ndarray, sign: float, drop_tol: float):
    """One neuron per nonzero column of every ``(d, c)`` block.

    Returns ``(block index, W1 rows, W2 rows)`` with ``W1 = u / sqrt||u||`` and
    ``W2 = sign * sqrt||u|| e_k`` for column ``k``.
    """
    P, d, c = blocks.shape
    norms = np.linalg.norm(blocks, axis=1)  # (P, c)
    idx, cls = np.nonzero(norms > drop_tol)
    scale = np.sqrt(norms[idx, cls])
    W1 = blocks[idx, :, cls] / scale[:, None]
    W2 = np.zeros((idx.size, c))
    W2[np.arange(idx.size), cls] = sign * scale
    return idx, W1, W2


def _blocks3(U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    return U[:, :, None] if U.ndim == 2 else U


def grelu_to_network(U, gates, drop_tol: float = DROP_TOL) -> GReLUNetwork:
    """Map convex Gated-ReLU blocks ``(P, d, c)`` to a balanced network.

    ``gates`` is a ``(P, d)`` array or a pattern set carrying gates.
    """
    if not isinstance(gates, np.ndarray):
        gates = getattr(gates, "gates", gates)
    if gates is None:
        raise ValueError("patterns carry no gates; attach witness gates before building a network")
    U = _blocks3(U)
    gates = np.asarray(gates, dtype=float)
    if gates.shape != U.shape[:2]:
        raise ValueError(f"gates shape {gates.shape} does not match blocks {U.shape[:2]}")
    idx, W1, W2 = _balanced_neurons(U, 1.0, drop_tol)
    return GReLUNetwork(gates[idx], W1, W2)


def relu_weights_to_network(V, W, drop_tol: float = DROP_TOL) -> ReLUNetwork:
    """Neurons ``(v_i, +1)`` and ``(w_i, -1)``, balanced as in :func:`grelu_to_network`."""
    V, W = _blocks3(V), _blocks3(W)
    _, W1v, W2v = _balanced_neurons(V, 1.0, drop_tol)
    _, W1w, W2w = _balanced_neurons(W, -1.0, drop_tol)
    d, c = V.shape[1], V.shape[2]
    W1 = np.concatenate([W1v, W1w]).reshape(-1, d)
    W2 = np.concatenate([W2v, W2w]).reshape(-1, c)
    return ReLUNetwork(W1, W2)


def squared_loss(pred: np.ndarray, Y: np.ndarray) -> float:
    """``0.5 ||pred - Y||^2 / (n c)``."""
    r = pred - Y
    return 0.5 * float(np.vdot(r, r)) / Y.size


def weight_decay(net, lam: float) -> float:
    """``lam / 2 * sum_j (||W1_j||^2 + ||W2_j||_1^2)``."""
    if net.width == 0 or lam == 0:
        return 0.0
    return 0.5 * lam * float(np.sum(net.W1**2) + np.sum(np.sum(np.abs(net.W2), axis=1) ** 2))


def nc_objective(net, dataset: Dataset, lam: float) -> float:
    """Non-convex training objective of either network kind on ``dataset``."""
    return squared_loss(predict(net, dataset.features), dataset.targets) + weight_decay(net, lam)


def accuracy(pred: np.ndarray, Y: np.ndarray) -> float:
    """Sign agreement for one column (``0`` counts as ``+1``); argmax agreement otherwise.

    ``np.argmax`` breaks ties toward the lowest class index.
    """
    pred = np.asarray(pred, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if pred.ndim == 1:
        pred = pred[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] == 1:
        hit = np.where(pred[:, 0] >= 0, 1.0, -1.0) == np.where(Y[:, 0] >= 0, 1.0, -1.0)
    else:
        hit = np.argmax(pred, axis=1) == np.argmax(Y, axis=1)
    return float(np.mean(hit))


# -- raw-feature conversion -------------------------------------------------

def _rows(fn, A: np.ndarray, scaler: ColumnScaler) -> np.ndarray:
    # neuron matrices keep features on the last axis
    return fn(A.T, scaler).T if A.shape[0] else A


def to_raw_features(net, scaler: ColumnScaler):
    """Rewrite a network trained on normalized features to act on raw features."""
    if not scaler.applied:
        return net
    W1 = _rows(denormalize_weights, net.W1, scaler)
    if isinstance(net, GReLUNetwork):
        return GReLUNetwork(_rows(denormalize_weights, net.gates, scaler), W1, net.W2)
    return ReLUNetwork(W1, net.W2)


def to_normalized_features(net, scaler: ColumnScaler):
    """Inverse of :func:`to_raw_features` on columns with nonzero norm."""
    if not scaler.applied:
        return net
    W1 = _rows(renormalize_weights, net.W1, scaler)
    if isinstance(net, GReLUNetwork):
        return GReLUNetwork(_rows(renormalize_weights, net.gates, scaler), W1, net.W2)
    return ReLUNetwork(W1, net.W2)


# -- serialization ----------------------------------------------------------

def _finite_list(a: np.ndarray) -> list:
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot serialize non-finite weights")
    return a.tolist()


def model_to_dict(net, scaler: ColumnScaler | None = None) -> dict:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": "grelu" if isinstance(net, GReLUNetwork) else "relu",
        "d": int(net.W1.shape[1]),
        "c": int(net.W2.shape[1]),
        "W1": _finite_list(net.W1),
        "W2": _finite_list(net.W2),
        "scaler": None if scaler is None else scaler.to_dict(),
    }
    if isinstance(net, GReLUNetwork):
        doc["gates"] = _finite_list(net.gates)
    return doc


def model_from_dict(doc: dict):
    """Rebuild ``(network, scaler or None)`` from :func:`model_to_dict` output."""
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    d, c = int(doc["d"]), int(doc["c"])
    W1 = np.asarray(doc["W1"], dtype=float).reshape(-1, d)
    W2 = np.asarray(doc["W2"], dtype=float).reshape(-1, c)
    kind = doc.get("kind")
    if kind == "grelu":
        net = GReLUNetwork(np.asarray(doc["gates"], dtype=float).reshape(-1, d), W1, W2)
    elif kind == "relu":
        net = ReLUNetwork(W1, W2)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    scaler = None if doc.get("scaler") is None else ColumnScaler.from_dict(doc["scaler"])
    return net, scaler


def save_model(path, net, scaler: ColumnScaler | None = None) -> None:
    text = json.dumps(model_to_dict(net, scaler), sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def group_norm_of(net) -> float:
    """Convex-model group norm implied by a balanced network: ``sum_j ||W1_j|| ||W2_j||_1``."""
    if net.width == 0:
        return 0.0
    return float(np.sum(np.linalg.norm(net.W1, axis=1) * np.sum(np.abs(net.W2), axis=1)))


__all__ = [
    "ReLUNetwork",
    "GReLUNetwork",
    "predict",
    "predict_relu",
    "predict_grelu",
    "grelu_to_network",
    "relu_weights_to_network",
    "nc_objective",
    "accuracy",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "to_raw_features",
    "to_normalized_features",
    "group_norm_of",
]
