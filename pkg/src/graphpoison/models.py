"""GCN and linearized surrogate: forward passes, training, unrolled training.

Two training paths exist on purpose. `train` is plain numpy training used to
fit victim/surrogate models. `inner_train_differentiable` records the whole
T-step gradient-descent run of the surrogate on a Tape, so a loss built from
the final weights can be differentiated back to the (relaxed) adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var
from .graph import GraphBundle, GraphError, normalize_adjacency


@dataclass(frozen=True)
class GcnModel:
    """Two-layer GCN weights: softmax(A_hat relu(A_hat X w0) w1)."""

    w0: np.ndarray
    w1: np.ndarray


@dataclass(frozen=True)
class SurrogateModel:
    """Linearized surrogate weights: softmax(A_hat^2 X w)."""

    w: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100
    learning_rate: float = 0.1
    hidden: int = 16
    init_seed: int = 0
    init_scale: float | None = None  # None -> glorot sqrt(6 / (fan_in + fan_out))

    def __post_init__(self):
        if self.steps < 1:
            raise GraphError("steps must be >= 1")
        if self.learning_rate < 0:
            raise GraphError("learning_rate must be >= 0")


def _init_weight(rng: np.random.Generator, rows: int, cols: int,
                 scale: float | None) -> np.ndarray:
    if scale is None:
        scale = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-scale, scale, size=(rows, cols))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gcn_forward(model: GcnModel, a_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    h = np.maximum(a_hat @ x @ model.w0, 0.0)
    return _softmax(a_hat @ h @ model.w1)


def surrogate_forward(model: SurrogateModel, a_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _softmax(a_hat @ (a_hat @ (x @ model.w)))


def _masked_ce(probs: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> float:
    return float(-np.log(probs[nodes, labels[nodes]]).mean())


@dataclass(frozen=True)
class TrainResult:
    model: GcnModel | SurrogateModel
    losses: list[float]


def train(model_kind: str, g: GraphBundle, labels: np.ndarray,
          train_set: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Full-batch gradient descent on masked cross-entropy; deterministic per seed."""
    train_set = np.asarray(train_set, dtype=np.int64)
    if train_set.size == 0:
        raise GraphError("train: empty train set")
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    a_hat = normalize_adjacency(g.adjacency)
    x = g.features.astype(np.float64)
    rng = np.random.default_rng(cfg.init_seed)

    if model_kind == "surrogate":
        m = a_hat @ (a_hat @ x)  # fixed during training
        w = _init_weight(rng, g.n_features, n_classes, cfg.init_scale)
        y = np.zeros((g.n_nodes, n_classes))
        y[train_set, labels[train_set]] = 1.0
        mask = np.zeros((g.n_nodes, 1))
        mask[train_set] = 1.0 / train_set.size
        losses = []
        for _ in range(cfg.steps):
            probs = _softmax(m @ w)
            losses.append(_masked_ce(probs, labels, train_set))
            w = w - cfg.learning_rate * (m.T @ ((probs - y) * mask))
        return TrainResult(SurrogateModel(w), losses)

    if model_kind == "gcn":
        w0 = _init_weight(rng, g.n_features, cfg.hidden, cfg.init_scale)
        w1 = _init_weight(rng, cfg.hidden, n_classes, cfg.init_scale)
        ax = a_hat @ x
        losses = []
        for _ in range(cfg.steps):
            tape = Tape()
            axc = tape.constant(ax)
            ahc = tape.constant(a_hat)
            v0 = tape.leaf(w0)
            v1 = tape.leaf(w1)
            h = tape.relu(tape.matmul(axc, v0))
            probs = tape.softmax_rows(tape.matmul(tape.matmul(ahc, h), v1))
            loss = tape.cross_entropy_masked(probs, labels, train_set)
            losses.append(float(tape.value(loss)[0, 0]))
            g0, g1 = tape.backward(loss, [v0, v1])
            w0 = w0 - cfg.learning_rate * g0
            w1 = w1 - cfg.learning_rate * g1
        return TrainResult(GcnModel(w0, w1), losses)

    raise GraphError(f"unknown model kind {model_kind!r}")


def predict_labels(model: GcnModel | SurrogateModel, g: GraphBundle,
                   a: np.ndarray | None = None) -> np.ndarray:
    """Argmax class per node; ties resolve to the lowest class id."""
    a_hat = normalize_adjacency(g.adjacency if a is None else a)
    x = g.features.astype(np.float64)
    if isinstance(model, GcnModel):
        probs = gcn_forward(model, a_hat, x)
    else:
        probs = surrogate_forward(model, a_hat, x)
    return np.argmax(probs, axis=1)


def accuracy(pred: np.ndarray, truth: np.ndarray, on: np.ndarray) -> float:
    on = np.asarray(on, dtype=np.int64)
    if on.size == 0:
        raise GraphError("accuracy: empty node set")
    return float(np.mean(pred[on] == truth[on]))


class InnerTrain:
    """Handle to an on-tape unrolled surrogate training run.

    `w_final` is the Var for the trained weights; `masked_loss` appends a
    cross-entropy on chosen nodes/targets so its gradient flows back through
    all T updates into the adjacency Var.
    """

    def __init__(self, tape: Tape, a_hat: Var, x_const: Var, w_final: Var):
        self.tape = tape
        self.a_hat = a_hat
        self._x = x_const
        self.w_final = w_final
        self._probs: Var | None = None

    def probs(self) -> Var:
        if self._probs is None:
            t = self.tape
            logits = t.matmul(self.a_hat, t.matmul(self.a_hat, t.matmul(self._x, self.w_final)))
            self._probs = t.softmax_rows(logits)
        return self._probs

    def predictions(self) -> np.ndarray:
        return np.argmax(self.tape.value(self.probs()), axis=1)

    def masked_loss(self, targets: np.ndarray, nodes: np.ndarray) -> Var:
        return self.tape.cross_entropy_masked(self.probs(), targets, nodes)


def inner_train_differentiable(tape: Tape, a_var: Var, g: GraphBundle,
                               labels: np.ndarray, train_set: np.ndarray,
                               cfg: TrainConfig) -> InnerTrain:
    """Record T gradient-descent steps of the surrogate entirely on the tape.

    The per-step weight gradient of the masked cross-entropy has the closed
    form X^T A_hat A_hat ((P - Y) * mask), which keeps the whole unrolled run
    expressible with first-order tape ops only (A_hat is symmetric at every
    point where the result is used as a gradient).
    """
    train_set = np.asarray(train_set, dtype=np.int64)
    if train_set.size == 0:
        raise GraphError("inner_train_differentiable: empty train set")
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1

    x = g.features.astype(np.float64)
    a_hat = tape.rsqrt_diag_scale(tape.add_identity(a_var))
    xc = tape.constant(x)
    xtc = tape.constant(x.T)

    y = np.zeros((g.n_nodes, n_classes))
    y[train_set, labels[train_set]] = 1.0
    yc = tape.constant(y)
    mask = np.zeros((g.n_nodes, n_classes))
    mask[train_set] = 1.0 / train_set.size
    mc = tape.constant(mask)

    rng = np.random.default_rng(cfg.init_seed)
    w = tape.leaf(_init_weight(rng, g.n_features, n_classes, cfg.init_scale))
    for _ in range(cfg.steps):
        logits = tape.matmul(a_hat, tape.matmul(a_hat, tape.matmul(xc, w)))
        probs = tape.softmax_rows(logits)
        diff = tape.elementwise_mul(tape.sub(probs, yc), mc)
        grad_w = tape.matmul(xtc, tape.matmul(a_hat, tape.matmul(a_hat, diff)))
        w = tape.sub(w, tape.scalar_mul(cfg.learning_rate, grad_w))

    return InnerTrain(tape, a_hat, xc, w)
