"""Reverse-mode differentiation over dense matrices.

A Tape records operations eagerly (primal values are computed and cached at
record time) and `backward` replays it in reverse to accumulate adjoints.
The op set is intentionally small: it is exactly what the GCN/surrogate
forward passes, degree normalization and the masked cross-entropy losses
need, so that a gradient of an unrolled training run with respect to the
adjacency matrix can be taken with one reverse pass.

All values are float64 2-d numpy arrays. A scalar is a (1, 1) matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AutodiffError(ValueError):
    pass


@dataclass(frozen=True)
class Var:
    """Handle to a tape node."""

    node_id: int
    shape: tuple[int, int]


class _Node:
    __slots__ = ("op", "parents", "value", "aux")

    def __init__(self, op: str, parents: tuple[int, ...], value: np.ndarray, aux=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.aux = aux


class Tape:
    """Append-only record of matrix operations; single-writer."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def value(self, v: Var) -> np.ndarray:
        return self._nodes[v.node_id].value

    def _push(self, op: str, parents: tuple[int, ...], value: np.ndarray, aux=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise AutodiffError(f"{op}: values must be 2-d matrices")
        self._nodes.append(_Node(op, parents, value, aux))
        return Var(len(self._nodes) - 1, value.shape)

    def constant(self, value) -> Var:
        """A leaf the backward pass treats as fixed."""
        return self._push("constant", (), np.atleast_2d(np.asarray(value, dtype=np.float64)))

    # differentiable leaves are just constants we later ask gradients for
    leaf = constant

    def matmul(self, a: Var, b: Var) -> Var:
        if a.shape[1] != b.shape[0]:
            raise AutodiffError(f"matmul: {a.shape} @ {b.shape}")
        return self._push("matmul", (a.node_id, b.node_id), self.value(a) @ self.value(b))

    def add(self, a: Var, b: Var) -> Var:
        self._check_same(a, b, "add")
        return self._push("add", (a.node_id, b.node_id), self.value(a) + self.value(b))

    def sub(self, a: Var, b: Var) -> Var:
        self._check_same(a, b, "sub")
        return self._push("sub", (a.node_id, b.node_id), self.value(a) - self.value(b))

    def scalar_mul(self, c: float, a: Var) -> Var:
        return self._push("scalar_mul", (a.node_id,), float(c) * self.value(a), aux=float(c))

    def elementwise_mul(self, a: Var, b: Var) -> Var:
        self._check_same(a, b, "elementwise_mul")
        return self._push("elementwise_mul", (a.node_id, b.node_id),
                          self.value(a) * self.value(b))

    def add_identity(self, a: Var) -> Var:
        if a.shape[0] != a.shape[1]:
            raise AutodiffError("add_identity: matrix must be square")
        return self._push("add_identity", (a.node_id,),
                          self.value(a) + np.eye(a.shape[0]))

    def row_sum(self, a: Var) -> Var:
        return self._push("row_sum", (a.node_id,),
                          self.value(a).sum(axis=1, keepdims=True))

    def rsqrt_diag_scale(self, a: Var) -> Var:
        """Symmetric degree scaling d_i^{-1/2} a_ij d_j^{-1/2}, d = row sums of a.

        One composite op with a hand-derived adjoint: the dependence of the
        degree vector on the matrix itself is the part a naive composition
        gets wrong most easily.
        """
        if a.shape[0] != a.shape[1]:
            raise AutodiffError("rsqrt_diag_scale: matrix must be square")
        val = self.value(a)
        d = val.sum(axis=1)
        if np.any(d <= 0):
            raise AutodiffError("rsqrt_diag_scale: nonpositive row sum")
        s = 1.0 / np.sqrt(d)
        return self._push("rsqrt_diag_scale", (a.node_id,),
                          val * s[:, None] * s[None, :], aux=(d, s))

    def relu(self, a: Var) -> Var:
        return self._push("relu", (a.node_id,), np.maximum(self.value(a), 0.0))

    def softmax_rows(self, a: Var) -> Var:
        v = self.value(a)
        shifted = v - v.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return self._push("softmax_rows", (a.node_id,), e / e.sum(axis=1, keepdims=True))

    def cross_entropy_masked(self, probs: Var, targets: np.ndarray, nodes: np.ndarray) -> Var:
        """Mean negative log-likelihood of `targets` over the rows in `nodes`.

        `probs` must already be row-stochastic (softmax output).
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        if nodes.size == 0:
            raise AutodiffError("cross_entropy_masked: empty node set")
        p = self.value(probs)
        picked = p[nodes, targets[nodes]]
        loss = -np.log(picked).mean()
        return self._push("cross_entropy_masked", (probs.node_id,),
                          np.array([[loss]]), aux=(targets, nodes))

    def _check_same(self, a: Var, b: Var, op: str):
        if a.shape != b.shape:
            raise AutodiffError(f"{op}: shape mismatch {a.shape} vs {b.shape}")

    def backward(self, loss: Var, wrt: list[Var]) -> list[np.ndarray]:
        """Adjoint of `loss` (a 1x1 Var) with respect to each Var in `wrt`.

        Contributions from multiple uses of the same node are summed; a node
        the loss does not depend on gets a zero matrix. Primal values are
        not modified.
        """
        if loss.shape != (1, 1):
            raise AutodiffError("backward: loss must be scalar (1x1)")
        for v in wrt:
            if v.node_id >= len(self._nodes):
                raise AutodiffError("backward: variable not on this tape")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
        for nid in range(loss.node_id, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self._nodes[nid]
            for pid, pg in self._adjoint(node, g):
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
            if node.op != "constant":
                node_grad_needed = any(v.node_id == nid for v in wrt)
            else:
                node_grad_needed = True
            if node_grad_needed:
                grads[nid] = g  # keep for requested vars
        return [grads.get(v.node_id, np.zeros(v.shape)) for v in wrt]

    def _adjoint(self, node: _Node, g: np.ndarray):
        op = node.op
        if op == "constant":
            return []
        pa = node.parents
        vals = [self._nodes[p].value for p in pa]
        if op == "matmul":
            a, b = vals
            return [(pa[0], g @ b.T), (pa[1], a.T @ g)]
        if op == "add":
            return [(pa[0], g), (pa[1], g)]
        if op == "sub":
            return [(pa[0], g), (pa[1], -g)]
        if op == "scalar_mul":
            return [(pa[0], node.aux * g)]
        if op == "elementwise_mul":
            a, b = vals
            return [(pa[0], g * b), (pa[1], g * a)]
        if op == "add_identity":
            return [(pa[0], g)]
        if op == "row_sum":
            (a,) = vals
            return [(pa[0], np.broadcast_to(g, a.shape).copy())]
        if op == "rsqrt_diag_scale":
            (a,) = vals
            d, s = node.aux
            # out_ij = s_i s_j a_ij; d depends on a through its row sums
            b = g * a
            row_term = -0.5 * d ** (-1.5) * (b @ s + b.T @ s)
            return [(pa[0], g * np.outer(s, s) + row_term[:, None])]
        if op == "relu":
            (a,) = vals
            return [(pa[0], g * (a > 0))]
        if op == "softmax_rows":
            y = node.value
            inner = (g * y).sum(axis=1, keepdims=True)
            return [(pa[0], y * (g - inner))]
        if op == "cross_entropy_masked":
            targets, nodes = node.aux
            p = vals[0]
            gp = np.zeros_like(p)
            gp[nodes, targets[nodes]] = -1.0 / (p[nodes, targets[nodes]] * nodes.size)
            return [(pa[0], g[0, 0] * gp)]
        raise AutodiffError(f"unknown op {op!r}")


def grad_symmetrize(g: np.ndarray) -> np.ndarray:
    """Per-logical-edge derivative for a symmetric adjacency: g + g^T, zero diagonal."""
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise AutodiffError("grad_symmetrize: matrix must be square")
    out = g + g.T
    np.fill_diagonal(out, 0.0)
    return out
