import numpy as np
import pytest

from graphpoison.autodiff import Tape
from graphpoison.graph import (GraphBundle, GraphError, SbmConfig, SplitConfig,
                               generate_sbm, normalize_adjacency, random_split)
from graphpoison.models import (GcnModel, SurrogateModel, TrainConfig, accuracy,
                                gcn_forward, inner_train_differentiable,
                                predict_labels, surrogate_forward, train)


def path_graph(n, f=None):
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return GraphBundle(adjacency=a, features=np.eye(n, dtype=np.int64) if f is None else f)


class TestForward:
    def test_gcn_zero_weights_uniform(self):
        g = path_graph(4)
        model = GcnModel(np.zeros((4, 3)), np.zeros((3, 5)))
        probs = gcn_forward(model, normalize_adjacency(g.adjacency),
                            g.features.astype(float))
        assert np.allclose(probs, 0.2)

    def test_gcn_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        g = path_graph(5)
        model = GcnModel(rng.normal(size=(5, 4)), rng.normal(size=(4, 3)))
        probs = gcn_forward(model, normalize_adjacency(g.adjacency),
                            g.features.astype(float))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_gcn_isolated_node_reduction(self):
        # A_hat == [[1]] so the network is softmax(relu(x w0) w1)
        rng = np.random.default_rng(1)
        x = np.array([[1.0, 0.0, 1.0]])
        w0, w1 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        probs = gcn_forward(GcnModel(w0, w1), np.array([[1.0]]), x)
        h = np.maximum(x @ w0, 0)
        z = h @ w1
        expected = np.exp(z) / np.exp(z).sum()
        assert np.allclose(probs, expected)

    def test_surrogate_zero_weights_uniform(self):
        g = path_graph(3)
        probs = surrogate_forward(SurrogateModel(np.zeros((3, 4))),
                                  normalize_adjacency(g.adjacency),
                                  g.features.astype(float))
        assert np.allclose(probs, 0.25)

    def test_surrogate_two_hop_reach(self):
        # on path 0-1-2, node 0's output must react to node 2's features
        g = path_graph(3)
        rng = np.random.default_rng(2)
        w = rng.normal(size=(3, 2))
        a_hat = normalize_adjacency(g.adjacency)
        x1 = g.features.astype(float)
        x2 = x1.copy()
        x2[2] = [1, 1, 1]
        p1 = surrogate_forward(SurrogateModel(w), a_hat, x1)
        p2 = surrogate_forward(SurrogateModel(w), a_hat, x2)
        assert not np.allclose(p1[0], p2[0])

    def test_surrogate_rows_sum_to_one(self):
        g = path_graph(4)
        rng = np.random.default_rng(3)
        probs = surrogate_forward(SurrogateModel(rng.normal(size=(4, 3))),
                                  normalize_adjacency(g.adjacency),
                                  g.features.astype(float))
        assert np.allclose(probs.sum(axis=1), 1.0)


def separable_sbm(seed=0):
    return generate_sbm(SbmConfig(block_sizes=(50, 50), p_in=0.9, p_out=0.05,
                                  feature_dim=20, feature_flip_prob=0.05,
                                  seed=seed))


class TestTrain:
    def test_gcn_on_separable_sbm(self):
        g = random_split(separable_sbm(), SplitConfig(seed=1))
        result = train("gcn", g, g.labels, g.splits["train"],
                       TrainConfig(steps=100, learning_rate=0.05, init_seed=0))
        pred = predict_labels(result.model, g)
        assert accuracy(pred, g.labels, g.splits["test"]) >= 0.9

    @pytest.mark.parametrize("kind", ["gcn", "surrogate"])
    def test_loss_non_increasing_small_lr(self, kind):
        g = random_split(separable_sbm(3), SplitConfig(seed=2))
        result = train(kind, g, g.labels, g.splits["train"],
                       TrainConfig(steps=30, learning_rate=0.01, init_seed=4))
        diffs = np.diff(result.losses)
        assert np.all(diffs <= 1e-12)

    @pytest.mark.parametrize("kind", ["gcn", "surrogate"])
    def test_deterministic_per_seed(self, kind):
        g = random_split(separable_sbm(5), SplitConfig(seed=0))
        cfg = TrainConfig(steps=10, learning_rate=0.1, init_seed=9)
        r1 = train(kind, g, g.labels, g.splits["train"], cfg)
        r2 = train(kind, g, g.labels, g.splits["train"], cfg)
        if kind == "gcn":
            assert np.array_equal(r1.model.w0, r2.model.w0)
            assert np.array_equal(r1.model.w1, r2.model.w1)
        else:
            assert np.array_equal(r1.model.w, r2.model.w)

    def test_empty_train_set_rejected(self):
        g = separable_sbm()
        with pytest.raises(GraphError):
            train("gcn", g, g.labels, np.array([], dtype=np.int64), TrainConfig())

    def test_surrogate_labels_match_blocks(self):
        g = random_split(separable_sbm(7), SplitConfig(seed=3))
        result = train("surrogate", g, g.labels, g.splits["train"],
                       TrainConfig(steps=100, learning_rate=0.5, init_seed=1))
        pred = predict_labels(result.model, g)
        assert accuracy(pred, g.labels, np.arange(g.n_nodes)) >= 0.9


class TestPredictAndAccuracy:
    def test_argmax(self):
        assert np.argmax(np.array([0.2, 0.5, 0.3])) == 1

    def test_tie_lowest_class(self):
        g = path_graph(1, f=np.array([[1]], dtype=np.int64))
        # zero weights give an exact tie on every class
        pred = predict_labels(SurrogateModel(np.zeros((1, 2))), g)
        assert pred[0] == 0

    def test_accuracy_values(self):
        pred = np.array([0, 1, 2, 2])
        truth = np.array([0, 1, 2, 0])
        on = np.arange(4)
        assert accuracy(pred, truth, on) == 0.75
        assert accuracy(truth, truth, on) == 1.0
        assert accuracy(1 - truth.clip(0, 1) + 5, truth, on) == 0.0

    def test_accuracy_empty_set(self):
        with pytest.raises(GraphError):
            accuracy(np.array([0]), np.array([0]), np.array([], dtype=np.int64))


def tiny_graph(seed=2):
    return generate_sbm(SbmConfig(block_sizes=(3, 3), p_in=0.9, p_out=0.2,
                                  feature_dim=6, feature_flip_prob=0.1, seed=seed))


def meta_loss(g, a, labels, train_set, rest, cfg):
    tape = Tape()
    a_var = tape.leaf(a)
    inner = inner_train_differentiable(tape, a_var, g, labels, train_set, cfg)
    loss = inner.masked_loss(labels, rest)
    return tape, a_var, loss


class TestInnerTrainDifferentiable:
    def test_lr_zero_keeps_initial_weights(self):
        g = tiny_graph()
        train_set, rest = np.array([0, 1, 3, 4]), np.array([2, 5])
        cfg0 = TrainConfig(steps=1, learning_rate=0.0, init_seed=5)
        tape, a_var, loss = meta_loss(g, g.adjacency.astype(float), g.labels,
                                      train_set, rest, cfg0)
        (grad,) = tape.backward(loss, [a_var])

        # oracle: gradient of the untrained-model loss
        rng = np.random.default_rng(5)
        scale = np.sqrt(6.0 / (g.n_features + 2))
        w0 = rng.uniform(-scale, scale, size=(g.n_features, 2))
        t2 = Tape()
        av = t2.leaf(g.adjacency.astype(float))
        ah = t2.rsqrt_diag_scale(t2.add_identity(av))
        probs = t2.softmax_rows(t2.matmul(ah, t2.matmul(ah, t2.matmul(
            t2.constant(g.features.astype(float)), t2.constant(w0)))))
        l2 = t2.cross_entropy_masked(probs, g.labels, rest)
        (g2,) = t2.backward(l2, [av])
        assert np.allclose(grad, g2)

    def test_meta_gradient_matches_fd(self):
        g = tiny_graph()
        train_set, rest = np.array([0, 1, 3, 4]), np.array([2, 5])
        cfg = TrainConfig(steps=3, learning_rate=0.5, init_seed=7)
        a0 = g.adjacency.astype(float)
        tape, a_var, loss = meta_loss(g, a0, g.labels, train_set, rest, cfg)
        (grad,) = tape.backward(loss, [a_var])

        def value(a):
            t, _, l = meta_loss(g, a, g.labels, train_set, rest, cfg)
            return float(t.value(l)[0, 0])

        h = 1e-5
        for i in range(6):
            for j in range(6):
                ap, am = a0.copy(), a0.copy()
                ap[i, j] += h
                am[i, j] -= h
                fd = (value(ap) - value(am)) / (2 * h)
                assert abs(fd - grad[i, j]) <= 1e-3 * max(abs(fd), abs(grad[i, j]), 1e-6)

    def test_lr_continuity_at_zero(self):
        g = tiny_graph(4)
        train_set, rest = np.array([0, 2, 4]), np.array([1, 3, 5])
        grads = []
        for lr in (0.0, 1e-8):
            tape, a_var, loss = meta_loss(g, g.adjacency.astype(float), g.labels,
                                          train_set, rest,
                                          TrainConfig(steps=2, learning_rate=lr,
                                                      init_seed=3))
            grads.append(tape.backward(loss, [a_var])[0])
        assert np.allclose(grads[0], grads[1], atol=1e-6)

    def test_disconnected_component_zero_gradient(self):
        # loss nodes and train nodes confined to component {0,1,2}: the
        # meta-gradient of edges inside component {3,4,5} must vanish
        a = np.zeros((6, 6), dtype=np.int64)
        for u, v in [(0, 1), (1, 2), (3, 4), (4, 5)]:
            a[u, v] = a[v, u] = 1
        feats = np.eye(6, dtype=np.int64)
        g = GraphBundle(adjacency=a, features=feats,
                        labels=np.array([0, 1, 0, 1, 0, 1]))
        tape, a_var, loss = meta_loss(g, a.astype(float), g.labels,
                                      np.array([0, 1]), np.array([2]),
                                      TrainConfig(steps=2, learning_rate=0.3,
                                                  init_seed=0))
        (grad,) = tape.backward(loss, [a_var])
        assert np.allclose(grad[3:, 3:], 0.0, atol=1e-12)

    def test_permutation_equivariance(self):
        g = tiny_graph(9)
        perm = np.array([3, 1, 4, 0, 5, 2])
        gp = GraphBundle(adjacency=g.adjacency[np.ix_(perm, perm)],
                         features=g.features[perm], labels=g.labels[perm])
        train_set = np.array([0, 1, 3, 4])
        cfg = TrainConfig(steps=4, learning_rate=0.4, init_seed=6)

        t1 = Tape()
        inner1 = inner_train_differentiable(t1, t1.leaf(g.adjacency.astype(float)),
                                            g, g.labels, train_set, cfg)
        out1 = t1.value(inner1.probs())

        inv = np.argsort(perm)
        train_p = np.sort(inv[train_set])
        t2 = Tape()
        inner2 = inner_train_differentiable(t2, t2.leaf(gp.adjacency.astype(float)),
                                            gp, gp.labels, train_p, cfg)
        out2 = t2.value(inner2.probs())
        assert np.allclose(out1, out2[inv])
