import numpy as np
import pytest

from graphpoison.attacks import (AttackBudget, Constraint, Flip, AttackPlan,
                                 attack_random)
from graphpoison.defense import (evaluate_poisoned, flip_train,
                                 jaccard_preprocess)
from graphpoison.graph import (GraphBundle, GraphError, SbmConfig, SplitConfig,
                               generate_sbm, jaccard_matrix, random_split)
from graphpoison.models import TrainConfig


def sbm(seed=0, sizes=(20, 20)):
    return generate_sbm(SbmConfig(block_sizes=sizes, p_in=0.7, p_out=0.1,
                                  feature_dim=16, feature_flip_prob=0.05,
                                  seed=seed))


def noop_plan(g):
    return AttackPlan(flips=[], adjacency=g.adjacency.copy(), audit=[])


class TestJaccardPreprocess:
    def test_eta_zero_is_noop(self):
        g = sbm()
        out = jaccard_preprocess(g, 0.0)
        assert np.array_equal(out.adjacency, g.adjacency)

    def test_eta_above_one_removes_non_identical(self):
        # J <= 1, with equality only for identical feature rows
        g = sbm(1)
        out = jaccard_preprocess(g, 1.0 + 1e-12)
        jm = jaccard_matrix(g.features)
        assert np.all(out.adjacency[jm < 1.0] == 0)

    def test_adversarial_zero_similarity_edge_removed(self):
        a = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=np.int64)
        x = np.array([[1, 1, 0], [1, 0, 1], [0, 0, 1]], dtype=np.int64)
        g = GraphBundle(adjacency=a, features=x)
        # J(0,1) = 1/3 survives eta=0.01; J(0,2) = 0 is dropped
        out = jaccard_preprocess(g, 0.01)
        assert out.adjacency[0, 1] == 1
        assert out.adjacency[0, 2] == 0

    def test_idempotent_and_subset(self):
        g = sbm(2)
        once = jaccard_preprocess(g, 0.2)
        twice = jaccard_preprocess(once, 0.2)
        assert np.array_equal(once.adjacency, twice.adjacency)
        assert np.all(once.adjacency <= g.adjacency)

    def test_preserves_everything_else(self):
        g = random_split(sbm(3), SplitConfig(seed=0))
        out = jaccard_preprocess(g, 0.1)
        assert np.array_equal(out.features, g.features)
        assert np.array_equal(out.labels, g.labels)
        assert set(out.splits) == set(g.splits)


class TestFlipTrain:
    def test_trains_on_validation_split(self):
        g = random_split(sbm(4), SplitConfig(seed=1))
        cfg = TrainConfig(steps=20, learning_rate=0.05, init_seed=0)
        flipped = flip_train(g, cfg)
        # oracle: ordinary training with the splits swapped by hand
        swapped = dict(g.splits)
        swapped["train"], swapped["val"] = g.splits["val"], g.splits["train"]
        from graphpoison.models import train
        direct = train("gcn", g.with_splits(swapped), g.labels,
                       swapped["train"], cfg)
        assert np.array_equal(flipped.model.w0, direct.model.w0)
        assert np.array_equal(flipped.model.w1, direct.model.w1)

    def test_missing_split_rejected(self):
        g = sbm(4)
        with pytest.raises(GraphError):
            flip_train(g, TrainConfig())

    def test_deterministic(self):
        g = random_split(sbm(5), SplitConfig(seed=2))
        cfg = TrainConfig(steps=10, learning_rate=0.05, init_seed=3)
        r1 = flip_train(g, cfg)
        r2 = flip_train(g, cfg)
        assert np.array_equal(r1.model.w0, r2.model.w0)


class TestEvaluatePoisoned:
    def test_zero_flip_plan_matches_clean_training(self):
        g = sbm(6)
        rep = evaluate_poisoned(g, noop_plan(g), trials=3, seed=7,
                                train_cfg=TrainConfig(steps=30,
                                                      learning_rate=0.05))
        assert len(rep.per_trial) == 3
        assert 0.0 <= rep.mean <= 1.0
        assert rep.misclassification == pytest.approx(1.0 - rep.mean)

    def test_population_std(self):
        g = sbm(6)
        rep = evaluate_poisoned(g, noop_plan(g), trials=4, seed=1,
                                train_cfg=TrainConfig(steps=10,
                                                      learning_rate=0.05))
        accs = np.array([t["accuracy"] for t in rep.per_trial])
        assert rep.mean == pytest.approx(accs.mean())
        assert rep.std == pytest.approx(accs.std(ddof=0))

    def test_trial_splits_differ(self):
        g = sbm(7)
        rep = evaluate_poisoned(g, noop_plan(g), trials=3, seed=2,
                                train_cfg=TrainConfig(steps=5,
                                                      learning_rate=0.05))
        seeds = [t["split_seed"] for t in rep.per_trial]
        assert len(set(seeds)) == 3

    def test_deterministic(self):
        g = sbm(8)
        plan = attack_random(g, AttackBudget(delta=4), Constraint(g), seed=0)
        kw = dict(trials=2, seed=3,
                  train_cfg=TrainConfig(steps=10, learning_rate=0.05))
        r1 = evaluate_poisoned(g, plan, **kw)
        r2 = evaluate_poisoned(g, plan, **kw)
        assert r1.per_trial == r2.per_trial

    def test_defense_dispatch(self):
        g = sbm(9)
        plan = attack_random(g, AttackBudget(delta=3), Constraint(g), seed=1)
        for defense in ("none", "jaccard", "flip"):
            rep = evaluate_poisoned(g, plan, defense=defense, trials=2, seed=4,
                                    train_cfg=TrainConfig(steps=10,
                                                          learning_rate=0.05))
            assert rep.config["defense"] == defense

    def test_unknown_defense(self):
        g = sbm(9)
        with pytest.raises(GraphError):
            evaluate_poisoned(g, noop_plan(g), defense="armor", trials=1)

    def test_poisoned_adjacency_used(self):
        # the victim must train on the plan's adjacency, not the clean one:
        # under identical seeds an edgeless plan yields different accuracies
        base = sbm(10, sizes=(15, 15))
        # identity features carry no class signal, so outcomes depend on
        # the adjacency the victim actually sees
        g = GraphBundle(adjacency=base.adjacency,
                        features=np.eye(base.n_nodes, dtype=np.int64),
                        labels=base.labels)
        empty = AttackPlan(flips=[Flip(0, 0, 1, 0.0, True)],
                           adjacency=np.zeros_like(g.adjacency), audit=[])
        kw = dict(trials=3, seed=5,
                  train_cfg=TrainConfig(steps=40, learning_rate=0.05))
        clean = evaluate_poisoned(g, noop_plan(g), **kw)
        hollow = evaluate_poisoned(g, empty, **kw)
        clean_accs = [t["accuracy"] for t in clean.per_trial]
        hollow_accs = [t["accuracy"] for t in hollow.per_trial]
        assert clean_accs != hollow_accs
