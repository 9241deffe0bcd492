"""Lightweight defenses and the poisoned-training evaluation loop.

Poisoning order is strict: the attack plan is computed from the clean graph
once; defenses and victim training only ever see the perturbed graph and
never feed back into the plan.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import models
from .attacks import AttackPlan
from .graph import GraphBundle, GraphError, SplitConfig, jaccard_matrix, random_split


def jaccard_preprocess(g: GraphBundle, eta: float) -> GraphBundle:
    """Drop every edge whose endpoints have Jaccard feature similarity < eta."""
    jm = jaccard_matrix(g.features)
    keep = (g.adjacency == 1) & (jm >= eta)
    return g.with_adjacency(keep.astype(np.int64))


def flip_train(g: GraphBundle, cfg: models.TrainConfig) -> models.TrainResult:
    """Train the GCN on the validation split instead of the training split.

    Dodges attacks whose perturbations concentrate around the training set;
    evaluation stays on the test split.
    """
    if "train" not in g.splits or "val" not in g.splits:
        raise GraphError("flip_train needs train and val splits")
    swapped = dict(g.splits)
    swapped["train"], swapped["val"] = g.splits["val"], g.splits["train"]
    if g.labels is None:
        raise GraphError("flip_train needs labels")
    return models.train("gcn", g.with_splits(swapped), g.labels,
                        swapped["train"], cfg)


@dataclass
class ExperimentReport:
    config: dict
    per_trial: list[dict]
    mean: float
    std: float

    @property
    def misclassification(self) -> float:
        return 1.0 - self.mean

    def to_dict(self) -> dict:
        return {"config": self.config, "per_trial": self.per_trial,
                "mean": self.mean, "std": self.std,
                "misclassification": self.misclassification}


def evaluate_poisoned(clean: GraphBundle, plan: AttackPlan, defense: str = "none",
                      trials: int = 10, seed: int = 0,
                      split_cfg: SplitConfig | None = None,
                      train_cfg: models.TrainConfig | None = None,
                      eta: float = 0.01) -> ExperimentReport:
    """Train-after-attack evaluation: fresh random split per trial, defense
    applied to the perturbed graph, GCN trained on it, test accuracy recorded."""
    if defense not in ("none", "jaccard", "flip"):
        raise GraphError(f"unknown defense {defense!r}")
    if clean.labels is None:
        raise GraphError("evaluation needs ground-truth labels")
    split_cfg = split_cfg or SplitConfig()
    train_cfg = train_cfg or models.TrainConfig(learning_rate=0.01)
    poisoned = clean.with_adjacency(plan.adjacency)

    accs = []
    per_trial = []
    for t in range(trials):
        split_seed = int(np.random.SeedSequence([seed, t]).generate_state(1)[0])
        g_t = random_split(poisoned, replace(split_cfg, seed=split_seed))
        if defense == "jaccard":
            g_t = jaccard_preprocess(g_t, eta)
        init_seed = int(np.random.SeedSequence([seed, t, 1]).generate_state(1)[0])
        cfg_t = replace(train_cfg, init_seed=init_seed)
        if defense == "flip":
            result = flip_train(g_t, cfg_t)
        else:
            result = models.train("gcn", g_t, g_t.labels, g_t.splits["train"], cfg_t)
        pred = models.predict_labels(result.model, g_t)
        acc = models.accuracy(pred, g_t.labels, g_t.splits["test"])
        accs.append(acc)
        per_trial.append({"trial": t, "seed": init_seed,
                          "split_seed": split_seed, "accuracy": acc})

    accs = np.asarray(accs)
    return ExperimentReport(
        config={"defense": defense, "trials": trials, "seed": seed, "eta": eta,
                "attack": plan.config, "train": {"steps": train_cfg.steps,
                                                 "learning_rate": train_cfg.learning_rate,
                                                 "hidden": train_cfg.hidden}},
        per_trial=per_trial,
        mean=float(accs.mean()),
        std=float(accs.std()),  # population std
    )
