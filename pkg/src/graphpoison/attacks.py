"""Structure-poisoning attacks: Random, the DICE family, the black-box
meta-gradient baseline and the k-fold black-box gradient attack (BBGA).

All attacks flip undirected edges of a binary adjacency under a shared
budget and a Jaccard feature-similarity constraint on additions, and return
an AttackPlan: the ordered flips, their scores, the perturbed adjacency and
a per-flip constraint audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import models
from .autodiff import Tape, grad_symmetrize
from .clustering import ClusterConfig, pseudo_labels
from .graph import GraphBundle, GraphError, jaccard_matrix


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackBudget:
    """Flip budget: give either an absolute count or a rate of |E|."""

    delta: int | None = None
    rate: float | None = None

    def __post_init__(self):
        if (self.delta is None) == (self.rate is None):
            raise GraphError("give exactly one of delta / rate")

    def resolve(self, n_edges: int) -> int:
        d = self.delta if self.delta is not None else int(round(self.rate * n_edges))
        if d < 1:
            raise GraphError(f"resolved budget must be >= 1, got {d}")
        return d


class Constraint:
    """Valid-flip predicate: removals always allowed, additions need J >= eta."""

    def __init__(self, g: GraphBundle, eta: float = 0.01):
        self.eta = eta
        jm = jaccard_matrix(g.features)
        self.addition_allowed = jm >= eta
        np.fill_diagonal(self.addition_allowed, False)
        self._jaccard = jm

    def valid_mask(self, current_adj: np.ndarray) -> np.ndarray:
        """Boolean N x N mask of pairs that may be flipped right now."""
        return (current_adj == 1) | self.addition_allowed

    def jaccard(self, u: int, v: int) -> float:
        return float(self._jaccard[u, v])


@dataclass(frozen=True)
class Flip:
    step: int
    u: int
    v: int
    score: float
    was_edge: bool


@dataclass
class AttackPlan:
    flips: list[Flip]
    adjacency: np.ndarray
    audit: list[dict]
    status: str = "ok"  # "ok" or "truncated"
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def n_flips(self) -> int:
        return len(self.flips)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "status": self.status,
            "flips": [asdict(f) for f in self.flips],
            "summary": {
                "n_flips": self.n_flips,
                "added": sum(not f.was_edge for f in self.flips),
                "removed": sum(f.was_edge for f in self.flips),
            },
        }


@dataclass(frozen=True)
class BbgaConfig:
    k: int = 5                      # folds whose scores are aggregated
    T: int = 100                    # unrolled inner training steps
    master_seed: int = 0
    fold_labels: str = "surrogate_preds"   # or "cluster_labels"
    refresh_targets: bool = True
    learning_rate: float = 0.1
    sigma_filter: str = "strict"    # "strict" | "lte" | "off"
    sigma_over: str = "all"         # "all" off-diagonal pairs | "valid" pairs only
    partition_k: int | None = None  # how many parts V is split into (default: k)
    fold_sample: str = "all"        # "all" | "single_random" (one random fold/step)
    surrogate_train_fraction: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise GraphError("k must be >= 1")
        if self.T < 1:
            raise GraphError("T must be >= 1")
        if self.fold_labels not in ("surrogate_preds", "cluster_labels"):
            raise GraphError(f"bad fold_labels {self.fold_labels!r}")
        if self.sigma_filter not in ("strict", "lte", "off"):
            raise GraphError(f"bad sigma_filter {self.sigma_filter!r}")
        if self.sigma_over not in ("all", "valid"):
            raise GraphError(f"bad sigma_over {self.sigma_over!r}")
        if self.fold_sample not in ("all", "single_random"):
            raise GraphError(f"bad fold_sample {self.fold_sample!r}")
        if (self.partition_k or self.k) < self.k:
            raise GraphError("partition_k must be >= k")


def _seed_for(master_seed: int, *parts: int) -> int:
    # stable across runs and platforms, unlike hash()
    return int(np.random.SeedSequence([master_seed, *parts]).generate_state(1)[0])


def bbga_partition(g: GraphBundle, k: int, seed: int) -> list[np.ndarray]:
    """Seeded uniform partition of V into k folds with sizes differing by <= 1."""
    if k > g.n_nodes:
        raise GraphError("k must be <= N")
    perm = np.random.default_rng(seed).permutation(g.n_nodes)
    return [np.sort(part) for part in np.array_split(perm, k)]


def score_sign(meta_grad_sym: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Flip the gradient sign on existing edges: S = grad * (-2A + 1), zero diagonal."""
    s = meta_grad_sym * (-2.0 * adjacency + 1.0)
    np.fill_diagonal(s, 0.0)
    return s


def bbga_fold_scores(g: GraphBundle, a_current: np.ndarray, fold: np.ndarray,
                     labels_for_training: np.ndarray, cfg: BbgaConfig,
                     theta_seed: int = 0,
                     targets: np.ndarray | None = None):
    """Score matrix of one fold: meta-gradient through a fresh inner training run.

    Trains the surrogate differentiably on `fold`, predicts targets on the
    complement with the trained weights (unless `targets` is given), builds
    the self-training cross-entropy on the complement and differentiates it
    back to the relaxed adjacency. Returns (scores, targets_used).
    """
    fold = np.asarray(fold, dtype=np.int64)
    if fold.size == 0:
        raise AttackError("empty fold")
    rest = np.setdiff1d(np.arange(g.n_nodes), fold)
    if rest.size == 0:
        raise AttackError("fold covers every node; nothing to attack")

    tape = Tape()
    a_var = tape.leaf(a_current.astype(np.float64))
    inner = models.inner_train_differentiable(
        tape, a_var, g, labels_for_training, fold,
        models.TrainConfig(steps=cfg.T, learning_rate=cfg.learning_rate,
                           init_seed=theta_seed))
    if targets is None:
        targets = inner.predictions()
    # the greedy step takes the argmax of the score, so the attacker loss is
    # the self-training cross-entropy itself: flips that increase the
    # retrained model's disagreement with its own predictions get picked
    loss_atk = inner.masked_loss(targets, rest)
    (grad,) = tape.backward(loss_atk, [a_var])
    scores = score_sign(grad_symmetrize(grad), a_current)
    return scores, targets


def bbga_aggregate(scores: list[np.ndarray], sigma_filter: str = "strict",
                   sigma_pool_mask: np.ndarray | None = None) -> np.ndarray:
    """Combine per-fold scores: sum, keeping only pairs whose fold spread is
    below the median spread (population std over folds).

    The median of an even-sized pool is its lower middle element, so ties at
    the threshold behave deterministically.
    """
    if len(scores) < 2:
        raise GraphError("bbga_aggregate: need at least 2 fold score matrices")
    shapes = {s.shape for s in scores}
    if len(shapes) != 1:
        raise GraphError("bbga_aggregate: shape mismatch")
    stack = np.stack(scores)
    total = stack.sum(axis=0)
    sigma = stack.std(axis=0)  # population std
    n = total.shape[0]
    triu = np.triu_indices(n, k=1)
    if sigma_pool_mask is not None:
        pool_sel = sigma_pool_mask[triu]
        pool = np.sort(sigma[triu][pool_sel])
    else:
        pool = np.sort(sigma[triu])
    if pool.size == 0:
        raise GraphError("bbga_aggregate: empty sigma pool")
    sigma_med = pool[(pool.size - 1) // 2]
    if sigma_filter == "strict":
        keep = sigma < sigma_med
    elif sigma_filter == "lte":
        keep = sigma <= sigma_med
    else:
        raise GraphError(f"bad sigma_filter {sigma_filter!r}")
    out = np.where(keep, total, 0.0)
    np.fill_diagonal(out, 0.0)
    return out


def surrogate_predictions(g: GraphBundle, c_p: np.ndarray, cfg: BbgaConfig) -> np.ndarray:
    """C_s: labels predicted by a surrogate trained on pseudo-labels over a
    seeded random training set (independent of any defense split)."""
    rng = np.random.default_rng(_seed_for(cfg.master_seed, 101))
    n_train = max(1, int(np.floor(g.n_nodes * cfg.surrogate_train_fraction)))
    train_set = np.sort(rng.permutation(g.n_nodes)[:n_train])
    result = models.train(
        "surrogate", g, c_p, train_set,
        models.TrainConfig(steps=cfg.T, learning_rate=cfg.learning_rate,
                           init_seed=_seed_for(cfg.master_seed, 102)))
    return models.predict_labels(result.model, g)


def _prepare_labels(g: GraphBundle, cfg: BbgaConfig,
                    pseudo: np.ndarray | None) -> np.ndarray:
    c_p = pseudo if pseudo is not None else pseudo_labels(
        g, ClusterConfig(seed=_seed_for(cfg.master_seed, 100)))
    if cfg.fold_labels == "cluster_labels":
        return c_p
    return surrogate_predictions(g, c_p, cfg)


def _greedy_gradient_attack(g: GraphBundle, budget: AttackBudget,
                            constraint: Constraint, cfg: BbgaConfig,
                            pseudo: np.ndarray | None,
                            truncate_on_zero: bool) -> AttackPlan:
    delta = budget.resolve(g.n_edges)
    train_labels = _prepare_labels(g, cfg, pseudo)
    partition = bbga_partition(g, cfg.partition_k or cfg.k,
                               _seed_for(cfg.master_seed, 103))
    folds = partition[:cfg.k]
    fold_rng = np.random.default_rng(_seed_for(cfg.master_seed, 104))

    a = g.adjacency.astype(np.int64).copy()
    flipped = np.zeros_like(a, dtype=bool)
    frozen_targets: dict[int, np.ndarray] = {}
    flips: list[Flip] = []
    audit: list[dict] = []
    status = "ok"

    for step in range(delta):
        if cfg.fold_sample == "single_random":
            fold_ids = [int(fold_rng.integers(len(folds)))]
        else:
            fold_ids = list(range(len(folds)))

        per_fold = []
        for i in fold_ids:
            targets = None if cfg.refresh_targets else frozen_targets.get(i)
            s_i, used = bbga_fold_scores(
                g, a.astype(np.float64), folds[i], train_labels, cfg,
                theta_seed=_seed_for(cfg.master_seed, 1, step, i),
                targets=targets)
            if not cfg.refresh_targets and i not in frozen_targets:
                frozen_targets[i] = used
            per_fold.append(s_i)

        if len(per_fold) >= 2 and cfg.sigma_filter != "off":
            pool_mask = constraint.valid_mask(a) if cfg.sigma_over == "valid" else None
            s = bbga_aggregate(per_fold, cfg.sigma_filter, sigma_pool_mask=pool_mask)
        else:
            s = np.sum(per_fold, axis=0)
            np.fill_diagonal(s, 0.0)

        valid = constraint.valid_mask(a) & ~flipped
        if not valid.any() or np.all(s[valid] == 0.0):
            if truncate_on_zero:
                status = "truncated"
                break
            raise AttackError("all candidate scores are zero or invalid")
        masked = np.where(valid, s, -np.inf)
        flat = int(np.argmax(masked))  # row-major: ties pick smallest (u, v)
        u, v = divmod(flat, g.n_nodes)
        was_edge = bool(a[u, v] == 1)
        a[u, v] = a[v, u] = 1 - a[u, v]
        flipped[u, v] = flipped[v, u] = True
        flips.append(Flip(step, int(u), int(v), float(s[u, v]), was_edge))
        audit.append({
            "step": step, "u": int(u), "v": int(v), "was_edge": was_edge,
            "jaccard": constraint.jaccard(u, v),
            "constraint_ok": was_edge or constraint.jaccard(u, v) >= constraint.eta,
        })

    return AttackPlan(flips=flips, adjacency=a, audit=audit, status=status,
                      config={"kind": "bbga" if cfg.sigma_filter != "off" or cfg.k > 1
                              else "mettack_bb",
                              **asdict(cfg), "delta": delta, "eta": constraint.eta},
                      seed=cfg.master_seed)


def attack_bbga(g: GraphBundle, budget: AttackBudget, constraint: Constraint,
                cfg: BbgaConfig, pseudo: np.ndarray | None = None) -> AttackPlan:
    """k-fold meta-gradient greedy attack (sigma-filtered fold aggregation)."""
    return _greedy_gradient_attack(g, budget, constraint, cfg, pseudo,
                                   truncate_on_zero=True)


def attack_mettack_bb(g: GraphBundle, budget: AttackBudget, constraint: Constraint,
                      cfg: BbgaConfig, pseudo: np.ndarray | None = None) -> AttackPlan:
    """Black-box meta-gradient baseline: trains on the first partition only,
    no spread filter. The partition count stays at its multi-fold value so the
    training fold is a proper subset of V."""
    overrides = {}
    if cfg.k != 1:
        overrides["k"] = 1
    if cfg.sigma_filter != "off":
        overrides["sigma_filter"] = "off"
    if (cfg.partition_k or cfg.k) <= 1:
        overrides["partition_k"] = 5
    elif cfg.partition_k is None:
        overrides["partition_k"] = cfg.k
    if overrides:
        cfg = BbgaConfig(**{**asdict(cfg), **overrides})
    return _greedy_gradient_attack(g, budget, constraint, cfg, pseudo,
                                   truncate_on_zero=False)


def attack_random(g: GraphBundle, budget: AttackBudget, constraint: Constraint,
                  seed: int) -> AttackPlan:
    """Add `delta` uniformly sampled constraint-valid non-edges."""
    delta = budget.resolve(g.n_edges)
    a = g.adjacency.astype(np.int64).copy()
    candidates = np.argwhere(np.triu(constraint.addition_allowed & (a == 0), k=1))
    if len(candidates) < delta:
        raise AttackError(
            f"valid addition pool exhausted: {len(candidates)} < {delta}")
    rng = np.random.default_rng(seed)
    picks = candidates[rng.choice(len(candidates), size=delta, replace=False)]
    flips, audit = [], []
    for step, (u, v) in enumerate(picks.tolist()):
        a[u, v] = a[v, u] = 1
        flips.append(Flip(step, u, v, 0.0, was_edge=False))
        audit.append({"step": step, "u": u, "v": v, "was_edge": False,
                      "jaccard": constraint.jaccard(u, v), "constraint_ok": True})
    return AttackPlan(flips=flips, adjacency=a, audit=audit,
                      config={"kind": "random", "delta": delta, "eta": constraint.eta},
                      seed=seed)


def attack_dice(g: GraphBundle, budget: AttackBudget, constraint: Constraint,
                labels: np.ndarray, mode: str = "free",
                control_sets: dict[str, np.ndarray] | None = None,
                seed: int = 0) -> AttackPlan:
    """Disconnect-internally / connect-externally attack.

    Each flip tosses a seeded fair coin between removing an existing
    same-label edge and adding a constraint-valid different-label non-edge
    (falling back to the other action when one pool is empty). `control`
    places round(0.1 * delta) flips with both endpoints in the training set
    and the rest with exactly one endpoint in it; `blackbox` is `free` run
    on pseudo-labels.
    """
    if mode not in ("free", "control", "blackbox"):
        raise GraphError(f"bad DICE mode {mode!r}")
    labels = np.asarray(labels, dtype=np.int64)
    delta = budget.resolve(g.n_edges)
    rng = np.random.default_rng(seed)
    a = g.adjacency.astype(np.int64).copy()
    flipped = np.zeros_like(a, dtype=bool)
    same = labels[:, None] == labels[None, :]

    if mode == "control":
        if not control_sets or "train" not in control_sets:
            raise GraphError("control mode needs control_sets={'train': ...}")
        train = np.zeros(g.n_nodes, dtype=bool)
        train[np.asarray(control_sets["train"], dtype=np.int64)] = True
        inside = train[:, None] & train[None, :]
        adjacent = train[:, None] ^ train[None, :]
        n_inside = int(round(0.1 * delta))
        location_masks = [inside] * n_inside + [adjacent] * (delta - n_inside)
    else:
        everywhere = np.ones_like(a, dtype=bool)
        location_masks = [everywhere] * delta

    flips, audit = [], []
    for step in range(delta):
        loc = location_masks[step]
        removable = (a == 1) & same & loc & ~flipped
        addable = (a == 0) & ~same & constraint.addition_allowed & loc & ~flipped
        np.fill_diagonal(removable, False)
        np.fill_diagonal(addable, False)
        do_remove = bool(rng.random() < 0.5)
        if do_remove and not removable.any():
            do_remove = False
        if not do_remove and not addable.any():
            if removable.any():
                do_remove = True
            else:
                raise AttackError(f"DICE pool exhausted at step {step}")
        pool = np.argwhere(np.triu(removable if do_remove else addable, k=1))
        u, v = pool[rng.integers(len(pool))].tolist()
        was_edge = do_remove
        a[u, v] = a[v, u] = 1 - a[u, v]
        flipped[u, v] = flipped[v, u] = True
        flips.append(Flip(step, u, v, 0.0, was_edge))
        audit.append({"step": step, "u": u, "v": v, "was_edge": was_edge,
                      "jaccard": constraint.jaccard(u, v),
                      "constraint_ok": was_edge or constraint.jaccard(u, v) >= constraint.eta})

    return AttackPlan(flips=flips, adjacency=a, audit=audit,
                      config={"kind": f"dice_{mode}", "delta": delta, "eta": constraint.eta},
                      seed=seed)
