"""Graph data model, bundle I/O, splits, Jaccard similarity and synthetic graphs.

Everything here works on dense numpy arrays: adjacency matrices are
symmetric {0,1} with a zero diagonal, features are {0,1}. Dense is fine at
the scales this package targets (a few thousand nodes) and the attack code
needs dense N x N score matrices anyway.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, bundles or configs."""


@dataclass(frozen=True)
class GraphBundle:
    """A node-attributed undirected graph plus optional labels and splits.

    adjacency: (N, N) symmetric binary, zero diagonal.
    features:  (N, F) binary.
    labels:    optional (N,) int class ids.
    splits:    name -> sorted int array of node ids; pairwise disjoint.
    """

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def __post_init__(self):
        a = self.adjacency
        x = self.features
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be square")
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise GraphError("features must have one row per node")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency must have zero diagonal")
        if not np.isin(a, (0, 1)).all():
            raise GraphError("adjacency entries must be 0/1")
        if not np.isin(x, (0, 1)).all():
            raise GraphError("feature entries must be 0/1")
        if self.labels is not None:
            lab = self.labels
            if lab.shape != (a.shape[0],):
                raise GraphError("labels must be a length-N vector")
            if lab.min(initial=0) < 0:
                raise GraphError("labels must be nonnegative")
        seen: set[int] = set()
        for name, ids in self.splits.items():
            if len(ids) and (ids.min() < 0 or ids.max() >= a.shape[0]):
                raise GraphError(f"split {name!r} has out-of-range node ids")
            s = set(int(i) for i in ids)
            if seen & s:
                raise GraphError("splits must be pairwise disjoint")
            seen |= s

    def n_classes(self) -> int:
        if self.labels is None:
            raise GraphError("bundle has no labels")
        return int(self.labels.max()) + 1

    def with_adjacency(self, a: np.ndarray) -> "GraphBundle":
        return replace(self, adjacency=a)

    def with_splits(self, splits: dict[str, np.ndarray]) -> "GraphBundle":
        return replace(self, splits=splits)


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.10
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.train_fraction <= 0 or self.val_fraction <= 0:
            raise GraphError("split fractions must be positive")
        if self.train_fraction + self.val_fraction >= 1:
            raise GraphError("train + val fractions must be < 1")


@dataclass(frozen=True)
class SbmConfig:
    """Stochastic block model with per-block one-hot feature prototypes."""

    block_sizes: tuple[int, ...]
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 32
    feature_flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.block_sizes:
            raise GraphError("block_sizes must be nonempty")
        if not (0 <= self.p_out < self.p_in <= 1):
            raise GraphError("need 0 <= p_out < p_in <= 1")
        if self.feature_dim < len(self.block_sizes):
            raise GraphError("feature_dim must be >= number of blocks")


def load_bundle(path: str | Path) -> GraphBundle:
    """Load a graph bundle directory (meta.json, edges.csv, features.csv, ...)."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise GraphError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    n = int(meta["n_nodes"])
    f = int(meta["n_features"])

    edges_path = path / "edges.csv"
    if not edges_path.exists():
        raise GraphError(f"missing {edges_path}")
    adjacency = np.zeros((n, n), dtype=np.int64)
    for line in edges_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        u_s, v_s = line.split(",")
        u, v = int(u_s), int(v_s)
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge endpoint out of range: ({u},{v})")
        if u == v:
            raise GraphError(f"self-loop in edge list: ({u},{v})")
        adjacency[u, v] = 1
        adjacency[v, u] = 1

    features_path = path / "features.csv"
    if not features_path.exists():
        raise GraphError(f"missing {features_path}")
    features = np.loadtxt(features_path, delimiter=",", dtype=np.int64, ndmin=2)
    if features.shape != (n, f):
        raise GraphError(f"features shape {features.shape} != ({n},{f})")
    if not np.isin(features, (0, 1)).all():
        raise GraphError("non-binary feature value")

    labels = None
    labels_path = path / "labels.csv"
    if labels_path.exists():
        labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
        if labels.shape != (n,):
            raise GraphError("labels.csv must have one line per node")

    splits: dict[str, np.ndarray] = {}
    splits_path = path / "splits.json"
    if splits_path.exists():
        raw = json.loads(splits_path.read_text())
        splits = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in raw.items()}

    return GraphBundle(adjacency=adjacency, features=features, labels=labels, splits=splits)


def save_bundle(g: GraphBundle, path: str | Path) -> None:
    """Write a bundle in the same directory format load_bundle reads."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_classes = g.n_classes() if g.labels is not None else None
    (path / "meta.json").write_text(json.dumps(
        {"n_nodes": g.n_nodes, "n_features": g.n_features, "n_classes": n_classes},
        sort_keys=True))
    us, vs = np.nonzero(np.triu(g.adjacency, k=1))
    (path / "edges.csv").write_text(
        "".join(f"{u},{v}\n" for u, v in zip(us.tolist(), vs.tolist())))
    (path / "features.csv").write_text(
        "\n".join(",".join(str(int(b)) for b in row) for row in g.features) + "\n")
    if g.labels is not None:
        (path / "labels.csv").write_text(
            "\n".join(str(int(c)) for c in g.labels) + "\n")
    if g.splits:
        (path / "splits.json").write_text(json.dumps(
            {k: [int(i) for i in v] for k, v in sorted(g.splits.items())}, sort_keys=True))


def _components(adjacency: np.ndarray) -> list[list[int]]:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.nonzero(adjacency[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(sorted(comp))
    return comps


def largest_connected_component(g: GraphBundle) -> GraphBundle:
    """Induced subgraph on the largest component, densely re-indexed.

    Ties between equal-size components go to the one containing the smallest
    original node id.
    """
    comps = _components(g.adjacency)
    best = max(comps, key=lambda c: (len(c), -c[0]))
    keep = np.asarray(best, dtype=np.int64)
    old_to_new = {int(o): i for i, o in enumerate(keep)}
    splits = {
        name: np.asarray(sorted(old_to_new[int(i)] for i in ids if int(i) in old_to_new),
                         dtype=np.int64)
        for name, ids in g.splits.items()
    }
    return GraphBundle(
        adjacency=g.adjacency[np.ix_(keep, keep)],
        features=g.features[keep],
        labels=None if g.labels is None else g.labels[keep],
        splits=splits,
    )


def random_split(g: GraphBundle, cfg: SplitConfig) -> GraphBundle:
    """Attach seeded train/val/test splits; sizes floor(N * fraction), rest to test."""
    n = g.n_nodes
    n_train = int(np.floor(n * cfg.train_fraction))
    n_val = int(np.floor(n * cfg.val_fraction))
    perm = np.random.default_rng(cfg.seed).permutation(n)
    splits = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    return g.with_splits(splits)


def jaccard_similarity(x1: np.ndarray, x2: np.ndarray) -> float:
    """Jaccard similarity of two binary feature rows; 0 when both rows are all-zero."""
    if x1.shape != x2.shape:
        raise GraphError("jaccard: dimension mismatch")
    m11 = int(np.sum((x1 == 1) & (x2 == 1)))
    denom = int(np.sum((x1 == 1) | (x2 == 1)))
    return m11 / denom if denom else 0.0


def jaccard_matrix(x: np.ndarray) -> np.ndarray:
    """All-pairs Jaccard similarity of binary feature rows (both-zero pairs -> 0)."""
    xf = x.astype(np.float64)
    inter = xf @ xf.T
    ones = xf.sum(axis=1)
    union = ones[:, None] + ones[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        j = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
    return j


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization of a + I.

    Accepts continuous (relaxed) adjacencies so gradient checks can perturb
    single entries.
    """
    a_tilde = a.astype(np.float64) + np.eye(a.shape[0])
    d = a_tilde.sum(axis=1)
    if np.any(d <= 0):
        raise GraphError("degree-normalization: nonpositive row sum")
    s = 1.0 / np.sqrt(d)
    return a_tilde * s[:, None] * s[None, :]


def generate_sbm(cfg: SbmConfig) -> GraphBundle:
    """Block-structured random graph with noisy one-hot block features."""
    rng = np.random.default_rng(cfg.seed)
    sizes = list(cfg.block_sizes)
    n = sum(sizes)
    blocks = np.repeat(np.arange(len(sizes)), sizes)

    same = blocks[:, None] == blocks[None, :]
    probs = np.where(same, cfg.p_in, cfg.p_out)
    upper = rng.random((n, n)) < probs
    adjacency = np.triu(upper, k=1).astype(np.int64)
    adjacency = adjacency + adjacency.T

    width = cfg.feature_dim // len(sizes)
    prototypes = np.zeros((len(sizes), cfg.feature_dim), dtype=np.int64)
    for b in range(len(sizes)):
        prototypes[b, b * width:(b + 1) * width] = 1
    features = prototypes[blocks]
    flips = rng.random((n, cfg.feature_dim)) < cfg.feature_flip_prob
    features = np.where(flips, 1 - features, features)

    return GraphBundle(adjacency=adjacency, features=features, labels=blocks.astype(np.int64))
