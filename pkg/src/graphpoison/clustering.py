"""Pseudo-label generation: spectral clustering + Calinski-Harabasz selection.

The affinity comes from node features through an RBF kernel. Candidate
cluster counts are scored by the Calinski-Harabasz index evaluated on the
input points: per-k spectral embeddings have different dimensionality and
their CH values are not comparable across k (a k-dim embedding of more than
k well-separated groups collapses clusters and inflates the score).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphBundle, GraphError


@dataclass(frozen=True)
class ClusterConfig:
    gamma: float = 0.001
    candidate_k: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8, 9, 10)
    kmeans_restarts: int = 5
    kmeans_iters: int = 100
    seed: int = 0
    mix_adjacency: bool = False  # average the binary adjacency into the affinity

    def __post_init__(self):
        if self.gamma <= 0:
            raise GraphError("gamma must be positive")
        if any(k < 2 for k in self.candidate_k) or not self.candidate_k:
            raise GraphError("candidate_k values must be >= 2")


def rbf_affinity(x: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||x_i - x_j||^2), symmetric with unit diagonal."""
    if gamma <= 0:
        raise GraphError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    w = np.exp(-gamma * d2)
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return w


def spectral_embed(affinity: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k bottom eigenvectors of the normalized Laplacian, unit-normalized."""
    n = affinity.shape[0]
    if k >= n:
        raise GraphError("spectral_embed: need k < N")
    deg = affinity.sum(axis=1)
    if np.any(deg <= 0):
        raise GraphError("spectral_embed: zero-degree row")
    s = 1.0 / np.sqrt(deg)
    l_sym = np.eye(n) - affinity * s[:, None] * s[None, :]
    l_sym = 0.5 * (l_sym + l_sym.T)
    eigvals, eigvecs = np.linalg.eigh(l_sym)
    emb = eigvecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    return emb / np.maximum(norms, 1e-300)


def _farthest_first_centers(points: np.ndarray, k: int,
                            rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((points - points[centers[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        centers.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[centers].copy()


def _lloyd(points: np.ndarray, centers: np.ndarray, iters: int):
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = points[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                # revive an empty cluster at the point farthest from its center
                worst = int(np.argmax(d2[np.arange(len(points)), assign]))
                new_centers[j] = points[worst]
        if np.allclose(new_centers, centers):
            centers = new_centers
            break
        centers = new_centers
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(len(points)), assign].sum())
    return assign, wcss


def kmeans(points: np.ndarray, k: int, cfg: ClusterConfig) -> np.ndarray:
    """Lloyd's algorithm, farthest-first seeded, best of cfg.kmeans_restarts by WCSS."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise GraphError("kmeans: empty input")
    if k > points.shape[0]:
        raise GraphError("kmeans: k > number of points")
    best_assign, best_wcss = None, np.inf
    for r in range(cfg.kmeans_restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, k, r]))
        centers = _farthest_first_centers(points, k, rng)
        assign, wcss = _lloyd(points, centers, cfg.kmeans_iters)
        if wcss < best_wcss:
            best_assign, best_wcss = assign, wcss
    return np.asarray(best_assign, dtype=np.int64)


def calinski_harabasz(points: np.ndarray, labels: np.ndarray) -> float:
    """Between/within dispersion ratio; +inf when within-dispersion is zero."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.unique(labels)
    c = len(ids)
    n = len(points)
    if c < 2:
        raise GraphError("calinski_harabasz: need at least 2 clusters")
    mu = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for j in ids:
        members = points[labels == j]
        mj = members.mean(axis=0)
        between += len(members) * float(((mj - mu) ** 2).sum())
        within += float(((members - mj) ** 2).sum())
    if within == 0.0:
        return float("inf")
    return (between / (c - 1)) / (within / (n - c))


def _contiguous(labels: np.ndarray) -> np.ndarray:
    _, out = np.unique(labels, return_inverse=True)
    return out.astype(np.int64)


def cluster_features(x: np.ndarray, cfg: ClusterConfig,
                     adjacency: np.ndarray | None = None):
    """Spectral clustering over a feature matrix with CH-selected cluster count.

    Returns (labels, report) where report maps each candidate k to its CH
    score and records the chosen k.
    """
    w = rbf_affinity(x, cfg.gamma)
    if cfg.mix_adjacency:
        if adjacency is None:
            raise GraphError("mix_adjacency requires an adjacency matrix")
        w = 0.5 * (w + adjacency.astype(np.float64))
    best = None
    scores: dict[int, float] = {}
    for k in cfg.candidate_k:
        if k >= x.shape[0]:
            continue
        emb = spectral_embed(w, k)
        labels = kmeans(emb, k, cfg)
        if len(np.unique(labels)) < 2:
            continue
        ch = calinski_harabasz(np.asarray(x, dtype=np.float64), labels)
        scores[k] = ch
        if best is None or ch > best[0]:
            best = (ch, k, labels)
    if best is None:
        raise GraphError("cluster_features: no usable candidate k")
    report = {"chosen_k": best[1], "ch_scores": scores}
    return _contiguous(best[2]), report


def pseudo_labels(g: GraphBundle, cfg: ClusterConfig) -> np.ndarray:
    labels, _ = cluster_features(g.features.astype(np.float64), cfg,
                                 adjacency=g.adjacency)
    return labels


def pseudo_labels_with_report(g: GraphBundle, cfg: ClusterConfig):
    return cluster_features(g.features.astype(np.float64), cfg, adjacency=g.adjacency)
