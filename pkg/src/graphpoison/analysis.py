"""Perturbation-distribution metrics and attack comparison tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import GraphBundle


@dataclass(frozen=True)
class LocalPtbReport:
    """Flip rates relative to a node set; rates may exceed 1 when an attack
    concentrates flips around a small set."""

    set_name: str
    global_rate: float
    inside_rate: float
    adjacent_rate: float
    n_flips: int
    n_flips_inside: int
    n_flips_adjacent: int
    n_clean_edges: int
    n_clean_edges_inside: int
    n_clean_edges_adjacent: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def local_perturbation_rates(clean: GraphBundle, perturbed: np.ndarray,
                             node_set: np.ndarray,
                             set_name: str = "train") -> LocalPtbReport:
    """Flip counts inside / adjacent to `node_set`, each over the matching
    clean edge count. Inside means both endpoints in the set; adjacent means
    exactly one. Zero denominators yield inf."""
    a0 = clean.adjacency
    member = np.zeros(clean.n_nodes, dtype=bool)
    member[np.asarray(node_set, dtype=np.int64)] = True
    inside = member[:, None] & member[None, :]
    adjacent = member[:, None] ^ member[None, :]

    diff = np.triu(a0 != perturbed, k=1)
    edges = np.triu(a0 == 1, k=1)

    def rate(num: int, den: int) -> float:
        return num / den if den else math.inf

    n_flips = int(diff.sum())
    n_in = int((diff & inside).sum())
    n_adj = int((diff & adjacent).sum())
    e_all = int(edges.sum())
    e_in = int((edges & inside).sum())
    e_adj = int((edges & adjacent).sum())
    return LocalPtbReport(
        set_name=set_name,
        global_rate=rate(n_flips, e_all),
        inside_rate=rate(n_in, e_in),
        adjacent_rate=rate(n_adj, e_adj),
        n_flips=n_flips, n_flips_inside=n_in, n_flips_adjacent=n_adj,
        n_clean_edges=e_all, n_clean_edges_inside=e_in, n_clean_edges_adjacent=e_adj,
    )


def relative_gap(other: float, best: float) -> float:
    """(other - best) / best, as a percentage."""
    return (other - best) / best * 100.0


def format_gap(gap_pct: float) -> str:
    """Two decimals, truncated toward zero rather than rounded."""
    truncated = math.trunc(gap_pct * 100) / 100
    return f"{truncated:.2f}"


def compare_attacks(results: list[dict]) -> list[dict]:
    """Rank attacks by mean misclassification per rate.

    Each input row needs attack, rate and a list of per-trial
    misclassification values; output rows add mean, std and the relative gap
    to the best attack at the same rate (best row's gap is 0).
    """
    rows = []
    for r in results:
        vals = np.asarray(r["misclassification"], dtype=np.float64)
        rows.append({"attack": r["attack"], "rate": r["rate"],
                     "mean": float(vals.mean()), "std": float(vals.std())})
    out = []
    for rate in sorted({r["rate"] for r in rows}):
        group = [r for r in rows if r["rate"] == rate]
        best = max(r["mean"] for r in group)
        for r in sorted(group, key=lambda r: -r["mean"]):
            gap = 0.0 if r["mean"] == best else relative_gap(r["mean"], best)
            out.append({**r, "gap_pct": format_gap(gap)})
    return out
