"""Per-node topology descriptors: clustering, normalized degree, label agreement."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .simgraph import SampleGraph

NEUTRAL_AGREEMENT = 0.5


@dataclass(frozen=True)
class TopoVector:
    clustering: float
    degree_norm: float
    label_agreement: float

    def as_list(self) -> list[float]:
        return [self.clustering, self.degree_norm, self.label_agreement]


def clustering_coefficient(g: SampleGraph, u: int, nbrs: list[set[int]] | None = None) -> float:
    nbrs = nbrs if nbrs is not None else g.neighbor_sets()
    mine = g.adjacency[u]
    d = len(mine)
    if d < 2:
        return 0.0
    # each neighbor-neighbor edge is seen from both ends
    links = sum(len(nbrs[v] & nbrs[u]) for v in mine) // 2
    return 2.0 * links / (d * (d - 1))


def normalized_degree(g: SampleGraph, u: int) -> float:
    deg = g.degrees
    top = deg.max() if g.n else 0
    return float(deg[u] / top) if top > 0 else 0.0


def two_hop_set(g: SampleGraph, u: int) -> set[int]:
    ball = set(g.adjacency[u])
    for v in g.adjacency[u]:
        ball.update(g.adjacency[v])
    ball.discard(u)
    return ball


def two_hop_label_agreement(g: SampleGraph, u: int, labels, train_mask) -> float:
    """Share of labeled nodes within distance <= 2 that agree with u's reference label.

    The reference label is u's own label when u is a train node, otherwise the
    majority label of the labeled context (ties go to the lowest class).  Labels
    of non-train nodes are never read, u's included.
    """
    context = [v for v in sorted(two_hop_set(g, u)) if train_mask[v]]
    if not context:
        return NEUTRAL_AGREEMENT
    ctx_labels = [int(labels[v]) for v in context]
    if train_mask[u]:
        ref = int(labels[u])
    else:
        counts = Counter(ctx_labels)
        best = max(counts.values())
        ref = min(c for c, k in counts.items() if k == best)
    return sum(1 for lab in ctx_labels if lab == ref) / len(ctx_labels)


def topo_features(g: SampleGraph, labels, train_mask) -> np.ndarray:
    """N x 3 array of [clustering, degree_norm, label_agreement] rows."""
    train_mask = np.asarray(train_mask, dtype=bool)
    # non-train labels are masked out so they cannot leak
    safe_labels = np.where(train_mask, np.asarray(labels), -1)
    nbrs = g.neighbor_sets()
    deg = g.degrees
    top = deg.max() if g.n else 0
    out = np.empty((g.n, 3))
    for u in range(g.n):
        out[u, 0] = clustering_coefficient(g, u, nbrs)
        out[u, 1] = deg[u] / top if top > 0 else 0.0
        out[u, 2] = two_hop_label_agreement(g, u, safe_labels, train_mask)
    return out


def topo_vectors(g: SampleGraph, labels, train_mask) -> list[TopoVector]:
    return [TopoVector(*row) for row in topo_features(g, labels, train_mask).tolist()]
