"""Thresholded cosine-similarity graph over samples."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SampleGraph:
    n: int
    adjacency: tuple[tuple[int, ...], ...]
    tau: float | None
    self_loops_in_attention: bool = True

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return int(self.degrees.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adjacency[u] if u < v]

    def neighbor_sets(self) -> list[set[int]]:
        return [set(a) for a in self.adjacency]

    @cached_property
    def _pairs(self) -> tuple[np.ndarray, np.ndarray]:
        dst, src = [], []
        for u in range(self.n):
            nbrs = set(self.adjacency[u])
            if self.self_loops_in_attention:
                nbrs.add(u)
            for v in sorted(nbrs):
                dst.append(u)
                src.append(v)
        return np.array(dst, dtype=np.int64), np.array(src, dtype=np.int64)

    def attention_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(target, source) index arrays over every attention neighborhood.

        Entries are grouped by target and sorted by source; the self-loop is
        included when ``self_loops_in_attention`` is set.
        """
        return self._pairs

    def fingerprint(self) -> dict:
        return {"n": self.n, "edges": self.num_edges, "tau": self.tau}


def similarity(xi, xj) -> float:
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if xi.shape != xj.shape:
        raise ValueError(f"dimension mismatch: {xi.shape} vs {xj.shape}")
    ni, nj = np.linalg.norm(xi), np.linalg.norm(xj)
    if ni == 0 or nj == 0:
        return 0.0
    return float(np.clip(xi @ xj / (ni * nj), -1.0, 1.0))


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    unit = x / safe[:, None]
    s = np.clip(unit @ unit.T, -1.0, 1.0)
    zero = norms == 0
    s[zero, :] = 0.0
    s[:, zero] = 0.0
    return s


def from_edges(n: int, edges, tau: float | None = None, self_loops: bool = True) -> SampleGraph:
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        if u == v:
            continue
        adj[u].add(v)
        adj[v].add(u)
    return SampleGraph(n, tuple(tuple(sorted(a)) for a in adj), tau, self_loops)


def empty_graph(n: int, self_loops: bool = True) -> SampleGraph:
    return SampleGraph(n, tuple(() for _ in range(n)), None, self_loops)


def build_graph(features: np.ndarray, tau: float, self_loops: bool = True) -> SampleGraph:
    """Edge {i, j} for i != j iff cosine(x_i, x_j) > tau.

    Zero-feature rows have similarity 0 to everything, so they only connect
    when tau < 0.
    """
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    s = cosine_matrix(features)
    mask = s > tau
    np.fill_diagonal(mask, False)
    n = s.shape[0]
    adjacency = tuple(tuple(np.flatnonzero(mask[u]).tolist()) for u in range(n))
    return SampleGraph(n, adjacency, float(tau), self_loops)


def graph_stats(g: SampleGraph) -> dict:
    deg = g.degrees
    edges = g.num_edges
    density = 2.0 * edges / (g.n * (g.n - 1)) if g.n >= 2 else 0.0
    hist = Counter(deg.tolist())
    return {
        "edges": edges,
        "density": density,
        "isolated_count": int((deg == 0).sum()),
        "degree_histogram": dict(sorted(hist.items())),
    }


def export_edges(g: SampleGraph, path: str | Path) -> None:
    lines = [f"# n={g.n} tau={g.tau}"]
    lines += [f"{u} {v}" for u, v in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edges(path: str | Path) -> SampleGraph:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    head = dict(kv.split("=", 1) for kv in text[0].lstrip("#").split())
    tau = None if head["tau"] == "None" else float(head["tau"])
    edges = [tuple(int(t) for t in line.split()) for line in text[1:] if line.strip()]
    return from_edges(int(head["n"]), edges, tau)
