"""Walking access to health providers over a street graph."""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .geo import SpatialIndex, sample_points, stable_seed

log = logging.getLogger(__name__)

CATEGORIES = ("hospital", "center", "post")


@dataclass(frozen=True)
class HealthProvider:
    id: str
    x: float
    y: float
    category: str


def classify_providers(raw: Sequence[tuple], label_rules: Sequence[tuple[str, str]]):
    """Map raw labels to complexity categories.

    ``label_rules`` is an ordered list of ``(regex, category)``; the first rule
    that matches the lower-cased label wins.  Returns ``(providers, discarded)``.
    """
    compiled = []
    for pattern, cat in label_rules:
        if cat not in CATEGORIES:
            raise ValueError(f"unknown provider category {cat!r}")
        compiled.append((re.compile(pattern), cat))
    kept, discarded = [], 0
    for pid, (x, y), label in raw:
        text = str(label).strip().lower()
        cat = next((c for rx, c in compiled if rx.search(text)), None)
        if cat is None:
            discarded += 1
            continue
        kept.append(HealthProvider(str(pid), float(x), float(y), cat))
    return kept, discarded


class StreetGraph:
    """Undirected street graph; parallel edges collapse to the shortest one."""

    def __init__(self, nodes: Mapping, edges: Sequence[tuple]):
        self.node_ids = list(nodes)
        pos = {n: i for i, n in enumerate(self.node_ids)}
        self.coords = np.array([nodes[n] for n in self.node_ids], dtype=float).reshape(-1, 2)
        best = {}
        for a, b, length in edges:
            if a == b:
                continue
            if not length > 0:
                raise ValueError(f"edge {a}-{b} has non-positive length {length}")
            i, j = pos[a], pos[b]
            key = (min(i, j), max(i, j))
            best[key] = min(best.get(key, math.inf), float(length))
        self.n_edges = len(best)
        if best:
            ij = np.array(list(best), dtype=int)
            w = np.array(list(best.values()))
            rows = np.concatenate([ij[:, 0], ij[:, 1]])
            cols = np.concatenate([ij[:, 1], ij[:, 0]])
            self.matrix = csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(len(pos),) * 2)
        else:
            self.matrix = csr_matrix((len(pos), len(pos)))
        self._snap = SpatialIndex(dict(enumerate(map(tuple, self.coords))))

    def snap(self, xy) -> tuple[int, float]:
        """Nearest node index and straight-line distance to it."""
        j, d = self._snap.knn(xy, 1)[0]
        return j, d

    def distances_from(self, sources) -> np.ndarray:
        sources = np.atleast_1d(np.asarray(sources, dtype=int))
        return np.atleast_2d(dijkstra(self.matrix, directed=False, indices=sources))


def minutes(meters, speed_kmh: float):
    return np.asarray(meters) * 60.0 / (speed_kmh * 1000.0)


def shortest_path_time(graph: StreetGraph, origin, target, speed_kmh: float = 5.0) -> float:
    """Walking minutes: snap-in + network path + snap-out.  ``inf`` if unreachable."""
    if speed_kmh <= 0:
        raise ValueError("speed must be positive")
    i, di = graph.snap(origin)
    j, dj = graph.snap(target)
    path = graph.distances_from(i)[0, j]
    return float(minutes(di + path + dj, speed_kmh))


@dataclass
class BlockAccess:
    block_id: str
    times: dict                       # category -> mean minutes over sample points (nan if absent)
    delta: float                      # median over points of the any-category minimum
    nearest: dict                     # category -> provider id nearest to the first sample point
    point_minima: list = field(default_factory=list)
    unreachable: bool = False
    degenerate: bool = False
    pruning_fallbacks: int = 0


class AccessModel:
    """Provider indexes plus cached network distances from provider nodes."""

    def __init__(self, providers: Sequence[HealthProvider], graph: StreetGraph, speed_kmh=5.0, k=10):
        self.graph = graph
        self.speed = speed_kmh
        self.k = k
        self.by_cat = {}
        for cat in CATEGORIES:
            members = sorted((p for p in providers if p.category == cat), key=lambda p: p.id)
            if members:
                self.by_cat[cat] = members
        self.index = {c: SpatialIndex({p.id: (p.x, p.y) for p in m}) for c, m in self.by_cat.items()}
        self.provider = {p.id: p for m in self.by_cat.values() for p in m}
        self.snap = {pid: graph.snap((p.x, p.y)) for pid, p in self.provider.items()}
        nodes = sorted({n for n, _ in self.snap.values()})
        self._row = {n: r for r, n in enumerate(nodes)}
        self._dist = graph.distances_from(nodes) if nodes else np.empty((0, len(graph.node_ids)))

    def time_to(self, pid, node, snap_dist) -> float:
        pnode, pdist = self.snap[pid]
        path = self._dist[self._row[pnode], node]
        return float(minutes(snap_dist + path + pdist, self.speed))

    def point_times(self, xy, k=None):
        """Per-category minimum minutes from one point (candidates: Euclidean k-NN)."""
        k = self.k if k is None else k
        node, sd = self.graph.snap(xy)
        out, nearest, fallbacks = {}, {}, 0
        for cat, idx in self.index.items():
            cand = [pid for pid, _ in idx.knn(xy, k)]
            times = [(self.time_to(pid, node, sd), pid) for pid in cand]
            best = min(times)
            if not math.isfinite(best[0]) and len(cand) < len(idx):
                fallbacks += 1
                best = min((self.time_to(p.id, node, sd), p.id) for p in self.by_cat[cat])
            out[cat], nearest[cat] = best
        return out, nearest, fallbacks

    def block(self, block_id, geom, seed, n_points=5, k=None) -> BlockAccess:
        pts, degenerate = sample_points(geom, n_points, stable_seed(seed, ("access", block_id)))
        per_cat = {c: [] for c in CATEGORIES}
        minima, nearest0, fallbacks = [], {}, 0
        for i, xy in enumerate(pts):
            t, near, fb = self.point_times(xy, k)
            fallbacks += fb
            if i == 0:
                nearest0 = near
            for c, v in t.items():
                per_cat[c].append(v)
            minima.append(min(t.values()) if t else math.inf)
        times = {c: (float(np.mean(v)) if v else float("nan")) for c, v in per_cat.items()}
        delta = float(np.median(minima))
        return BlockAccess(str(block_id), times, delta, nearest0, minima,
                           not math.isfinite(delta), degenerate, fallbacks)


def block_travel_times(blocks: Mapping, providers, graph: StreetGraph, speed_kmh=5.0, seed=0,
                       k=10, n_points=5, threads=1) -> dict:
    """BlockAccess for every block geometry in ``blocks`` (id -> polygon)."""
    model = AccessModel(providers, graph, speed_kmh, k)
    ids = sorted(blocks, key=str)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            res = list(pool.map(lambda b: model.block(b, blocks[b], seed, n_points), ids))
    else:
        res = [model.block(b, blocks[b], seed, n_points) for b in ids]
    misses = sum(r.pruning_fallbacks for r in res)
    if misses:
        log.info("block_travel_times: %d k-NN candidate sets fully unreachable", misses)
    return {r.block_id: r for r in res}
