"""Planar geometry: equal-area projection, Voronoi cells, overlays, sampling, k-NN.

Everything downstream of ingest works in projected metres.  Geometries are
plain shapely objects; points are ``(x, y)`` tuples or ``(n, 2)`` arrays.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint, Point, Polygon
from shapely.geometry.base import BaseGeometry

from .errors import DuplicateSite, EmptyIndex, EmptySites, InvalidGeometry

AUTHALIC_RADIUS = 6371007.181


@dataclass(frozen=True)
class AlbersEqualArea:
    """Spherical Albers conic equal-area projection (Snyder, eqs. 14-1..14-28)."""

    lon0: float = -64.0
    lat0: float = -32.0
    lat1: float = -24.0
    lat2: float = -40.0
    radius: float = AUTHALIC_RADIUS

    def _constants(self):
        p1, p2, p0 = map(math.radians, (self.lat1, self.lat2, self.lat0))
        n = (math.sin(p1) + math.sin(p2)) / 2.0
        if abs(n) < 1e-12:
            raise ValueError("standard parallels symmetric about the equator")
        c = math.cos(p1) ** 2 + 2 * n * math.sin(p1)
        rho0 = self.radius * math.sqrt(c - 2 * n * math.sin(p0)) / n
        return n, c, rho0

    def forward(self, lon, lat):
        n, c, rho0 = self._constants()
        lam = np.radians(np.asarray(lon, dtype=float) - self.lon0)
        phi = np.radians(np.asarray(lat, dtype=float))
        rho = self.radius * np.sqrt(c - 2 * n * np.sin(phi)) / n
        theta = n * lam
        return rho * np.sin(theta), rho0 - rho * np.cos(theta)

    def inverse(self, x, y):
        n, c, rho0 = self._constants()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sign = 1.0 if n > 0 else -1.0
        rho = sign * np.hypot(x, rho0 - y)
        theta = np.arctan2(sign * x, sign * (rho0 - y))
        arg = (c - (rho * n / self.radius) ** 2) / (2 * n)
        phi = np.arcsin(np.clip(arg, -1.0, 1.0))
        return np.degrees(theta / n) + self.lon0, np.degrees(phi)

    def project(self, geom: BaseGeometry) -> BaseGeometry:
        def fwd(coords):
            x, y = self.forward(coords[:, 0], coords[:, 1])
            return np.column_stack([x, y])

        return shapely.transform(geom, fwd)

    def unproject(self, geom: BaseGeometry) -> BaseGeometry:
        def inv(coords):
            lon, lat = self.inverse(coords[:, 0], coords[:, 1])
            return np.column_stack([lon, lat])

        return shapely.transform(geom, inv)


def make_polygon(exterior: Sequence, holes: Iterable[Sequence] = ()) -> Polygon:
    """Build a polygon and reject invalid rings (self-intersection, zero area)."""
    poly = Polygon(exterior, list(holes))
    check_polygon(poly)
    return poly


def check_polygon(poly: BaseGeometry) -> None:
    if poly.is_empty or not poly.is_valid:
        reason = shapely.is_valid_reason(poly) if not poly.is_empty else "empty"
        raise InvalidGeometry(f"invalid polygon: {reason}")


@dataclass(frozen=True)
class VoronoiDiagram:
    sites: dict
    cells: dict
    clip: BaseGeometry

    def cell_index(self) -> "PolygonIndex":
        return PolygonIndex(self.cells)


def voronoi_partition(sites: Mapping[Hashable, tuple], clip: BaseGeometry) -> VoronoiDiagram:
    """Voronoi cells of ``sites`` clipped to ``clip``.

    Raises EmptySites / DuplicateSite, and InvalidGeometry when a site lies
    outside the clip boundary.
    """
    if not sites:
        raise EmptySites("voronoi_partition needs at least one site")
    check_polygon(clip)
    ids = list(sites)
    coords = np.array([sites[i] for i in ids], dtype=float).reshape(-1, 2)
    seen = {}
    for sid, xy in zip(ids, map(tuple, coords)):
        if xy in seen:
            raise DuplicateSite(f"sites {seen[xy]!r} and {sid!r} share coordinates {xy}")
        seen[xy] = sid
    outside = [i for i, c in zip(ids, coords) if not clip.covers(Point(c))]
    if outside:
        raise InvalidGeometry(f"sites outside clip boundary: {outside[:10]}")

    if len(ids) == 1:
        return VoronoiDiagram(dict(zip(ids, map(tuple, coords))), {ids[0]: clip}, clip)

    raw = shapely.voronoi_polygons(MultiPoint(coords), extend_to=clip, ordered=True)
    cells = {}
    for sid, cell in zip(ids, raw.geoms):
        cells[sid] = cell.intersection(clip)
    return VoronoiDiagram(dict(zip(ids, map(tuple, coords))), cells, clip)


def intersection_area(a: BaseGeometry, b: BaseGeometry) -> float:
    check_polygon(a)
    check_polygon(b)
    if not a.intersects(b):
        return 0.0
    return float(a.intersection(b).area)


class PolygonIndex:
    """STR-tree over polygon bounding boxes, keyed by caller ids."""

    def __init__(self, polygons: Mapping[Hashable, BaseGeometry]):
        self.ids = list(polygons)
        self.geoms = [polygons[i] for i in self.ids]
        self._tree = shapely.STRtree(self.geoms)

    def overlaps(self, geom: BaseGeometry) -> list[tuple[Hashable, float]]:
        """``(id, intersection area)`` for every indexed polygon sharing area with ``geom``."""
        out = []
        for j in sorted(self._tree.query(geom)):
            area = geom.intersection(self.geoms[j]).area
            if area > 0:
                out.append((self.ids[j], float(area)))
        return out


def overlay_shares(blocks: Mapping[Hashable, BaseGeometry], diagram: VoronoiDiagram, min_share: float = 1e-9):
    """Map block id -> list of (cell id, share of block area inside that cell).

    Overlaps below ``min_share`` of the block are rounding slivers from
    reprojected boundaries and are dropped.
    """
    index = diagram.cell_index()
    shares = {}
    for bid, geom in blocks.items():
        area = geom.area
        if area <= 0:
            shares[bid] = []
            continue
        shares[bid] = [(cid, a / area) for cid, a in index.overlaps(geom) if a / area >= min_share]
    return shares


def stable_seed(seed: int, key: Hashable) -> np.random.SeedSequence:
    """Seed sequence keyed by ``key`` so draws don't depend on iteration order."""
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])


def sample_points(poly: BaseGeometry, n: int, seed, rel_eps: float = 1e-12):
    """Uniform rejection sample of ``n`` points strictly inside ``poly``.

    Returns ``(points, degenerate)``; a polygon with (near) zero area yields its
    centroid repeated ``n`` times and ``degenerate=True``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    minx, miny, maxx, maxy = poly.bounds
    box_area = (maxx - minx) * (maxy - miny)
    if poly.is_empty or box_area <= 0 or poly.area <= rel_eps * max(box_area, 1.0):
        c = poly.centroid if not poly.is_empty else Point(minx, miny)
        return np.tile([c.x, c.y], (n, 1)), True

    shapely.prepare(poly)
    out = np.empty((0, 2))
    batch = max(16, int(2 * n * box_area / poly.area))
    for _ in range(1000):
        cand = rng.uniform((minx, miny), (maxx, maxy), size=(batch, 2))
        inside = shapely.contains_xy(poly, cand[:, 0], cand[:, 1])
        out = np.vstack([out, cand[inside]])
        if len(out) >= n:
            return out[:n], False
    c = poly.centroid
    return np.tile([c.x, c.y], (n, 1)), True


class SpatialIndex:
    """Immutable k-d tree over labelled points with deterministic tie-breaking."""

    def __init__(self, points: Mapping[Hashable, tuple]):
        self.ids = list(points)
        self.coords = np.array([points[i] for i in self.ids], dtype=float).reshape(-1, 2)
        self._tree = cKDTree(self.coords) if self.ids else None

    def __len__(self):
        return len(self.ids)

    def knn(self, q, k: int) -> list[tuple[Hashable, float]]:
        """``min(k, len)`` nearest ``(id, distance)`` pairs, ties by ascending id."""
        if not self.ids:
            raise EmptyIndex("knn on an empty index")
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(k, len(self.ids))
        q = np.asarray(q, dtype=float)
        dist, _ = self._tree.query(q, k=k)
        radius = float(np.max(dist))
        # every point within the k-th distance, so ties at the cut are resolved by id
        cand = self._tree.query_ball_point(q, radius * (1 + 1e-12) + 1e-12)
        d = np.hypot(*(self.coords[cand] - q).T)
        ranked = sorted(zip(d.tolist(), cand), key=lambda t: (t[0], self.ids[t[1]]))
        return [(self.ids[j], dd) for dd, j in ranked[:k]]


def knn(index: SpatialIndex, q, k: int):
    return index.knn(q, k)
