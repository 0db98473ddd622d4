import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon, box

from chppi.errors import DuplicateSite, EmptyIndex, EmptySites, InvalidGeometry
from chppi.geo import (AlbersEqualArea, PolygonIndex, SpatialIndex, intersection_area, make_polygon,
                       overlay_shares, sample_points, stable_seed, voronoi_partition)

# R^2 * dlon * (sin(lat2) - sin(lat1)) for lon -65..-64, lat -30..-29, evaluated with mpmath
ONE_DEGREE_CELL_M2 = 10761236796.493618


def test_albers_round_trip():
    proj = AlbersEqualArea()
    lon = np.linspace(-75, -53, 41)
    lat = np.linspace(-55, -21, 41)
    x, y = proj.forward(lon, lat)
    lo, la = proj.inverse(x, y)
    np.testing.assert_allclose(lo, lon, atol=1e-9)
    np.testing.assert_allclose(la, lat, atol=1e-9)


def test_albers_preserves_area():
    proj = AlbersEqualArea()
    lons = np.linspace(-65, -64, 201)
    lats = np.linspace(-30, -29, 201)
    ring = ([(lo, -30) for lo in lons] + [(-64, la) for la in lats[1:]]
            + [(lo, -29) for lo in lons[::-1][1:]] + [(-65, la) for la in lats[::-1][1:]])
    area = proj.project(Polygon(ring)).area
    assert area == pytest.approx(ONE_DEGREE_CELL_M2, rel=1e-6)


def test_make_polygon_rejects_bowtie():
    with pytest.raises(InvalidGeometry):
        make_polygon([(0, 0), (1, 1), (1, 0), (0, 1)])
    with pytest.raises(InvalidGeometry):
        intersection_area(box(0, 0, 1, 1), Polygon([(0, 0), (1, 1), (1, 0), (0, 1)]))


def test_intersection_area_hand_values():
    assert intersection_area(box(0, 0, 2, 2), box(1, 1, 3, 3)) == 1.0
    assert intersection_area(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0
    ring = make_polygon([(0, 0), (4, 0), (4, 4), (0, 4)], [[(1, 1), (3, 1), (3, 3), (1, 3)]])
    assert intersection_area(ring, box(0, 0, 4, 4)) == 12.0


def test_voronoi_errors():
    clip = box(0, 0, 10, 10)
    with pytest.raises(EmptySites):
        voronoi_partition({}, clip)
    with pytest.raises(DuplicateSite):
        voronoi_partition({"a": (1, 1), "b": (1, 1)}, clip)
    with pytest.raises(InvalidGeometry):
        voronoi_partition({"a": (1, 1), "b": (11, 1)}, clip)


def test_single_site_owns_clip():
    clip = box(0, 0, 10, 10)
    d = voronoi_partition({"only": (3, 3)}, clip)
    assert d.cells["only"].equals(clip)


def test_two_sites_split_at_bisector():
    d = voronoi_partition({"w": (2, 5), "e": (8, 5)}, box(0, 0, 10, 10))
    assert d.cells["w"].area == pytest.approx(50.0)
    assert d.cells["w"].bounds[2] == pytest.approx(5.0)


def test_cells_tile_the_clip():
    rng = np.random.default_rng(0)
    clip = Polygon([(0, 0), (100, 0), (120, 80), (40, 110), (-10, 60)])
    pts = {i: tuple(p) for i, p in enumerate(rng.uniform(0, 90, size=(30, 2))) if clip.contains(Point(p))}
    d = voronoi_partition(pts, clip)
    assert sum(c.area for c in d.cells.values()) == pytest.approx(clip.area, rel=1e-12)


def test_overlay_shares_against_monte_carlo():
    rng = np.random.default_rng(1)
    clip = box(0, 0, 1000, 1000)
    sites = {f"s{i}": tuple(p) for i, p in enumerate(rng.uniform(0, 1000, size=(12, 2)))}
    d = voronoi_partition(sites, clip)
    block = Polygon([(120, 80), (610, 150), (700, 640), (260, 720)])
    shares = dict(overlay_shares({"b": block}, d)["b"])
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-12)
    pts, _ = sample_points(block, 40000, 5)
    ids = list(sites)
    xy = np.array([sites[i] for i in ids])
    owner = np.argmin(((pts[:, None, :] - xy[None]) ** 2).sum(-1), axis=1)
    for j, sid in enumerate(ids):
        mc = float(np.mean(owner == j))
        # binomial standard error at n = 40000 is <= 0.0025
        assert shares.get(sid, 0.0) == pytest.approx(mc, abs=0.01)


def test_polygon_index_reports_only_positive_area():
    idx = PolygonIndex({"a": box(0, 0, 1, 1), "b": box(1, 0, 2, 1), "c": box(5, 5, 6, 6)})
    assert idx.overlaps(box(0.5, 0.5, 1.5, 0.75)) == [("a", 0.125), ("b", 0.125)]
    assert idx.overlaps(box(1, 0, 1, 1).buffer(0)) == []


def test_sample_points_inside_and_reproducible():
    poly = Polygon([(0, 0), (10, 0), (10, 1), (1, 1), (1, 10), (0, 10)])
    a, deg = sample_points(poly, 50, stable_seed(3, "x"))
    b, _ = sample_points(poly, 50, stable_seed(3, "x"))
    assert not deg
    assert np.array_equal(a, b)
    assert all(poly.contains(Point(p)) for p in a)
    c, _ = sample_points(poly, 50, stable_seed(3, "y"))
    assert not np.array_equal(a, c)


def test_sample_points_degenerate_polygon():
    sliver = Polygon([(0, 0), (1, 0), (2, 0), (1, 0)])
    pts, deg = sample_points(sliver, 4, 0)
    assert deg and pts.shape == (4, 2)


def test_knn_empty_and_bad_k():
    with pytest.raises(EmptyIndex):
        SpatialIndex({}).knn((0, 0), 1)
    with pytest.raises(ValueError):
        SpatialIndex({"a": (0, 0)}).knn((0, 0), 0)


def test_knn_ties_break_by_id():
    idx = SpatialIndex({"d": (1, 0), "b": (0, 1), "c": (-1, 0), "a": (0, -1), "z": (5, 5)})
    assert [i for i, _ in idx.knn((0, 0), 2)] == ["a", "b"]
    assert [i for i, _ in idx.knn((0, 0), 10)] == ["a", "b", "c", "d", "z"]


coords = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=40, unique=True),
       st.tuples(coords, coords), st.integers(1, 45))
def test_knn_matches_exhaustive(points, q, k):
    idx = SpatialIndex({f"p{i:02d}": p for i, p in enumerate(points)})
    got = idx.knn(q, k)
    brute = sorted(((math.hypot(x - q[0], y - q[1]), f"p{i:02d}") for i, (x, y) in enumerate(points)))
    assert len(got) == min(k, len(points))
    for (gid, gd), (bd, bid) in zip(got, brute):
        assert gd == pytest.approx(bd, rel=1e-12, abs=1e-9)
    # the returned distances are the k smallest
    assert max(d for _, d in got) <= brute[len(got) - 1][0] * (1 + 1e-12) + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 99), st.floats(1, 99)), min_size=1, max_size=25, unique=True))
def test_voronoi_cells_host_nearest_site(points):
    clip = box(0, 0, 100, 100)
    sites = {i: p for i, p in enumerate(points)}
    xy = np.array(points)
    if len(points) > 1 and np.min(np.hypot(*(xy[:, None] - xy[None]).transpose(2, 0, 1))
                                  + np.eye(len(points)) * 1e9) < 1e-6:
        return
    d = voronoi_partition(sites, clip)
    for gx in np.linspace(2.5, 97.5, 8):
        for gy in np.linspace(2.5, 97.5, 8):
            dist = np.hypot(xy[:, 0] - gx, xy[:, 1] - gy)
            for sid, cell in d.cells.items():
                if cell.contains(Point(gx, gy)):
                    assert dist[sid] <= dist.min() + 1e-7


def test_five_sites_grid_nearest():
    rng = np.random.default_rng(12)
    sites = {f"s{i}": tuple(p) for i, p in enumerate(rng.uniform(0, 1, size=(5, 2)))}
    d = voronoi_partition(sites, box(0, 0, 1, 1))
    xy = np.array(list(sites.values()))
    ids = list(sites)
    for gx in (np.arange(50) + 0.5) / 50:
        for gy in (np.arange(50) + 0.5) / 50:
            near = ids[int(np.argmin(np.hypot(xy[:, 0] - gx, xy[:, 1] - gy)))]
            assert d.cells[near].covers(Point(gx, gy))


def test_shifted_unit_squares_monte_carlo():
    a, b = box(0, 0, 1, 1), box(0.5, 0, 1.5, 1)
    pts = np.random.default_rng(0).uniform((0, 0), (1.5, 1), size=(1_000_000, 2))
    both = (pts[:, 0] <= 1) & (pts[:, 0] >= 0.5)
    assert intersection_area(a, b) == pytest.approx(float(both.mean() * 1.5), abs=1e-2)
    assert intersection_area(a, b) == 0.5


def test_l_shape_sample_matches_area_ratio():
    poly = Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 3), (0, 3)])
    pts, _ = sample_points(poly, 1000, 8)
    left = np.mean(pts[:, 0] < 1)          # left half holds 3 of the 4 unit squares
    assert left == pytest.approx(0.75, abs=0.05)


def test_apportionment_three_cells_five_blocks():
    # sites on a line so that the cells are vertical strips x<2, 2<x<4, x>4
    d = voronoi_partition({"A": (1, 1), "B": (3, 1), "C": (5, 1)}, box(0, 0, 6, 2))
    blocks = {"b1": box(0, 0, 1, 2), "b2": box(1, 0, 3, 1), "b3": box(3, 0, 6, 2),
              "b4": box(1.5, 1, 4.5, 2), "b5": box(0, 1, 1.5, 2)}
    shares = {b: dict(v) for b, v in overlay_shares(blocks, d).items()}
    assert shares["b1"] == {"A": 1.0}
    assert shares["b2"] == pytest.approx({"A": 0.5, "B": 0.5})
    assert shares["b3"] == pytest.approx({"B": 1 / 3, "C": 2 / 3})
    assert shares["b4"] == pytest.approx({"A": 1 / 6, "B": 2 / 3, "C": 1 / 6})
    assert shares["b5"] == {"A": 1.0}
    hh = {"b1": 10, "b2": 20, "b3": 30, "b4": 60, "b5": 5}
    per = {c: sum(hh[b] * shares[b].get(c, 0) for b in blocks) for c in "ABC"}
    assert per == pytest.approx({"A": 10 + 10 + 10 + 5, "B": 10 + 10 + 40, "C": 20 + 10})
