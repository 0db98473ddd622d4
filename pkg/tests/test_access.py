import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from chppi.access import (AccessModel, HealthProvider, StreetGraph, block_travel_times, classify_providers,
                          minutes, shortest_path_time)
from chppi.synth import LABEL_RULES


def test_classify_providers_first_rule_wins():
    raw = [("1", (0, 0), "Hospital Regional"), ("2", (1, 1), "CAPS Barrio Norte"),
           ("3", (2, 2), "Posta Sanitaria Km 4"), ("4", (3, 3), "Consultorio privado"),
           ("5", (4, 4), "Centro de salud del hospital")]
    kept, discarded = classify_providers(raw, LABEL_RULES)
    assert [(p.id, p.category) for p in kept] == [("1", "hospital"), ("2", "center"), ("3", "post"),
                                                  ("5", "hospital")]
    assert discarded == 1
    with pytest.raises(ValueError):
        classify_providers(raw, [("x", "clinic")])


def test_minutes_hand_value():
    assert minutes(5000, 5.0) == 60.0
    assert minutes(1000, 4.0) == 15.0


def test_shortest_path_time_on_a_line():
    g = StreetGraph({"a": (0, 0), "b": (100, 0), "c": (300, 0)}, [("a", "b", 120), ("b", "c", 200)])
    # snap 10 m in, 320 m along the street, 5 m out
    assert shortest_path_time(g, (0, 10), (305, 0), 6.0) == pytest.approx(335 / 100.0)
    g2 = StreetGraph({"a": (0, 0), "b": (100, 0), "c": (300, 0)}, [("a", "b", 120)])
    assert math.isinf(shortest_path_time(g2, (0, 0), (300, 0)))
    with pytest.raises(ValueError):
        shortest_path_time(g, (0, 0), (1, 1), 0.0)


def test_parallel_edges_keep_minimum():
    g = StreetGraph({"a": (0, 0), "b": (1, 0)}, [("a", "b", 7.0), ("b", "a", 3.0), ("a", "a", 1.0)])
    assert g.n_edges == 1
    assert g.distances_from([0])[0, 1] == 3.0
    with pytest.raises(ValueError):
        StreetGraph({"a": (0, 0), "b": (1, 0)}, [("a", "b", 0.0)])


def test_block_access_fields(toy_city):
    graph, providers, blocks = toy_city
    res = block_travel_times(blocks, providers, graph, seed=1)
    assert set(res) == set(blocks)
    r = res["t11"]
    assert set(r.times) == {"hospital", "center", "post"}
    assert r.delta == pytest.approx(float(np.median(r.point_minima)))
    assert not r.unreachable
    assert res["east"].pruning_fallbacks > 0


def test_threads_do_not_change_results(toy_city):
    graph, providers, blocks = toy_city
    a = block_travel_times(blocks, providers, graph, seed=4, threads=1)
    b = block_travel_times(blocks, providers, graph, seed=4, threads=3)
    assert {k: (v.times, v.delta) for k, v in a.items()} == {k: (v.times, v.delta) for k, v in b.items()}


def test_degenerate_block_uses_centroid(toy_city):
    graph, providers, _ = toy_city
    sliver = Polygon([(100, 100), (200, 100), (300, 100), (200, 100)])
    res = block_travel_times({"s": sliver}, providers, graph)
    assert res["s"].degenerate and math.isfinite(res["s"].delta)


def test_unreachable_block_flagged():
    g = StreetGraph({"a": (0, 0), "b": (10, 0), "c": (1000, 0)}, [("a", "b", 10.0)])
    prov = [HealthProvider("h", 1000, 0, "hospital")]
    res = block_travel_times({"r": Polygon([(0, 0), (5, 0), (5, 5), (0, 5)])}, prov, g)
    assert res["r"].unreachable and math.isinf(res["r"].delta)
    assert math.isnan(res["r"].times["post"])


def test_k_larger_than_category_is_exhaustive(toy_city):
    graph, providers, _ = toy_city
    model = AccessModel(providers, graph, k=100)
    pruned = AccessModel(providers, graph, k=1)
    for xy in [(50, 50), (420, 380), (740, 350)]:
        assert model.point_times(xy)[0] == pruned.point_times(xy, k=100)[0]


def test_five_km_edge_takes_an_hour():
    g = StreetGraph({"a": (0, 0), "b": (5000, 0)}, [("a", "b", 5000.0)])
    assert shortest_path_time(g, (0, 0), (5000, 0), 5.0) == 60.0


def test_unmapped_labels_discarded():
    labels = ["Hospital Zonal", "Centro de Salud 4", "Posta Sanitaria", "Geriatric office",
              "Administrative office", "consultorio privado", "CAPS 12"]
    kept, discarded = classify_providers([(str(i), (0, 0), l) for i, l in enumerate(labels)], LABEL_RULES)
    assert discarded == 3 and len(kept) == 4
