import numpy as np
import pandas as pd
import pytest
from shapely.geometry import box

from _oracles import mca_dense_svd, planted_housing
from chppi.errors import ConstantVariableWarning, RankDeficient, TooFewAntennas
from chppi.housing import (FAVORABLE, aggregate_to_antennas, fit_mca, quartile_partition, score_blocks)


def _rec(rows):
    return pd.DataFrame(rows, columns=["block_id", "floor", "roof", "ceiling", "households"])


def test_row_scores_follow_transition_formula():
    rec = planted_housing(np.random.default_rng(0))
    model = fit_mca(rec)
    _, _, sv = mca_dense_svd(rec)
    # principal row coordinates are centred and carry the first principal inertia
    scores = np.array([model.profile_score({v: r[v] for v in model.variables}) for _, r in rec.iterrows()])
    w = rec["households"].to_numpy(float)
    assert np.average(scores, weights=w) == pytest.approx(0.0, abs=1e-12)
    assert np.average(scores ** 2, weights=w) == pytest.approx(sv[0] ** 2, rel=1e-9)


def test_unknown_category_rejected_at_fit():
    rec = _rec([("b", "marble", "metal", "yes", 3), ("b", "soil", "metal", "no", 2)])
    with pytest.raises(ValueError, match="marble"):
        fit_mca(rec)


def test_constant_variable_dropped_with_warning():
    rec = _rec([("a", "soil", "metal", "yes", 3), ("a", "cement", "reed_straw", "yes", 2),
                ("b", "soil", "reed_straw", "yes", 5), ("b", "cement", "metal", "yes", 1)])
    with pytest.warns(ConstantVariableWarning):
        model = fit_mca(rec)
    assert model.dropped == ["ceiling"] and model.variables == ["floor", "roof"]


def test_rank_deficient_inputs():
    with pytest.raises(RankDeficient):
        fit_mca(_rec([("a", "soil", "metal", "yes", 3), ("b", "soil", "metal", "yes", 1)]))


def test_favorable_profile_on_top():
    model = fit_mca(planted_housing(np.random.default_rng(5)))
    fav = model.profile_score(FAVORABLE)
    assert fav > model.profile_score({"floor": "ceramic", "roof": "asphalt", "ceiling": "yes"})
    assert 0 < model.inertia_share <= 1


def test_score_blocks_weights_and_skips():
    rec = planted_housing(np.random.default_rng(2), n_blocks=4)
    model = fit_mca(rec)
    unseen = _rec([("b000", "soil", "slate", "maybe", 4)])
    scores, skipped = score_blocks(model, pd.concat([rec, unseen], ignore_index=True))
    assert skipped == 1
    blk = rec[rec.block_id == "b001"]
    want = sum(model.profile_score({"floor": r.floor, "roof": r.roof, "ceiling": r.ceiling}) * r.households
               for r in blk.itertuples()) / blk.households.sum()
    assert scores["b001"] == pytest.approx(want, rel=1e-12)


def test_aggregate_to_antennas_hand_tally():
    shares = {"b1": [("A", 0.5), ("B", 0.5)], "b2": [("B", 1.0)], "b3": [("C", 1.0)]}
    out = aggregate_to_antennas({"b1": 2.0, "b2": -1.0}, shares, {"b1": 10, "b2": 30, "b3": 4})
    assert out.value["A"] == 2.0
    assert out.value["B"] == pytest.approx((2.0 * 5 - 1.0 * 30) / 35)
    assert out.households == {"A": 5.0, "B": 35.0, "C": 4.0}
    assert out.empty_cells == ["C"]


def test_quartiles_min_rank_ties():
    chaco = box(0, 0, 10, 10)
    pts = {a: (1.0 + i, 1.0) for i, a in enumerate("abcdefgh")}
    pts["z"] = (50.0, 50.0)
    vals = {"a": 1, "b": 2, "c": 2, "d": 3, "e": 4, "f": 5, "g": 6, "h": 7, "z": 100}
    q = quartile_partition(vals, pts, chaco)
    assert "z" not in q
    assert q == {"a": 1, "b": 1, "c": 1, "d": 2, "e": 3, "f": 3, "g": 4, "h": 4}
    with pytest.raises(TooFewAntennas):
        quartile_partition({"a": 1, "b": 2, "z": 3}, pts, chaco)


def test_quartiles_against_sorted_index():
    rng = np.random.default_rng(7)
    vals = {f"a{i:03d}": float(v) for i, v in enumerate(rng.normal(size=100))}
    pts = {a: (0.5, 0.5) for a in vals}
    q = quartile_partition(vals, pts, box(0, 0, 1, 1))
    order = sorted(vals, key=vals.get)
    for pos, a in enumerate(order):
        assert q[a] == pos // 25 + 1
