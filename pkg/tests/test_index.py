import numpy as np
import pandas as pd
import pytest

from chppi import index
from chppi.errors import AllZeroAffinity, DegenerateInputs
from chppi.stats import rankit, spearman_on_rankits
from conftest import three_province_fixture


def _series(v, prefix="r"):
    return pd.Series(v, index=[f"{prefix}{i:03d}" for i in range(len(v))])


def test_hv_rises_with_travel_time_and_falls_with_sei():
    rng = np.random.default_rng(0)
    n = 300
    t = rng.gamma(2, 20, n)
    eta = np.clip(0.8 - t / 300 + rng.normal(0, 0.05, n), 0, 1)
    v = index.health_vulnerability(_series(t), _series(eta))
    assert v.hv.between(0, 1).all()
    assert spearman_on_rankits(v.hv.to_numpy(), t) > 0.8
    assert spearman_on_rankits(v.hv.to_numpy(), eta) < -0.5
    assert 0.5 < v.share <= 1


def test_hv_imputes_unreachable():
    rng = np.random.default_rng(1)
    t = rng.uniform(5, 60, 50)
    t[3] = np.inf
    v = index.health_vulnerability(_series(t), _series(rng.uniform(0, 1, 50)))
    assert v.imputed.sum() == 1 and v.imputed.iloc[3]
    assert np.isfinite(v.hv).all()


def test_hv_degenerate_inputs():
    with pytest.raises(DegenerateInputs):
        index.health_vulnerability(_series([1.0] * 20), _series(np.linspace(0, 1, 20)))
    with pytest.raises(DegenerateInputs):
        index.health_vulnerability(_series([np.inf] * 20), _series(np.linspace(0, 1, 20)))
    with pytest.raises(DegenerateInputs):
        index.health_vulnerability(_series(np.arange(20.0)), _series(np.arange(20.0), "s"))


def test_density_scale_monotone_and_excludes_zero_area():
    rng = np.random.default_rng(2)
    pop = _series(rng.lognormal(6, 1, 1000))
    area = _series(rng.lognormal(-1, 1, 1000))
    area.iloc[0] = 0.0
    ds = index.density_scale(pop, area)
    assert ds.excluded == ["r000"] and "r000" not in ds.d.index
    dens = (pop / area).drop("r000")
    order = np.argsort(dens.to_numpy())
    assert np.all(np.diff(ds.d.to_numpy()[order]) >= 0)
    assert ds.d.between(0, 1).all()


def test_chppi_errors():
    ai = _series([0.0, 0.0, 0.0])
    with pytest.raises(AllZeroAffinity):
        index.chppi(_series([0.5] * 3), _series([0.5] * 3), ai)
    with pytest.raises(ValueError):
        index.chppi(_series([0.5] * 3), _series([0.5] * 3), _series([1.0] * 3), alpha=-1)


def test_chppi_excluded_blocks_still_get_values():
    ai = _series([0.2, 0.4, 0.9])
    inc = _series([True, True, False])
    out = index.chppi(_series([1.0] * 3), _series([1.0] * 3), ai, included=inc)
    assert out.tolist() == pytest.approx([2 / 3, 4 / 3, 3.0])


def test_selection_ignores_endemic_and_filters():
    df = three_province_fixture()
    rep = index.select_localities(df)
    kept = df[~df.endemic & (df.population >= 350) & (df.population / df.area_km2 >= 350)]
    assert set(rep.locality_id) == set(kept.locality)
    assert set(rep["type"]) <= {"", "both", "high_mean", "extreme_blocks"}
    for _, grp in rep.groupby("province"):
        assert grp["type"].isin(["both", "high_mean"]).sum() == min(3, len(grp))


def test_selection_empty_cases():
    df = three_province_fixture()
    assert index.select_localities(df.assign(endemic=True)).empty
    assert index.select_localities(df.assign(population=10.0)).empty


def test_selection_threshold_uses_non_endemic_blocks():
    rows = [{"province": "P", "locality": f"L{i}", "population": 1000.0, "area_km2": 1.0, "AI": float(i),
             "endemic": False} for i in range(20)]
    rows.append({"province": "P", "locality": "E", "population": 1000.0, "area_km2": 1.0, "AI": 1000.0,
                 "endemic": True})
    rep = index.select_localities(pd.DataFrame(rows))
    # 0.95 quantile of 0..19 is 18.05, so only L19 is extreme
    assert rep.dropna(subset=["metric2"]).locality_id.tolist() == ["L19"]
    assert rep.set_index("locality_id").loc["L19", "type"] == "both"


def test_hv_agrees_with_rank_combination():
    rng = np.random.default_rng(13)
    n = 500
    # Gaussian copula with Spearman about -0.6
    G = rng.multivariate_normal([0, 0], [[1, -0.62], [-0.62, 1]], size=n)
    t, eta = np.exp(G[:, 0]) * 10, 1 / (1 + np.exp(-G[:, 1]))
    assert spearman_on_rankits(t, eta) == pytest.approx(-0.6, abs=0.06)
    v = index.health_vulnerability(_series(t), _series(eta))
    oracle = rankit(t) - rankit(eta)
    assert spearman_on_rankits(v.hv.to_numpy(), oracle) >= 0.95


def test_constant_inputs_give_unit_index():
    n = 8
    out = index.chppi(_series([0.3] * n), _series([0.7] * n), _series([0.25] * n), 1.3, 0.6)
    assert np.allclose(out.to_numpy(), 1.0, rtol=0, atol=1e-15)
