"""Health vulnerability, density scaling, the combined index and locality selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import AllZeroAffinity, DegenerateInputs
from .stats import fit_smooth_cdf, spca, spearman_on_rankits

log = logging.getLogger(__name__)


@dataclass
class Vulnerability:
    hv: pd.Series
    score: pd.Series            # oriented first-component coordinate
    share: float                # variance share of the first component
    loadings: np.ndarray
    imputed: pd.Series          # True where an unreachable delta was imputed
    cdf_fallback: bool = False


def health_vulnerability(delta: pd.Series, eta: pd.Series) -> Vulnerability:
    """Combine travel time and socio-economic level into HV in [0, 1].

    Higher HV means longer walks and lower SEI.  Unreachable (infinite)
    travel times are imputed at the largest finite value.
    """
    if set(delta.index) != set(eta.index):
        raise DegenerateInputs("delta and eta must cover the same blocks")
    idx = sorted(delta.index, key=str)
    d = delta.reindex(idx).astype(float)
    e = eta.reindex(idx).astype(float)
    imputed = ~np.isfinite(d)
    if imputed.all():
        raise DegenerateInputs("no block has a finite travel time")
    d = d.where(~imputed, d[~imputed].max())
    if np.ptp(d.to_numpy()) == 0 or np.ptp(e.to_numpy()) == 0:
        raise DegenerateInputs("constant travel-time or SEI column")
    res = spca(np.column_stack([d.to_numpy(), e.to_numpy()]))
    score = res.scores[:, 0]
    if spearman_on_rankits(score, d.to_numpy()) < 0:
        score = -score
    cdf = fit_smooth_cdf(score)
    hv = np.clip(cdf(score), 0.0, 1.0)
    return Vulnerability(pd.Series(hv, index=idx, name="HV"), pd.Series(score, index=idx),
                         float(res.shares[0]), res.loadings[:, 0], pd.Series(imputed.to_numpy(), index=idx),
                         cdf.fallback)


@dataclass
class DensityScale:
    d: pd.Series
    excluded: list = field(default_factory=list)
    cdf_fallback: bool = False


def density_scale(population: pd.Series, area_km2: pd.Series) -> DensityScale:
    """CDF-scaled inhabitants per km2.

    The CDF is fitted on asinh(density); the transform is strictly
    increasing, so F(asinh(x)) is the CDF of the density itself, and the
    fit copes with the heavy right tail of urban blocks.
    """
    area = area_km2.astype(float)
    bad = ~(area > 0)
    excluded = sorted(area.index[bad], key=str)
    if excluded:
        log.warning("density_scale: %d blocks with zero area excluded", len(excluded))
    pop = population.reindex(area.index).astype(float)[~bad]
    dens = np.arcsinh((pop / area[~bad]).to_numpy())
    cdf = fit_smooth_cdf(dens)
    return DensityScale(pd.Series(np.clip(cdf(dens), 0, 1), index=pop.index, name="d"), excluded, cdf.fallback)


def chppi(hv: pd.Series, d: pd.Series, ai: pd.Series, alpha: float = 1.0, beta: float = 1.0,
          included: pd.Series | None = None) -> pd.Series:
    """HV^alpha * d^beta * AI divided by its mean over the included blocks."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    idx = ai.index
    num = np.power(hv.reindex(idx).astype(float), alpha) * np.power(d.reindex(idx).astype(float), beta) \
        * ai.astype(float)
    mask = pd.Series(True, index=idx) if included is None else included.reindex(idx).fillna(False).astype(bool)
    mask &= num.notna()
    if not mask.any():
        raise AllZeroAffinity("no included block")
    denom = float(num[mask].mean())
    if not denom > 0:
        raise AllZeroAffinity("every included block has zero affinity")
    return (num / denom).rename("ChPPI")


@dataclass(frozen=True)
class SelectionParams:
    min_block_pop: float = 350
    min_density: float = 350          # inhabitants per km2
    extreme_percentile: float = 0.95
    top_n: int = 3


def select_localities(blocks: pd.DataFrame, params: SelectionParams = SelectionParams()) -> pd.DataFrame:
    """Per-province locality selection.

    ``blocks`` needs AI, population, area_km2, locality, province and
    endemic columns.  Endemic blocks are ignored.  The extreme-affinity
    threshold is the ``extreme_percentile`` quantile of AI over all
    non-endemic blocks; blocks at or above it are extreme.
    """
    b = blocks.loc[~blocks["endemic"].astype(bool)].copy()
    if b.empty:
        return _empty_report()
    threshold = float(np.quantile(b["AI"].to_numpy(float), params.extreme_percentile))
    density = b["population"] / b["area_km2"].where(b["area_km2"] > 0)
    keep = (b["population"] >= params.min_block_pop) & (density >= params.min_density)
    s = b.loc[keep]
    if s.empty:
        log.info("select_localities: no block survives the filters")
        return _empty_report()
    s = s.assign(w=s["AI"] * s["population"], extreme=s["AI"] >= threshold)
    g = s.groupby(["province", "locality"], sort=True)
    rep = pd.DataFrame({"metric1": g["w"].sum() / g["population"].sum()})
    rep["metric2"] = s.loc[s["extreme"]].groupby(["province", "locality"])["AI"].mean()
    rep = rep.reset_index()

    rep["high_mean"] = False
    rep["extreme_blocks"] = False
    for _, grp in rep.groupby("province", sort=True):
        top = grp.sort_values(["metric1", "locality"], ascending=[False, True]).head(params.top_n)
        rep.loc[top.index, "high_mean"] = True
        ext = grp.dropna(subset=["metric2"])
        top = ext.sort_values(["metric2", "locality"], ascending=[False, True]).head(params.top_n)
        rep.loc[top.index, "extreme_blocks"] = True
    rep["type"] = np.select([rep["high_mean"] & rep["extreme_blocks"], rep["high_mean"], rep["extreme_blocks"]],
                            ["both", "high_mean", "extreme_blocks"], default="")
    rep["selected"] = rep["type"] != ""
    rep = rep.rename(columns={"locality": "locality_id"})
    rep.attrs["threshold"] = threshold
    return rep[["locality_id", "province", "metric1", "metric2", "type", "selected"]].sort_values(
        ["province", "locality_id"]).reset_index(drop=True)


def _empty_report():
    return pd.DataFrame(columns=["locality_id", "province", "metric1", "metric2", "type", "selected"])
