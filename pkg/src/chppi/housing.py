"""Housing-conditions index: indicator-matrix MCA, block scores, antenna aggregation, quartiles."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from shapely.geometry import Point

from .errors import ConstantVariableWarning, RankDeficient, TooFewAntennas

log = logging.getLogger(__name__)

FLOOR = ("ceramic", "cement", "soil", "other")
ROOF = ("asphalt", "tile_slab", "slate", "metal", "fiber_cement", "cardboard", "reed_straw", "other")
CEILING = ("yes", "no")
VARIABLES = {"floor": FLOOR, "roof": ROOF, "ceiling": CEILING}
# soil or loose brick / reed, palm, board or straw / no internal ceiling
FAVORABLE = {"floor": "soil", "roof": "reed_straw", "ceiling": "no"}


@dataclass
class McaModel:
    variables: list                 # variables kept after dropping constant ones
    categories: list                # (variable, category) column labels
    column_masses: np.ndarray
    column_coords: np.ndarray       # standard coordinates on dimension 1
    singular_values: np.ndarray
    sign: int = 1
    dropped: list = field(default_factory=list)

    @property
    def inertia_share(self):
        power = self.singular_values ** 2
        return float(power[0] / power.sum())

    def profile_score(self, profile: dict) -> float:
        """Dimension-1 principal row coordinate of a category profile (transition formula)."""
        lookup = dict(zip(self.categories, self.column_coords))
        q = len(self.variables)
        try:
            mean = sum(lookup[(v, profile[v])] for v in self.variables) / q
        except KeyError as exc:
            raise KeyError(f"category {exc.args[0]!r} unseen at fit time") from None
        return mean - float(self.column_masses @ self.column_coords)


def _profile_table(records: pd.DataFrame) -> pd.DataFrame:
    cols = list(VARIABLES)
    return records.groupby(cols, sort=True, observed=True)["households"].sum().reset_index()


def _indicator(profiles: pd.DataFrame, variables, categories):
    Z = np.zeros((len(profiles), len(categories)))
    pos = {c: j for j, c in enumerate(categories)}
    for i, row in enumerate(profiles[variables].itertuples(index=False)):
        for v, val in zip(variables, row):
            Z[i, pos[(v, val)]] = 1.0
    return Z


def fit_mca(records: pd.DataFrame) -> McaModel:
    """First MCA dimension of the household-weighted indicator matrix.

    ``records`` has columns floor, roof, ceiling, households.  The
    eigenproblem is solved on the category side (Burt form of S^T S),
    so cost depends on the number of categories, not households.
    """
    for v, allowed in VARIABLES.items():
        bad = set(records[v]) - set(allowed)
        if bad:
            raise ValueError(f"unknown {v} categories: {sorted(bad)}")
    if (records["households"] < 1).any():
        raise ValueError("household counts must be >= 1")

    profiles = _profile_table(records)
    if len(profiles) < 2:
        raise RankDeficient("need at least two distinct category profiles")
    variables, dropped = [], []
    for v in VARIABLES:
        if profiles[v].nunique() >= 2:
            variables.append(v)
        else:
            dropped.append(v)
            warnings.warn(f"variable {v!r} has a single observed category; dropped", ConstantVariableWarning)
    if not variables:
        raise RankDeficient("no variable with two or more observed categories")
    profiles = profiles.groupby(variables, sort=True)["households"].sum().reset_index()

    categories = [(v, c) for v in variables for c in VARIABLES[v] if (profiles[v] == c).any()]
    Z = _indicator(profiles, variables, categories)
    w = profiles["households"].to_numpy(float)
    q = len(variables)
    total = w.sum() * q
    col_mass = (w @ Z) / total
    # S^T S = D_c^{-1/2} (P^T D_r^{-1} P - c c^T) D_c^{-1/2} with P = W Z / total, r = w / sum(w)
    burt = (Z * w[:, None]).T @ Z / (q * total)
    inv_sqrt = 1.0 / np.sqrt(col_mass)
    M = inv_sqrt[:, None] * (burt - np.outer(col_mass, col_mass)) * inv_sqrt[None, :]
    evals, evecs = np.linalg.eigh((M + M.T) / 2)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0, None)
    if evals[0] <= 1e-12:
        raise RankDeficient("no nontrivial MCA dimension")
    v1 = evecs[:, order[0]]
    model = McaModel(variables, categories, col_mass, v1 * inv_sqrt, np.sqrt(evals), 1, dropped)
    _orient(model)
    return model


def _orient(model: McaModel) -> None:
    """Flip the axis so the vector-favorable profile sits at the top."""
    best = {}
    for sign in (1, -1):
        coords = sign * model.column_coords
        fav = sum(coords[model.categories.index((v, FAVORABLE[v]))]
                  for v in model.variables if (v, FAVORABLE[v]) in model.categories)
        top = sum(max(coords[j] for j, (vv, _) in enumerate(model.categories) if vv == v)
                  for v in model.variables)
        best[sign] = (np.isclose(fav, top), fav)
    if best[1][0] and not best[-1][0]:
        sign = 1
    elif best[-1][0] and not best[1][0]:
        sign = -1
    else:
        if not (best[1][0] or best[-1][0]):
            log.warning("favorable housing profile is not extremal on MCA dimension 1")
        sign = 1 if best[1][1] >= best[-1][1] else -1
    model.column_coords = sign * model.column_coords
    model.sign = sign


def score_blocks(model: McaModel, records: pd.DataFrame):
    """Household-weighted mean profile score per block.

    Returns ``(scores, skipped)``: a Series indexed by block id and the number
    of records skipped because they carry a category unseen at fit time.
    """
    cache = {}
    sums, weights = {}, {}
    skipped = 0
    for row in records.itertuples(index=False):
        prof = (row.floor, row.roof, row.ceiling)
        if prof not in cache:
            try:
                cache[prof] = model.profile_score(dict(zip(VARIABLES, prof)))
            except KeyError:
                cache[prof] = None
        s = cache[prof]
        if s is None:
            skipped += 1
            continue
        sums[row.block_id] = sums.get(row.block_id, 0.0) + s * row.households
        weights[row.block_id] = weights.get(row.block_id, 0.0) + row.households
    if skipped:
        log.warning("score_blocks: skipped %d records with unseen categories", skipped)
    ids = sorted(sums)
    return pd.Series([sums[b] / weights[b] for b in ids], index=pd.Index(ids, name="block_id"),
                     name="housing_score"), skipped


@dataclass
class AntennaHousingScore:
    value: dict               # antenna id -> aggregated housing index
    households: dict          # antenna id -> apportioned households
    empty_cells: list
    quartile: dict = field(default_factory=dict)


def aggregate_to_antennas(block_scores, shares, households) -> AntennaHousingScore:
    """Household- and area-weighted mean of block scores per Voronoi cell.

    ``shares`` maps block id -> [(antenna id, share of block area)], as built
    by :func:`chppi.geo.overlay_shares`; ``households`` maps block id -> count.
    Blocks without a score still apportion no weight.
    """
    num, den, hh = {}, {}, {}
    for bid, parts in shares.items():
        h = float(households.get(bid, 0.0))
        score = block_scores.get(bid)
        for aid, share in parts:
            hh[aid] = hh.get(aid, 0.0) + h * share
            if score is None or not np.isfinite(score):
                continue
            num[aid] = num.get(aid, 0.0) + score * h * share
            den[aid] = den.get(aid, 0.0) + h * share
    values = {a: num[a] / den[a] for a in sorted(num, key=str) if den[a] > 0}
    return AntennaHousingScore(values, hh, [a for a in sorted(hh, key=str) if a not in values])


def quartile_partition(values: dict, points: dict, chaco) -> dict:
    """Quartile 1..4 of each in-chaco antenna value (min rank for ties).

    ``points`` maps antenna id -> (x, y); antennas on the chaco boundary count
    as inside.
    """
    inside = [a for a in values if chaco.covers(Point(points[a]))]
    if len(inside) < 4:
        raise TooFewAntennas(f"need >= 4 in-chaco antennas with values, got {len(inside)}")
    v = pd.Series({a: values[a] for a in inside})
    ranks = v.rank(method="min").to_numpy()
    n = len(v)
    q = np.ceil(4 * ranks / n).astype(int)
    return dict(zip(v.index, q.tolist()))
