"""Affinity index from call detail records.

Stages: home antenna per user from weeknight activity, seed affinity per
antenna, one-hop max propagation over the social graph, per-antenna tallies
of propagated scores, and area-weighted reduction to census blocks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from shapely.geometry import Point

from .errors import MissingQuartile
from .geo import stable_seed

log = logging.getLogger(__name__)

CDR_COLUMNS = ["originator", "destinatary", "direction", "timestamp", "duration", "tower"]


@dataclass(frozen=True)
class NightWindow:
    """Calls from ``start_hour`` on evening days, or before ``end_hour`` on morning days."""

    start_hour: int = 20
    end_hour: int = 6
    evening_days: tuple = (0, 1, 2, 3)   # Mon..Thu
    morning_days: tuple = (1, 2, 3, 4)   # Tue..Fri

    def mask(self, ts: pd.Series) -> np.ndarray:
        wd = ts.dt.weekday
        hour = ts.dt.hour
        evening = wd.isin(self.evening_days) & (hour >= self.start_hour)
        morning = wd.isin(self.morning_days) & (hour < self.end_hour)
        return (evening | morning).to_numpy()


def clean_records(records: pd.DataFrame, towers=None) -> tuple[pd.DataFrame, dict]:
    """Normalize a CDR frame and drop unusable rows.

    Returns the cleaned frame and a dict of drop counts by reason.
    """
    df = records.copy()
    df["originator"] = df["originator"].astype(str)
    df["destinatary"] = df["destinatary"].astype(str)
    df["tower"] = df["tower"].astype(str)
    df["direction"] = df["direction"].astype(str).str.lower()
    if not pd.api.types.is_datetime64_any_dtype(df["timestamp"]):
        df["timestamp"] = pd.to_datetime(df["timestamp"], format="ISO8601")
    drops = {}
    bad = df["originator"] == df["destinatary"]
    drops["self_call"] = int(bad.sum())
    bad_dir = ~df["direction"].isin(["incoming", "outgoing"])
    drops["bad_direction"] = int((bad_dir & ~bad).sum())
    bad |= bad_dir
    neg = pd.to_numeric(df["duration"], errors="coerce").fillna(-1) < 0
    drops["bad_duration"] = int((neg & ~bad).sum())
    bad |= neg
    if towers is not None:
        unknown = ~df["tower"].isin(set(map(str, towers)))
        drops["unknown_tower"] = int((unknown & ~bad).sum())
        bad |= unknown
    return df.loc[~bad].reset_index(drop=True), drops


def record_owner(df: pd.DataFrame) -> pd.Series:
    """Party whose side of the call the record's tower serves."""
    return df["originator"].where(df["direction"] == "outgoing", df["destinatary"])


@dataclass
class HomeAssignment:
    home: dict                  # user -> antenna
    night_calls: dict           # user -> count at the home antenna
    ties: int = 0

    def frame(self) -> pd.DataFrame:
        users = sorted(self.home)
        return pd.DataFrame({"user_id": users,
                             "home_antenna": [self.home[u] for u in users],
                             "night_calls": [self.night_calls[u] for u in users]})


def detect_home_antennas(records: pd.DataFrame, seed: int, window: NightWindow = NightWindow()) -> HomeAssignment:
    """Antenna with the most weeknight presence events per user.

    Ties are broken by a uniform draw seeded from ``(seed, user)`` so the
    result does not depend on how records are partitioned or ordered.
    """
    night = records.loc[window.mask(records["timestamp"])]
    counts = (pd.DataFrame({"user": record_owner(night).to_numpy(), "tower": night["tower"].to_numpy()})
              .groupby(["user", "tower"], sort=True).size().rename("n").reset_index())
    if counts.empty:
        return HomeAssignment({}, {})
    best = counts.groupby("user")["n"].transform("max")
    top = counts.loc[counts["n"] == best]
    home, nights = {}, {}
    ties = 0
    for user, grp in top.groupby("user", sort=True):
        towers = sorted(grp["tower"])
        if len(towers) > 1:
            ties += 1
            rng = np.random.default_rng(stable_seed(seed, ("home", user)))
            home[user] = towers[int(rng.integers(len(towers)))]
        else:
            home[user] = towers[0]
        nights[user] = int(grp["n"].iloc[0])
    return HomeAssignment(home, nights, ties)


@dataclass
class SocialGraph:
    neighbors: dict                              # user -> sorted tuple of neighbours
    intensity: dict = field(default_factory=dict)  # (u, v) with u < v -> calls

    @classmethod
    def from_edges(cls, edges) -> "SocialGraph":
        nb, inten = {}, {}
        for u, v, w in edges:
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            inten[key] = inten.get(key, 0) + int(w)
            nb.setdefault(u, set()).add(v)
            nb.setdefault(v, set()).add(u)
        return cls({u: tuple(sorted(s)) for u, s in nb.items()}, inten)

    @classmethod
    def from_records(cls, records: pd.DataFrame, min_edge_calls: int = 1) -> "SocialGraph":
        """Undirected call graph; both copies of one call count once."""
        calls = records.drop_duplicates(["originator", "destinatary", "timestamp", "duration"])
        a = calls["originator"].to_numpy()
        b = calls["destinatary"].to_numpy()
        lo = np.where(a < b, a, b)
        hi = np.where(a < b, b, a)
        pairs = pd.DataFrame({"u": lo, "v": hi}).groupby(["u", "v"], sort=True).size()
        pairs = pairs[pairs >= min_edge_calls]
        return cls.from_edges((u, v, w) for (u, v), w in pairs.items())

    def __len__(self):
        return len(self.neighbors)


def assign_seed_affinity(antennas: Mapping, chaco, quartile_of: Mapping) -> dict:
    """0 outside the endemic polygon, housing quartile (1..4) inside."""
    seeds = {}
    for aid, xy in antennas.items():
        if chaco.covers(Point(xy)):
            if aid not in quartile_of:
                raise MissingQuartile(f"antenna {aid!r} lies in the endemic area but has no quartile")
            seeds[aid] = int(quartile_of[aid])
        else:
            seeds[aid] = 0
    return seeds


@dataclass
class Propagation:
    score: dict              # user -> s'
    without_home: int        # graph nodes excluded for lack of a home antenna


def propagate_affinity(graph: SocialGraph, homes: HomeAssignment, seeds: Mapping,
                       include_self: str = "fallback") -> Propagation:
    """s'_u = max seed over the home-assigned neighbours of u.

    ``include_self`` controls u's own seed: ``"fallback"`` uses it only when u
    has no scored neighbour, ``"always"`` puts it in the max, ``"never"``
    leaves such users unscored.
    """
    if include_self not in ("fallback", "always", "never"):
        raise ValueError(f"bad include_self {include_self!r}")
    own = {u: int(seeds.get(a, 0)) for u, a in homes.home.items()}
    score = {}
    for u in sorted(own):
        vals = [own[v] for v in graph.neighbors.get(u, ()) if v in own]
        if include_self == "always":
            vals.append(own[u])
        if vals:
            score[u] = max(vals)
        elif include_self == "fallback":
            score[u] = own[u]
    without = sum(1 for u in graph.neighbors if u not in own)
    if without:
        log.info("propagate_affinity: %d graph users without a home antenna", without)
    return Propagation(score, without)


def tally_antenna_tuples(homes: HomeAssignment, scores: Mapping, antennas=None) -> pd.DataFrame:
    """Counts |H_{a,k}| of users homed at antenna a with propagated score k."""
    rows = {}
    for a in (antennas or ()):
        rows[str(a)] = [0] * 5
    for u, a in homes.home.items():
        if u in scores:
            rows.setdefault(a, [0] * 5)[scores[u]] += 1
    ids = sorted(rows)
    out = pd.DataFrame([rows[a] for a in ids], columns=[f"c{k}" for k in range(5)])
    out.insert(0, "antenna_id", ids)
    return out


def antenna_alpha(tuples: pd.DataFrame) -> dict:
    """Scalar in [0, 1]: mean propagated score of an antenna's residents over 4."""
    counts = tuples[[f"c{k}" for k in range(5)]].to_numpy(float)
    tot = counts.sum(axis=1)
    weighted = counts @ np.arange(5)
    alpha = np.divide(weighted, 4 * tot, out=np.zeros_like(tot), where=tot > 0)
    return dict(zip(tuples["antenna_id"], alpha.tolist()))


def block_affinity_index(tuples: pd.DataFrame, shares: Mapping) -> tuple[dict, list]:
    """Area-weighted antenna scalar per block.

    ``shares`` maps block id -> [(antenna id, share of block area)].  Blocks
    with no coverage get 0 and are returned in the second element.
    """
    alpha = antenna_alpha(tuples)
    ai, uncovered = {}, []
    for bid, parts in shares.items():
        if not parts:
            uncovered.append(bid)
            ai[bid] = 0.0
            continue
        val = sum(alpha.get(a, 0.0) * s for a, s in parts)
        ai[bid] = float(min(max(val, 0.0), 1.0))
    return ai, uncovered
