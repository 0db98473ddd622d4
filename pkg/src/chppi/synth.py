"""Synthetic world generator with planted ground truth.

The world is laid out in projected metres and written in lon/lat, in the
same file formats the pipeline reads.  Planted structure:

* the endemic polygon is the union of the Voronoi cells of the antennas in
  the western part of the map, and census blocks are split along it, so no
  non-endemic block shares area with an endemic antenna cell;
* users homed at "hub" antennas outside the endemic area get an endemic
  contact with probability ``p_contact``; no other cross-region edges exist;
* every user makes >= ``night_calls`` weeknight calls at the true home
  antenna and at most one elsewhere;
* household ordinals follow a monotone one-factor model with flip noise.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import Polygon, box, mapping
from shapely.ops import unary_union

from .config import PipelineConfig
from .errors import ScaleTooSmall
from .formats import dump_geojson, feature_collection, write_json, write_table
from .geo import AlbersEqualArea, sample_points, voronoi_partition
from .housing import ROOF
from .sei import SEI_VARIABLES, OrdinalSchema

SEI_LEVELS = (4, 4, 4, 3, 4, 2, 5, 4, 2, 3, 7)
PERIOD_START = datetime(2015, 3, 2)   # a Monday
LABELS = {
    "hospital": ["hospital zonal", "hospital regional", "hospital municipal"],
    "center": ["centro de salud", "caps", "centro de atencion primaria"],
    "post": ["posta sanitaria", "puesto sanitario"],
    None: ["geriatric office", "administrative office", "consultorio privado"],
}
LABEL_RULES = [["hospital", "hospital"], ["centro de salud|caps|centro de atencion", "center"],
               ["posta|puesto sanitario", "post"]]


@dataclass
class WorldScale:
    blocks: int = 500
    users: int = 10_000
    providers: int = 60
    antennas: int | None = None
    block_size_m: float = 1000.0
    endemic_fraction: float = 0.35
    hub_fraction: float = 0.3
    p_contact: float = 0.3
    contacts_per_user: int = 3
    night_calls: int = 5
    away_night_prob: float = 0.3
    day_calls: int = 2
    heads_per_block: int = 20
    sei_noise: float = 0.05


@dataclass
class SyntheticWorld:
    blocks: dict                     # block id -> projected polygon
    block_attrs: pd.DataFrame
    boundary: object
    chaco: object
    antennas: dict                   # id -> (x, y)
    cdr: pd.DataFrame
    housing: pd.DataFrame
    households: pd.DataFrame
    schema: OrdinalSchema
    providers: pd.DataFrame
    street_nodes: pd.DataFrame
    street_edges: pd.DataFrame
    truth: dict = field(default_factory=dict)


def _uid(i: int, seed: int) -> str:
    return hashlib.blake2b(f"{seed}:{i}".encode(), digest_size=6).hexdigest()


def planted_ordinals(n, levels, rng, noise=0.05, latent=None):
    """Ordinal table from a one-factor threshold model; a ``noise`` share of entries is redrawn."""
    z = rng.normal(size=n) if latent is None else np.asarray(latent, dtype=float)
    cols = []
    for K in levels:
        th = np.sort(rng.normal(0.0, 0.9, size=K - 1))
        v = 1 + (z[:, None] > th[None, :]).sum(axis=1)
        flip = rng.random(n) < noise
        v[flip] = rng.integers(1, K + 1, size=int(flip.sum()))
        cols.append(v)
    return z, np.column_stack(cols)


def _polygonal(g):
    if g.geom_type in ("Polygon", "MultiPolygon"):
        return g
    parts = [p for p in getattr(g, "geoms", []) if p.geom_type in ("Polygon", "MultiPolygon")]
    return unary_union(parts) if parts else Polygon()


def _grid_shape(n_blocks):
    ny = max(2, int(round(np.sqrt(n_blocks * 0.8))))
    nx = max(2, int(np.ceil(n_blocks / ny)))
    return nx, ny


def _place_antennas(rng, n, width, height, x_split, min_endemic=5):
    pts = []
    min_sep = 0.25 * np.sqrt(width * height / n)
    n_end = max(min_endemic, int(round(n * x_split / width)))
    while len(pts) < n:
        west = len(pts) < n_end
        x = rng.uniform(0.02 * width, (x_split if west else width) - 0.02 * width) if west \
            else rng.uniform(x_split + 0.02 * width, 0.98 * width)
        y = rng.uniform(0.02 * height, 0.98 * height)
        if all(np.hypot(x - a, y - b) > min_sep for a, b in pts):
            pts.append((x, y))
    return {f"A{i:03d}": p for i, p in enumerate(pts)}, n_end


def _night_time(rng):
    day = int(rng.integers(0, 28))
    base = PERIOD_START + timedelta(days=day)
    while True:
        wd = base.weekday()
        if rng.random() < 0.5 and wd in (0, 1, 2, 3):
            return base + timedelta(hours=20, seconds=int(rng.integers(0, 4 * 3600)))
        if wd in (1, 2, 3, 4):
            return base + timedelta(seconds=int(rng.integers(0, 6 * 3600)))
        base += timedelta(days=1)


def _day_time(rng):
    day = int(rng.integers(0, 28))
    return PERIOD_START + timedelta(days=day, hours=9, seconds=int(rng.integers(0, 10 * 3600)))


def generate_synthetic_world(seed: int, scale: WorldScale = WorldScale()) -> SyntheticWorld:
    if scale.blocks < 10:
        raise ScaleTooSmall("need at least 10 blocks")
    if scale.users < 10 or scale.providers < 1:
        raise ScaleTooSmall("need at least 10 users and one provider")
    rng = np.random.default_rng(seed)
    nx, ny = _grid_shape(scale.blocks)
    bs = scale.block_size_m
    width, height = nx * bs, ny * bs
    boundary = box(0, 0, width, height)
    x_split = scale.endemic_fraction * width

    n_ant = scale.antennas or max(12, scale.blocks // 12)
    antennas, n_end = _place_antennas(rng, n_ant, width, height, x_split)
    if n_end < 4:
        raise ScaleTooSmall("need at least 4 endemic antennas")
    endemic_ant = sorted(antennas)[:n_end]
    diagram = voronoi_partition(antennas, boundary)
    chaco = unary_union([diagram.cells[a] for a in endemic_ant])
    non_end = sorted(set(antennas) - set(endemic_ant))
    hubs = sorted(rng.choice(non_end, size=max(1, int(round(scale.hub_fraction * len(non_end)))), replace=False))

    # census blocks, split along the endemic boundary
    blocks, rows = {}, []
    for j in range(ny):
        for i in range(nx):
            rect = box(i * bs, j * bs, (i + 1) * bs, (j + 1) * bs)
            pieces = [(_polygonal(rect.intersection(chaco)), True), (_polygonal(rect.difference(chaco)), False)]
            pieces = [(g, e) for g, e in pieces if g.area > 1.0]
            base_pop = float(rng.lognormal(np.log(900), 0.7))
            for g, e in pieces:
                bid = f"B{j:03d}{i:03d}" + ("" if len(pieces) == 1 else ("e" if e else "n"))
                pop = max(3, int(round(base_pop * g.area / rect.area)))
                blocks[bid] = g
                rows.append({"block_id": bid, "population": pop, "households": max(1, int(round(pop / 3.2))),
                             "locality": f"L{j // 4:02d}{i // 4:02d}", "province": f"P{min(2, 3 * j // ny) + 1}",
                             "fraction": f"F{j // 2:02d}{i // 2:02d}", "endemic": e})
    attrs = pd.DataFrame(rows).set_index("block_id")

    # hub share of each block's area (ground truth for the planted contacts)
    hub_geom = unary_union([diagram.cells[a] for a in hubs])
    attrs["hub_share"] = [blocks[b].intersection(hub_geom).area / blocks[b].area for b in attrs.index]

    # users
    pop = attrs["population"].to_numpy(float)
    bids = attrs.index.to_numpy()
    home_block = rng.choice(bids, size=scale.users, p=pop / pop.sum())
    ant_ids = sorted(antennas)
    ant_xy = np.array([antennas[a] for a in ant_ids])
    users = [_uid(i, seed) for i in range(scale.users)]
    true_home = {}
    for u, b in zip(users, home_block):
        p, _ = sample_points(blocks[b], 1, rng)
        true_home[u] = ant_ids[int(np.argmin(np.hypot(*(ant_xy - p[0]).T)))]
    endemic_set = set(endemic_ant)
    hub_set = set(hubs)
    region = {u: true_home[u] in endemic_set for u in users}
    pools = {True: [u for u in users if region[u]], False: [u for u in users if not region[u]]}

    contacts = {u: set() for u in users}

    def link(a, b):
        if a != b:
            contacts[a].add(b)
            contacts[b].add(a)

    for u in users:
        pool = pools[region[u]]
        for v in rng.choice(pool, size=min(scale.contacts_per_user, len(pool)), replace=False):
            link(u, str(v))
        if true_home[u] in hub_set and pools[True] and rng.random() < scale.p_contact:
            link(u, str(rng.choice(pools[True])))

    recs = []

    def call(a, b, t, tower_a, tower_b):
        stamp = t.isoformat()
        dur = int(rng.integers(5, 600))
        recs.append((a, b, "outgoing", stamp, dur, tower_a))
        recs.append((a, b, "incoming", stamp, dur, tower_b))

    away = {}
    for u in users:
        partners = sorted(contacts[u])
        if not partners:
            continue
        for _ in range(scale.night_calls):
            v = partners[int(rng.integers(len(partners)))]
            call(u, v, _night_time(rng), true_home[u], true_home[v])
        if rng.random() < scale.away_night_prob:
            v = partners[int(rng.integers(len(partners)))]
            other = ant_ids[int(rng.integers(len(ant_ids)))]
            away[u] = other
            call(u, v, _night_time(rng), other, true_home[v])
        for _ in range(scale.day_calls):
            v = partners[int(rng.integers(len(partners)))]
            ta = ant_ids[int(rng.integers(len(ant_ids)))] if rng.random() < 0.5 else true_home[u]
            tb = ant_ids[int(rng.integers(len(ant_ids)))] if rng.random() < 0.5 else true_home[v]
            call(u, v, _day_time(rng), ta, tb)
    cdr = pd.DataFrame(recs, columns=["originator", "destinatary", "direction", "timestamp", "duration", "tower"])

    # housing conditions: latent risk higher in the endemic west
    risk = {b: float(rng.normal(0.6 if attrs.at[b, "endemic"] else -0.4, 0.8)) for b in attrs.index}
    hrows = []
    roof_cut = np.array([-1.4, -0.9, -0.4, 0.1, 0.6, 1.1])
    for b in attrs.index:
        h = int(attrs.at[b, "households"])
        rho = risk[b] + rng.normal(0, 0.7, size=h)
        floor = np.where(rho < -0.6, "ceramic", np.where(rho < 0.7, "cement", "soil")).astype(object)
        roof = np.array(ROOF[:-1], dtype=object)[np.searchsorted(roof_cut, rho + rng.normal(0, 0.4, size=h))]
        ceiling = np.where(rho + rng.normal(0, 0.4, size=h) > 0.5, "no", "yes").astype(object)
        floor[rng.random(h) < 0.03] = "other"
        roof[rng.random(h) < 0.03] = "other"
        df = pd.DataFrame({"floor": floor, "roof": roof, "ceiling": ceiling})
        for (f, r, c), n in df.value_counts(sort=False).sort_index().items():
            hrows.append((b, f, r, c, int(n)))
    housing = pd.DataFrame(hrows, columns=["block_id", "floor", "roof", "ceiling", "households"])

    # household heads for the socio-economic index
    schema = OrdinalSchema(SEI_VARIABLES, SEI_LEVELS)
    head_rows, latent = [], []
    for b in attrs.index:
        m = min(int(attrs.at[b, "households"]), scale.heads_per_block)
        mu = -0.6 * risk[b]
        latent.extend((mu + rng.normal(0, 1.0, size=m)).tolist())
        head_rows.extend([b] * m)
    latent = np.array(latent)
    _, ords = planted_ordinals(len(latent), SEI_LEVELS, rng, scale.sei_noise, latent=latent)
    households = pd.DataFrame(ords, columns=[f"v{i + 1}" for i in range(len(SEI_LEVELS))])
    households.insert(0, "block_id", head_rows)
    households.insert(0, "household_id", [f"H{i:06d}" for i in range(len(households))])

    # providers clustered around towns so some blocks are remote
    towns = rng.uniform((0.1 * width, 0.1 * height), (0.9 * width, 0.9 * height), size=(max(3, scale.providers // 8), 2))
    prow = []
    cats = ["hospital", "center", "post", None]
    for k in range(scale.providers):
        c = towns[int(rng.integers(len(towns)))]
        xy = np.clip(c + rng.normal(0, 0.06 * min(width, height), size=2), 1, [width - 1, height - 1])
        cat = cats[int(rng.choice(4, p=[0.15, 0.45, 0.3, 0.1]))]
        label = LABELS[cat][int(rng.integers(len(LABELS[cat])))]
        prow.append((f"S{k:04d}", xy[0], xy[1], label, cat or ""))
    providers = pd.DataFrame(prow, columns=["id", "x", "y", "raw_label", "true_category"])

    # street grid with jittered nodes, detour factors and a few missing links
    step = 500.0
    gx, gy = int(width // step) + 1, int(height // step) + 1
    nodes = {}
    for j in range(gy):
        for i in range(gx):
            jit = rng.uniform(-50, 50, size=2)
            nodes[f"N{j:03d}{i:03d}"] = (min(max(i * step + jit[0], 0), width), min(max(j * step + jit[1], 0), height))
    erows = []
    for j in range(gy):
        for i in range(gx):
            a = f"N{j:03d}{i:03d}"
            for di, dj in ((1, 0), (0, 1)):
                if i + di < gx and j + dj < gy and rng.random() > 0.08:
                    b = f"N{j + dj:03d}{i + di:03d}"
                    d = float(np.hypot(*np.subtract(nodes[a], nodes[b])))
                    erows.append((a, b, round(d * (1 + rng.uniform(0, 0.1)), 3)))
    street_nodes = pd.DataFrame([(k, *v) for k, v in nodes.items()], columns=["node_id", "x", "y"])
    street_edges = pd.DataFrame(erows, columns=["node_a", "node_b", "length_m"])

    truth = {
        "seed": seed,
        "scale": asdict(scale),
        "true_home": true_home,
        "away_antenna": away,
        "endemic_antennas": endemic_ant,
        "hub_antennas": hubs,
        "household_latent": dict(zip(households["household_id"], latent.tolist())),
        "block_hub_share": attrs["hub_share"].to_dict(),
        "counts": {"blocks": len(blocks), "users": scale.users, "records": len(cdr),
                   "providers": scale.providers, "households": len(households), "housing_rows": len(housing),
                   "antennas": len(antennas)},
    }
    return SyntheticWorld(blocks, attrs, boundary, chaco, antennas, cdr, housing, households, schema,
                          providers, street_nodes, street_edges, truth)


def write_world(world: SyntheticWorld, out_dir, projection: AlbersEqualArea = AlbersEqualArea(),
                origin=(-450_000.0, -300_000.0), **config_overrides) -> Path:
    """Write the world as pipeline inputs plus ``config.json`` and ``ground_truth.json``.

    ``origin`` shifts the local metric frame into the projection plane.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ox, oy = origin

    def to_lonlat(geom):
        from shapely.affinity import translate
        return projection.unproject(translate(geom, ox, oy))

    def xy_to_lonlat(x, y):
        lon, lat = projection.inverse(np.asarray(x) + ox, np.asarray(y) + oy)
        return lon, lat

    feats = []
    for bid, g in world.blocks.items():
        props = {"block_id": bid}
        props.update({k: (bool(v) if k == "endemic" else v) for k, v in world.block_attrs.loc[bid].items()
                      if k in ("population", "households", "locality", "province", "fraction")})
        props["population"] = int(props["population"])
        props["households"] = int(props["households"])
        feats.append({"type": "Feature", "geometry": mapping(to_lonlat(g)), "properties": props})
    dump_geojson(feature_collection(feats), out / "blocks.geojson")
    dump_geojson(feature_collection([{"type": "Feature", "geometry": mapping(to_lonlat(world.boundary)),
                                      "properties": {"name": "boundary"}}]), out / "boundary.geojson")
    dump_geojson(feature_collection([{"type": "Feature", "geometry": mapping(to_lonlat(world.chaco)),
                                      "properties": {"name": "endemic"}}]), out / "chaco.geojson")

    ids = sorted(world.antennas)
    lon, lat = xy_to_lonlat([world.antennas[a][0] for a in ids], [world.antennas[a][1] for a in ids])
    write_table(pd.DataFrame({"antenna_id": ids, "lon": lon, "lat": lat}), out / "antennas.csv")
    write_table(world.cdr, out / "cdr.csv")
    write_table(world.housing, out / "housing.csv")
    write_table(world.households, out / "households.csv")
    write_json(world.schema.to_dict(), out / "sei_schema.json")
    lon, lat = xy_to_lonlat(world.providers["x"], world.providers["y"])
    write_table(pd.DataFrame({"id": world.providers["id"], "lon": lon, "lat": lat,
                              "raw_label": world.providers["raw_label"]}), out / "providers.csv")
    write_json(LABEL_RULES, out / "label_map.json")
    lon, lat = xy_to_lonlat(world.street_nodes["x"], world.street_nodes["y"])
    write_table(pd.DataFrame({"node_id": world.street_nodes["node_id"], "lon": lon, "lat": lat}),
                out / "street_nodes.csv")
    write_table(world.street_edges, out / "street_edges.csv")
    write_json(world.truth, out / "ground_truth.json")

    cfg = PipelineConfig(
        inputs={"blocks": "blocks.geojson", "boundary": "boundary.geojson", "chaco": "chaco.geojson",
                "antennas": "antennas.csv", "cdr": "cdr.csv", "housing": "housing.csv",
                "households": "households.csv", "sei_schema": "sei_schema.json", "providers": "providers.csv",
                "label_map": "label_map.json", "street_nodes": "street_nodes.csv",
                "street_edges": "street_edges.csv"},
        projection={"lon0": projection.lon0, "lat0": projection.lat0, "lat1": projection.lat1,
                    "lat2": projection.lat2},
        seed=world.truth["seed"],
    )
    d = cfg.to_dict()
    d.update(config_overrides)
    (out / "config.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
    return out / "config.json"
