"""Stage orchestration.

Each stage reads the inputs named in the config plus the persisted outputs
of earlier stages, writes its own tables into ``output_dir`` and records
row counts in ``manifest.json``.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd
import shapely

from . import access, affinity, housing, index, sei
from .config import PipelineConfig
from .errors import ChppiError, StageError, ValidationError
from .formats import (LAYERS, dump_geojson, emit_geojson, read_geojson, read_polygon, read_table, write_json,
                      write_table)
from .geo import AlbersEqualArea, check_polygon, overlay_shares, voronoi_partition

log = logging.getLogger(__name__)

STAGES = ("ingest", "housing", "affinity", "access", "sei", "vulnerability", "index", "select", "emit")


class World:
    """Projected geometry and attributes shared by the stages."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.proj = AlbersEqualArea(**cfg.projection)
        self.boundary = self.proj.project(read_polygon(cfg.path("boundary")))
        self.chaco = self.proj.project(read_polygon(cfg.path("chaco")))
        check_polygon(self.boundary)
        self.lonlat, self.blocks, rows = {}, {}, []
        for geom, props in read_geojson(cfg.path("blocks")):
            if "block_id" not in props:
                raise ValidationError("every block feature needs a block_id property")
            bid = str(props["block_id"])
            if bid in self.blocks:
                raise ValidationError(f"duplicate block_id {bid}")
            g = self.proj.project(geom)
            self.lonlat[bid] = geom
            self.blocks[bid] = g
            area = g.area
            rows.append({
                "block_id": bid,
                "population": float(props.get("population", 0)),
                "households": float(props.get("households", 0)),
                "area_km2": area / 1e6,
                "locality": str(props.get("locality", "")),
                "province": str(props.get("province", "")),
                "fraction": str(props.get("fraction", "")),
                "endemic": bool(area > 0 and self.chaco.covers(g.representative_point())),
                "degenerate": bool(area <= 1e-6),
            })
        self.attrs = pd.DataFrame(rows).set_index("block_id").sort_index()
        ant = read_table(cfg.path("antennas"), dtype={"antenna_id": str})
        x, y = self.proj.forward(ant["lon"].to_numpy(), ant["lat"].to_numpy())
        self.antennas = dict(zip(ant["antenna_id"], zip(x.tolist(), y.tolist())))

    def out(self, name) -> Path:
        return self.cfg.out / name


def _overlay(world: World) -> dict:
    ov = read_table(world.out("overlay.csv"), dtype={"block_id": str, "antenna_id": str})
    shares = {b: [] for b in world.attrs.index}
    for b, a, s in ov.itertuples(index=False):
        shares[b].append((a, s))
    return shares


def stage_ingest(world: World) -> dict:
    diagram = voronoi_partition(world.antennas, world.boundary)
    shares = overlay_shares(world.blocks, diagram)
    rows = [(b, a, s) for b in sorted(shares) for a, s in shares[b]]
    write_table(pd.DataFrame(rows, columns=["block_id", "antenna_id", "share"]), world.out("overlay.csv"))
    write_table(world.attrs.reset_index(), world.out("blocks.csv"))
    ant = pd.DataFrame([(a, x, y) for a, (x, y) in sorted(world.antennas.items())], columns=["antenna_id", "x", "y"])
    ant["endemic"] = shapely.covers(world.chaco, shapely.points(ant["x"].to_numpy(), ant["y"].to_numpy()))
    write_table(ant, world.out("antennas.csv"))
    covered = {b: sum(s for _, s in v) for b, v in shares.items()}
    hh = world.attrs["households"]
    apportioned = sum(hh[b] * covered[b] for b in covered)
    return {"blocks": len(world.attrs), "antennas": len(world.antennas), "overlay_rows": len(rows),
            "endemic_blocks": int(world.attrs["endemic"].sum()),
            "degenerate_blocks": int(world.attrs["degenerate"].sum()),
            "uncovered_blocks": int(sum(1 for v in covered.values() if v < 1 - 1e-6)),
            "households_total": float(hh.sum()), "households_apportioned": float(apportioned)}


def stage_housing(world: World) -> dict:
    recs = read_table(world.cfg.path("housing"), dtype={"block_id": str, "floor": str, "roof": str, "ceiling": str})
    model = housing.fit_mca(recs)
    scores, skipped = housing.score_blocks(model, recs)
    write_table(scores.reset_index(), world.out("housing_blocks.csv"))
    agg = housing.aggregate_to_antennas(scores.to_dict(), _overlay(world), world.attrs["households"].to_dict())
    quart = housing.quartile_partition(agg.value, world.antennas, world.chaco)
    ids = sorted(world.antennas)
    out = pd.DataFrame({"antenna_id": ids,
                        "housing_score": [agg.value.get(a, np.nan) for a in ids],
                        "households": [agg.households.get(a, 0.0) for a in ids],
                        "quartile": pd.array([quart.get(a) for a in ids], dtype="Int64"),
                        "empty_cell": [a in agg.empty_cells for a in ids]})
    write_table(out, world.out("antenna_housing.csv"))
    write_json({"variables": model.variables, "categories": [list(c) for c in model.categories],
                "column_coords": model.column_coords.tolist(), "singular_values": model.singular_values.tolist(),
                "inertia_share": model.inertia_share, "sign": model.sign, "dropped": model.dropped},
               world.out("mca.json"))
    return {"records": len(recs), "skipped_unseen": skipped, "blocks_scored": len(scores),
            "antennas_scored": len(agg.value), "empty_cells": len(agg.empty_cells), "quartiled": len(quart)}


def stage_affinity(world: World) -> dict:
    cfg = world.cfg
    raw = read_table(cfg.path("cdr"), dtype={"originator": str, "destinatary": str, "tower": str,
                                             "direction": str, "timestamp": str})
    missing = set(affinity.CDR_COLUMNS) - set(raw.columns)
    if missing:
        raise ValidationError(f"CDR file lacks columns {sorted(missing)}")
    recs, drops = affinity.clean_records(raw, towers=world.antennas)
    nw = cfg.night_window
    window = affinity.NightWindow(nw["start_hour"], nw["end_hour"], tuple(nw["evening_days"]),
                                  tuple(nw["morning_days"]))
    homes = affinity.detect_home_antennas(recs, cfg.seed, window)
    graph = affinity.SocialGraph.from_records(recs, cfg.min_edge_calls)
    ah = read_table(world.out("antenna_housing.csv"), dtype={"antenna_id": str})
    quart = {a: int(q) for a, q in zip(ah["antenna_id"], ah["quartile"]) if pd.notna(q)}
    seeds = affinity.assign_seed_affinity(world.antennas, world.chaco, quart)
    prop = affinity.propagate_affinity(graph, homes, seeds, cfg.include_self)
    tuples = affinity.tally_antenna_tuples(homes, prop.score, world.antennas)
    ai, uncovered = affinity.block_affinity_index(tuples, _overlay(world))

    write_table(homes.frame(), world.out("homes.csv"))
    users = sorted(prop.score)
    write_table(pd.DataFrame({"user_id": users, "home_antenna": [homes.home[u] for u in users],
                              "seed": [seeds.get(homes.home[u], 0) for u in users],
                              "affinity": [prop.score[u] for u in users]}), world.out("user_affinity.csv"))
    write_table(tuples, world.out("antenna_tuples.csv"))
    bids = sorted(ai)
    write_table(pd.DataFrame({"block_id": bids, "AI": [ai[b] for b in bids],
                              "uncovered": [b in set(uncovered) for b in bids]}), world.out("block_ai.csv"))
    return {"records_in": len(raw), "records_kept": len(recs), "dropped": drops, "homed_users": len(homes.home),
            "home_ties": homes.ties, "graph_nodes": len(graph), "graph_edges": len(graph.intensity),
            "scored_users": len(prop.score), "users_without_home": prop.without_home,
            "tallied_users": int(tuples[[f"c{k}" for k in range(5)]].to_numpy().sum()),
            "blocks": len(ai), "uncovered_blocks": len(uncovered)}


def stage_access(world: World) -> dict:
    cfg = world.cfg
    raw = read_table(cfg.path("providers"), dtype={"id": str, "raw_label": str})
    x, y = world.proj.forward(raw["lon"].to_numpy(), raw["lat"].to_numpy())
    rules = json.loads(cfg.path("label_map").read_text())
    providers, discarded = access.classify_providers(
        [(i, (a, b), lab) for i, a, b, lab in zip(raw["id"], x, y, raw["raw_label"])], [tuple(r) for r in rules])
    nodes = read_table(cfg.path("street_nodes"), dtype={"node_id": str})
    nx_, ny_ = world.proj.forward(nodes["lon"].to_numpy(), nodes["lat"].to_numpy())
    edges = read_table(cfg.path("street_edges"), dtype={"node_a": str, "node_b": str})
    graph = access.StreetGraph(dict(zip(nodes["node_id"], zip(nx_.tolist(), ny_.tolist()))),
                               list(edges.itertuples(index=False, name=None)))
    res = access.block_travel_times(world.blocks, providers, graph, cfg.speed_kmh, cfg.seed, cfg.knn_k,
                                    cfg.sample_points, cfg.threads)
    bids = sorted(res)
    out = pd.DataFrame({
        "block_id": bids,
        "t_hospital": [res[b].times["hospital"] for b in bids],
        "t_center": [res[b].times["center"] for b in bids],
        "t_post": [res[b].times["post"] for b in bids],
        "delta_r": [res[b].delta for b in bids],
        "unreachable_flag": [res[b].unreachable for b in bids],
        "degenerate_flag": [res[b].degenerate for b in bids],
    })
    write_table(out, world.out("block_access.csv"))
    return {"providers_raw": len(raw), "providers_kept": len(providers), "providers_discarded": discarded,
            "street_nodes": len(nodes), "street_edges": graph.n_edges, "blocks": len(out),
            "unreachable_blocks": int(out["unreachable_flag"].sum()),
            "pruning_fallbacks": int(sum(r.pruning_fallbacks for r in res.values()))}


def stage_sei(world: World) -> dict:
    cfg = world.cfg
    schema = sei.OrdinalSchema.from_dict(json.loads(cfg.path("sei_schema").read_text()))
    hh = read_table(cfg.path("households"), dtype={"household_id": str, "block_id": str})
    vcols = [c for c in hh.columns if c not in ("household_id", "block_id")]
    if len(vcols) != len(schema.levels):
        raise ValidationError(f"households file has {len(vcols)} variables, schema declares {len(schema.levels)}")
    X = sei.encode_thermometer(schema, hh[vcols].to_numpy(int))
    ae = dict(cfg.autoencoder)
    tc = sei.TrainConfig(hidden=ae.get("hidden"), dropout=ae.get("dropout", 0.5), epochs=ae.get("epochs", 40),
                         batch=ae.get("batch", 64), lr=ae.get("lr", 5e-3), decay=ae.get("decay", 0.1),
                         seed=ae.get("seed", cfg.seed))
    model = sei.train_autoencoder(X, schema, tc)
    s = sei.score_households(model, X)
    eta = sei.trimean_blocks(s, hh["block_id"])
    write_table(pd.DataFrame({"household_id": hh["household_id"], "s_i": s}), world.out("household_sei.csv"))
    write_table(eta.rename_axis("block_id").rename("eta_r").reset_index(), world.out("block_eta.csv"))
    e = sei.evaluate_model(model, X)
    write_json({"E": e, "E_category_weights": sei.evaluate_model(model, X, weights="categories"),
                "losses": model.losses, "eval_losses": model.eval_losses,
                "params": {k: v.tolist() for k, v in sorted(model.params.items())}}, world.out("sei_model.json"))
    return {"households": len(hh), "blocks": len(eta), "E": e, "width": int(X.shape[1])}


def stage_vulnerability(world: World) -> dict:
    acc = read_table(world.out("block_access.csv"), dtype={"block_id": str}).set_index("block_id")
    eta = read_table(world.out("block_eta.csv"), dtype={"block_id": str}).set_index("block_id")["eta_r"]
    common = sorted(set(acc.index) & set(eta.index))
    missing_eta = sorted(set(acc.index) - set(eta.index))
    vul = index.health_vulnerability(acc.loc[common, "delta_r"], eta.loc[common])
    out = pd.DataFrame({"block_id": common, "delta": acc.loc[common, "delta_r"].to_numpy(),
                        "eta": eta.loc[common].to_numpy(), "score": vul.score.to_numpy(),
                        "HV": vul.hv.to_numpy(), "delta_imputed": vul.imputed.to_numpy()})
    write_table(out, world.out("block_hv.csv"))
    return {"blocks": len(common), "missing_eta": len(missing_eta), "first_component_share": vul.share,
            "delta_imputed": int(vul.imputed.sum()), "cdf_fallback": vul.cdf_fallback}


def _flags(row) -> str:
    names = ["endemic", "degenerate", "uncovered", "unreachable", "delta_imputed", "zero_area", "missing_hv",
             "excluded"]
    return ";".join(n for n in names if bool(row.get(n, False)))


def stage_index(world: World) -> dict:
    cfg = world.cfg
    b = read_table(world.out("blocks.csv"), dtype={"block_id": str, "locality": str, "province": str,
                                                    "fraction": str}).set_index("block_id")
    ai = read_table(world.out("block_ai.csv"), dtype={"block_id": str}).set_index("block_id")
    hv = read_table(world.out("block_hv.csv"), dtype={"block_id": str}).set_index("block_id")
    acc = read_table(world.out("block_access.csv"), dtype={"block_id": str}).set_index("block_id")
    ds = index.density_scale(b["population"], b["area_km2"])
    t = pd.DataFrame(index=b.index)
    t["AI"] = ai["AI"]
    t["delta"] = acc["delta_r"]
    t["eta"] = hv["eta"]
    t["HV"] = hv["HV"]
    t["d"] = ds.d
    t["endemic"] = b["endemic"].astype(bool)
    t["degenerate"] = b["degenerate"].astype(bool)
    t["uncovered"] = ai["uncovered"].reindex(t.index).fillna(False).astype(bool)
    t["unreachable"] = acc["unreachable_flag"].reindex(t.index).fillna(False).astype(bool)
    t["delta_imputed"] = hv["delta_imputed"].reindex(t.index).fillna(False).astype(bool)
    t["zero_area"] = t.index.isin(ds.excluded)
    t["missing_hv"] = t["HV"].isna()
    defined = t[["AI", "HV", "d"]].notna().all(axis=1)
    included = defined & (~t["endemic"] if not cfg.denominator_includes_endemic else True)
    t["excluded"] = ~included
    t["ChPPI"] = index.chppi(t["HV"], t["d"], t["AI"].fillna(0.0), cfg.alpha, cfg.beta, included)
    t["flags"] = [_flags(r) for r in t.to_dict("records")]
    out = t[["AI", "delta", "eta", "HV", "d", "ChPPI", "flags"]].reset_index()
    write_table(out, world.out("block_indices.csv"))
    return {"blocks": len(out), "included": int(included.sum()),
            "mean_chppi_included": float(t.loc[included, "ChPPI"].mean()), "zero_area": len(ds.excluded),
            "alpha": cfg.alpha, "beta": cfg.beta}


def stage_select(world: World) -> dict:
    cfg = world.cfg
    b = read_table(world.out("blocks.csv"), dtype={"block_id": str, "locality": str, "province": str}
                   ).set_index("block_id")
    ind = read_table(world.out("block_indices.csv"), dtype={"block_id": str}).set_index("block_id")
    frame = b[["population", "area_km2", "locality", "province", "endemic"]].assign(AI=ind["AI"])
    frame = frame.dropna(subset=["AI"])
    params = index.SelectionParams(**cfg.selection)
    rep = index.select_localities(frame, params)
    write_table(rep, world.out("localities.csv"))
    return {"localities": len(rep), "selected": int(rep["selected"].sum()) if len(rep) else 0,
            "provinces": int(rep["province"].nunique()) if len(rep) else 0}


def stage_emit(world: World, aggregate_by: str | None = "fraction") -> dict:
    ind = read_table(world.out("block_indices.csv"), dtype={"block_id": str, "flags": str}).set_index("block_id")
    ind["flags"] = ind["flags"].fillna("")
    b = read_table(world.out("blocks.csv"), dtype={"block_id": str, "locality": str, "province": str,
                                                    "fraction": str}).set_index("block_id")
    loc = read_table(world.out("localities.csv"), dtype={"locality_id": str, "province": str, "type": str})
    kinds = {(p, l): (k if isinstance(k, str) else "", bool(s))
             for p, l, k, s in zip(loc["province"], loc["locality_id"], loc["type"], loc["selected"])}
    t = ind.join(b[["locality", "province", "fraction", "population"]])
    keys = list(zip(t["province"], t["locality"]))
    t["type"] = [kinds.get(k, ("", False))[0] for k in keys]
    t["selected"] = [kinds.get(k, ("", False))[1] for k in keys]
    counts = {}
    for layer in LAYERS:
        fc = emit_geojson(world.lonlat, t, layer)
        dump_geojson(fc, world.out(f"layers/{layer}.geojson"))
        counts[layer] = len(fc["features"])
    if aggregate_by and aggregate_by in t.columns and (t[aggregate_by].fillna("") != "").any():
        for layer in ("AI", "HV", "ChPPI"):
            fc = emit_geojson(world.lonlat, t, layer, aggregate_by=aggregate_by)
            dump_geojson(fc, world.out(f"layers/{layer}_{aggregate_by}.geojson"))
            counts[f"{layer}_{aggregate_by}"] = len(fc["features"])
    return counts


STAGE_FUNCS = {
    "ingest": stage_ingest, "housing": stage_housing, "affinity": stage_affinity, "access": stage_access,
    "sei": stage_sei, "vulnerability": stage_vulnerability, "index": stage_index, "select": stage_select,
    "emit": stage_emit,
}


def _update_manifest(cfg: PipelineConfig, stage: str, counts: dict) -> None:
    path = cfg.out / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {}
    if man.get("config_sha256") != cfg.digest():
        man = {}
    man["config_sha256"] = cfg.digest()
    man["seed"] = cfg.seed
    man.setdefault("stages", {})[stage] = counts
    write_json(man, path)


def run_stage(cfg: PipelineConfig, stage: str, world: World | None = None) -> dict:
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        world = world or World(cfg)
        t0 = time.perf_counter()
        counts = STAGE_FUNCS[stage](world)
    except ValidationError:
        raise
    except FileNotFoundError as exc:
        raise StageError(stage, f"missing intermediate {exc.filename}; run the earlier stages first") from exc
    except (ChppiError, ValueError, KeyError) as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    log.info("stage %s done in %.1fs", stage, time.perf_counter() - t0)
    _update_manifest(cfg, stage, counts)
    return counts


def run_pipeline(cfg: PipelineConfig) -> dict:
    cfg.validate()
    try:
        world = World(cfg)
    except ValidationError:
        raise
    except (ChppiError, ValueError, KeyError, OSError) as exc:
        raise StageError("ingest", f"{type(exc).__name__}: {exc}") from exc
    return {s: run_stage(cfg, s, world) for s in STAGES}
