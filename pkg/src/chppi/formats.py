"""File formats: delimited tables, GeoJSON input and choropleth layer output."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import mapping, shape
from shapely.ops import unary_union

LAYERS = ("AI", "HV", "ChPPI", "selection")


def write_table(df: pd.DataFrame, path) -> None:
    """UTF-8 CSV with a header; floats at full (repr) precision."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def read_table(path, **kw) -> pd.DataFrame:
    return pd.read_csv(path, encoding="utf-8", **kw)


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def read_geojson(path):
    """(geometry, properties) pairs of a FeatureCollection, or one bare geometry."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("type") == "FeatureCollection":
        return [(shape(f["geometry"]), dict(f.get("properties") or {})) for f in data["features"]]
    if data.get("type") == "Feature":
        return [(shape(data["geometry"]), dict(data.get("properties") or {}))]
    return [(shape(data), {})]


def read_polygon(path):
    """Union of every geometry in a GeoJSON file."""
    geoms = [g for g, _ in read_geojson(path)]
    return geoms[0] if len(geoms) == 1 else unary_union(geoms)


def feature_collection(features) -> dict:
    return {"type": "FeatureCollection", "features": list(features)}


def _clean(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    if v is pd.NA or (isinstance(v, float) and math.isnan(v)):
        return None
    return v


def emit_geojson(geometries: dict, table: pd.DataFrame, layer: str, aggregate_by: str | None = None,
                 weight: str = "population") -> dict:
    """Choropleth FeatureCollection for one layer.

    ``geometries`` maps block id -> lon/lat geometry; ``table`` is indexed by
    block id and carries the layer column plus flags.  With ``aggregate_by``
    (e.g. a census-fraction column) blocks are dissolved and the layer value
    becomes the ``weight``-weighted mean.
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; expected one of {LAYERS}")
    value_cols = ["type", "selected"] if layer == "selection" else [layer]
    flag_cols = [c for c in table.columns if c.startswith("flag_") or c == "flags"]
    if aggregate_by is None:
        feats = []
        for bid in sorted(table.index, key=str):
            row = table.loc[bid]
            props = {"block_id": str(bid)}
            props.update({c: _clean(row[c]) for c in value_cols + flag_cols if c in table.columns})
            feats.append({"type": "Feature", "geometry": mapping(geometries[bid]), "properties": props})
        return feature_collection(feats)
    if layer == "selection":
        raise ValueError("the selection layer is not aggregated")
    feats = []
    for unit, grp in table.groupby(aggregate_by, sort=True):
        w = grp[weight].astype(float)
        v = grp[layer].astype(float)
        ok = v.notna() & (w > 0)
        val = float((v[ok] * w[ok]).sum() / w[ok].sum()) if ok.any() else None
        geom = unary_union([geometries[b] for b in grp.index])
        feats.append({"type": "Feature", "geometry": mapping(geom),
                      "properties": {aggregate_by: _clean(unit), layer: val, "blocks": int(len(grp))}})
    return feature_collection(feats)


def dump_geojson(fc: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(fc, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
