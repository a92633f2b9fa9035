"""Per-IXP summaries built from serialized results plus the world model.

Everything here reads the plain ``results.json`` rows (dicts), never
pipeline internals, so a report can be regenerated from files alone.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .geo import GeoPoint, destination
from .ingest import WorldModel

VERDICTS = ("Local", "Remote", "Unknown")
STEPS = ("PortCapacity", "RttColo", "MultiIxp", "PrivateVoting")
MEMBER_TYPES = ("Local", "Remote", "Hybrid", "Unknown")

IXP_COLUMNS = (
    "ixp_id", "interfaces", "local", "remote", "unknown",
    "local_share", "remote_share", "unknown_share",
)
STEP_COLUMNS = ("ixp_id", "classified") + tuple(f"{s}_share" for s in STEPS)
MEMBER_COLUMNS = ("member_type", "members", "share")


def _share(n: int, d: int) -> float:
    return round(n / d, 6) if d else 0.0


def ixp_shares(rows: Iterable[Mapping[str, Any]], ixp_ids: Sequence[str]) -> list[dict[str, Any]]:
    """Verdict counts and shares per IXP; IXPs without interfaces get zeros."""
    counts: dict[str, Counter] = defaultdict(Counter)
    for r in rows:
        counts[r["ixp_id"]][r["verdict"]] += 1
    out = []
    for ixp in sorted(set(ixp_ids) | set(counts)):
        c = counts.get(ixp, Counter())
        n = sum(c.values())
        out.append({
            "ixp_id": ixp,
            "interfaces": n,
            "local": c["Local"],
            "remote": c["Remote"],
            "unknown": c["Unknown"],
            "local_share": _share(c["Local"], n),
            "remote_share": _share(c["Remote"], n),
            "unknown_share": _share(c["Unknown"], n),
        })
    return out


def step_contributions(rows: Iterable[Mapping[str, Any]], ixp_ids: Sequence[str]) -> list[dict[str, Any]]:
    """Share of each IXP's classified interfaces settled by each step."""
    counts: dict[str, Counter] = defaultdict(Counter)
    for r in rows:
        if r["verdict"] != "Unknown":
            counts[r["ixp_id"]][r["step"]] += 1
    out = []
    for ixp in sorted(set(ixp_ids) | set(counts)):
        c = counts.get(ixp, Counter())
        n = sum(c.values())
        row: dict[str, Any] = {"ixp_id": ixp, "classified": n}
        for s in STEPS:
            row[f"{s}_share"] = _share(c[s], n)
        out.append(row)
    return out


def member_classes(rows: Iterable[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Member types across all IXPs; hybrid means local somewhere and remote elsewhere."""
    seen: dict[int, set[str]] = defaultdict(set)
    for r in rows:
        seen[int(r["asn"])].add(r["verdict"])
    types = Counter()
    for verdicts in seen.values():
        v = verdicts - {"Unknown"}
        if v == {"Local", "Remote"}:
            types["Hybrid"] += 1
        elif v:
            types[v.pop()] += 1
        else:
            types["Unknown"] += 1
    n = len(seen)
    return [{"member_type": t, "members": types[t], "share": _share(types[t], n)} for t in MEMBER_TYPES]


def _circle(centre: GeoPoint, km: float, n: int = 64) -> list[list[float]]:
    pts = [destination(centre, 360.0 * k / n, km) for k in range(n)]
    ring = [[round(p.lon, 6), round(p.lat, 6)] for p in pts]
    return ring + [ring[0]]


def feasibility_geojson(rows: Iterable[Mapping[str, Any]], world: WorldModel) -> dict[str, Any]:
    """Facilities as points plus one annulus per distinct (VP, ring) pair."""
    feats = []
    for fid, fac in sorted(world.facilities.items()):
        if fac.location is None:
            continue
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [fac.location.lon, fac.location.lat]},
            "properties": {"kind": "facility", "facility_id": fid, "name": fac.name},
        })
    rings = set()
    for r in rows:
        ev = r.get("evidence") or {}
        if "d_max_km" in ev and "vp_id" in ev:
            rings.add((ev["vp_id"], float(ev["d_min_km"]), float(ev["d_max_km"])))
    for vp_id, d_min, d_max in sorted(rings):
        vp = world.vantage_points.get(vp_id)
        loc = world.vp_location(vp) if vp else None
        if loc is None or not math.isfinite(d_max):
            continue
        coords = [_circle(loc, d_max)]
        if d_min > 0:
            coords.append(list(reversed(_circle(loc, d_min))))
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": coords},
            "properties": {"kind": "feasibility_ring", "vp_id": vp_id, "d_min_km": d_min, "d_max_km": d_max},
        })
    return {"type": "FeatureCollection", "features": feats}


def build_report(results_doc: Mapping[str, Any], world: WorldModel) -> dict[str, Any]:
    rows = results_doc["results"]
    ixp_ids = results_doc.get("ixps") or sorted(world.ixps)
    total = Counter(r["verdict"] for r in rows)
    n = len(rows)
    return {
        "overall": {
            "interfaces": n,
            **{f"{v.lower()}_share": _share(total[v], n) for v in VERDICTS},
        },
        "ixps": ixp_shares(rows, ixp_ids),
        "steps": step_contributions(rows, ixp_ids),
        "members": member_classes(rows),
    }


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})


def write_report(
    report: Mapping[str, Any],
    out_dir: str | Path,
    extra: Mapping[str, Any] | None = None,
    geojson: Mapping[str, Any] | None = None,
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "json": out / "report.json",
        "ixps": out / "ixp_shares.csv",
        "steps": out / "step_shares.csv",
        "members": out / "member_classes.csv",
    }
    files["json"].write_text(json.dumps({**(extra or {}), **report}, indent=1, sort_keys=True) + "\n")
    _write_csv(files["ixps"], IXP_COLUMNS, report["ixps"])
    _write_csv(files["steps"], STEP_COLUMNS, report["steps"])
    _write_csv(files["members"], MEMBER_COLUMNS, report["members"])
    if geojson is not None:
        files["geojson"] = out / "feasibility.geojson"
        files["geojson"].write_text(json.dumps(geojson, sort_keys=True) + "\n")
    return files
