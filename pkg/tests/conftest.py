from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Iterable, Mapping

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rpinfer.geo import GeoPoint  # noqa: E402
from rpinfer.ingest import WorldModel, parse_world  # noqa: E402

CITIES = {
    "AMS": (52.3702, 4.8952),
    "LON": (51.5074, -0.1278),
    "FRA": (50.1109, 8.6821),
    "RTM": (51.9244, 4.4777),
    "BUC": (44.4268, 26.1025),
    "PAR": (48.8566, 2.3522),
    "BER": (52.5200, 13.4050),
    "MAD": (40.4168, -3.7038),
}

ACCEPTANCE_LINES: list[str] = []


def build_world(
    *,
    facilities: Mapping[str, tuple[float, float] | None],
    ixps: Mapping[str, Mapping[str, Any]],
    interfaces: Iterable[tuple[str, int, str] | tuple[str, int, str, float | None]] = (),
    colo: Mapping[int, Iterable[str]] | None = None,
    routes: Mapping[str, int] | None = None,
    vps: Iterable[Mapping[str, Any]] = (),
) -> WorldModel:
    """Small worlds for unit tests.

    ``ixps`` values carry ``prefix`` plus optional ``facilities``, ``cmin``
    and ``rs``; ``colo`` maps ASN -> facility ids.
    """
    hosted: dict[str, list[int]] = {f: [] for f in facilities}
    for asn, fids in (colo or {}).items():
        for f in fids:
            hosted[f].append(asn)
    fac_recs = []
    for fid, loc in facilities.items():
        rec: dict[str, Any] = {"facility_id": fid, "hosted_asns": sorted(hosted[fid])}
        if loc is not None:
            rec["latitude"], rec["longitude"] = loc
        fac_recs.append(rec)
    ixp_recs, pricing = [], []
    for ixp, d in ixps.items():
        rec = {"ixp_id": ixp, "prefixes": [d["prefix"]], "facility_ids": list(d.get("facilities", ()))}
        if d.get("rs"):
            rec["route_server_ip"] = d["rs"]
        ixp_recs.append(rec)
        if d.get("cmin") is not None:
            pricing.append({"ixp_id": ixp, "min_physical_capacity": d["cmin"]})
    if_recs = []
    for row in interfaces:
        ip, asn, ixp = row[:3]
        cap = row[3] if len(row) > 3 else None
        if_recs.append({"ip": ip, "asn": asn, "ixp_id": ixp, "port_capacity": cap})
    docs = [
        ("ixps.json", {"kind": "ixps", "source": "Website", "records": ixp_recs}),
        ("fac.json", {"kind": "facilities", "source": "PDB", "records": fac_recs}),
        ("if.json", {"kind": "interfaces", "source": "Website", "records": if_recs}),
        ("routes.json", {"kind": "routes", "source": "Custom",
                         "records": [{"prefix": p, "asn": a} for p, a in (routes or {}).items()]}),
        ("vps.json", {"kind": "vantage_points", "source": "Custom", "records": list(vps)}),
    ]
    if pricing:
        docs.append(("pricing.json", {"kind": "port_pricing", "source": "Website", "records": pricing}))
    return parse_world(docs)


def point(city: str) -> GeoPoint:
    return GeoPoint(*CITIES[city])


@pytest.fixture(scope="session")
def small_scenario():
    from rpinfer.synth import SynthConfig, generate

    return generate(SynthConfig(n_ixps=6, members_per_ixp=40, n_metros=15), seed=3)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SMALL_SYNTH_TOML = "[synth]\nn_ixps = 4\nmembers_per_ixp = 30\nn_metros = 12\n"


def run_chain(root: Path, seed: int = 7, synth_toml: str | None = SMALL_SYNTH_TOML) -> dict[str, Path]:
    """synth -> ingest -> infer -> validate -> report under ``root``; asserts each step exits 0."""
    from rpinfer.cli import main

    root.mkdir(parents=True, exist_ok=True)
    p = {
        "scen": root / "scen",
        "world": root / "world.json",
        "results": root / "results.json",
        "metrics": root / "metrics.json",
        "report": root / "report",
    }
    synth = ["synth", "--seed", str(seed), "--out", str(p["scen"])]
    if synth_toml is not None:
        (root / "synth.toml").write_text(synth_toml)
        synth += ["--config", str(root / "synth.toml")]
    steps = [
        synth,
        ["ingest", "--in", str(p["scen"] / "datasets"), "--out", str(p["world"])],
        ["infer", "--world", str(p["world"]), "--pings", str(p["scen"] / "pings.csv"),
         "--traces", str(p["scen"] / "traces.jsonl"), "--aliases", str(p["scen"] / "aliases.jsonl"),
         "--out", str(p["results"])],
        ["validate", "--results", str(p["results"]), "--labels", str(p["scen"] / "labels.json"),
         "--out", str(p["metrics"])],
        ["report", "--results", str(p["results"]), "--world", str(p["world"]), "--out-dir", str(p["report"])],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, f"{argv[0]} exited {code}"
    return p
