"""Seeded generator of labelled IXP worlds with matching measurement logs.

Metros are scattered over a lat/lon box and hold a handful of colocation
facilities each. IXPs occupy facilities in one metro (or several, for
wide-area IXPs) and carry one vantage point. Every AS has one border router
at its home facility, and all of its IXP memberships run through it:

* local members live in one of the IXP's facilities;
* remote members live at least ``min_remote_km`` from every IXP facility;
* reseller customers live anywhere (sometimes inside an IXP facility) and
  hold a fractional port.

Ping RTTs are drawn inside the speed band of :class:`~rpinfer.config.SpeedModel`
for the VP-to-router distance, then inflated by exponential jitter and
occasional spikes. Traceroutes cross each IXP from every member's router and
expose private links to neighbours in the same facility.
"""
from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .config import SpeedModel
from .geo import GeoPoint, destination, geodesic_km
from .ingest import WorldModel, parse_world
from .inference import Measurements
from .measurements import (
    Hop,
    PingSample,
    TraceroutePath,
    path_to_json,
    write_jsonl,
    write_pings_csv,
)
from .prefixes import int_to_ip, ip_to_int

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

IXP_SPACE = ip_to_int("185.0.0.0")
AS_SPACE = ip_to_int("11.0.0.0")
FRACTIONAL_PORTS = (100.0, 200.0, 500.0)
PHYSICAL_PORTS = (1000.0, 10000.0, 100000.0)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_ixps: int = 30
    members_per_ixp: int = 100
    remote_fraction: float = 0.27
    reseller_fraction: float = 0.10
    reseller_colocated_fraction: float = 0.2
    wide_area_fraction: float = 0.15
    wide_area_metros: tuple[int, int] = (2, 5)
    wide_area_min_km: float = 0.0  # extra metros of a wide-area IXP lie at least this far from its home metro
    n_metros: int = 40
    facilities_per_metro: tuple[int, int] = (2, 6)
    metro_radius_km: float = 15.0
    min_metro_separation_km: float = 150.0
    lat_range: tuple[float, float] = (36.0, 60.0)
    lon_range: tuple[float, float] = (-9.0, 30.0)
    ixp_facilities: tuple[int, int] = (1, 4)
    min_remote_km: float = 100.0
    as_reuse_prob: float = 0.5
    extra_presence_prob: float = 0.3
    lg_fraction: float = 0.6
    rounded_lg_fraction: float = 0.3
    samples_per_pair: int = 24
    sample_interval_s: float = 7200.0
    band_position: tuple[float, float] = (0.05, 0.6)
    jitter_mean_ms: float = 0.2
    spike_prob: float = 0.05
    spike_ms: tuple[float, float] = (5.0, 60.0)
    ttl_noise_prob: float = 0.02
    ttl_switch_prob: float = 0.01
    unresponsive_fraction: float = 0.0
    missing_colo_fraction: float = 0.0
    spurious_colo_fraction: float = 0.0
    capacity_corruption: float = 0.0
    bad_vp_fraction: float = 0.0
    private_neighbors: tuple[int, int] = (3, 6)
    tethered_prob: float = 0.1
    paths_per_membership: int = 2
    internal_ips_per_router: int = 3
    alias_completeness: float = 1.0
    speed: SpeedModel = field(default_factory=SpeedModel)

    def __post_init__(self) -> None:
        for name in (
            "remote_fraction", "reseller_fraction", "wide_area_fraction", "as_reuse_prob",
            "unresponsive_fraction", "missing_colo_fraction", "spurious_colo_fraction",
            "capacity_corruption", "alias_completeness", "bad_vp_fraction",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthConfigError(f"{name} must be in [0, 1], got {v}")
        if self.reseller_fraction > self.remote_fraction:
            raise SynthConfigError("reseller_fraction cannot exceed remote_fraction")
        if self.n_ixps < 1 or self.members_per_ixp < 2 or self.n_metros < 1:
            raise SynthConfigError("need at least one IXP, two members per IXP and one metro")
        corner = geodesic_km(
            GeoPoint(self.lat_range[0], self.lon_range[0]), GeoPoint(self.lat_range[1], self.lon_range[1])
        )
        if self.remote_fraction > self.reseller_fraction and self.min_remote_km >= corner:
            raise SynthConfigError(
                f"min_remote_km={self.min_remote_km} exceeds the geography extent (~{corner:.0f} km)"
            )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def synth_config_from_mapping(data: Mapping[str, Any]) -> SynthConfig:
    data = dict(data.get("synth", data))
    speed = SpeedModel(**data.pop("speed", {}))
    names = {f.name: f for f in dataclasses.fields(SynthConfig)}
    unknown = set(data) - set(names)
    if unknown:
        raise SynthConfigError(f"unknown synth keys: {sorted(unknown)}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    return SynthConfig(speed=speed, **data)


def load_synth_config(path: str | Path | None) -> SynthConfig:
    if path is None:
        return SynthConfig()
    with open(path, "rb") as fh:
        return synth_config_from_mapping(tomllib.load(fh))


@dataclass
class Membership:
    asn: int
    ixp_id: str
    ip: str
    kind: str  # "local" | "remote" | "reseller"
    capacity: float

    @property
    def label(self) -> str:
        return "Local" if self.kind == "local" else "Remote"


@dataclass
class Scenario:
    world: WorldModel
    measurements: Measurements
    ground_truth: dict[tuple[str, str], str]
    seed: int
    config: SynthConfig
    memberships: list[Membership] = field(default_factory=list)
    home: dict[int, str] = field(default_factory=dict)
    wide_area_ixps: frozenset[str] = frozenset()
    base_rtt_ms: dict[tuple[str, str], float] = field(default_factory=dict)
    distance_km: dict[tuple[str, str], float] = field(default_factory=dict)


class _Builder:
    def __init__(self, cfg: SynthConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.metros: list[GeoPoint] = []
        self.fac_loc: dict[str, GeoPoint] = {}
        self.fac_metro: dict[str, int] = {}
        self.metro_facs: list[list[str]] = []
        self.ixp_facs: dict[str, list[str]] = {}
        self.ixp_home: dict[str, str] = {}
        self.wide: set[str] = set()
        self.home: dict[int, str] = {}
        self.homed_at: dict[str, list[int]] = {}
        self.extra: dict[int, set[str]] = {}
        self.internal: dict[int, list[str]] = {}
        self.ttl_family: dict[int, int] = {}
        self.members: list[Membership] = []
        self.by_ixp: dict[str, list[Membership]] = {}

    # geography ------------------------------------------------------------

    def uniform(self, lo_hi: tuple[float, float]) -> float:
        return float(self.rng.uniform(*lo_hi))

    def randint(self, lo_hi: tuple[int, int]) -> int:
        return int(self.rng.integers(lo_hi[0], lo_hi[1] + 1))

    def place_metros(self) -> None:
        c = self.cfg
        tries = 0
        while len(self.metros) < c.n_metros:
            tries += 1
            if tries > 200 * c.n_metros:
                raise SynthConfigError("cannot place metros with the requested separation")
            p = GeoPoint(self.uniform(c.lat_range), self.uniform(c.lon_range))
            if all(geodesic_km(p, m, "haversine") >= c.min_metro_separation_km for m in self.metros):
                self.metros.append(p)
        for m, centre in enumerate(self.metros):
            facs = []
            for k in range(self.randint(c.facilities_per_metro)):
                fid = f"fac-{m:03d}-{k}"
                az = self.uniform((0.0, 360.0))
                dist = c.metro_radius_km * math.sqrt(self.rng.uniform())
                self.fac_loc[fid] = destination(centre, az, dist)
                self.fac_metro[fid] = m
                facs.append(fid)
            self.metro_facs.append(facs)

    def place_ixps(self) -> None:
        c = self.cfg
        n_wide = int(round(c.n_ixps * c.wide_area_fraction))
        wide_idx = set(self.rng.choice(c.n_ixps, size=n_wide, replace=False).tolist()) if n_wide else set()
        for i in range(c.n_ixps):
            ixp = f"ixp-{i:02d}"
            m = int(self.rng.integers(len(self.metros)))
            local = self.metro_facs[m]
            k = min(self.randint(c.ixp_facilities), len(local))
            facs = sorted(self.rng.choice(local, size=k, replace=False).tolist())
            if i in wide_idx and len(self.metros) > 1:
                others = [
                    x for x in range(len(self.metros))
                    if x != m and geodesic_km(self.metros[x], self.metros[m], "haversine") >= c.wide_area_min_km
                ]
                n_other = min(self.randint(c.wide_area_metros), len(others))
                for om in self.rng.choice(others, size=n_other, replace=False).tolist():
                    ofacs = self.metro_facs[om]
                    kk = min(self.randint((1, 2)), len(ofacs))
                    facs += sorted(self.rng.choice(ofacs, size=kk, replace=False).tolist())
                self.wide.add(ixp)
            self.ixp_facs[ixp] = facs
            self.ixp_home[ixp] = facs[0]

    def far_facilities(self, ixp: str) -> list[str]:
        """Facilities at least ``min_remote_km`` from every facility of ``ixp``.

        A haversine screen settles clear cases; pairs within 1% of the
        threshold are decided on the ellipsoid.
        """
        fids = sorted(self.fac_loc)
        lat = np.radians([self.fac_loc[f].lat for f in fids])
        lon = np.radians([self.fac_loc[f].lon for f in fids])
        cols = [fids.index(f) for f in self.ixp_facs[ixp]]
        dlat = lat[:, None] - lat[None, cols]
        dlon = lon[:, None] - lon[None, cols]
        h = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, cols]) * np.sin(dlon / 2) ** 2
        km = 2 * 6371.0088 * np.arcsin(np.sqrt(np.minimum(h, 1.0)))
        lim = self.cfg.min_remote_km
        out = []
        for i, f in enumerate(fids):
            row = km[i]
            if row.min() >= 1.01 * lim:
                out.append(f)
            elif row.min() >= 0.99 * lim and all(
                geodesic_km(self.fac_loc[f], self.fac_loc[g]) >= lim for g in self.ixp_facs[ixp]
            ):
                out.append(f)
        return out

    # ASes -----------------------------------------------------------------

    def new_as(self, home: str) -> int:
        asn = 1000 + len(self.home)
        k = len(self.home)
        if k >= 1 << 16:
            raise SynthConfigError("too many ASes for the synthetic address plan")
        self.home[asn] = home
        self.homed_at.setdefault(home, []).append(asn)
        base = AS_SPACE + (k << 8)
        self.internal[asn] = [int_to_ip(base + 1 + j) for j in range(self.cfg.internal_ips_per_router)]
        self.ttl_family[asn] = 255 if self.rng.uniform() < 0.7 else 64
        extra: set[str] = set()
        if self.rng.uniform() < self.cfg.extra_presence_prob:
            same = [f for f in self.metro_facs[self.fac_metro[home]] if f != home]
            if same:
                extra.add(str(self.rng.choice(same)))
        self.extra[asn] = extra
        return asn

    def pick_as(self, allowed: set[str], taken: set[int]) -> int:
        """Reuse an existing AS homed in ``allowed`` or create one there."""
        if self.rng.uniform() < self.cfg.as_reuse_prob:
            pool = sorted(a for f in allowed for a in self.homed_at.get(f, ()) if a not in taken)
            if pool:
                return int(self.rng.choice(pool))
        return self.new_as(str(self.rng.choice(sorted(allowed))))

    def populate(self) -> None:
        c = self.cfg
        all_facs = set(self.fac_loc)
        for ixp in sorted(self.ixp_facs):
            facs = set(self.ixp_facs[ixp])
            far = set(self.far_facilities(ixp))
            n = max(2, int(round(self.rng.normal(c.members_per_ixp, 0.1 * c.members_per_ixp))))
            taken: set[int] = set()
            base = IXP_SPACE + (int(ixp.split("-")[1]) << 10)
            rows = []
            for slot in range(n):
                u = self.rng.uniform()
                if u < c.reseller_fraction:
                    kind = "reseller"
                    if self.rng.uniform() < c.reseller_colocated_fraction:
                        allowed = facs
                    else:
                        allowed = (all_facs - facs) or facs
                    cap = float(self.rng.choice(FRACTIONAL_PORTS))
                elif u < c.remote_fraction:
                    kind = "remote"
                    if not far:
                        raise SynthConfigError(
                            f"{ixp}: no facility is {c.min_remote_km} km from the IXP; shrink min_remote_km"
                        )
                    allowed = far
                    cap = float(self.rng.choice(PHYSICAL_PORTS, p=(0.5, 0.45, 0.05)))
                else:
                    kind = "local"
                    allowed = facs
                    cap = float(self.rng.choice(PHYSICAL_PORTS, p=(0.4, 0.5, 0.1)))
                asn = self.pick_as(allowed, taken)
                taken.add(asn)
                rows.append(Membership(asn, ixp, int_to_ip(base + 10 + slot), kind, cap))
            self.by_ixp[ixp] = rows
            self.members.extend(rows)

    # datasets -------------------------------------------------------------

    def documents(self) -> list[tuple[str, dict]]:
        c = self.cfg
        rng = self.rng
        presence: dict[str, set[int]] = {f: set() for f in self.fac_loc}
        hidden = set()
        if c.missing_colo_fraction:
            hidden = {a for a in sorted(self.home) if rng.uniform() < c.missing_colo_fraction}
        for asn, h in self.home.items():
            if asn in hidden:
                continue
            presence[h].add(asn)
            for f in self.extra[asn]:
                presence[f].add(asn)
        if c.spurious_colo_fraction:
            for m in self.members:
                if m.kind == "remote" and m.asn not in hidden and rng.uniform() < c.spurious_colo_fraction:
                    presence[str(rng.choice(self.ixp_facs[m.ixp_id]))].add(m.asn)

        caps = {m.ip: m.capacity for m in self.members}
        if c.capacity_corruption:
            for ixp, rows in sorted(self.by_ixp.items()):
                for m in rows:
                    if rng.uniform() < c.capacity_corruption:
                        other = rows[int(rng.integers(len(rows)))]
                        caps[m.ip] = other.capacity

        ixps, pricing, vps = [], [], []
        for ixp in sorted(self.ixp_facs):
            base = IXP_SPACE + (int(ixp.split("-")[1]) << 10)
            ixps.append({
                "ixp_id": ixp,
                "name": ixp.upper(),
                "prefixes": [f"{int_to_ip(base)}/22"],
                "facility_ids": sorted(self.ixp_facs[ixp]),
                "route_server_ip": int_to_ip(base + 1),
            })
            pricing.append({"ixp_id": ixp, "min_physical_capacity": 1000.0, "capacity_options": list(PHYSICAL_PORTS)})
            lg = rng.uniform() < c.lg_fraction
            rounded = lg and rng.uniform() < c.rounded_lg_fraction
            vps.append({
                "vp_id": f"vp-{ixp}",
                "kind": "LookingGlass" if lg else "AtlasProbe",
                "ixp_id": ixp,
                "facility_id": self.ixp_home[ixp],
                "rtt_resolution": "IntegerRoundedUp" if rounded else "SubMillisecond",
            })
        self.vp_docs = vps
        facilities = [
            {
                "facility_id": f,
                "name": f.upper(),
                "latitude": round(loc.lat, 6),
                "longitude": round(loc.lon, 6),
                "hosted_asns": sorted(presence[f]),
            }
            for f, loc in sorted(self.fac_loc.items())
        ]
        interfaces = [
            {"ip": m.ip, "asn": m.asn, "ixp_id": m.ixp_id, "port_capacity": caps[m.ip]}
            for m in self.members
        ]
        routes = [
            {"prefix": f"{int_to_ip(AS_SPACE + ((asn - 1000) << 8))}/24", "asn": asn} for asn in sorted(self.home)
        ]
        labels = [{"ixp_id": m.ixp_id, "ip": m.ip, "label": m.label, "provenance": "Operator"} for m in self.members]
        return [
            ("ixps.json", {"kind": "ixps", "source": "Website", "records": ixps}),
            ("port_pricing.json", {"kind": "port_pricing", "source": "Website", "records": pricing}),
            ("facilities.json", {"kind": "facilities", "source": "PDB", "records": facilities}),
            ("interfaces.json", {"kind": "interfaces", "source": "Website", "records": interfaces}),
            ("routes.json", {"kind": "routes", "source": "Custom", "records": routes}),
            ("vantage_points.json", {"kind": "vantage_points", "source": "Custom", "records": vps}),
            ("labels.json", {"kind": "labels", "source": "Custom", "records": labels}),
        ]

    # measurements ---------------------------------------------------------

    def rtt_band(self, d_km: float) -> tuple[float, float]:
        """(fastest, slowest) RTT in ms for a distance under the speed model."""
        sp = self.cfg.speed
        lo = d_km * 1e6 / sp.v_max
        v = sp.v_min(d_km)
        hi = d_km * 1e6 / v if v > 0 else math.inf
        return lo, hi

    def pings(self, world: WorldModel) -> tuple[list[PingSample], dict, dict]:
        c = self.cfg
        rng = self.rng
        out: list[PingSample] = []
        base_rtt: dict[tuple[str, str], float] = {}
        dist: dict[tuple[str, str], float] = {}
        n = c.samples_per_pair
        times = np.arange(n) * c.sample_interval_s
        for vpd in self.vp_docs:
            vp = world.vantage_points[vpd["vp_id"]]
            vp_loc = self.fac_loc[vpd["facility_id"]]
            atlas = vp.kind.value == "AtlasProbe"
            rounded = vp.rtt_resolution.value == "IntegerRoundedUp"
            bad = atlas and rng.uniform() < c.bad_vp_fraction
            offset = 1.5 if bad else 0.0
            ixp = world.ixps[vp.ixp_id]
            targets = [(ixp.route_server_ip, None)] + [(m.ip, m.asn) for m in self.by_ixp[vp.ixp_id]]
            for ip, asn in targets:
                if asn is not None and rng.uniform() < c.unresponsive_fraction:
                    continue
                if asn is None:
                    d, family = 0.0, 255
                else:
                    d = geodesic_km(vp_loc, self.fac_loc[self.home[asn]])
                    family = self.ttl_family[asn]
                lo, hi = self.rtt_band(d)
                if math.isinf(hi):
                    base = lo + self.uniform((0.005, 0.05))
                else:
                    base = lo + self.uniform(c.band_position) * (hi - lo)
                base_rtt[(vp.vp_id, ip)] = base
                dist[(vp.vp_id, ip)] = d
                rtts = base + offset + rng.exponential(c.jitter_mean_ms, n)
                spikes = rng.uniform(size=n) < c.spike_prob
                rtts = rtts + spikes * rng.uniform(*c.spike_ms, size=n)
                if rounded:
                    rtts = np.maximum(np.ceil(rtts), 1.0)
                ttls = np.full(n, family - (1 if atlas else 0))
                ttls[rng.uniform(size=n) < c.ttl_noise_prob] -= 3
                if asn is not None and rng.uniform() < c.ttl_switch_prob:
                    other = 64 if family == 255 else 255
                    flip = rng.uniform(size=n) < 0.5
                    ttls[flip] = other - (1 if atlas else 0)
                for t, r, ttl in zip(times, rtts, ttls):
                    out.append(PingSample(vp.vp_id, ip, float(r), int(ttl), float(t)))
        return out, base_rtt, dist

    def traceroutes(self) -> tuple[list[TraceroutePath], list[list[str]]]:
        c = self.cfg
        rng = self.rng
        paths: list[TraceroutePath] = []
        n = 0

        def emit(ips: list[str]) -> None:
            nonlocal n
            start = int(rng.integers(2, 8))
            hops = tuple(Hop(start + k, ip, None) for k, ip in enumerate(ips))
            paths.append(TraceroutePath(f"syn-{n}", hops))
            n += 1

        for ixp in sorted(self.by_ixp):
            rows = self.by_ixp[ixp]
            for m in rows:
                others = [o for o in rows if o.asn != m.asn]
                if not others:
                    continue
                for _ in range(c.paths_per_membership):
                    far = others[int(rng.integers(len(others)))]
                    near_ip = self.internal[m.asn][int(rng.integers(len(self.internal[m.asn])))]
                    far_ip = self.internal[far.asn][int(rng.integers(len(self.internal[far.asn])))]
                    emit([near_ip, far.ip, far_ip])

        at_facility: dict[str, list[int]] = {}
        for asn, h in sorted(self.home.items()):
            at_facility.setdefault(h, []).append(asn)
        asns = sorted(self.home)
        for asn in asns:
            h = self.home[asn]
            same = [a for a in at_facility[h] if a != asn]
            k = min(self.randint(c.private_neighbors), len(same))
            chosen = list(rng.choice(same, size=k, replace=False)) if k else []
            if rng.uniform() < c.tethered_prob:
                metro = [a for f in self.metro_facs[self.fac_metro[h]] if f != h for a in at_facility.get(f, [])]
                if metro:
                    chosen.append(rng.choice(metro))
            for nb in chosen:
                nb = int(nb)
                a_ip = self.internal[asn][int(rng.integers(len(self.internal[asn])))]
                b_ip = self.internal[nb][int(rng.integers(len(self.internal[nb])))]
                emit([a_ip, b_ip])

        aliases = []
        ixp_ips: dict[int, list[str]] = {}
        for m in self.members:
            ixp_ips.setdefault(m.asn, []).append(m.ip)
        for asn in asns:
            if rng.uniform() >= c.alias_completeness:
                continue
            aliases.append(sorted(self.internal[asn] + ixp_ips.get(asn, []), key=ip_to_int))
        return paths, aliases


def generate(config: SynthConfig | None = None, seed: int = 0) -> Scenario:
    """Build a deterministic scenario; the same (config, seed) gives the same bytes."""
    cfg = config or SynthConfig()
    b = _Builder(cfg, seed)
    b.place_metros()
    b.place_ixps()
    b.populate()
    world = parse_world(b.documents())
    pings, base_rtt, dist = b.pings(world)
    traces, aliases = b.traceroutes()
    truth = {(m.ip, m.ixp_id): m.label for m in b.members}
    return Scenario(
        world=world,
        measurements=Measurements(pings, traces, aliases),
        ground_truth=truth,
        seed=seed,
        config=cfg,
        memberships=list(b.members),
        home=dict(b.home),
        wide_area_ixps=frozenset(b.wide),
        base_rtt_ms=base_rtt,
        distance_km=dist,
    )


def oracle_classify(scenario: Scenario) -> dict[tuple[str, str], str]:
    """The generator's own ground truth, keyed by (interface ip, ixp id)."""
    return dict(scenario.ground_truth)


def write_scenario(scenario: Scenario, out_dir: str | Path) -> dict[str, Path]:
    """Write the scenario in the formats ``ingest`` and ``infer`` consume."""
    out = Path(out_dir)
    ds = out / "datasets"
    ds.mkdir(parents=True, exist_ok=True)
    for name, doc in scenario.world.to_documents():
        (ds / name).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    files = {
        "datasets": ds,
        "pings": out / "pings.csv",
        "traces": out / "traces.jsonl",
        "aliases": out / "aliases.jsonl",
        "labels": out / "labels.json",
        "config": out / "synth_config.json",
    }
    write_pings_csv(scenario.measurements.pings, files["pings"])
    write_jsonl((path_to_json(p) for p in scenario.measurements.traceroutes), files["traces"])
    write_jsonl(({"ips": list(s)} for s in scenario.measurements.alias_sets), files["aliases"])
    labels = [
        {"ixp_id": ixp, "ip": ip, "label": lab, "provenance": "Operator"}
        for (ip, ixp), lab in sorted(scenario.ground_truth.items(), key=lambda kv: (kv[0][1], ip_to_int(kv[0][0])))
    ]
    files["labels"].write_text(
        json.dumps({"kind": "labels", "source": "Custom", "records": labels}, indent=1, sort_keys=True) + "\n"
    )
    files["config"].write_text(
        json.dumps({"seed": scenario.seed, **scenario.config.to_dict()}, indent=1, sort_keys=True) + "\n"
    )
    return files
