"""Dataset ingestion: parse per-source JSON documents into one merged world model.

Every input document has the shape ``{"kind": ..., "source": ..., "records": [...]}``.
Cross-source disagreements are settled by a fixed source precedence, and the
per-source accounting (totals, unique entries, conflicts) is kept alongside the
merged model. Records that violate an invariant are quarantined with a reason
rather than silently dropped.
"""
from __future__ import annotations

import enum
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .geo import GeoPoint
from .measurements import RttResolution, VantagePoint, VpKind
from .prefixes import PrefixTable, int_to_ip, ip_to_int, is_unroutable, parse_prefix

log = logging.getLogger(__name__)

KINDS = ("ixps", "interfaces", "facilities", "port_pricing", "labels", "routes", "vantage_points")


class IngestError(ValueError):
    """Malformed input document or record."""


class LinkError(IngestError):
    """A record references an IXP that no document defines."""


class SourceTag(str, enum.Enum):
    WEBSITE = "Website"
    HE = "HE"
    PDB = "PDB"
    PCH = "PCH"
    INFLECT = "Inflect"
    CUSTOM = "Custom"


# Lower rank wins. Inflect sits with Website (it is used to correct facility
# coordinates); Custom is last unless a caller overrides the table.
DEFAULT_PRECEDENCE: dict[SourceTag, int] = {
    SourceTag.WEBSITE: 0,
    SourceTag.INFLECT: 0,
    SourceTag.HE: 1,
    SourceTag.PDB: 2,
    SourceTag.PCH: 3,
    SourceTag.CUSTOM: 4,
}


class Label(str, enum.Enum):
    LOCAL = "Local"
    REMOTE = "Remote"


class Provenance(str, enum.Enum):
    OPERATOR = "Operator"
    WEBSITE = "Website"


def _canonical(value: Any) -> str:
    return json.dumps(value, sort_keys=True, default=str)


def resolve_conflicts(
    entries: Sequence[tuple[Any, SourceTag]],
    precedence: Mapping[SourceTag, int] | None = None,
) -> Any:
    """Return the value reported by the highest-precedence source.

    Ties inside one precedence level go to the lexicographically smallest
    value (by canonical JSON), so the result never depends on input order.
    """
    if not entries:
        raise ValueError("resolve_conflicts needs at least one entry")
    prec = precedence or DEFAULT_PRECEDENCE
    best = min(prec[SourceTag(src)] for _, src in entries)
    top = [value for value, src in entries if prec[SourceTag(src)] == best]
    keyed = sorted(top, key=_canonical)
    if len({_canonical(v) for v in keyed}) > 1:
        log.info("precedence tie between %s; picked %r", keyed, keyed[0])
    return keyed[0]


@dataclass(frozen=True)
class IxpRecord:
    ixp_id: str
    name: str
    prefixes: tuple[str, ...]
    facility_ids: frozenset[str] = frozenset()
    min_physical_capacity: float | None = None
    capacity_options: tuple[float, ...] = ()
    route_server_ip: str | None = None
    # old members still on sub-minimum physical ports; skipped by the port-capacity step
    step1_exempt_asns: frozenset[int] = frozenset()


@dataclass(frozen=True)
class MemberInterface:
    ip: str
    asn: int
    ixp_id: str
    port_capacity: float | None = None
    source: SourceTag = SourceTag.CUSTOM


@dataclass(frozen=True)
class FacilityRecord:
    facility_id: str
    name: str
    location: GeoPoint | None
    hosted_asns: frozenset[int] = frozenset()
    hosted_ixps: frozenset[str] = frozenset()
    source: SourceTag = SourceTag.CUSTOM


@dataclass(frozen=True)
class ValidationLabel:
    ixp_id: str
    label: Label
    provenance: Provenance = Provenance.OPERATOR
    ip: str | None = None
    asn: int | None = None


@dataclass
class SourceCounts:
    total: int = 0
    unique: int = 0
    conflicts: int = 0


@dataclass
class IngestReport:
    """Per-kind, per-source accounting plus the quarantine list."""

    counts: dict[str, dict[str, SourceCounts]] = field(default_factory=dict)
    merged_totals: dict[str, int] = field(default_factory=dict)
    quarantine: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "counts": {
                kind: {src: vars(c).copy() for src, c in sorted(per.items())}
                for kind, per in sorted(self.counts.items())
            },
            "merged_totals": dict(sorted(self.merged_totals.items())),
            "quarantine": self.quarantine,
        }


@dataclass(frozen=True)
class WorldModel:
    """Merged, read-only view of IXPs, interfaces, facilities and routing data."""

    ixps: dict[str, IxpRecord]
    interfaces: dict[str, MemberInterface]
    facilities: dict[str, FacilityRecord]
    labels: tuple[ValidationLabel, ...] = ()
    routes: tuple[tuple[str, int], ...] = ()
    vantage_points: dict[str, VantagePoint] = field(default_factory=dict)
    report: IngestReport = field(default_factory=IngestReport, compare=False, repr=False)

    _ixp_table: PrefixTable = field(init=False, compare=False, repr=False)
    _route_table: PrefixTable = field(init=False, compare=False, repr=False)
    _members: dict = field(init=False, compare=False, repr=False)
    _by_ixp: dict = field(init=False, compare=False, repr=False)
    _as_facs: dict = field(init=False, compare=False, repr=False)
    _ixp_facs: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        ixp_table: PrefixTable[str] = PrefixTable()
        for rec in self.ixps.values():
            for p in rec.prefixes:
                ixp_table.insert(p, rec.ixp_id)
        members: dict[str, set[int]] = defaultdict(set)
        by_ixp: dict[str, list[MemberInterface]] = defaultdict(list)
        for iface in self.interfaces.values():
            members[iface.ixp_id].add(iface.asn)
            by_ixp[iface.ixp_id].append(iface)
        for lst in by_ixp.values():
            lst.sort(key=lambda i: ip_to_int(i.ip))
        as_facs: dict[int, set[str]] = defaultdict(set)
        ixp_facs: dict[str, set[str]] = defaultdict(set)
        for fac in self.facilities.values():
            for asn in fac.hosted_asns:
                as_facs[asn].add(fac.facility_id)
            for ixp in fac.hosted_ixps:
                ixp_facs[ixp].add(fac.facility_id)
        for rec in self.ixps.values():
            ixp_facs[rec.ixp_id].update(rec.facility_ids)
        object.__setattr__(self, "_ixp_table", ixp_table)
        object.__setattr__(self, "_route_table", PrefixTable(self.routes))
        object.__setattr__(self, "_members", {k: frozenset(v) for k, v in members.items()})
        object.__setattr__(self, "_by_ixp", {k: tuple(v) for k, v in by_ixp.items()})
        object.__setattr__(self, "_as_facs", {k: frozenset(v) for k, v in as_facs.items()})
        object.__setattr__(self, "_ixp_facs", {k: frozenset(v) for k, v in ixp_facs.items()})

    # lookups ---------------------------------------------------------------

    def ixp_of_ip(self, ip: str) -> str | None:
        return self._ixp_table.lookup(ip)

    def lookup_ip_to_asn(self, ip: str) -> int | None:
        return self._route_table.lookup(ip)

    def asn_of(self, ip: str) -> int | None:
        """ASN owning a hop address: interface table inside IXP LANs, else LPM."""
        if self._ixp_table.lookup(ip) is not None:
            iface = self.interfaces.get(ip)
            return iface.asn if iface else None
        if is_unroutable(ip):
            return None
        return self._route_table.lookup(ip)

    def members(self, ixp_id: str) -> frozenset[int]:
        return self._members.get(ixp_id, frozenset())

    def interfaces_at(self, ixp_id: str) -> tuple[MemberInterface, ...]:
        return self._by_ixp.get(ixp_id, ())

    def ixp_facilities(self, ixp_id: str) -> frozenset[str]:
        return self._ixp_facs.get(ixp_id, frozenset())

    def as_facilities(self, asn: int) -> frozenset[str]:
        return self._as_facs.get(asn, frozenset())

    def location(self, facility_id: str) -> GeoPoint | None:
        fac = self.facilities.get(facility_id)
        return fac.location if fac else None

    def vp_location(self, vp: VantagePoint) -> GeoPoint | None:
        if vp.location is not None:
            return vp.location
        return self.location(vp.facility_id) if vp.facility_id else None

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "ixps": [_ixp_to_json(r) for _, r in sorted(self.ixps.items())],
            "interfaces": [
                _iface_to_json(i)
                for i in sorted(self.interfaces.values(), key=lambda i: ip_to_int(i.ip))
            ],
            "facilities": [_fac_to_json(f) for _, f in sorted(self.facilities.items())],
            "labels": [_label_to_json(lb) for lb in self.labels],
            "routes": [{"prefix": p, "asn": a} for p, a in self.routes],
            "vantage_points": [_vp_to_json(v) for _, v in sorted(self.vantage_points.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorldModel":
        try:
            return cls(
                ixps={r["ixp_id"]: _ixp_from_json(r) for r in data["ixps"]},
                interfaces={r["ip"]: _iface_from_json(r) for r in data["interfaces"]},
                facilities={r["facility_id"]: _fac_from_json(r) for r in data["facilities"]},
                labels=tuple(_label_from_json(r) for r in data.get("labels", [])),
                routes=tuple((r["prefix"], int(r["asn"])) for r in data.get("routes", [])),
                vantage_points={
                    r["vp_id"]: _vp_from_json(r) for r in data.get("vantage_points", [])
                },
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"world model: {exc!r}") from exc

    def to_documents(self) -> list[tuple[str, dict[str, Any]]]:
        """Re-express the model as input documents (inverse of parse_world)."""
        docs: list[tuple[str, dict[str, Any]]] = []

        def doc(kind: str, source: str, records: list) -> None:
            if records:
                docs.append((f"{kind}-{source}.json", {"kind": kind, "source": source, "records": records}))

        ixp_recs, pricing = [], []
        for _, r in sorted(self.ixps.items()):
            d = _ixp_to_json(r)
            pr = {
                "ixp_id": r.ixp_id,
                "min_physical_capacity": d.pop("min_physical_capacity"),
                "capacity_options": d.pop("capacity_options"),
            }
            ixp_recs.append(d)
            if pr["min_physical_capacity"] is not None or pr["capacity_options"]:
                pricing.append(pr)
        doc("ixps", SourceTag.WEBSITE.value, ixp_recs)
        doc("port_pricing", SourceTag.WEBSITE.value, pricing)
        by_src: dict[str, list] = defaultdict(list)
        for i in sorted(self.interfaces.values(), key=lambda i: ip_to_int(i.ip)):
            by_src[i.source.value].append(_iface_to_json(i))
        for src, recs in sorted(by_src.items()):
            doc("interfaces", src, recs)
        by_src = defaultdict(list)
        for _, f in sorted(self.facilities.items()):
            by_src[f.source.value].append(_fac_to_json(f))
        for src, recs in sorted(by_src.items()):
            doc("facilities", src, recs)
        doc("labels", SourceTag.CUSTOM.value, [_label_to_json(lb) for lb in self.labels])
        doc("routes", SourceTag.CUSTOM.value, [{"prefix": p, "asn": a} for p, a in self.routes])
        doc(
            "vantage_points",
            SourceTag.CUSTOM.value,
            [_vp_to_json(v) for _, v in sorted(self.vantage_points.items())],
        )
        return docs


def lookup_ip_to_asn(ip: str, routing_table: PrefixTable[int] | Mapping[str, int]) -> int | None:
    """Longest-prefix match of ``ip`` against a prefix->ASN table."""
    if not isinstance(routing_table, PrefixTable):
        routing_table = PrefixTable(routing_table.items())
    try:
        return routing_table.lookup(ip)
    except ValueError as exc:
        raise IngestError(f"invalid IP literal {ip!r}") from exc


# --- JSON converters -------------------------------------------------------


def _opt_float(v: Any) -> float | None:
    return None if v is None else float(v)


def _ixp_to_json(r: IxpRecord) -> dict[str, Any]:
    return {
        "ixp_id": r.ixp_id,
        "name": r.name,
        "prefixes": list(r.prefixes),
        "facility_ids": sorted(r.facility_ids),
        "min_physical_capacity": r.min_physical_capacity,
        "capacity_options": list(r.capacity_options),
        "route_server_ip": r.route_server_ip,
        "step1_exempt_asns": sorted(r.step1_exempt_asns),
    }


def _ixp_from_json(d: Mapping[str, Any]) -> IxpRecord:
    return IxpRecord(
        ixp_id=str(d["ixp_id"]),
        name=str(d.get("name", d["ixp_id"])),
        prefixes=tuple(d.get("prefixes", ())),
        facility_ids=frozenset(map(str, d.get("facility_ids", ()))),
        min_physical_capacity=_opt_float(d.get("min_physical_capacity")),
        capacity_options=tuple(float(c) for c in d.get("capacity_options", ())),
        route_server_ip=d.get("route_server_ip"),
        step1_exempt_asns=frozenset(int(a) for a in d.get("step1_exempt_asns", ())),
    )


def _iface_to_json(i: MemberInterface) -> dict[str, Any]:
    return {
        "ip": i.ip,
        "asn": i.asn,
        "ixp_id": i.ixp_id,
        "port_capacity": i.port_capacity,
        "source": i.source.value,
    }


def _iface_from_json(d: Mapping[str, Any]) -> MemberInterface:
    ip_to_int(d["ip"])
    return MemberInterface(
        ip=d["ip"],
        asn=int(d["asn"]),
        ixp_id=str(d["ixp_id"]),
        port_capacity=_opt_float(d.get("port_capacity")),
        source=SourceTag(d.get("source", "Custom")),
    )


def _fac_to_json(f: FacilityRecord) -> dict[str, Any]:
    return {
        "facility_id": f.facility_id,
        "name": f.name,
        "latitude": f.location.lat if f.location else None,
        "longitude": f.location.lon if f.location else None,
        "hosted_asns": sorted(f.hosted_asns),
        "hosted_ixps": sorted(f.hosted_ixps),
        "source": f.source.value,
    }


def _point(lat: Any, lon: Any) -> GeoPoint | None:
    if lat is None or lon is None:
        return None
    return GeoPoint(float(lat), float(lon))


def _fac_from_json(d: Mapping[str, Any]) -> FacilityRecord:
    return FacilityRecord(
        facility_id=str(d["facility_id"]),
        name=str(d.get("name", d["facility_id"])),
        location=_point(d.get("latitude"), d.get("longitude")),
        hosted_asns=frozenset(int(a) for a in d.get("hosted_asns", ())),
        hosted_ixps=frozenset(map(str, d.get("hosted_ixps", ()))),
        source=SourceTag(d.get("source", "Custom")),
    )


def _label_to_json(lb: ValidationLabel) -> dict[str, Any]:
    out: dict[str, Any] = {"ixp_id": lb.ixp_id, "label": lb.label.value, "provenance": lb.provenance.value}
    if lb.ip is not None:
        out["ip"] = lb.ip
    if lb.asn is not None:
        out["asn"] = lb.asn
    return out


def _label_from_json(d: Mapping[str, Any]) -> ValidationLabel:
    if d.get("ip") is None and d.get("asn") is None:
        raise ValueError("label needs an ip or an asn")
    if d.get("ip") is not None:
        ip_to_int(d["ip"])
    return ValidationLabel(
        ixp_id=str(d["ixp_id"]),
        label=Label(d["label"]),
        provenance=Provenance(d.get("provenance", "Operator")),
        ip=d.get("ip"),
        asn=None if d.get("asn") is None else int(d["asn"]),
    )


def _vp_to_json(v: VantagePoint) -> dict[str, Any]:
    return {
        "vp_id": v.vp_id,
        "kind": v.kind.value,
        "ixp_id": v.ixp_id,
        "facility_id": v.facility_id,
        "latitude": v.location.lat if v.location else None,
        "longitude": v.location.lon if v.location else None,
        "rtt_resolution": v.rtt_resolution.value,
    }


def _vp_from_json(d: Mapping[str, Any]) -> VantagePoint:
    return VantagePoint(
        vp_id=str(d["vp_id"]),
        kind=VpKind(d["kind"]),
        ixp_id=str(d["ixp_id"]),
        location=_point(d.get("latitude"), d.get("longitude")),
        facility_id=d.get("facility_id"),
        rtt_resolution=RttResolution(d.get("rtt_resolution", RttResolution.SUB_MS.value)),
    )


# --- parsing and merging ---------------------------------------------------


def load_documents(directory: str | Path) -> list[tuple[str, dict[str, Any]]]:
    """Read every ``*.json`` file in a directory, sorted by file name."""
    docs = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            docs.append((path.name, json.loads(path.read_text())))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path.name}: invalid JSON at offset {exc.pos}: {exc.msg}") from exc
    return docs


class _Candidates:
    """Collects (value, source) claims per key for one field."""

    def __init__(self) -> None:
        self.claims: dict[Hashable, list[tuple[Any, SourceTag]]] = defaultdict(list)

    def add(self, key: Hashable, value: Any, source: SourceTag) -> None:
        self.claims[key].append((value, source))

    def resolve(self, precedence: Mapping[SourceTag, int]) -> dict[Hashable, Any]:
        return {k: resolve_conflicts(v, precedence) for k, v in self.claims.items()}

    def account(
        self, resolved: Mapping[Hashable, Any], sources: Iterable[SourceTag]
    ) -> dict[str, SourceCounts]:
        """Table-1-style counts: keys per source, keys only this source has, and
        keys where this source disagrees with the merged value."""
        out = {s.value: SourceCounts() for s in sources}
        for key, claims in self.claims.items():
            by_src: dict[SourceTag, set[str]] = defaultdict(set)
            for value, src in claims:
                by_src[src].add(_canonical(value))
            final = _canonical(resolved[key])
            for src, values in by_src.items():
                c = out.setdefault(src.value, SourceCounts())
                c.total += 1
                if len(by_src) == 1:
                    c.unique += 1
                if values != {final}:
                    c.conflicts += 1
        return out


def _records(name: str, doc: Any) -> tuple[str, SourceTag, list]:
    if not isinstance(doc, Mapping):
        raise IngestError(f"{name}: top level must be an object")
    for key in ("kind", "source", "records"):
        if key not in doc:
            raise IngestError(f"{name}: missing top-level key {key!r}")
    if doc["kind"] not in KINDS:
        raise IngestError(f"{name}: unknown kind {doc['kind']!r}")
    try:
        source = SourceTag(doc["source"])
    except ValueError:
        raise IngestError(f"{name}: unknown source {doc['source']!r}") from None
    if not isinstance(doc["records"], list):
        raise IngestError(f"{name}: records must be a list")
    return doc["kind"], source, doc["records"]


def parse_world(
    documents: Sequence[tuple[str, Mapping[str, Any]]],
    precedence: Mapping[SourceTag, int] | None = None,
) -> WorldModel:
    """Merge named documents into a :class:`WorldModel`.

    The ingest accounting is attached as ``world.report``.
    """
    prec = {**DEFAULT_PRECEDENCE, **(precedence or {})}
    report = IngestReport()
    q = report.quarantine

    prefix_owner = _Candidates()
    ixp_name, ixp_rs = _Candidates(), _Candidates()
    ixp_facs: dict[str, set[str]] = defaultdict(set)
    ixp_exempt: dict[str, set[int]] = defaultdict(set)
    ixp_seen: set[str] = set()
    cmin, copts = _Candidates(), _Candidates()
    if_asn, if_ixp, if_cap = _Candidates(), _Candidates(), _Candidates()
    fac_name, fac_loc = _Candidates(), _Candidates()
    fac_asns: dict[str, set[int]] = defaultdict(set)
    fac_ixps: dict[str, set[str]] = defaultdict(set)
    labels: dict[tuple, set[Label]] = defaultdict(set)
    label_prov: dict[tuple, Provenance] = {}
    routes = _Candidates()
    vps = _Candidates()
    refs: list[tuple[str, str, str]] = []  # (document, offset, ixp_id)
    sources: set[SourceTag] = set()

    for name, doc in documents:
        kind, src, recs = _records(name, doc)
        sources.add(src)
        for off, r in enumerate(recs):
            where = f"{name}: record {off}"
            try:
                if kind == "ixps":
                    ixp = str(r["ixp_id"])
                    ixp_seen.add(ixp)
                    ixp_name.add(ixp, str(r.get("name", ixp)), src)
                    for p in r.get("prefixes", ()):
                        parse_prefix(p)
                        prefix_owner.add(p, ixp, src)
                    ixp_facs[ixp].update(map(str, r.get("facility_ids", ())))
                    if r.get("route_server_ip"):
                        ip_to_int(r["route_server_ip"])
                        ixp_rs.add(ixp, r["route_server_ip"], src)
                    ixp_exempt[ixp].update(int(a) for a in r.get("step1_exempt_asns", ()))
                elif kind == "port_pricing":
                    ixp = str(r["ixp_id"])
                    refs.append((name, str(off), ixp))
                    if r.get("min_physical_capacity") is not None:
                        cmin.add(ixp, float(r["min_physical_capacity"]), src)
                    if r.get("capacity_options"):
                        copts.add(ixp, sorted(float(c) for c in r["capacity_options"]), src)
                elif kind == "interfaces":
                    ip = r["ip"]
                    ip_to_int(ip)
                    ixp = str(r["ixp_id"])
                    refs.append((name, str(off), ixp))
                    if_asn.add(ip, int(r["asn"]), src)
                    if_ixp.add(ip, ixp, src)
                    if r.get("port_capacity") is not None:
                        if_cap.add(ip, float(r["port_capacity"]), src)
                elif kind == "facilities":
                    fid = str(r["facility_id"])
                    fac_name.add(fid, str(r.get("name", fid)), src)
                    lat, lon = r.get("latitude"), r.get("longitude")
                    if lat is not None and lon is not None:
                        fac_loc.add(fid, (float(lat), float(lon)), src)
                    fac_asns[fid].update(int(a) for a in r.get("hosted_asns", ()))
                    fac_ixps[fid].update(map(str, r.get("hosted_ixps", ())))
                elif kind == "labels":
                    lb = _label_from_json(r)
                    refs.append((name, str(off), lb.ixp_id))
                    key = (lb.ixp_id, lb.ip, lb.asn)
                    labels[key].add(lb.label)
                    label_prov.setdefault(key, lb.provenance)
                elif kind == "routes":
                    parse_prefix(r["prefix"])
                    routes.add(r["prefix"], int(r["asn"]), src)
                elif kind == "vantage_points":
                    vp = _vp_from_json(r)
                    refs.append((name, str(off), vp.ixp_id))
                    vps.add(vp.vp_id, _vp_to_json(vp), src)
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, IngestError):
                    raise
                raise IngestError(f"{where}: {exc!r}") from exc

    for name, off, ixp in refs:
        if ixp not in ixp_seen:
            raise LinkError(f"{name}: record {off}: unknown ixp_id {ixp!r}")

    # prefixes -> owning IXP
    owner = prefix_owner.resolve(prec)
    report.counts["prefixes"] = prefix_owner.account(owner, sources)
    report.merged_totals["prefixes"] = len(owner)
    ixp_prefixes: dict[str, list[str]] = defaultdict(list)
    for p, ixp in owner.items():
        ixp_prefixes[ixp].append(p)
    for ixp, plist in ixp_prefixes.items():
        kept: list[str] = []
        for p in sorted(plist, key=lambda p: (parse_prefix(p)[1], parse_prefix(p)[0])):
            net, length = parse_prefix(p)
            clash = next((k for k in kept if _overlaps(k, net, length)), None)
            if clash:
                q.append({"kind": "prefixes", "key": p, "reason": f"overlaps {clash} of {ixp}"})
            else:
                kept.append(p)
        ixp_prefixes[ixp] = sorted(kept, key=lambda p: parse_prefix(p))

    # facilities
    locs = fac_loc.resolve(prec)
    report.counts["facilities"] = fac_loc.account(locs, sources)
    names = fac_name.resolve(prec)
    facilities: dict[str, FacilityRecord] = {}
    for fid in sorted(names):
        loc = locs.get(fid)
        point = None
        if loc is not None:
            lat, lon = loc
            if -90 <= lat <= 90 and -180 <= lon <= 180:
                point = GeoPoint(lat, lon)
            else:
                q.append({"kind": "facilities", "key": fid, "reason": f"coordinates out of range {loc}"})
        claims = fac_loc.claims.get(fid) or fac_name.claims[fid]
        best_src = min((s for _, s in claims), key=lambda s: (prec[s], s.value))
        hosted = set()
        for ixp in fac_ixps[fid]:
            if ixp in ixp_seen:
                hosted.add(ixp)
            else:
                q.append({"kind": "facilities", "key": fid, "reason": f"hosts unknown ixp {ixp}"})
        facilities[fid] = FacilityRecord(fid, names[fid], point, frozenset(fac_asns[fid]), frozenset(hosted), best_src)
    report.merged_totals["facilities"] = len(facilities)

    # IXPs (facility links are made symmetric)
    ixp_names = ixp_name.resolve(prec)
    rs = ixp_rs.resolve(prec)
    cmins = cmin.resolve(prec)
    opts = copts.resolve(prec)
    for fid, fac in facilities.items():
        for ixp in fac.hosted_ixps:
            ixp_facs[ixp].add(fid)
    ixps: dict[str, IxpRecord] = {}
    for ixp in sorted(ixp_seen):
        fids = set()
        for fid in ixp_facs[ixp]:
            if fid in facilities:
                fids.add(fid)
            else:
                q.append({"kind": "ixps", "key": ixp, "reason": f"unresolved facility {fid}"})
        c = cmins.get(ixp)
        if c is not None and c <= 0:
            q.append({"kind": "port_pricing", "key": ixp, "reason": f"non-positive min capacity {c}"})
            c = None
        ixps[ixp] = IxpRecord(
            ixp_id=ixp,
            name=ixp_names.get(ixp, ixp),
            prefixes=tuple(ixp_prefixes.get(ixp, ())),
            facility_ids=frozenset(fids),
            min_physical_capacity=c,
            capacity_options=tuple(opts.get(ixp, ())),
            route_server_ip=rs.get(ixp),
            step1_exempt_asns=frozenset(ixp_exempt[ixp]),
        )
    for fid, fac in list(facilities.items()):
        linked = {i for i, r in ixps.items() if fid in r.facility_ids}
        if linked != fac.hosted_ixps:
            facilities[fid] = FacilityRecord(
                fac.facility_id, fac.name, fac.location, fac.hosted_asns, frozenset(linked), fac.source
            )
    report.merged_totals["ixps"] = len(ixps)

    # interfaces
    asns = if_asn.resolve(prec)
    report.counts["interfaces"] = if_asn.account(asns, sources)
    if_ixps = if_ixp.resolve(prec)
    caps = if_cap.resolve(prec)
    ixp_table: PrefixTable[str] = PrefixTable(
        (p, r.ixp_id) for r in ixps.values() for p in r.prefixes
    )
    interfaces: dict[str, MemberInterface] = {}
    for ip in sorted(asns, key=ip_to_int):
        asn, ixp = asns[ip], if_ixps[ip]
        src = min((s for a, s in if_asn.claims[ip] if a == asn), key=lambda s: (prec[s], s.value))
        if asn <= 0:
            q.append({"kind": "interfaces", "key": ip, "reason": f"invalid asn {asn}"})
            continue
        if ixp_table.lookup(ip) != ixp:
            q.append({"kind": "interfaces", "key": ip, "reason": f"not inside a peering LAN of {ixp}"})
            continue
        interfaces[ip] = MemberInterface(ip, asn, ixp, caps.get(ip), src)
    report.merged_totals["interfaces"] = len(interfaces)

    # labels: contradictory pairs are quarantined, never guessed
    out_labels = []
    for key in sorted(labels, key=lambda k: (k[0], k[1] or "", k[2] or 0)):
        vals = labels[key]
        if len(vals) > 1:
            q.append({"kind": "labels", "key": list(key), "reason": "both Local and Remote"})
            continue
        ixp, ip, asn = key
        out_labels.append(ValidationLabel(ixp, next(iter(vals)), label_prov[key], ip, asn))

    route_map = routes.resolve(prec)
    route_list = tuple(sorted(route_map.items(), key=lambda kv: parse_prefix(kv[0])))

    vp_map: dict[str, VantagePoint] = {}
    for vp_id, rec in sorted(vps.resolve(prec).items()):
        vp = _vp_from_json(rec)
        if vp.location is None and (vp.facility_id is None or facilities.get(vp.facility_id) is None
                                    or facilities[vp.facility_id].location is None):
            q.append({"kind": "vantage_points", "key": vp_id, "reason": "location unresolvable"})
            continue
        vp_map[vp_id] = vp

    return WorldModel(
        ixps=ixps,
        interfaces=interfaces,
        facilities=facilities,
        labels=tuple(out_labels),
        routes=route_list,
        vantage_points=vp_map,
        report=report,
    )


def _overlaps(prefix: str, net: int, length: int) -> bool:
    n2, l2 = parse_prefix(prefix)
    short = min(length, l2)
    mask = ((1 << 32) - 1) ^ ((1 << (32 - short)) - 1) if short else 0
    return (net & mask) == (n2 & mask)


def dump_world(world: WorldModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=1, sort_keys=True) + "\n")


def load_world(path: str | Path) -> WorldModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON at offset {exc.pos}: {exc.msg}") from exc
    return WorldModel.from_dict(data)


__all__ = [
    "DEFAULT_PRECEDENCE",
    "FacilityRecord",
    "IngestError",
    "IngestReport",
    "IxpRecord",
    "Label",
    "LinkError",
    "MemberInterface",
    "Provenance",
    "SourceTag",
    "ValidationLabel",
    "WorldModel",
    "dump_world",
    "int_to_ip",
    "load_documents",
    "load_world",
    "lookup_ip_to_asn",
    "parse_world",
    "resolve_conflicts",
]
