"""Ping and traceroute processing.

Pings become one filtered minimum RTT per (vantage point, target). Traceroutes
yield IXP crossings, alias-set routers with their next-hop IXPs, and the
AS adjacencies seen over private interconnections.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

from .geo import GeoPoint
from .prefixes import ip_to_int

if TYPE_CHECKING:
    from .ingest import WorldModel

log = logging.getLogger(__name__)

INITIAL_TTLS = (64, 255)
PING_COLUMNS = ("vp_id", "target_ip", "rtt_ms", "reply_ttl", "timestamp")


class MeasurementError(ValueError):
    """Malformed measurement log line."""


class VpKind(str, enum.Enum):
    LOOKING_GLASS = "LookingGlass"
    ATLAS_PROBE = "AtlasProbe"


class RttResolution(str, enum.Enum):
    SUB_MS = "SubMillisecond"
    ROUNDED_UP = "IntegerRoundedUp"


# hops allowed between the replying interface and the VP
MAX_TTL_HOPS = {VpKind.LOOKING_GLASS: 0, VpKind.ATLAS_PROBE: 1}


@dataclass(frozen=True)
class VantagePoint:
    vp_id: str
    kind: VpKind
    ixp_id: str
    location: GeoPoint | None = None
    facility_id: str | None = None
    rtt_resolution: RttResolution = RttResolution.SUB_MS


@dataclass(frozen=True, slots=True)
class PingSample:
    vp_id: str
    target_ip: str
    rtt_ms: float
    reply_ttl: int
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.rtt_ms) or self.rtt_ms < 0:
            raise ValueError(f"rtt_ms must be finite and non-negative, got {self.rtt_ms}")
        if not 0 <= self.reply_ttl <= 255:
            raise ValueError(f"reply_ttl out of range: {self.reply_ttl}")


@dataclass(frozen=True)
class RttEstimate:
    target_ip: str
    vp_id: str
    rtt_min_ms: float | None
    sample_count: int
    filtered: bool = False
    reason: str | None = None


@dataclass(frozen=True, slots=True)
class Hop:
    index: int
    ip: str | None
    rtt_ms: float | None = None


@dataclass(frozen=True)
class TraceroutePath:
    measurement_id: str
    hops: tuple[Hop, ...]

    def __post_init__(self) -> None:
        idx = [h.index for h in self.hops]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"path {self.measurement_id}: hop indices must increase strictly")


@dataclass(frozen=True)
class IxpCrossing:
    path_id: str
    near_asn: int
    ixp_id: str
    far_asn: int
    triplet: tuple[str, str, str]


@dataclass(frozen=True)
class Router:
    router_id: str
    asn: int
    interfaces: frozenset[str]
    next_hop_ixps: frozenset[str] = frozenset()

    @property
    def is_multi_ixp(self) -> bool:
        return len(self.next_hop_ixps) > 1


@dataclass
class PrivateAdjacencies:
    """AS pairs seen on adjacent non-IXP hops, with the interfaces involved.

    Add links through :meth:`add` once lookups have started; the neighbour
    index is built on first use and kept current by ``add``.
    """

    pairs: dict[tuple[int, int], set[tuple[str, str]]] = field(default_factory=dict)
    _by_ip: dict[str, set[int]] | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def interfaces(self) -> set[str]:
        return {ip for links in self.pairs.values() for link in links for ip in link}

    def add(self, a: int, b: int, ip_a: str, ip_b: str) -> None:
        self.pairs.setdefault((a, b), set()).add((ip_a, ip_b))
        if self._by_ip is not None:
            self._by_ip.setdefault(ip_a, set()).add(b)
            self._by_ip.setdefault(ip_b, set()).add(a)

    def neighbor_asns(self, ips: Iterable[str]) -> set[int]:
        """ASes on the far side of private links that touch any of ``ips``."""
        if self._by_ip is None:
            idx: dict[str, set[int]] = {}
            for (a, b), links in self.pairs.items():
                for ip_a, ip_b in links:
                    idx.setdefault(ip_a, set()).add(b)
                    idx.setdefault(ip_b, set()).add(a)
            self._by_ip = idx
        out: set[int] = set()
        for ip in ips:
            out |= self._by_ip.get(ip, set())
        return out


# --- pings -----------------------------------------------------------------


def initial_ttl(reply_ttl: int) -> int:
    return next(t for t in INITIAL_TTLS if t >= reply_ttl)


def ttl_filter(samples: Sequence[PingSample], vp: VantagePoint) -> list[PingSample]:
    """TTL match then TTL switch.

    A reply is kept when it travelled no more hops than the VP kind allows
    (0 for looking glasses, 1 for Atlas probes), counting from the smallest
    standard initial TTL that covers it. If the kept replies come from
    different initial-TTL families the whole series is dropped, since two
    different devices answered for the same address.
    """
    limit = MAX_TTL_HOPS[vp.kind]
    kept = [s for s in samples if initial_ttl(s.reply_ttl) - s.reply_ttl <= limit]
    if len({initial_ttl(s.reply_ttl) for s in kept}) > 1:
        return []
    return kept


def aggregate_rtt_min(
    samples: Sequence[PingSample], *, target_ip: str | None = None, vp_id: str | None = None
) -> RttEstimate:
    if not samples:
        return RttEstimate(target_ip or "", vp_id or "", None, 0, True, "all samples filtered")
    return RttEstimate(
        target_ip=samples[0].target_ip,
        vp_id=samples[0].vp_id,
        rtt_min_ms=min(s.rtt_ms for s in samples),
        sample_count=len(samples),
    )


def vp_sanity_filter(vp: VantagePoint, rtt_to_route_server_ms: float | None, threshold_ms: float = 1.0) -> bool:
    """Keep a VP only if it sits within ``threshold_ms`` of the IXP route server."""
    if rtt_to_route_server_ms is None:
        log.warning("vp %s: no route-server measurement, keeping it", vp.vp_id)
        return True
    return rtt_to_route_server_ms < threshold_ms


@dataclass(frozen=True)
class VpStatus:
    vp_id: str
    kept: bool
    route_server_rtt_ms: float | None
    warning: str | None = None


def estimate_rtts(
    samples: Iterable[PingSample],
    world: "WorldModel",
    rs_threshold_ms: float = 1.0,
) -> tuple[dict[tuple[str, str], RttEstimate], dict[str, VpStatus]]:
    """Group samples per (vp, target), filter, take minima and screen VPs.

    Returns estimates keyed by (vp_id, target_ip) for VPs that pass the
    route-server check, and a status entry for every known VP.
    """
    series: dict[tuple[str, str], list[PingSample]] = defaultdict(list)
    for s in samples:
        series[(s.vp_id, s.target_ip)].append(s)

    estimates: dict[tuple[str, str], RttEstimate] = {}
    for (vp_id, target), group in sorted(series.items()):
        vp = world.vantage_points.get(vp_id)
        if vp is None:
            continue
        kept = ttl_filter(group, vp)
        est = aggregate_rtt_min(kept, target_ip=target, vp_id=vp_id)
        if est.filtered:
            est = RttEstimate(target, vp_id, None, 0, True, "ttl filters rejected every sample")
        estimates[(vp_id, target)] = est

    status: dict[str, VpStatus] = {}
    for vp_id, vp in sorted(world.vantage_points.items()):
        ixp = world.ixps.get(vp.ixp_id)
        rs_ip = ixp.route_server_ip if ixp else None
        rs_est = estimates.get((vp_id, rs_ip)) if rs_ip else None
        rs_rtt = rs_est.rtt_min_ms if rs_est and not rs_est.filtered else None
        keep = vp_sanity_filter(vp, rs_rtt, rs_threshold_ms)
        warning = None if rs_rtt is not None else "no route-server measurement"
        status[vp_id] = VpStatus(vp_id, keep, rs_rtt, warning)
    estimates = {k: v for k, v in estimates.items() if status[k[0]].kept}
    return estimates, status


# --- traceroutes -----------------------------------------------------------


def detect_ixp_crossings(path: TraceroutePath, world: "WorldModel") -> list[IxpCrossing]:
    """Triplets (ip1, ixp_ip, ip3) on consecutive hops where ixp_ip and ip3
    share an AS, ip1's AS differs, and both ASes are members of the IXP."""
    out = []
    hops = path.hops
    for h1, h2, h3 in zip(hops, hops[1:], hops[2:]):
        if h2.index != h1.index + 1 or h3.index != h2.index + 1:
            continue
        if h1.ip is None or h2.ip is None or h3.ip is None:
            continue
        ixp_id = world.ixp_of_ip(h2.ip)
        if ixp_id is None:
            continue
        iface = world.interfaces.get(h2.ip)
        if iface is None:
            continue
        near, far = world.asn_of(h1.ip), world.asn_of(h3.ip)
        if near is None or far is None or far != iface.asn or near == iface.asn:
            continue
        members = world.members(ixp_id)
        if near in members and iface.asn in members:
            out.append(IxpCrossing(path.measurement_id, near, ixp_id, far, (h1.ip, h2.ip, h3.ip)))
    return out


def build_routers(
    alias_sets: Iterable[Iterable[str]],
    crossings: Iterable[IxpCrossing],
    world: "WorldModel",
    diagnostics: list[str] | None = None,
) -> list[Router]:
    """One router per accepted alias set, plus singleton routers for crossing
    near-side addresses no alias set covers.

    An alias set is rejected when its addresses map to more than one ASN (or
    none), or when it reuses an address claimed by an earlier set.
    """
    diag = diagnostics if diagnostics is not None else []
    crossings = list(crossings)
    next_hops: dict[str, set[str]] = defaultdict(set)
    for c in crossings:
        next_hops[c.triplet[0]].add(c.ixp_id)

    routers: list[Router] = []
    owner: dict[str, int] = {}
    for n, aliases in enumerate(alias_sets):
        ips = sorted(set(aliases), key=ip_to_int)
        asns = {world.asn_of(ip) for ip in ips} - {None}
        if len(asns) != 1:
            diag.append(f"alias set {n}: maps to ASNs {sorted(asns)}; rejected")
            continue
        taken = [ip for ip in ips if ip in owner]
        if taken:
            diag.append(f"alias set {n}: {taken[0]} already in another set; rejected")
            continue
        for ip in ips:
            owner[ip] = len(routers)
        hops = set().union(*(next_hops.get(ip, ()) for ip in ips))
        routers.append(Router(f"R{n}", asns.pop(), frozenset(ips), frozenset(hops)))

    for ip in sorted(next_hops, key=ip_to_int):
        if ip in owner:
            continue
        asn = world.asn_of(ip)
        if asn is None:
            continue
        owner[ip] = len(routers)
        routers.append(Router(f"S{ip}", asn, frozenset([ip]), frozenset(next_hops[ip])))
    return routers


def extract_private_adjacencies(paths: Iterable[TraceroutePath], world: "WorldModel") -> PrivateAdjacencies:
    adj = PrivateAdjacencies()
    for path in paths:
        for h1, h2 in zip(path.hops, path.hops[1:]):
            if h2.index != h1.index + 1 or h1.ip is None or h2.ip is None:
                continue
            if world.ixp_of_ip(h1.ip) is not None or world.ixp_of_ip(h2.ip) is not None:
                continue
            a, b = world.asn_of(h1.ip), world.asn_of(h2.ip)
            if a is None or b is None or a == b:
                continue
            adj.add(a, b, h1.ip, h2.ip)
    return adj


# --- file formats ----------------------------------------------------------


def read_pings_csv(path: str | Path) -> list[PingSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PING_COLUMNS:
            raise MeasurementError(f"{path}:1: expected header {','.join(PING_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vp_id, target, rtt, ttl, ts = row
                ip_to_int(target)
                out.append(PingSample(vp_id, target, float(rtt), int(ttl), float(ts or 0)))
            except ValueError as exc:
                raise MeasurementError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_pings_csv(samples: Iterable[PingSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PING_COLUMNS)
        for s in samples:
            w.writerow([s.vp_id, s.target_ip, repr(round(s.rtt_ms, 6)), s.reply_ttl, repr(s.timestamp)])


def _jsonl(path: str | Path) -> Iterator[tuple[int, object]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise MeasurementError(f"{path}:{lineno}: {exc.msg}") from exc


def path_from_json(obj: dict) -> TraceroutePath:
    hops = []
    for h in obj["hops"]:
        ip = h.get("ip")
        if ip is not None:
            ip_to_int(ip)
        rtt = h.get("rtt_ms")
        hops.append(Hop(int(h["hop"]), ip, None if rtt is None else float(rtt)))
    return TraceroutePath(str(obj["measurement_id"]), tuple(hops))


def path_to_json(path: TraceroutePath) -> dict:
    return {
        "measurement_id": path.measurement_id,
        "hops": [{"hop": h.index, "ip": h.ip, "rtt_ms": h.rtt_ms} for h in path.hops],
    }


def read_traceroutes_jsonl(path: str | Path) -> list[TraceroutePath]:
    out = []
    for lineno, obj in _jsonl(path):
        try:
            out.append(path_from_json(obj))  # type: ignore[arg-type]
        except (KeyError, TypeError, ValueError) as exc:
            raise MeasurementError(f"{path}:{lineno}: {exc!r}") from exc
    return out


def read_alias_sets_jsonl(path: str | Path) -> list[list[str]]:
    out = []
    for lineno, obj in _jsonl(path):
        ips = obj.get("ips") if isinstance(obj, dict) else obj
        if not isinstance(ips, list):
            raise MeasurementError(f"{path}:{lineno}: expected a list of addresses")
        try:
            for ip in ips:
                ip_to_int(ip)
        except ValueError as exc:
            raise MeasurementError(f"{path}:{lineno}: {exc}") from exc
        out.append(ips)
    return out


def write_jsonl(rows: Iterable[object], path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
