"""Remote/local peering inference, one verdict per IXP member interface.

Steps run in a fixed order and a verdict, once made, is never revised:

1. port capacity below the IXP's smallest physical port -> remote (reseller)
3. minimum RTT turned into a distance ring around the VP, intersected with
   IXP and member colocation facilities
4. propagation across multi-IXP routers
5. facility voting over a router's private-interconnection neighbours

(The RTT measurement campaign itself, the second step, lives in
:mod:`rpinfer.measurements` and feeds step 3.)
"""
from __future__ import annotations

import enum
import functools
import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .config import PipelineConfig, SpeedModel
from .geo import GeoPoint, geodesic_km
from .ingest import IxpRecord, MemberInterface, WorldModel
from .measurements import (
    IxpCrossing,
    PingSample,
    PrivateAdjacencies,
    Router,
    RttEstimate,
    RttResolution,
    TraceroutePath,
    VantagePoint,
    VpStatus,
    build_routers,
    detect_ixp_crossings,
    estimate_rtts,
    extract_private_adjacencies,
)
from .prefixes import ip_to_int

log = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    LOCAL = "Local"
    REMOTE = "Remote"
    UNKNOWN = "Unknown"


class Step(str, enum.Enum):
    PORT_CAPACITY = "PortCapacity"
    RTT_COLO = "RttColo"
    MULTI_IXP = "MultiIxp"
    PRIVATE_VOTING = "PrivateVoting"
    NONE = "None"


class MemberType(str, enum.Enum):
    LOCAL = "Local"
    REMOTE = "Remote"
    HYBRID = "Hybrid"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class FeasibleRange:
    """Distances (km from the VP) compatible with a minimum RTT.

    The main band is ``[d_min_km, d_max_km]``. ``near_km`` is the short stretch
    next to the VP where the lower speed bound is non-positive and so imposes
    no constraint; anything closer than that is feasible as well.
    """

    d_min_km: float
    d_max_km: float
    near_km: float = 0.0

    def __contains__(self, d_km: float) -> bool:
        return d_km <= self.near_km or self.d_min_km <= d_km <= self.d_max_km


@dataclass(frozen=True)
class InferenceResult:
    interface: MemberInterface
    verdict: Verdict
    step: Step
    evidence: Mapping[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return self.interface.ip, self.interface.ixp_id

    def to_json(self) -> dict[str, Any]:
        return {
            "ip": self.interface.ip,
            "asn": self.interface.asn,
            "ixp_id": self.interface.ixp_id,
            "port_capacity": self.interface.port_capacity,
            "verdict": self.verdict.value,
            "step": self.step.value,
            "evidence": dict(self.evidence),
        }


@dataclass(frozen=True)
class MemberClass:
    asn: int
    member_type: MemberType


@dataclass(frozen=True)
class StepOutcome:
    verdict: Verdict
    evidence: Mapping[str, Any] = field(default_factory=dict)


# --- step 1 ----------------------------------------------------------------


def step1_port_capacity(
    iface: MemberInterface, ixp: IxpRecord, exemptions: Iterable[int] = ()
) -> Verdict | None:
    """Remote when the member's port is slower than any physical port the IXP sells."""
    if iface.asn in ixp.step1_exempt_asns or iface.asn in set(exemptions):
        return None
    if iface.port_capacity is None or ixp.min_physical_capacity is None:
        return None
    if iface.port_capacity < ixp.min_physical_capacity:
        return Verdict.REMOTE
    return None


# --- ring geometry ---------------------------------------------------------


def _bisect(g, lo: float, hi: float, tol: float, want_hi_positive: bool) -> float:
    """Root of a sign change between lo and hi; returns the end on the g >= 0 side."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (g(mid) >= 0) == want_hi_positive:
            hi = mid
        else:
            lo = mid
    return hi if want_hi_positive else lo


def feasible_range(
    rtt_min_ms: float,
    vp: VantagePoint | RttResolution | None = None,
    speed: SpeedModel | None = None,
    tol_km: float = 1e-6,
) -> FeasibleRange:
    """Distance ring for a minimum RTT.

    ``d_max`` is ``v_max`` times the full RTT. ``d_min`` is where a target
    becomes reachable under the lower speed bound: the largest solution of
    ``d = v_min(d) * RTT'``, found by bisection. For VPs that round RTTs up to
    whole milliseconds, ``RTT' = RTT - 1 ms``; otherwise ``RTT' = RTT``.
    """
    if not rtt_min_ms > 0:
        raise ValueError(f"rtt_min_ms must be positive, got {rtt_min_ms}")
    resolution = vp.rtt_resolution if isinstance(vp, VantagePoint) else vp
    return _ring(rtt_min_ms, resolution, speed or SpeedModel(), tol_km)


@functools.lru_cache(maxsize=1 << 14)
def _ring(rtt_min_ms: float, resolution: RttResolution | None, speed: SpeedModel, tol_km: float) -> FeasibleRange:
    d_max = speed.v_max * rtt_min_ms / 1e6  # m/s * ms -> km
    rtt_lb = rtt_min_ms - 1.0 if resolution == RttResolution.ROUNDED_UP else rtt_min_ms
    if rtt_lb <= 0:
        return FeasibleRange(0.0, d_max, 0.0)
    rtt_s = rtt_lb / 1e3

    def gap(d_km: float) -> float:
        # >= 0 where d is reachable at the slowest plausible speed, in metres
        return d_km * 1e3 - speed.v_min(d_km) * rtt_s

    # gap is convex below the v_max cap, with its minimum where d == a * RTT'
    d_peak = min(speed.v_min_coeff * rtt_s / 1e3, d_max)
    if gap(d_peak) >= 0:
        return FeasibleRange(0.0, d_max, 0.0)
    d_min = _bisect(gap, d_peak, d_max, tol_km, want_hi_positive=True)
    zero_speed_km = math.exp(speed.v_min_offset) / speed.log_scale
    near = _bisect(gap, zero_speed_km, d_peak, tol_km, want_hi_positive=False) if zero_speed_km < d_peak else 0.0
    return FeasibleRange(d_min, d_max, near)


# --- step 3 ----------------------------------------------------------------


def _located(world: WorldModel, fids: Iterable[str]) -> dict[str, GeoPoint]:
    out = {}
    for fid in fids:
        loc = world.location(fid)
        if loc is not None:
            out[fid] = loc
    return out


def feasible_facilities(
    vp_loc: GeoPoint, ring: FeasibleRange, world: WorldModel, fids: Iterable[str], method: str = "karney"
) -> dict[str, float]:
    """Facilities (with their VP distance) that fall inside the ring."""
    out = {}
    for fid, loc in _located(world, fids).items():
        d = geodesic_km(vp_loc, loc, method)
        if d in ring:
            out[fid] = d
    return out


def step3_colo_rtt(
    iface: MemberInterface,
    ixp: IxpRecord,
    vp: VantagePoint,
    estimate: RttEstimate | None,
    world: WorldModel,
    speed: SpeedModel | None = None,
    method: str = "karney",
) -> StepOutcome:
    """Combine the RTT ring with IXP and member colocation.

    Local when the member sits in a feasible IXP facility. Remote when the
    IXP has no feasible facility, or the member is in a feasible facility the
    IXP is absent from. Otherwise no inference.
    """
    if estimate is None or estimate.filtered or estimate.rtt_min_ms is None:
        return StepOutcome(Verdict.UNKNOWN, {"reason": "no RTT estimate"})
    vp_loc = world.vp_location(vp)
    if vp_loc is None:
        return StepOutcome(Verdict.UNKNOWN, {"reason": "VP location unknown"})
    try:
        ring = feasible_range(estimate.rtt_min_ms, vp, speed)
    except ValueError as exc:
        return StepOutcome(Verdict.UNKNOWN, {"reason": str(exc)})

    ixp_facs = world.ixp_facilities(ixp.ixp_id)
    as_facs = world.as_facilities(iface.asn)
    feasible = feasible_facilities(vp_loc, ring, world, ixp_facs | as_facs, method)
    ixp_feasible = sorted(f for f in feasible if f in ixp_facs)
    as_feasible = sorted(f for f in feasible if f in as_facs)
    evidence = {
        "vp_id": vp.vp_id,
        "rtt_min_ms": estimate.rtt_min_ms,
        "d_min_km": round(ring.d_min_km, 3),
        "d_max_km": round(ring.d_max_km, 3),
        "feasible_ixp_facilities": ixp_feasible,
        "feasible_member_facilities": as_feasible,
    }
    if not ixp_feasible:
        return StepOutcome(Verdict.REMOTE, {**evidence, "rule": "no feasible IXP facility"})
    shared = sorted(set(ixp_feasible) & set(as_feasible))
    if shared:
        return StepOutcome(Verdict.LOCAL, {**evidence, "rule": "colocated in feasible IXP facility", "facilities": shared})
    elsewhere = sorted(f for f in as_feasible if f not in ixp_facs)
    if elsewhere:
        return StepOutcome(
            Verdict.REMOTE, {**evidence, "rule": "present in feasible non-IXP facility", "facilities": elsewhere}
        )
    return StepOutcome(Verdict.UNKNOWN, {**evidence, "reason": "member in no feasible facility"})


# --- step 4 ----------------------------------------------------------------


def _set_min_max(world: WorldModel, a: Iterable[str], b: Iterable[str], method: str) -> tuple[float, float] | None:
    pa, pb = _located(world, a), _located(world, b)
    if not pa or not pb:
        return None
    ds = [geodesic_km(x, y, method) for x in pa.values() for y in pb.values()]
    return min(ds), max(ds)


def step4_multi_ixp(
    router: Router,
    prior: Mapping[str, set[Verdict]],
    world: WorldModel,
    ranges: Mapping[str, FeasibleRange] | None = None,
    strict_colo: bool = False,
    method: str = "karney",
) -> dict[str, StepOutcome]:
    """Propagate prior verdicts across the IXPs a multi-IXP router reaches.

    ``prior`` maps IXP ids to the verdicts earlier steps produced for this
    router's AS there; ``ranges`` holds the RTT rings behind those verdicts.
    Returns the proposed verdict per involved IXP. IXPs that receive both a
    Local and a Remote proposal get none.
    """
    ranges = ranges or {}
    involved = sorted(router.next_hop_ixps)
    if len(involved) < 2:
        return {}
    facs = {j: world.ixp_facilities(j) for j in involved}
    common_all = frozenset.intersection(*facs.values())
    as_facs = world.as_facilities(router.asn)
    proposals: dict[str, dict[Verdict, list[str]]] = {j: defaultdict(list) for j in involved}

    locals_ = [j for j in involved if Verdict.LOCAL in prior.get(j, ())]
    remotes = [j for j in involved if Verdict.REMOTE in prior.get(j, ())]
    if not locals_ and not remotes:
        return {}

    if locals_ and common_all:
        for j in involved:
            proposals[j][Verdict.LOCAL].append(f"local-propagation from {locals_[0]}")

    for r in remotes:
        why = None
        if common_all:
            why = "common facility"
        elif r in ranges:
            spans = [_set_min_max(world, facs[j], facs[r], method) for j in involved if j != r]
            if spans and all(s is not None for s in spans):
                farthest = max(s[1] for s in spans)  # type: ignore[index]
                if farthest < ranges[r].d_min_km:
                    why = f"all IXP facilities within {farthest:.1f} km < d_min {ranges[r].d_min_km:.1f} km"
        if why:
            for j in involved:
                proposals[j][Verdict.REMOTE].append(f"remote-propagation from {r}: {why}")

    for lx in locals_:
        common_as = _located(world, as_facs & facs[lx])
        spread = max(
            (geodesic_km(a, b, method) for a, b in itertools.combinations(common_as.values(), 2)), default=0.0
        )
        hit = False
        for j in involved:
            if j == lx:
                continue
            why = None
            if not facs[lx] & facs[j]:
                why = "no facility shared with local IXP"
            elif common_as:
                span = _set_min_max(world, facs[lx], facs[j], method)
                if span is not None and span[0] > spread:
                    why = f"{span[0]:.1f} km from local IXP > {spread:.1f} km"
            if why:
                hit = True
                proposals[j][Verdict.REMOTE].append(f"hybrid from {lx}: {why}")
        if hit:
            proposals[lx][Verdict.LOCAL].append(f"hybrid anchor {lx}")

    out = {}
    no_colo = strict_colo and not as_facs
    for j in involved:
        p = proposals[j]
        if no_colo:
            p.pop(Verdict.LOCAL, None)
        if len(p) == 1:
            verdict, rules = next(iter(p.items()))
            out[j] = StepOutcome(verdict, {"router_id": router.router_id, "rules": sorted(set(rules))})
        elif len(p) > 1:
            log.info("router %s: conflicting proposals at %s", router.router_id, j)
    return out


# --- step 5 ----------------------------------------------------------------


def step5_private_voting(
    asn: int,
    ixp_id: str,
    router: Router,
    adjacencies: PrivateAdjacencies,
    world: WorldModel,
    ixp_facilities: Iterable[str] | None = None,
    quorum: int = 3,
    majority: float = 0.5,
    strict_colo: bool = False,
) -> StepOutcome:
    """Locate a router through the facilities its private neighbours share.

    ``ixp_facilities`` is the IXP facility set to test against (the feasible
    ones when an RTT ring exists); by default every facility of the IXP.
    Facilities hosting a strict majority of the neighbours with facility data
    form the common set. Exactly one IXP facility in it -> Local, else Remote.
    """
    f_ixp = set(world.ixp_facilities(ixp_id) if ixp_facilities is None else ixp_facilities)
    neighbors = sorted(adjacencies.neighbor_asns(router.interfaces) - {asn})
    with_data = [n for n in neighbors if world.as_facilities(n)]
    evidence: dict[str, Any] = {"router_id": router.router_id, "neighbors": neighbors, "voters": len(with_data)}
    if len(with_data) < quorum:
        return StepOutcome(Verdict.UNKNOWN, {**evidence, "reason": f"below quorum {quorum}"})
    tally = Counter(f for n in with_data for f in world.as_facilities(n))
    common = sorted(f for f, c in tally.items() if c > majority * len(with_data))
    hits = sorted(set(common) & f_ixp)
    evidence.update(common_facilities=common, tally={f: tally[f] for f in common}, ixp_hits=hits)
    if len(hits) == 1:
        if strict_colo and not world.as_facilities(asn):
            return StepOutcome(Verdict.UNKNOWN, {**evidence, "reason": "strict colo: member has no facility data"})
        return StepOutcome(Verdict.LOCAL, evidence)
    return StepOutcome(Verdict.REMOTE, evidence)


# --- pipeline --------------------------------------------------------------


@dataclass
class Measurements:
    pings: Sequence[PingSample] = ()
    traceroutes: Sequence[TraceroutePath] = ()
    alias_sets: Sequence[Sequence[str]] = ()


@dataclass
class PipelineOutput:
    results: list[InferenceResult]
    members: list[MemberClass]
    estimates: dict[tuple[str, str], RttEstimate]
    vp_status: dict[str, VpStatus]
    routers: list[Router]
    crossings: list[IxpCrossing]
    baseline: dict[tuple[str, str], Verdict]
    diagnostics: list[str] = field(default_factory=list)

    def verdicts(self) -> dict[tuple[str, str], Verdict]:
        return {r.key: r.verdict for r in self.results}


def classify_members(results: Iterable[InferenceResult]) -> list[MemberClass]:
    seen: dict[int, set[Verdict]] = defaultdict(set)
    for r in results:
        seen[r.interface.asn].add(r.verdict)
    out = []
    for asn in sorted(seen):
        v = seen[asn] - {Verdict.UNKNOWN}
        if v == {Verdict.LOCAL, Verdict.REMOTE}:
            t = MemberType.HYBRID
        elif v == {Verdict.LOCAL}:
            t = MemberType.LOCAL
        elif v == {Verdict.REMOTE}:
            t = MemberType.REMOTE
        else:
            t = MemberType.UNKNOWN
        out.append(MemberClass(asn, t))
    return out


def _best_estimates(
    world: WorldModel, estimates: Mapping[tuple[str, str], RttEstimate]
) -> dict[str, list[tuple[VantagePoint, RttEstimate]]]:
    """Usable (vp, estimate) pairs per target, smallest RTT first."""
    per_target: dict[str, list[tuple[VantagePoint, RttEstimate]]] = defaultdict(list)
    for (vp_id, target), est in estimates.items():
        if est.filtered or est.rtt_min_ms is None:
            continue
        per_target[target].append((world.vantage_points[vp_id], est))
    for lst in per_target.values():
        lst.sort(key=lambda ve: (ve[1].rtt_min_ms, ve[0].vp_id))
    return per_target


def baseline_rtt_threshold(
    world: WorldModel,
    estimates: Mapping[tuple[str, str], RttEstimate],
    threshold_ms: float = 10.0,
    ixps: Iterable[str] | None = None,
) -> dict[tuple[str, str], Verdict]:
    """RTT-only comparator: remote iff the smallest RTT from an IXP VP exceeds the threshold."""
    best = _best_estimates(world, estimates)
    out = {}
    for ixp_id in sorted(ixps if ixps is not None else world.ixps):
        for iface in world.interfaces_at(ixp_id):
            cands = [e for vp, e in best.get(iface.ip, ()) if vp.ixp_id == ixp_id]
            if not cands:
                out[(iface.ip, ixp_id)] = Verdict.UNKNOWN
            else:
                out[(iface.ip, ixp_id)] = Verdict.REMOTE if cands[0].rtt_min_ms > threshold_ms else Verdict.LOCAL
    return out


def run_pipeline(
    world: WorldModel,
    measurements: Measurements,
    config: PipelineConfig | None = None,
    ixps: Iterable[str] | None = None,
) -> PipelineOutput:
    cfg = config or PipelineConfig()
    method = cfg.distance_method
    selected = sorted(ixps) if ixps is not None else sorted(world.ixps)
    missing = [i for i in selected if i not in world.ixps]
    if missing:
        raise KeyError(f"unknown IXPs: {missing}")
    targets = [iface for ixp_id in selected for iface in world.interfaces_at(ixp_id)]

    verdict: dict[str, Verdict] = {i.ip: Verdict.UNKNOWN for i in targets}
    step: dict[str, Step] = {i.ip: Step.NONE for i in targets}
    evidence: dict[str, dict[str, Any]] = {i.ip: {} for i in targets}

    def settle(ip: str, v: Verdict, s: Step, ev: Mapping[str, Any]) -> None:
        verdict[ip], step[ip], evidence[ip] = v, s, dict(ev)

    # step 1
    if 1 in cfg.steps:
        for iface in targets:
            ixp = world.ixps[iface.ixp_id]
            if step1_port_capacity(iface, ixp, cfg.exempt(ixp.ixp_id)) is Verdict.REMOTE:
                settle(iface.ip, Verdict.REMOTE, Step.PORT_CAPACITY, {
                    "port_capacity": iface.port_capacity,
                    "min_physical_capacity": ixp.min_physical_capacity,
                })

    # step 2: minimum RTTs
    estimates, vp_status = estimate_rtts(measurements.pings, world, cfg.route_server_max_rtt_ms)
    best = _best_estimates(world, estimates)

    # step 3
    rings: dict[str, FeasibleRange] = {}
    ixp_feasible: dict[str, list[str]] = {}
    for iface in targets:
        cands = [(vp, e) for vp, e in best.get(iface.ip, ()) if vp.ixp_id == iface.ixp_id]
        if cands:
            vp, est = cands[0]
            try:
                rings[iface.ip] = feasible_range(est.rtt_min_ms, vp, cfg.speed, cfg.bisect_tol_km)
            except ValueError:
                pass
        if 3 not in cfg.steps or verdict[iface.ip] is not Verdict.UNKNOWN:
            continue
        if not cands:
            evidence[iface.ip] = {"reason": "no RTT estimate"}
            continue
        ixp = world.ixps[iface.ixp_id]
        outcomes = [(vp, step3_colo_rtt(iface, ixp, vp, est, world, cfg.speed, method)) for vp, est in cands]
        chosen = outcomes[0][1]
        if "feasible_ixp_facilities" in chosen.evidence:
            ixp_feasible[iface.ip] = list(chosen.evidence["feasible_ixp_facilities"])
        ev = dict(chosen.evidence)
        if est_rtt := ev.get("rtt_min_ms"):
            ev["above_remote_advisory"] = est_rtt > cfg.remote_advisory_rtt_ms
        others = sorted({o.verdict.value for _, o in outcomes[1:]} - {chosen.verdict.value})
        if others:
            log.info("interface %s: VPs disagree (%s vs %s)", iface.ip, chosen.verdict.value, others)
            ev["vp_disagreement"] = others
        if chosen.verdict is Verdict.UNKNOWN:
            evidence[iface.ip] = ev
        else:
            settle(iface.ip, chosen.verdict, Step.RTT_COLO, ev)

    # traceroute products
    crossings = [c for p in measurements.traceroutes for c in detect_ixp_crossings(p, world)]
    diagnostics: list[str] = []
    routers = build_routers(measurements.alias_sets, crossings, world, diagnostics)
    by_ixp_asn: dict[tuple[str, int], list[str]] = defaultdict(list)
    for iface in targets:
        by_ixp_asn[(iface.ixp_id, iface.asn)].append(iface.ip)

    def router_ifaces(router: Router, ixp_id: str) -> list[str]:
        own = [ip for ip in by_ixp_asn.get((ixp_id, router.asn), ()) if ip in router.interfaces]
        return own or by_ixp_asn.get((ixp_id, router.asn), [])

    # step 4 (priors are steps 1-3 only)
    if 4 in cfg.steps:
        snapshot = dict(verdict)
        proposals: dict[str, list[StepOutcome]] = defaultdict(list)
        for router in routers:
            if not router.is_multi_ixp:
                continue
            prior: dict[str, set[Verdict]] = {}
            ranges: dict[str, FeasibleRange] = {}
            for j in router.next_hop_ixps:
                ips = router_ifaces(router, j)
                prior[j] = {snapshot[ip] for ip in ips} - {Verdict.UNKNOWN}
                rs = [rings[ip] for ip in ips if ip in rings]
                if rs:
                    ranges[j] = min(rs, key=lambda r: r.d_min_km)
            if not any(prior.values()):
                continue
            for j, outcome in step4_multi_ixp(router, prior, world, ranges, cfg.strict_colo, method).items():
                for ip in router_ifaces(router, j):
                    if snapshot[ip] is Verdict.UNKNOWN:
                        proposals[ip].append(outcome)
        for ip in sorted(proposals, key=ip_to_int):
            votes = {o.verdict for o in proposals[ip]}
            if len(votes) == 1:
                settle(ip, votes.pop(), Step.MULTI_IXP, {"proposals": [dict(o.evidence) for o in proposals[ip]]})

    # step 5
    adjacencies = extract_private_adjacencies(measurements.traceroutes, world)
    if 5 in cfg.steps:
        ixp_routers = [r for r in routers if r.next_hop_ixps]
        by_asn: dict[int, list[Router]] = defaultdict(list)
        for r in ixp_routers:
            by_asn[r.asn].append(r)
        for iface in targets:
            if verdict[iface.ip] is not Verdict.UNKNOWN:
                continue
            cands = [r for r in by_asn.get(iface.asn, ()) if iface.ip in r.interfaces or iface.ixp_id in r.next_hop_ixps]
            cands.sort(key=lambda r: (iface.ip not in r.interfaces, r.router_id))
            f_ixp = ixp_feasible.get(iface.ip)
            for router in cands:
                out = step5_private_voting(
                    iface.asn, iface.ixp_id, router, adjacencies, world, f_ixp,
                    cfg.vote_quorum, cfg.vote_majority, cfg.strict_colo,
                )
                if out.verdict is not Verdict.UNKNOWN:
                    settle(iface.ip, out.verdict, Step.PRIVATE_VOTING, out.evidence)
                    break

    results = [InferenceResult(i, verdict[i.ip], step[i.ip], evidence[i.ip]) for i in targets]
    baseline = baseline_rtt_threshold(world, estimates, cfg.baseline_threshold_ms, selected)
    return PipelineOutput(
        results=results,
        members=classify_members(results),
        estimates=estimates,
        vp_status=vp_status,
        routers=routers,
        crossings=crossings,
        baseline=baseline,
        diagnostics=diagnostics,
    )
