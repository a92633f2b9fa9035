"""Geodesic distances, metro grouping and wide-area IXP classification."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Iterable, Mapping

from geographiclib.geodesic import Geodesic

if TYPE_CHECKING:
    from .ingest import FacilityRecord, IxpRecord

EARTH_MEAN_RADIUS_KM = 6371.0088
DEFAULT_METRO_KM = 50.0

_WGS84 = Geodesic.WGS84


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


@lru_cache(maxsize=1 << 16)
def _karney_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    return _WGS84.Inverse(lat1, lon1, lat2, lon2, Geodesic.DISTANCE)["s12"] / 1000.0


def haversine_km(a: GeoPoint, b: GeoPoint, radius_km: float = EARTH_MEAN_RADIUS_KM) -> float:
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp = p2 - p1
    dl = math.radians(b.lon - a.lon)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius_km * math.asin(min(1.0, math.sqrt(h)))


def geodesic_km(a: GeoPoint, b: GeoPoint, method: str = "karney") -> float:
    """Distance in km on the WGS84 ellipsoid (Karney), or on a sphere."""
    if a == b:
        return 0.0
    if method == "haversine":
        return haversine_km(a, b)
    if method != "karney":
        raise ValueError(f"unknown distance method {method!r}")
    # order the arguments so the cached value is exactly symmetric
    k1, k2 = (a.lat, a.lon), (b.lat, b.lon)
    if k2 < k1:
        k1, k2 = k2, k1
    return _karney_km(*k1, *k2)


def distance_matrix(points: Iterable[GeoPoint], method: str = "karney") -> list[list[float]]:
    pts = list(points)
    n = len(pts)
    out = [[0.0] * n for _ in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        out[i][j] = out[j][i] = geodesic_km(pts[i], pts[j], method)
    return out


def set_distances(
    a: Iterable[GeoPoint], b: Iterable[GeoPoint], method: str = "karney"
) -> tuple[float, float] | None:
    """(min, max) distance over all cross pairs of two point sets; None if either is empty."""
    a, b = list(a), list(b)
    if not a or not b:
        return None
    ds = [geodesic_km(p, r, method) for p in a for r in b]
    return min(ds), max(ds)


def max_pairwise_km(points: Iterable[GeoPoint], method: str = "karney") -> float:
    pts = list(points)
    return max((geodesic_km(p, r, method) for p, r in itertools.combinations(pts, 2)), default=0.0)


@dataclass(frozen=True)
class WideAreaVerdict:
    ixp_id: str
    is_wide_area: bool
    max_pairwise_km: float
    missing_coordinates: tuple[str, ...] = ()


def classify_wide_area(
    ixp: "IxpRecord",
    facilities: Mapping[str, "FacilityRecord"],
    metro_threshold_km: float = DEFAULT_METRO_KM,
    method: str = "karney",
) -> WideAreaVerdict:
    """An IXP is wide-area when two of its located facilities are more than
    ``metro_threshold_km`` apart. Facilities without coordinates are flagged
    and left out of the pairs."""
    located, missing = [], []
    for fid in sorted(ixp.facility_ids):
        fac = facilities.get(fid)
        if fac is None or fac.location is None:
            missing.append(fid)
        else:
            located.append(fac.location)
    spread = max_pairwise_km(located, method)
    return WideAreaVerdict(
        ixp_id=ixp.ixp_id,
        is_wide_area=len(located) >= 2 and spread > metro_threshold_km,
        max_pairwise_km=spread,
        missing_coordinates=tuple(missing),
    )


def metro_groups(
    points: Mapping[str, GeoPoint], threshold_km: float = DEFAULT_METRO_KM
) -> list[set[str]]:
    """Single-linkage clusters of points closer than ``threshold_km``."""
    ids = sorted(points)
    parent = {i: i for i in ids}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in itertools.combinations(ids, 2):
        if geodesic_km(points[a], points[b]) <= threshold_km:
            parent[find(a)] = find(b)
    groups: dict[str, set[str]] = {}
    for i in ids:
        groups.setdefault(find(i), set()).add(i)
    return sorted(groups.values(), key=lambda g: min(g))


def destination(origin: GeoPoint, azimuth_deg: float, distance_km: float) -> GeoPoint:
    """Point reached from ``origin`` along a geodesic (used for ring polygons)."""
    r = _WGS84.Direct(origin.lat, origin.lon, azimuth_deg, distance_km * 1000.0)
    lon = (r["lon2"] + 180.0) % 360.0 - 180.0
    return GeoPoint(max(-90.0, min(90.0, r["lat2"])), lon)
