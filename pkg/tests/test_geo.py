import itertools

import pytest
from hypothesis import given, settings, strategies as st

from conftest import CITIES, point
from oracles import great_circle_km, vincenty_km
from rpinfer.geo import (
    GeoPoint,
    classify_wide_area,
    destination,
    distance_matrix,
    geodesic_km,
    haversine_km,
    max_pairwise_km,
    metro_groups,
    set_distances,
)
from rpinfer.ingest import FacilityRecord, IxpRecord, SourceTag

points = st.builds(
    GeoPoint,
    st.floats(-80, 80, allow_nan=False),
    st.floats(-179.9, 179.9, allow_nan=False),
)


def fac(fid, loc):
    return FacilityRecord(fid, fid, loc, frozenset(), frozenset(), SourceTag.PDB)


def ixp_with(locs):
    facs = {f"f{i}": fac(f"f{i}", loc) for i, loc in enumerate(locs)}
    return IxpRecord("ix", "ix", (), frozenset(facs)), facs


def test_identity_is_zero():
    assert geodesic_km(point("AMS"), point("AMS")) == 0.0


def test_amsterdam_london_near_great_circle():
    d = geodesic_km(point("AMS"), point("LON"))
    ref = great_circle_km(*CITIES["AMS"], *CITIES["LON"])
    assert abs(d - ref) / ref < 0.01
    assert abs(d - 357) / 357 < 0.01


def test_london_bucharest_far_apart():
    assert geodesic_km(point("LON"), point("BUC")) > 1300


def test_matches_vincenty():
    for a, b in itertools.combinations(CITIES, 2):
        d = geodesic_km(point(a), point(b))
        assert d == pytest.approx(vincenty_km(*CITIES[a], *CITIES[b]), rel=1e-6)


def test_haversine_fallback_close_to_ellipsoid():
    for a, b in itertools.combinations(CITIES, 2):
        e = geodesic_km(point(a), point(b))
        assert abs(geodesic_km(point(a), point(b), "haversine") - e) / e < 0.006


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        geodesic_km(point("AMS"), point("LON"), "flat")


def test_bad_coordinates_rejected():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)


@given(points, points)
def test_symmetric_and_non_negative(a, b):
    assert geodesic_km(a, b) == geodesic_km(b, a) >= 0


@given(points, points, points)
@settings(max_examples=60)
def test_triangle_inequality(a, b, c):
    assert geodesic_km(a, c) <= geodesic_km(a, b) + geodesic_km(b, c) + 1e-6


@given(st.lists(points, min_size=1, max_size=20))
@settings(max_examples=25)
def test_matrix_equals_pairwise(pts):
    m = distance_matrix(pts)
    for i, j in itertools.product(range(len(pts)), repeat=2):
        assert m[i][j] == (0.0 if i == j else geodesic_km(pts[i], pts[j]))


def test_set_distances_and_max_pairwise():
    a = [point("AMS"), point("RTM")]
    b = [point("LON")]
    lo, hi = set_distances(a, b)
    assert lo == min(geodesic_km(p, point("LON")) for p in a)
    assert hi == max(geodesic_km(p, point("LON")) for p in a)
    assert set_distances([], b) is None
    assert max_pairwise_km([point("AMS")]) == 0.0


def test_two_facilities_sixty_km_apart_are_wide_area():
    base = point("AMS")
    ixp, facs = ixp_with([base, destination(base, 90, 60)])
    v = classify_wide_area(ixp, facs)
    assert v.is_wide_area and v.max_pairwise_km == pytest.approx(60, abs=1e-6)


def test_three_facilities_within_thirty_km_are_not():
    base = point("FRA")
    ixp, facs = ixp_with([base, destination(base, 0, 15), destination(base, 180, 14)])
    v = classify_wide_area(ixp, facs)
    assert not v.is_wide_area and v.max_pairwise_km < 30


def test_multi_city_fixture_spans_continent():
    ixp, facs = ixp_with([point("AMS"), point("LON"), point("BUC")])
    v = classify_wide_area(ixp, facs)
    assert v.is_wide_area and v.max_pairwise_km > 1300


def test_single_facility_never_wide_area():
    ixp, facs = ixp_with([point("AMS")])
    assert not classify_wide_area(ixp, facs, metro_threshold_km=0).is_wide_area


def test_missing_coordinates_flagged_and_excluded():
    ixp, facs = ixp_with([point("AMS"), None])
    v = classify_wide_area(ixp, facs)
    assert not v.is_wide_area
    assert v.missing_coordinates == ("f1",)


@given(st.lists(points, min_size=1, max_size=6), st.floats(0, 3000), st.floats(0, 3000))
@settings(max_examples=40)
def test_threshold_monotone(pts, t1, t2):
    lo, hi = sorted((t1, t2))
    ixp, facs = ixp_with(pts)
    if not classify_wide_area(ixp, facs, lo).is_wide_area:
        assert not classify_wide_area(ixp, facs, hi).is_wide_area


def test_metro_groups_split_cities():
    pts = {"a1": point("AMS"), "a2": destination(point("AMS"), 45, 10), "l": point("LON")}
    assert metro_groups(pts) == [{"a1", "a2"}, {"l"}]


@given(points, st.floats(0, 360), st.floats(1, 2000))
@settings(max_examples=40)
def test_destination_inverts_distance(p, az, km):
    q = destination(p, az, km)
    assert geodesic_km(p, q) == pytest.approx(km, rel=1e-6)


def test_haversine_zero():
    assert haversine_km(point("AMS"), point("AMS")) == 0.0
