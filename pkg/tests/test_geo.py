import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intermodal.geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    Polyline,
    SpatialIndex,
    haversine_distance,
    nearest_within,
    point_to_polyline_distance,
)

M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


def brute_force_within(items, p, radius):
    """Independent linear-scan oracle for nearest_within."""
    hits = [(i, haversine_distance(p, q)) for i, q in items]
    hits = [(i, d) for i, d in hits if d <= radius]
    return sorted(hits, key=lambda h: (h[1], h[0]))


class TestGeoPoint:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(ValueError):
            GeoPoint(0.0, -181.0)
        with pytest.raises(ValueError):
            GeoPoint(float("nan"), 0.0)

    def test_valid_extremes(self):
        GeoPoint(90.0, 180.0)
        GeoPoint(-90.0, -180.0)


class TestPolyline:
    def test_too_short(self):
        with pytest.raises(ValueError):
            Polyline((GeoPoint(52.0, 9.0),))

    def test_consecutive_duplicates_rejected(self):
        p = GeoPoint(52.0, 9.0)
        with pytest.raises(ValueError):
            Polyline((p, p, GeoPoint(52.1, 9.0)))


class TestHaversine:
    def test_identical_points(self):
        p = GeoPoint(52.0, 9.0)
        assert haversine_distance(p, p) == 0.0

    def test_one_degree_latitude(self):
        # closed form: R * pi / 180 for a 1-degree meridian arc
        expected = EARTH_RADIUS_M * math.pi / 180.0  # 111194.92664455873
        d = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        assert d == pytest.approx(expected, abs=0.5)
        assert d == pytest.approx(111194.9, abs=0.5)

    def test_small_latitude_displacement(self):
        # pure-latitude displacement of 0.0015 degrees
        expected = M_PER_DEG * (52.3760 - 52.3745)  # 166.79 m
        d = haversine_distance(GeoPoint(52.3745, 9.7321), GeoPoint(52.3760, 9.7321))
        assert d == pytest.approx(expected, abs=0.5)
        assert d == pytest.approx(166.8, abs=0.5)

    def test_symmetry(self):
        a, b = GeoPoint(52.37, 9.73), GeoPoint(52.40, 9.80)
        assert haversine_distance(a, b) == haversine_distance(b, a)

    @settings(max_examples=200, deadline=None)
    @given(
        lats=st.lists(st.floats(52.0, 52.9), min_size=3, max_size=3),
        lons=st.lists(st.floats(9.0, 9.9), min_size=3, max_size=3),
    )
    def test_triangle_inequality_in_city_box(self, lats, lons):
        a, b, c = (GeoPoint(lat, lon) for lat, lon in zip(lats, lons))
        ab = haversine_distance(a, b)
        bc = haversine_distance(b, c)
        ac = haversine_distance(a, c)
        assert ac <= ab + bc + 1e-6 * max(ac, 1.0)


class TestPointToPolyline:
    def test_point_on_vertex(self):
        line = Polyline((GeoPoint(52.0, 9.0), GeoPoint(52.01, 9.0), GeoPoint(52.02, 9.01)))
        assert point_to_polyline_distance(GeoPoint(52.01, 9.0), line) == pytest.approx(0.0, abs=1e-9)

    def test_perpendicular_offset(self):
        # long straight segment along a meridian; p offset 100 m east of its midpoint
        line = Polyline((GeoPoint(52.0, 9.7), GeoPoint(52.1, 9.7)))
        dlon = 100.0 / (M_PER_DEG * math.cos(math.radians(52.05)))
        p = GeoPoint(52.05, 9.7 + dlon)
        assert haversine_distance(p, GeoPoint(52.05, 9.7)) == pytest.approx(100.0, abs=0.01)
        assert point_to_polyline_distance(p, line) == pytest.approx(100.0, abs=1.0)

    def test_beyond_segment_end_matches_dense_sampling(self):
        a, b = GeoPoint(52.0, 9.7), GeoPoint(52.005, 9.7)
        line = Polyline((a, b))
        p = GeoPoint(52.009, 9.701)  # past b
        # oracle: sample the segment every ~1 m, take the minimum point distance
        n = int(haversine_distance(a, b)) + 1
        sampled = min(
            haversine_distance(
                p,
                GeoPoint(a.lat + (b.lat - a.lat) * t / n, a.lon + (b.lon - a.lon) * t / n),
            )
            for t in range(n + 1)
        )
        d = point_to_polyline_distance(p, line)
        assert d == pytest.approx(sampled, abs=1.0)
        assert d == pytest.approx(haversine_distance(p, b), abs=1.0)


def random_items(rng, n, box=(52.0, 52.5, 9.0, 9.5)):
    lat0, lat1, lon0, lon1 = box
    return [
        (f"p{i:04d}", GeoPoint(rng.uniform(lat0, lat1), rng.uniform(lon0, lon1)))
        for i in range(n)
    ]


class TestSpatialIndex:
    def test_single_hit(self):
        p = GeoPoint(52.37, 9.73)
        far = GeoPoint(52.37, 9.73 + 500.0 / (M_PER_DEG * math.cos(math.radians(52.37))))
        index = SpatialIndex([("S1", p), ("S2", far)])
        assert index.nearest_within(p, 100.0) == [("S1", 0.0)]

    def test_radius_too_small_gives_empty(self):
        index = SpatialIndex([("S1", GeoPoint(52.37, 9.73))])
        assert index.nearest_within(GeoPoint(52.38, 9.73), 10.0) == []

    def test_equidistant_ties_ordered_by_id(self):
        p = GeoPoint(52.0, 9.0)
        east = GeoPoint(52.0, 9.001)
        west = GeoPoint(52.0, 8.999)
        index = SpatialIndex([("S2", east), ("S1", west)])
        result = index.nearest_within(p, 200.0)
        assert [r[0] for r in result] == ["S1", "S2"]
        assert result[0][1] == result[1][1]
        # agrees with the linear-scan oracle
        assert result == brute_force_within([("S2", east), ("S1", west)], p, 200.0)

    def test_rejects_nonpositive_radius(self):
        index = SpatialIndex([("S1", GeoPoint(52.0, 9.0))])
        with pytest.raises(ValueError):
            index.nearest_within(GeoPoint(52.0, 9.0), 0.0)

    def test_matches_linear_scan_on_random_instances(self):
        rng = random.Random(20240901)
        for _ in range(40):
            items = random_items(rng, rng.randint(1, 1000))
            index = SpatialIndex(items)
            p = GeoPoint(rng.uniform(52.0, 52.5), rng.uniform(9.0, 9.5))
            radius = rng.uniform(50.0, 5000.0)
            assert index.nearest_within(p, radius) == brute_force_within(items, p, radius)

    def test_increasing_radius_never_removes_results(self):
        rng = random.Random(7)
        items = random_items(rng, 300)
        index = SpatialIndex(items)
        p = GeoPoint(52.25, 9.25)
        previous: set = set()
        for radius in (100.0, 300.0, 1000.0, 3000.0, 10000.0):
            ids = {i for i, _ in index.nearest_within(p, radius)}
            assert previous <= ids
            previous = ids

    def test_module_level_alias(self):
        items = [("A", GeoPoint(52.0, 9.0))]
        index = SpatialIndex(items)
        assert nearest_within(index, GeoPoint(52.0, 9.0), 50.0) == [("A", 0.0)]
