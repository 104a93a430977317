import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from metapop import (
    GeoTable,
    GravityConfig,
    MobilityTensor,
    connectivity_check,
    great_circle_distance,
    gravity_adjust,
    interpolate_missing_flows,
)
from metapop.mobility import (
    distance_matrix,
    gravity_flow,
    read_geo_csv,
    read_mobility_csv,
    write_mobility_csv,
)


def _geo(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return GeoTable(tuple(f"c{k}" for k in range(n)), 20 + 10 * rng.random(n), 100 + 10 * rng.random(n),
                    np.round(1e5 + 1e6 * rng.random(n)))


class TestInterpolation:
    def test_midpoint(self):
        f = np.full((3, 2, 2), np.nan)
        f[0, 0, 1], f[2, 0, 1] = 10, 20
        assert interpolate_missing_flows(f).flows[1, 0, 1] == 15

    def test_linear_run(self):
        f = np.full((5, 2, 2), np.nan)
        f[0, 1, 0], f[4, 1, 0] = 0, 8
        np.testing.assert_allclose(interpolate_missing_flows(f).flows[:, 1, 0], [0, 2, 4, 6, 8])

    def test_complete_unchanged(self):
        f = np.random.default_rng(1).random((4, 3, 3))
        np.fill_diagonal(f[0], 0)
        out = interpolate_missing_flows(f).flows
        idx = np.arange(3)
        f[:, idx, idx] = 0
        np.testing.assert_array_equal(out, f)

    def test_ends_constant_and_never_observed_zero(self):
        f = np.full((4, 2, 2), np.nan)
        f[1, 0, 1] = 7
        out = interpolate_missing_flows(f).flows
        np.testing.assert_array_equal(out[:, 0, 1], 7)
        np.testing.assert_array_equal(out[:, 1, 0], 0)

    @given(st.floats(-100, 100), st.floats(0, 1000), st.integers(3, 12))
    def test_exact_on_affine(self, slope, intercept, days):
        truth = intercept + slope * np.arange(days)
        assume(truth.min() >= 0)
        f = np.full((days, 2, 2), np.nan)
        f[0, 0, 1], f[-1, 0, 1] = truth[0], truth[-1]
        np.testing.assert_allclose(interpolate_missing_flows(f).flows[:, 0, 1], truth, atol=1e-9)


class TestTensor:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            MobilityTensor(-np.ones((1, 2, 2)))

    def test_diagonal_ignored(self):
        assert MobilityTensor(np.ones((1, 2, 2))).flows[0, 0, 0] == 0


class TestDistance:
    def test_zero(self):
        assert great_circle_distance((10, 20), (10, 20)) == 0

    def test_antipodal(self):
        np.testing.assert_allclose(great_circle_distance((0, 0), (0, 180)), np.pi * 6371, rtol=1e-12)

    def test_wuhan_beijing(self):
        # 1052.548 km from a 30-digit mpmath haversine
        d = great_circle_distance((30.59, 114.30), (39.90, 116.40))
        assert abs(d - 1052) <= 2
        np.testing.assert_allclose(d, 1052.54798191198, rtol=1e-10)


class TestGravity:
    def test_zero_factor_identity(self):
        geo = _geo()
        base = MobilityTensor(np.random.default_rng(0).random((3, 4, 4)))
        np.testing.assert_array_equal(gravity_adjust(base, geo, GravityConfig(0)).flows, base.flows)

    def test_hand_arithmetic(self):
        assert gravity_flow(20, 2.0, 1.0, 2e6, 5e5, 1e6) == 1e7

    def test_symmetric_case(self):
        geo = GeoTable(("a", "b"), [30.0, 31.0], [110.0, 111.0], [4e5, 4e5])
        out = gravity_adjust(MobilityTensor(np.zeros((1, 2, 2))), geo, GravityConfig(20))
        np.testing.assert_allclose(out.flows[0, 0, 1], 20 * 4e5, rtol=1e-12)
        np.testing.assert_allclose(out.flows[0, 1, 0], 20 * 4e5, rtol=1e-12)

    def test_matches_formula(self):
        geo = _geo(5)
        d = distance_matrix(geo)
        iu = np.triu_indices(5, 1)
        d_bar = d[iu].mean()
        out = gravity_adjust(MobilityTensor(np.zeros((2, 5, 5))), geo, GravityConfig(3.0)).flows
        P = geo.population
        for u in range(5):
            for j in range(5):
                want = 0.0 if u == j else 3.0 * d_bar / P.mean() * P[u] * P[j] / d[u, j]
                np.testing.assert_allclose(out[1, u, j], want, rtol=1e-12)

    def test_monotone(self):
        geo = _geo(4, 3)
        base = MobilityTensor(np.random.default_rng(2).random((2, 4, 4)) * 100)
        out = gravity_adjust(base, geo).flows
        off = ~np.eye(4, dtype=bool)
        assert np.all(out[:, off] > base.flows[:, off])

    def test_coincident_named(self):
        geo = GeoTable(("a", "b", "c"), [1.0, 2.0, 1.0], [3.0, 4.0, 3.0], [1.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="'a'.*'c'"):
            gravity_adjust(MobilityTensor(np.zeros((1, 3, 3))), geo)


class TestConnectivity:
    def test_all_zero(self):
        rep = connectivity_check(MobilityTensor(np.zeros((2, 3, 3))))
        assert all(r["isolated"] for r in rep)

    def test_after_gravity(self):
        geo = _geo(4)
        out = gravity_adjust(MobilityTensor(np.zeros((2, 4, 4))), geo)
        assert not any(r["isolated"] for r in connectivity_check(out))

    def test_totals(self):
        f = np.zeros((2, 2, 2))
        f[:, 0, 1] = 3
        rep = connectivity_check(MobilityTensor(f), ["a", "b"])
        assert rep[0] == {"unit": "a", "total_in": 0.0, "total_out": 6.0, "isolated": True}
        assert rep[1]["total_in"] == 6.0


class TestCsv:
    def test_round_trip(self, tmp_path):
        f = np.random.default_rng(0).random((3, 3, 3))
        t = MobilityTensor(f)
        write_mobility_csv(tmp_path / "m.csv", t, ["a", "b", "c"])
        back = read_mobility_csv(tmp_path / "m.csv", ["a", "b", "c"])
        np.testing.assert_array_equal(back.flows, t.flows)

    def test_unknown_unit(self, tmp_path):
        (tmp_path / "m.csv").write_text("day,from,to,flow\n0,a,zz,1\n")
        with pytest.raises(ValueError, match="zz"):
            read_mobility_csv(tmp_path / "m.csv", ["a", "b"])

    def test_negative_flow(self, tmp_path):
        (tmp_path / "m.csv").write_text("day,from,to,flow\n0,a,b,-1\n")
        with pytest.raises(ValueError, match="negative"):
            read_mobility_csv(tmp_path / "m.csv", ["a", "b"])

    def test_gap_interpolated(self, tmp_path):
        (tmp_path / "m.csv").write_text("day,from,to,flow\n0,a,b,2\n2,a,b,4\n")
        t = read_mobility_csv(tmp_path / "m.csv", ["a", "b"], n_days=4)
        np.testing.assert_array_equal(t.flows[:, 0, 1], [2, 3, 4, 4])

    def test_geo_duplicates(self, tmp_path):
        (tmp_path / "g.csv").write_text("unit,lat,lon,population\na,1,2,10\na,3,4,10\n")
        with pytest.raises(ValueError, match="duplicated"):
            read_geo_csv(tmp_path / "g.csv")


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(0.1, 50), st.integers(0, 1000))
def test_gravity_strictly_positive_off_diagonal(n, F, seed):
    geo = _geo(n, seed)
    out = gravity_adjust(MobilityTensor(np.zeros((1, n, n))), geo, GravityConfig(F)).flows[0]
    assert np.all(out[~np.eye(n, dtype=bool)] > 0)
    np.testing.assert_allclose(out, out.T, rtol=1e-12)
