import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from metapop import BoundaryMaximumError, PerturbationSchedule, ProfilePoint, boundary_lrt, mcap, profile_grid
from metapop.profile import local_quadratic_smooth, read_profile_csv, write_profile_csv
from oracles import quadratic_ci
from toys import beta_only, seair_toy


def _points(x, y, se=0.0):
    return [ProfilePoint(float(v), float(l), se) for v, l in zip(x, y)]


X = np.linspace(0, 4, 41)
STEP = X[1] - X[0]


class TestSmoother:
    def test_exact_on_quadratics(self):
        x = np.linspace(-3, 3, 15)
        y = 1.5 - 0.7 * x + 2.2 * x**2
        np.testing.assert_allclose(local_quadratic_smooth(x, y, x), y, atol=1e-9)

    def test_averages_noise(self):
        rng = np.random.default_rng(0)
        x = np.linspace(0, 1, 200)
        y = np.sin(3 * x) + rng.normal(0, 0.3, x.size)
        fit = local_quadratic_smooth(x, y, x, span=0.5)
        assert np.mean((fit - np.sin(3 * x)) ** 2) < np.mean((y - np.sin(3 * x)) ** 2) / 5


class TestMcap:
    def test_noiseless_quadratic(self):
        res = mcap(_points(X, -(X - 2) ** 2))
        lo, hi = quadratic_ci(2.0)
        assert abs(res.ci[0] - lo) <= STEP and abs(res.ci[1] - hi) <= STEP
        np.testing.assert_allclose(hi - 2, np.sqrt(1.92), atol=5e-4)
        assert abs(res.mle - 2) <= STEP
        np.testing.assert_allclose(res.cutoff, 1.920729410347062, rtol=1e-6)

    def test_noise_widens_cutoff(self):
        rng = np.random.default_rng(1)
        y = -(X - 2) ** 2 + rng.normal(0, 0.5, X.size)
        res = mcap(_points(X, y))
        assert res.cutoff > 1.9207
        assert res.mc_error_variance > 0

    @pytest.mark.filterwarnings("ignore:profile exceeds the cutoff")
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2.0))
    def test_cutoff_never_below_lrt(self, seed, sd):
        rng = np.random.default_rng(seed)
        res = mcap(_points(X, -(X - 2) ** 2 + rng.normal(0, sd, X.size)))
        assert res.cutoff >= chi2.ppf(0.95, 1) / 2 - 1e-12

    def test_boundary_maximum(self):
        with pytest.raises(BoundaryMaximumError):
            mcap(_points(X, -X))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            mcap(_points(X[:4], -(X[:4] - 1) ** 2))

    def test_missing_points_dropped(self):
        y = -(X - 2) ** 2
        y[[3, 17]] = np.nan
        res = mcap(_points(X, y))
        assert abs(res.ci[1] - quadratic_ci(2.0)[1]) <= STEP

    def test_edge_warning(self):
        x = np.linspace(1.5, 2.5, 11)
        res = mcap(_points(x, -(x - 2) ** 2))
        assert any("edge" in w for w in res.warnings)

    def test_json(self, tmp_path):
        import json
        res = mcap(_points(X, -(X - 2) ** 2))
        res.write_json(tmp_path / "m.json")
        assert json.loads((tmp_path / "m.json").read_text())["ci"] == list(res.ci)


class TestBoundaryLrt:
    def test_decreasing_from_boundary(self):
        x = np.linspace(0, 5, 21)
        lo, hi = boundary_lrt(_points(x, -x))
        assert lo == 0
        np.testing.assert_allclose(hi, 1.920729410347062, atol=5 / 999)

    def test_inside_mcap(self):
        rng = np.random.default_rng(3)
        y = -(X - 2) ** 2 + rng.normal(0, 0.3, X.size)
        pts = _points(X, y)
        lo, hi = boundary_lrt(pts)
        m = mcap(pts)
        assert m.ci[0] <= lo and hi <= m.ci[1]


class TestCsv:
    def test_round_trip(self, tmp_path):
        pts = _points(X[:6], -(X[:6] - 1) ** 2, se=0.25)
        write_profile_csv(tmp_path / "p.csv", "beta", pts)
        name, back = read_profile_csv(tmp_path / "p.csv")
        assert name == "beta"
        assert [(p.value, p.loglik, p.se) for p in back] == [(p.value, p.loglik, p.se) for p in pts]

    def test_mixed_params(self, tmp_path):
        (tmp_path / "p.csv").write_text("param,value,loglik,se\na,1,2,0\nb,1,2,0\n")
        with pytest.raises(ValueError):
            read_profile_csv(tmp_path / "p.csv")


class TestProfileGrid:
    def test_toy(self):
        model, truth, panel = seair_toy()
        grid = np.linspace(0.3, 0.8, 6)
        pts = profile_grid(model, panel, "beta_before", grid, beta_only(truth), J=100, n_reps=1, n_eval=2,
                           schedule=PerturbationSchedule({}, n_iterations=1), seed=0)
        assert [p.value for p in pts] == list(grid)
        assert all(np.isfinite(p.loglik) for p in pts)
        assert all(p.maximized_params["beta_before"] == p.value for p in pts)

    def test_validation(self):
        model, truth, panel = seair_toy()
        with pytest.raises(ValueError):
            profile_grid(model, panel, "beta_before", [0.4, 0.5], beta_only(truth))
        with pytest.raises(ValueError):
            profile_grid(model, panel, "tau", np.linspace(0.1, 0.5, 5), beta_only(truth))
