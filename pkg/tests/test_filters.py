import json

import numpy as np
import pytest

from metapop import (
    ObservationPanel,
    SpatPompModel,
    TimeGrid,
    block_particle_filter,
    compare_filters,
    enkf,
    make_synthetic,
    particle_filter,
)
from metapop.filters import run_filter, systematic_resample, write_comparison_csv
from metapop.seair import enkf_variance_floor
from metapop.toy import LinearGaussianModel
from oracles import RealPanel, kalman, simulate_linear_gaussian


@pytest.fixture(scope="module")
def lg():
    A, Q, R, m0, P0 = 0.8, 1.0, 0.5, 0.0, 1.0
    ys = simulate_linear_gaussian(A, Q, R, [m0], P0, 20, np.random.default_rng(11))
    model = LinearGaussianModel(A, Q, R, m0, P0)
    panel = RealPanel(ys, TimeGrid.daily(20))
    ll, means = kalman(A, Q, R, [m0], P0, ys)
    return model, panel, ll, means


@pytest.fixture(scope="module")
def lg3():
    A = np.array([[0.7, 0.1, 0.0], [0.1, 0.6, 0.1], [0.0, 0.2, 0.5]])
    Q = np.eye(3) * 0.5 + 0.1
    R = np.array([0.3, 0.4, 0.5])
    ys = simulate_linear_gaussian(A, Q, np.diag(R), np.zeros(3), np.eye(3), 15, np.random.default_rng(3))
    model = LinearGaussianModel(A, Q, R)
    panel = RealPanel(ys, TimeGrid.daily(15))
    ll, means = kalman(A, Q, np.diag(R), np.zeros(3), np.eye(3), ys)
    return model, panel, ll, means


class Silent(SpatPompModel):
    """Observations carry no information: every log-density is zero."""

    unit_names = ("a", "b")

    def rinit(self, params, J, rng):
        return rng.random((J, 2, 1))

    def rprocess(self, x, t0, t1, dt, params, rng):
        return x + rng.standard_normal(x.shape)

    def dmeasure(self, y, x, t, params):
        return np.zeros(x.shape[:2])


class Impossible(Silent):
    def dmeasure(self, y, x, t, params):
        return np.full(x.shape[:2], -np.inf if t >= 3 else 0.0)


def test_systematic_resample():
    w = np.array([0.0, 0.5, 0.0, 0.5])
    np.testing.assert_array_equal(systematic_resample(w, 0.3), [1, 1, 3, 3])
    np.testing.assert_array_equal(systematic_resample(np.full(4, 0.25), 0.5), [0, 1, 2, 3])


class TestParticleFilter:
    def test_uninformative(self):
        panel = ObservationPanel(np.zeros((2, 5)), TimeGrid.daily(5))
        assert particle_filter(Silent(), {}, panel, 10, seed=1).loglik_total == 0.0

    def test_kalman_oracle(self, lg):
        model, panel, ll, _ = lg
        vals = np.array([particle_filter(model, {}, panel, 2000, seed=3, replicate=r).loglik for r in range(10)])
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - ll) < 3 * se + 0.02

    def test_determinism(self, lg):
        model, panel, _, _ = lg
        a = particle_filter(model, {}, panel, 100, seed=9)
        b = particle_filter(model, {}, panel, 100, seed=9)
        np.testing.assert_array_equal(a.cond_loglik, b.cond_loglik)
        np.testing.assert_array_equal(a.filter_mean, b.filter_mean)
        c = particle_filter(model, {}, panel, 100, seed=10)
        assert a.loglik != c.loglik

    def test_failure_reported(self):
        panel = ObservationPanel(np.zeros((2, 5)), TimeGrid.daily(5))
        res = particle_filter(Impossible(), {}, panel, 10, seed=0)
        assert res.loglik_total == -np.inf
        assert res.failures[0] == (0, 2)

    def test_needs_two_particles(self, lg):
        with pytest.raises(ValueError):
            particle_filter(lg[0], {}, lg[1], 1)


class TestBlockParticleFilter:
    def test_single_block_is_pf(self, lg3):
        model, panel, _, _ = lg3
        pf = particle_filter(model, {}, panel, 300, seed=5, replicate=2)
        bpf = block_particle_filter(model, {}, panel, 300, [(0, 1, 2)], seed=5, replicate=2)
        np.testing.assert_array_equal(pf.cond_loglik, bpf.cond_loglik)
        np.testing.assert_array_equal(pf.filter_mean, bpf.filter_mean)

    def test_decomposition(self, lg3):
        model, panel, _, _ = lg3
        res = block_particle_filter(model, {}, panel, 200, [(0,), (1, 2)], seed=1)
        assert res.cond_loglik.shape == (2, 15)
        assert res.loglik_total == float(np.sum(res.cond_loglik))
        assert np.all(res.ess > 0) and np.all(res.ess <= 200)

    def test_bad_partition(self, lg3):
        with pytest.raises(ValueError):
            block_particle_filter(lg3[0], {}, lg3[1], 10, [(0,), (1,)])

    def test_independent_units_factorize(self):
        A, Q, R = np.eye(2) * 0.7, np.eye(2), np.array([0.4, 0.4])
        ys = simulate_linear_gaussian(A, Q, np.diag(R), np.zeros(2), np.eye(2), 10, np.random.default_rng(0))
        panel = RealPanel(ys, TimeGrid.daily(10))
        exact = kalman(A, Q, np.diag(R), np.zeros(2), np.eye(2), ys)[0]
        vals = np.array([block_particle_filter(LinearGaussianModel(A, Q, R), {}, panel, 500, seed=2,
                                               replicate=r).loglik for r in range(10)])
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - exact) < 3 * se + 0.05

    def test_inputs_untouched(self, lg3):
        model, panel, _, _ = lg3
        before = panel.counts.copy()
        A = model.A.copy()
        block_particle_filter(model, {}, panel, 50, seed=0)
        np.testing.assert_array_equal(panel.counts, before)
        np.testing.assert_array_equal(model.A, A)

    def test_missing_data_contributes_zero(self, lg3):
        model, panel, _, _ = lg3
        counts = panel.counts.copy()
        counts[1, 4] = np.nan
        res = block_particle_filter(model, {}, RealPanel(counts, panel.grid), 100, seed=0)
        assert res.cond_loglik[1, 4] == 0.0


class TestEnkf:
    def test_kalman_oracle(self, lg3):
        model, panel, ll, means = lg3
        vals, fm = [], []
        for r in range(8):
            res = enkf(model, {}, panel, 1000, seed=4, replicate=r)
            vals.append(res.loglik)
            fm.append(res.filter_mean[:, :, 0])
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - ll) < 3 * se + 0.05
        fm = np.array(fm)
        se_m = fm.std(axis=0, ddof=1) / np.sqrt(len(fm))
        assert np.all(np.abs(fm.mean(axis=0) - means) < 3 * se_m + 0.05)

    def test_zero_process_noise_mean(self):
        A, Q, R = np.eye(1), np.eye(1) * 1e-10, np.array([1.0])
        ys = simulate_linear_gaussian(A, Q, np.diag(R), [0.0], np.eye(1), 20, np.random.default_rng(2))
        panel = RealPanel(ys, TimeGrid.daily(20))
        _, means = kalman(A, Q, np.diag(R), [0.0], np.eye(1), ys)
        res = enkf(LinearGaussianModel(A, Q, R), {}, panel, 4000, seed=0)
        np.testing.assert_allclose(res.filter_mean[-1, 0, 0], means[-1, 0], atol=0.05)

    def test_singular_ridge(self):
        class Deterministic(Silent):
            def rinit(self, params, J, rng):
                return np.ones((J, 2, 1))

            def rprocess(self, x, t0, t1, dt, params, rng):
                return x

            def emeasure(self, x, t, params):
                return x[:, :, 0]

            def vmeasure(self, x, t, params):
                return np.zeros(x.shape[:2])

        panel = ObservationPanel(np.ones((2, 3)), TimeGrid.daily(3))
        res = enkf(Deterministic(), {}, panel, 10, seed=0)
        assert res.warnings and "ridge" in res.warnings[0]

    def test_determinism(self, lg):
        a = enkf(lg[0], {}, lg[1], 50, seed=3)
        b = enkf(lg[0], {}, lg[1], 50, seed=3)
        np.testing.assert_array_equal(a.cond_loglik, b.cond_loglik)


class TestVarianceFloor:
    def test_examples(self):
        assert enkf_variance_floor(0, "as-described") == 4
        assert enkf_variance_floor(4, "as-described") == enkf_variance_floor(4, "as-printed") == 4
        assert enkf_variance_floor(10, "as-printed") == 4
        assert enkf_variance_floor(10, "as-described") == 25

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            enkf_variance_floor(1, "both")


class TestResultSerialization:
    def test_json_and_csv(self, lg3, tmp_path):
        res = block_particle_filter(lg3[0], {}, lg3[1], 50, seed=0)
        res.write_json(tmp_path / "r.json")
        res.write_csv(tmp_path / "r.csv")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["loglik_total"] == res.loglik_total
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "block,time,cond_loglik"
        assert len(lines) == 1 + 3 * 15
        assert sum(float(l.split(",")[2]) for l in lines[1:]) == pytest.approx(res.loglik_total, abs=1e-9)


class TestCompare:
    def test_small_seair(self, tmp_path):
        syn = make_synthetic(2, 15, seed=3)
        rows = compare_filters(syn.model, syn.params, syn.panel, [("pf", 300), ("bpf", 300)], seed=1, n_reps=5)
        pf, bpf = rows
        assert pf["n_reps"] == bpf["n_reps"] == 5
        assert abs(pf["loglik"] - bpf["loglik"]) < 3 * np.hypot(pf["se"], bpf["se"])
        write_comparison_csv(tmp_path / "c.csv", rows)
        assert (tmp_path / "c.csv").read_text().startswith("filter,J,n_reps,loglik,se,error")

    def test_identical_specs(self, lg):
        rows = compare_filters(lg[0], {}, lg[1], [("pf", 200), ("pf", 200)], seed=0, n_reps=6)
        a, b = rows
        assert a["logliks"] != b["logliks"]
        assert abs(a["loglik"] - b["loglik"]) < 3 * np.hypot(a["se"], b["se"])

    def test_error_row(self, lg):
        rows = compare_filters(lg[0], {}, lg[1], [("pf", 1)], seed=0, n_reps=2)
        assert rows[0]["error"] and rows[0]["n_reps"] == 0

    def test_threads_do_not_change_results(self, lg):
        spec = [("pf", 100), ("enkf", 100)]
        a = compare_filters(lg[0], {}, lg[1], spec, seed=0, n_reps=3, threads=1)
        b = compare_filters(lg[0], {}, lg[1], spec, seed=0, n_reps=3, threads=4)
        assert [r["logliks"] for r in a] == [r["logliks"] for r in b]

    def test_unknown_method(self, lg):
        with pytest.raises(ValueError):
            run_filter("girf", lg[0], {}, lg[1], 10, 0)
