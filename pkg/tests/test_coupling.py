from dataclasses import replace
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisons.coupling import (
    CoupledRun,
    TailReport,
    TailRow,
    TailSample,
    calibrate_constants,
    contraction_check,
    coupled_bound_curve,
    coupled_ensemble,
    delta_bound_curve,
    event_ER,
    exp_martingale_tail,
    probability_ER,
    require_threshold,
    scaled_noise,
    shear_part,
    tail_ensemble,
    tail_probability_E,
    wilson_interval,
)
from anisons.errors import CalibrationError, PreconditionError
from anisons.noise import NoiseOperator, decay_modes
from anisons.spectral import Grid, l2_norm_sq, random_divfree_field, scaled_to_h1
from anisons.stepper import InitSpec, SolverConfig, run_ensemble, simulate_coupled


@pytest.fixture(scope="module")
def g():
    return Grid(16, 16)


@pytest.fixture(scope="module")
def cfg(g):
    sigma = NoiseOperator(decay_modes(8, 1.0, target_K=0.5), g)
    init = InitSpec("random", {"seed": 1, "h1_norm": 1.0})
    return SolverConfig(lam=1.0, dt=1e-2, t_final=1.0, grid=g, sigma=sigma, seed=5, initial_condition=init)


def _bm_drift_sup_tail(a, gamma, R, T):
    """P(sup_{t<=T} (a W_t - gamma a^2 t) >= R) for Brownian W."""
    N = NormalDist().cdf
    mu, s = gamma * a * a, a * np.sqrt(T)
    return N((-R - mu * T) / s) + np.exp(-2 * gamma * R) * N((-R + mu * T) / s)


class TestWilson:
    def test_zero_successes(self):
        z = NormalDist().inv_cdf(0.995)
        lo, hi = wilson_interval(0, 100)
        assert lo == 0.0 and hi == pytest.approx(z * z / (100 + z * z))

    def test_all_successes_exact(self):
        assert wilson_interval(100, 100)[1] == 1.0

    @given(st.integers(1, 500), st.data())
    def test_contains_estimate_and_is_symmetric(self, n, data):
        k = data.draw(st.integers(0, n))
        lo, hi = wilson_interval(k, n)
        assert lo <= k / n <= hi
        lo2, hi2 = wilson_interval(n - k, n)
        assert lo == pytest.approx(1 - hi2, abs=1e-12) and hi == pytest.approx(1 - lo2, abs=1e-12)

    def test_narrows_with_n(self):
        assert np.diff(wilson_interval(50, 500)) < np.diff(wilson_interval(5, 50))

    def test_needs_trials(self):
        with pytest.raises(ValueError):
            wilson_interval(0, 0)


class TestTailRows:
    def test_upper_side(self):
        assert TailRow("m", 1, 1, 0.1, 12, 100, 0, 1).passed  # lo < 0.1 < freq
        assert not TailRow("m", 1, 1, 0.01, 30, 100, 0, 1).passed

    def test_lower_side(self):
        assert TailRow("E_R", 0, 1, 0.95, 93, 100, 0, 1, side="lower").passed
        assert not TailRow("E_R", 0, 1, 0.99, 80, 100, 0, 1, side="lower").passed

    def test_report(self):
        r = TailReport([TailRow("m", 1, 1, 0.5, 1, 100, 0, 1)]) + TailReport([TailRow("m", 1, 2, 0.0, 50, 100, 0, 1)])
        assert len(r.table()) == 2 and not r.passed
        assert len(r.table()[0]) == len(TailReport.columns)


class TestReflectionOracle:
    """A frozen integrand turns M into a scaled Brownian motion with known sup law."""

    def _sample(self, a, gammas, T, dt, n, seed=0):
        rng = np.random.default_rng(seed)
        steps = int(round(T / dt))
        sup = {g: np.zeros(n) for g in gammas}
        M = np.zeros(n)
        for k in range(steps):
            M += a * rng.standard_normal(n) * np.sqrt(dt)
            for g in gammas:
                np.maximum(sup[g], M - g * a * a * dt * (k + 1), out=sup[g])
        z = np.zeros(n)
        return TailSample(T, 1.0, sup, z, z, np.zeros(n, bool))

    def test_matches_exact_law_and_bound(self):
        a, T, dt, n = 0.7, 2.0, 1e-3, 4000
        cells = [(2.0, 0.25), (2.0, 0.5), (4.0, 0.5)]
        sample = self._sample(a, {2.0, 4.0}, T, dt, n)
        for gamma, R in cells:
            k = sample._count(sample.sup_mg[gamma], R)
            lo, hi = wilson_interval(k, n)
            exact = _bm_drift_sup_tail(a, gamma, R, T)
            # the grid sup sits slightly below the continuous one
            assert lo <= exact <= hi + 0.6 * a * np.sqrt(dt)
            assert exact <= np.exp(-2 * gamma * R)

    def test_report_from_sample(self, cfg):
        sample = self._sample(0.7, {2.0}, 1.0, 1e-2, 200)
        rep = exp_martingale_tail(cfg, [(2.0, 0.5)], 200, 1.0, sample=sample)
        assert rep.rows[0].bound == pytest.approx(np.exp(-1.0)) and rep.passed


@pytest.fixture(scope="module")
def sample(cfg):
    return tail_ensemble(cfg, 128, 1.0, [2.0, 4.0])


@pytest.fixture(scope="module")
def runs(cfg):
    return coupled_ensemble(cfg, [0.5, 2.0], [0.1], [1.0, 4.0], 1, 0.5, delta_h1=0.1)


class TestEnsembleTails:
    def test_shapes(self, sample):
        assert sample.n == 128 and sample.excluded == 0
        assert set(sample.sup_mg) == {2.0, 4.0}
        assert np.all(sample.sup_mg[2.0] >= 0) and np.all(sample.sup_E0 >= 0)

    def test_head(self, sample):
        h = sample.head(100)
        assert h.n == 100 and np.array_equal(h.sup_E1, sample.sup_E1[:100])

    def test_threads_do_not_matter(self, cfg, sample):
        other = tail_ensemble(cfg, 128, 1.0, [2.0, 4.0], threads=3)
        assert np.array_equal(other.sup_mg[4.0], sample.sup_mg[4.0])
        assert np.array_equal(other.sup_E0, sample.sup_E0)

    def test_martingale_cells(self, cfg, sample):
        rep = exp_martingale_tail(cfg, [(2.0, 0.25), (4.0, 0.5)], 128, 1.0, sample=sample)
        assert [r.bound for r in rep.rows] == pytest.approx([np.exp(-0.5), np.exp(-2.0)])
        assert rep.passed

    def test_E_tail_and_ER(self, cfg, sample):
        R = 6 * cfg.sigma.K
        e0 = tail_probability_E(cfg, "E0", R, 128, 1.0, sample=sample)
        er = probability_ER(sample, R)
        assert e0.rows[0].bound == pytest.approx(np.exp(-3.0))
        assert er.rows[0].bound == pytest.approx(1 - 2 * np.exp(-3.0))
        assert e0.passed and er.passed

    def test_needs_100_replicas(self, cfg):
        with pytest.raises(PreconditionError):
            exp_martingale_tail(cfg, [(1.0, 1.0)], 99, 1.0)

    def test_rejects_bad_cells(self, cfg, sample):
        with pytest.raises(ValueError):
            exp_martingale_tail(cfg, [(0.0, 1.0)], 100, 1.0, sample=sample)
        with pytest.raises(ValueError):
            tail_probability_E(cfg, "E2", 1.0, 100, 1.0, sample=sample)

    def test_zero_noise_counts_against_eps(self, g):
        det = SolverConfig(lam=1.0, dt=1e-2, t_final=1.0, grid=g)
        u0 = scaled_to_h1(random_divfree_field(g, 0), 2.0)
        s = tail_ensemble(det, 4, 1.0, u0=u0)
        rep = tail_probability_E(det, "E1", 1.0, 4, 1.0, sample=s, eps_num=1e-10)
        assert rep.rows[0].bound == 0.0 and rep.rows[0].count == 0 and rep.passed


class TestBoundCurves:
    def test_delta_bound_curve(self, cfg, g):
        u0 = random_divfree_field(g, 0)
        _, _, rec, lu, _ = simulate_coupled(cfg, u0, random_divfree_field(g, 1))
        b = delta_bound_curve(2.0, 1.5, lu, 0.3)
        assert b[0] == 2.0
        assert b[-1] == pytest.approx(2.0 * np.exp(-3.0 * lu.t[-1] + 0.3 * lu.int_gn[-1]))

    def test_coupled_bound_curve(self):
        t = np.array([0.0, 1.0])
        b = coupled_bound_curve(1.0, 5.0, 0.04, 0.24, 1.0, t, 0.0)
        assert b == pytest.approx([1.0, np.exp(-9.0)])
        b = coupled_bound_curve(1.0, 5.0, 0.04, 0.24, 1.0, t, 2.0)
        assert b[0] == pytest.approx(np.exp(2.0 * 1.24))

    def test_threshold(self):
        assert require_threshold(1.0, 0.5, 1.0) == 0.75
        with pytest.raises(PreconditionError):
            require_threshold(0.5, 0.04, 0.0)


class TestContraction:
    def _pair(self, g, lam=5.0, K=0.04, T=2.0, dt=1e-2):
        sigma = scaled_noise(NoiseOperator(decay_modes(8, 1.0, amplitude=1.0), g), K)
        c = SolverConfig(lam=lam, dt=dt, t_final=T, grid=g, sigma=sigma, seed=2)
        u0 = scaled_to_h1(random_divfree_field(g, 3), 1.0)
        v0 = scaled_to_h1(random_divfree_field(g, 4), 1.0)
        _, _, rec, lu, _ = simulate_coupled(c, u0, v0)
        return rec, lu

    def test_pass_at_reference_regime(self, g):
        rec, lu = self._pair(g)
        v = contraction_check(rec, lu, C2=0.0, R=0.24)
        assert v.status == "pass" and v.final_ratio < 1e-6
        assert rec.bound is not None

    def test_log_slope_at_most_minus_lambda(self, g):
        rec, _ = self._pair(g)
        slope = np.polyfit(rec.t, 0.5 * np.log(rec.delta_sq), 1)[0]
        assert slope <= -5.0

    def test_no_claim_below_threshold(self, g):
        rec, lu = self._pair(g, lam=0.4)
        assert contraction_check(rec, lu, 0.0, 0.24).status == "no-claim"

    def test_no_claim_outside_ER(self, g):
        rec, lu = self._pair(g)
        assert contraction_check(rec, lu, 0.0, R=-1.0).status == "no-claim"

    def test_fail_reports_first_violation(self, g):
        rec, lu = self._pair(g)
        rec = replace(rec, delta_sq=rec.delta_sq.copy())
        rec.delta_sq[10:] = rec.delta0_sq
        v = contraction_check(rec, lu, 0.0, 0.24)
        assert v.status == "fail" and v.first_violation_t == pytest.approx(rec.t[10])

    def test_fail_on_floor(self, g):
        rec, lu = self._pair(g, T=0.5)
        v = contraction_check(rec, lu, 0.0, 0.24, floor=1e-12)
        assert v.status == "fail" and "floor" in v.reason

    def test_identical_data(self, g):
        rec, lu = self._pair(g)
        rec = replace(rec, delta0_sq=0.0)
        assert contraction_check(rec, lu, 0.0, 0.24).passed


class TestCalibration:
    def test_ensemble_layout(self, runs):
        assert len(runs) == 8
        assert runs[0].run_id == "0:lam=0.5,K=0.1,h1=1,broadband"
        assert runs[1].run_id.endswith("shear")
        assert all(r.record.K == pytest.approx(0.1) for r in runs)

    def test_perturbation_size(self, runs):
        # ||d||_{H1} = 0.1 bounds ||d||_{L2}
        assert all(0 < r.record.delta0_sq <= 0.01 + 1e-15 for r in runs)

    def test_calibrated_constants_cover_every_run(self, runs):
        cal = calibrate_constants(runs, R=0.6)
        assert cal.runs == 8 and cal.C0 >= 0 and cal.C2 >= 0
        for r in runs:
            rec = r.record
            bound = delta_bound_curve(rec.delta0_sq, rec.lam, r.ledger_u, cal.C0)
            assert np.all(rec.delta_sq <= bound * (1 + 1e-9))
            if event_ER(r.ledger_u, 0.6):
                b2 = coupled_bound_curve(rec.delta0_sq, rec.lam, rec.K, 0.6, rec.u0_h1_sq, rec.t, cal.C2)
                assert np.all(rec.delta_sq <= b2 * (1 + 1e-9))

    def test_attaining_run_is_tight(self, runs):
        cal = calibrate_constants(runs, R=0.6)
        if cal.C0 > 0:
            r = next(r for r in runs if r.run_id == cal.C0_run)
            rec = r.record
            bound = delta_bound_curve(rec.delta0_sq, rec.lam, r.ledger_u, cal.C0)
            assert np.max(rec.delta_sq[1:] / bound[1:]) == pytest.approx(1.0, rel=1e-9)

    def test_no_usable_runs(self, runs):
        dead = [CoupledRun("x", replace(runs[0].record, delta0_sq=0.0), runs[0].ledger_u)]
        with pytest.raises(CalibrationError):
            calibrate_constants(dead, 0.6)

    def test_unknown_kind(self, cfg):
        with pytest.raises(ValueError):
            coupled_ensemble(cfg, [1.0], [0.1], [1.0], 1, 0.1, kinds=("diagonal",))


class TestHelpers:
    def test_scaled_noise(self, cfg):
        s = scaled_noise(cfg.sigma, 0.04)
        assert s.K == pytest.approx(0.04)
        assert [m.m1 for m in s.modes] == [m.m1 for m in cfg.sigma.modes]
        with pytest.raises(ValueError):
            scaled_noise(NoiseOperator([], cfg.grid), 1.0)

    def test_shear_part(self, g):
        u = random_divfree_field(g, 0)
        s = shear_part(u)
        assert not np.any(s.coeffs[:, 1:, :]) and np.array_equal(s.coeffs[:, 0], u.coeffs[:, 0])
        s.check()
        assert l2_norm_sq(s) < l2_norm_sq(u)

    def test_event_ER_per_replica(self, cfg, sample):
        def red(ledger, blown):
            return {"in": event_ER(ledger, 0.5)}

        flags = run_ensemble(replace(cfg, output_every=1), 128, red, purpose="tails")["in"]
        expect = (sample.sup_E0 <= 1.0) & (sample.sup_E1 <= 1.0)
        assert flags.dtype == bool and np.array_equal(flags, expect)
