import logging
import math
import warnings

import numpy as np
import pytest

from pmwcm import engine as eng
from pmwcm import erm
from pmwcm.losses import LossFamily, loss_on_histogram
from pmwcm.mechanisms import Branch
from pmwcm.universe import Dataset, Histogram, boolean_cube, from_records, labeled_ball, uniform

from conftest import hist


def sched(**kw):
    base = dict(epsilon=1.0, delta=1e-6, alpha=0.1, beta=0.1, k=10, S=2.0, universe_size=2, n=4)
    base.update(kw)
    return eng.schedule(**base)


def engine_for(ds, s, noise=0.0, seed=0, **kw):
    return eng.PMWEngine(eng.SensitiveData(ds, s.universe_size), s,
                         sv_rng=np.random.default_rng(seed), oracle_rng=np.random.default_rng(seed + 1),
                         noise=noise, **kw)


class TestSchedule:
    def test_T_example(self):
        s = sched(S=2.0, universe_size=16, alpha=0.5)
        assert s.T == math.ceil(1024 * math.log(16)) == 2840

    def test_formulas(self):
        s = sched(universe_size=16, alpha=0.5, beta=0.2, epsilon=0.5, delta=1e-5)
        assert s.eta == math.sqrt(math.log(16) / s.T)
        assert s.eps0 == 0.5 / math.sqrt(8 * s.T * math.log(4 / 1e-5))
        assert s.delta0 == 1e-5 / (4 * s.T)
        assert s.alpha0 == 0.5 / 4 and s.beta0 == 0.2 / (2 * s.T)
        assert (s.sv_epsilon, s.sv_delta) == (0.25, 5e-6)
        assert s.solver_tol == 0.005

    def test_single_point_universe_clamps(self):
        with pytest.warns(UserWarning, match="clamping T to 1"):
            s = sched(universe_size=1)
        assert s.T == 1 and s.eta == 0.0

    @pytest.mark.parametrize("kw", [dict(epsilon=0), dict(delta=1), dict(beta=1), dict(alpha=0),
                                    dict(k=0), dict(n=0), dict(S=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            sched(**kw)

    def test_privacy_spent(self):
        s = sched(universe_size=16, alpha=0.5, epsilon=1.0, delta=1e-6)
        spent = s.privacy_spent()
        # oracle share overshoots eps/2 by at most eps^2 / (4 ln(4/delta))
        assert spent.epsilon <= 1.0 + 1.0 / (4 * math.log(4e6)) + 1e-12
        assert spent.epsilon > 1.0
        assert spent.delta <= 1e-6


class TestUpdateVector:
    def test_zero_direction(self, sq):
        assert np.array_equal(eng.build_update_vector(sq, [0.3], [0.3]), [0, 0])

    def test_hand_value(self, sq):
        assert np.array_equal(eng.build_update_vector(sq, [1.0], [0.0]), [0.0, -2.0])

    def test_within_S(self, rng):
        ball = labeled_ball(10, 2, rng)
        qs = [LossFamily(n).member(ball, 0, i) for n in ("glm_squared", "logistic", "logistic_l2")
              for i in range(3)]
        qs += [LossFamily("linear_query").member(boolean_cube(3), 0, i) for i in range(3)]
        count = 0
        for q in qs:
            a, b = q.domain.sample(rng, 1000), q.domain.sample(rng, 1000)
            for th, th_hat in zip(a, b):
                assert np.max(np.abs(eng.build_update_vector(q, th, th_hat))) <= q.S
                count += q.universe_size
        assert count >= 10_000

    def test_clamps_tiny_overshoot(self, sq, caplog):
        from dataclasses import replace
        q = replace(sq, S=2.0 - 5e-10)
        with caplog.at_level(logging.WARNING, logger="pmwcm.engine"):
            u = eng.build_update_vector(q, [1.0], [0.0])
        assert u[1] == -q.S and "clamping" in caplog.text

    def test_rejects_real_overshoot(self, sq):
        from dataclasses import replace
        with pytest.raises(AssertionError, match="exceeds S"):
            eng.build_update_vector(replace(sq, S=1.0), [1.0], [0.0])

    def test_nan(self, sq):
        with pytest.raises(FloatingPointError):
            eng.build_update_vector(sq, [np.nan], [0.0])


class TestMwUpdate:
    def test_zero_update(self, rng):
        h = Histogram(rng.dirichlet(np.ones(5)))
        assert np.allclose(eng.mw_update(h, np.zeros(5), 0.7).mass, h.mass, rtol=0, atol=1e-16)

    def test_zero_eta(self, rng):
        h = Histogram(rng.dirichlet(np.ones(5)))
        assert np.allclose(eng.mw_update(h, rng.uniform(-1, 1, 5), 0.0).mass, h.mass, rtol=0, atol=1e-16)

    def test_two_points(self):
        # weights exp(-eta u): (0.5/2, 0.5) normalised
        out = eng.mw_update(hist(0.5, 0.5), [math.log(2), 0.0], 1.0)
        assert np.allclose(out.mass, [1 / 3, 2 / 3], rtol=0, atol=1e-15)

    def test_extreme_values_stay_valid(self):
        out = eng.mw_update(hist(0.5, 0.5), [1e4, -1e4], 1.0)
        assert out.mass[1] == 1.0 and out.mass[0] == 0.0

    def test_negative_eta(self):
        with pytest.raises(ValueError):
            eng.mw_update(hist(0.5, 0.5), [0, 0], -1.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            eng.mw_update(hist(0.5, 0.5), [0, 0, 0], 1.0)

    def test_kl_potential_step(self, rng):
        # KL(D||D_next) - KL(D||D_hat) <= -eta <u, D_hat - D> + eta^2 S^2
        for _ in range(500):
            size = int(rng.integers(2, 20))
            S, eta = rng.uniform(0.5, 3), rng.uniform(0, 0.5)
            D = Histogram(rng.dirichlet(np.ones(size)))
            Dh = Histogram(rng.dirichlet(np.ones(size)))
            u = rng.uniform(-S, S, size)
            Dn = eng.mw_update(Dh, u, eta)
            kl = lambda a, b: float(np.sum(a.mass * (np.log(a.mass) - np.log(b.mass))))
            assert kl(D, Dn) - kl(D, Dh) <= -eta * float(u @ (Dh.mass - D.mass)) + eta ** 2 * S ** 2 + 1e-12


class TestAnswerQuery:
    def test_perfect_hypothesis(self, sq):
        s = sched(n=2)
        e = engine_for(Dataset([0, 1]), s)
        theta, branch = e.answer_query(sq)
        assert branch is Branch.BOTTOM
        assert erm.err_answer(sq, hist(0.5, 0.5), theta, 1e-9) <= 1e-9

    def test_top_branch_moves_toward_data(self, sq):
        s = sched(n=2)
        e = engine_for(Dataset([1, 1]), s)
        # err_db = 0.25 >= alpha
        theta, branch = e.answer_query(sq)
        assert branch is Branch.TOP and theta[0] == 1.0 and e.t == 1
        assert e.hypothesis.mass[1] > 0.5

    def test_halts_after_T(self, sq):
        # n = 1 makes the sparse-vector noise huge, so TOP answers arrive quickly
        s = sched(alpha=2.6, n=1, k=10_000)
        assert s.T == 27
        e = engine_for(Dataset([1]), s, noise=1.0)
        tops = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            while tops < s.T:
                tops += e.answer_query(sq)[1] is Branch.TOP
        assert e.halted and e.t == s.T
        with pytest.raises(eng.EngineHalted, match=r"query budget exhausted \(T updates reached\)"):
            e.answer_query(sq)

    def test_session_records_halt(self, sq):
        s = sched(alpha=2.6, n=1, k=10_000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = eng.run_session(Dataset([1]), [sq] * 10_000, s, seed=4)
        assert tr.halted and tr.top_count == s.T == tr.updates_used
        assert "T updates reached" in tr.halt_reason

    def test_rejects_larger_S(self, sq):
        e = engine_for(Dataset([0, 1]), sched(S=1.0, n=2))
        with pytest.raises(ValueError, match="exceeds"):
            e.answer_query(sq)

    def test_rejects_other_universe(self):
        e = engine_for(Dataset([0, 1]), sched(n=2))
        q = LossFamily("linear_query").member(boolean_cube(2), 0, 0)
        with pytest.raises(ValueError, match="different universe"):
            e.answer_query(q)

    def test_schedule_must_match_data(self):
        with pytest.raises(ValueError):
            engine_for(Dataset([0, 1]), sched(n=3))

    def test_minimizer_cache_is_read_only(self, sq):
        e = engine_for(Dataset([0, 1]), sched(n=2))
        th = e.hypothesis_minimizer(sq)
        with pytest.raises(ValueError):
            th[0] = 0.0


class TestSensitiveData:
    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            eng.SensitiveData(Dataset([]), 3)
        with pytest.raises(ValueError, match="outside"):
            eng.SensitiveData(Dataset([3]), 3)

    def test_excess_risk(self, sq):
        d = eng.SensitiveData(Dataset([1, 1]), 2)
        assert d.excess_risk(sq, [0.5], 1e-9) == pytest.approx(0.25, abs=1e-9)


class TestRunSession:
    def test_empty(self, sq):
        tr = eng.run_session(Dataset([0, 1]), [], sched(n=2), noise=0.0)
        assert len(tr) == 0 and tr.updates_used == 0 and tr.max_error == 0.0

    def test_private_mode_needs_noise(self, sq):
        with pytest.raises(ValueError):
            eng.run_session(Dataset([0, 1]), [sq], sched(n=2), noise=0.0, mode="private")

    def test_too_many_queries(self, sq):
        with pytest.raises(ValueError, match="more queries"):
            eng.run_session(Dataset([0, 1]), [sq] * 3, sched(n=2, k=2), noise=0.0)

    def test_noise_free_linear_queries_accurate(self):
        u = boolean_cube(4)
        ds = Dataset(np.random.default_rng(0).integers(0, 16, 500))
        qs = LossFamily("linear_query").generate(u, 3, 40)
        s = sched(alpha=0.1, universe_size=16, n=500, k=200)
        tr = eng.run_session(ds, qs * 5, s, noise=0.0, check_potential=True)
        assert len(tr) == 200 and tr.max_error <= 0.1
        assert tr.top_count == tr.updates_used <= s.T

    def test_private_transcript_has_no_errors(self):
        u = boolean_cube(3)
        ds = Dataset(np.arange(8).repeat(50))
        qs = LossFamily("linear_query").generate(u, 1, 10)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = eng.run_session(ds, qs, sched(universe_size=8, n=400), seed=3)
        assert tr.errors is None and tr.max_error is None and len(tr) == 10

    def test_reproducible(self):
        u = boolean_cube(3)
        ds = Dataset(np.repeat(np.arange(8), [90, 1, 1, 1, 1, 1, 1, 4]))
        qs = LossFamily("linear_query").generate(u, 1, 20)
        s = sched(universe_size=8, n=100, k=20, alpha=0.3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = eng.run_session(ds, qs, s, seed=9)
            b = eng.run_session(ds, qs, s, seed=9)
            c = eng.run_session(ds, qs, s, seed=10)
        assert a == b and a.top_count > 0
        assert a != c

    def test_tops_bounded_by_T(self, sq):
        s = sched(alpha=1.0, S=2.0, n=3, k=100)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for seed in range(5):
                tr = eng.run_session(Dataset([1, 1, 1]), [sq] * 100, s, seed=seed)
                assert tr.top_count <= s.T and tr.top_count == tr.updates_used


class TestPotentialDrop:
    def test_random_instances(self, rng):
        from pmwcm.properties import potential_instance
        ball = labeled_ball(8, 2, rng)
        for name in ("glm_squared", "logistic", "logistic_l2"):
            for _ in range(100):
                lhs, rhs = potential_instance(rng, LossFamily(name), ball, 1e-9)
                assert lhs >= rhs - 1e-6

    def test_hook_catches_wrong_sign(self, sq):
        # a reversed update vector breaks the inequality
        truth = hist(0, 1)
        hook = eng.potential_check(truth, 1e-6)
        with pytest.raises(AssertionError, match="potential drop"):
            hook(sq, np.array([1.0]), np.array([0.5]), -eng.build_update_vector(sq, [1.0], [0.5]), uniform(2))
