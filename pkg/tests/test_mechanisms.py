import math

import numpy as np
import pytest

from pmwcm import kernels
from pmwcm.losses import LossFamily
from pmwcm.mechanisms import (Branch, MechanismHalted, OracleSpec, PrivacyBudget, SvConfig,
                              compose, exp_mech_min_n, laplace_sample, oracle_answer,
                              oracle_distribution, oracle_logits, oracle_min_n, split_budget,
                              sv_init, sv_process, sv_required_n, sv_size_bound)
from pmwcm.universe import Dataset, Histogram, grid_line

from conftest import hist


def cfg(**kw):
    base = dict(T=4, k=16, alpha=0.5, S=2.0, n=1000, epsilon=1.0, delta=0.01)
    base.update(kw)
    return SvConfig(**base)


class TestLaplace:
    def test_moments(self):
        rng = np.random.default_rng(0)
        s = 0.7
        z = np.array([laplace_sample(s, rng) for _ in range(1_000_000)])
        assert abs(z.mean()) <= 5 * s / 1000
        # P(|Z| > s ln 2) = exp(-ln 2) = 1/2
        assert np.mean(np.abs(z) > s * math.log(2)) == pytest.approx(0.5, abs=0.01)

    def test_deterministic(self):
        a = [laplace_sample(1.0, np.random.default_rng(3)) for _ in range(3)]
        assert len(set(a)) == 1

    @pytest.mark.parametrize("scale", [0.0, -1.0, float("nan")])
    def test_bad_scale(self, scale):
        with pytest.raises(ValueError):
            laplace_sample(scale, np.random.default_rng(0))


class TestSparseVector:
    def test_noise_free_threshold(self):
        st = sv_init(cfg(noise=0.0), 0)
        assert st.threshold == 0.375
        assert (st.updates, st.halted) == (0, False)

    def test_same_seed_same_state(self):
        a, b = sv_init(cfg(), 42), sv_init(cfg(), 42)
        assert a.threshold == b.threshold
        while not a.halted:
            assert sv_process(a, 0.3) is sv_process(b, 0.3)
        assert b.halted and a.threshold == b.threshold

    @pytest.mark.parametrize("value,branch", [(0.6, Branch.TOP), (0.2, Branch.BOTTOM),
                                              (0.3, Branch.BOTTOM), (0.375, Branch.TOP)])
    def test_noise_free_answers(self, value, branch):
        assert sv_process(sv_init(cfg(noise=0.0), 0), value) is branch

    def test_halts_after_T_tops(self):
        st = sv_init(cfg(noise=0.0, T=3, k=100), 0)
        answers = [sv_process(st, 1.0) for _ in range(3)]
        assert answers == [Branch.TOP] * 3 and st.halted and st.updates == 3
        with pytest.raises(MechanismHalted, match="mechanism halted"):
            sv_process(st, 1.0)

    def test_halts_after_k_queries(self):
        st = sv_init(cfg(noise=0.0, T=3, k=5), 0)
        for _ in range(5):
            sv_process(st, 0.0)
        assert st.halted and st.updates == 0 and st.seen == 5

    def test_never_more_than_T_tops(self):
        rng = np.random.default_rng(1)
        for seed in range(50):
            st = sv_init(cfg(n=50, T=5, k=200), seed)
            tops = 0
            while not st.halted:
                tops += sv_process(st, float(rng.uniform(0, 2))) is Branch.TOP
            assert tops <= 5 and st.updates == tops

    def test_scales(self):
        c = cfg()
        assert c.sensitivity == 3 * 2.0 / 1000
        eps_a = 1.0 / math.sqrt(8 * 4 * math.log(200))
        assert c.epoch_epsilon == pytest.approx(eps_a, rel=1e-15)
        assert c.threshold_scale == pytest.approx(2 * c.sensitivity / eps_a, rel=1e-15)
        assert c.query_scale == pytest.approx(4 * c.sensitivity / eps_a, rel=1e-15)

    def test_non_finite_value(self):
        with pytest.raises(ValueError):
            sv_process(sv_init(cfg(), 0), float("nan"))

    @pytest.mark.parametrize("kw", [dict(T=0), dict(k=0), dict(alpha=0), dict(delta=1.0), dict(noise=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            cfg(**kw)

    def test_correctness_at_scale(self):
        beta = 0.1
        base = cfg()
        n = max(sv_size_bound(base, beta), sv_required_n(base, beta))
        c = cfg(n=n)
        rng = np.random.default_rng(2024)
        good = 0
        for trial in range(200):
            st = sv_init(c, trial)
            ok = True
            while not st.halted:
                hi = rng.uniform() < 0.3
                v = rng.uniform(c.alpha, c.S) if hi else rng.uniform(0, c.alpha / 2)
                ok &= (sv_process(st, v) is Branch.TOP) == hi
            good += ok
        slack = 3 * math.sqrt(200 * beta * (1 - beta))
        assert good >= (1 - beta) * 200 - slack


class TestSizeBound:
    def test_example_value(self):
        # 256*2*sqrt(4 ln 200) ln 640 / 0.5, evaluated at 50 digits
        assert sv_size_bound(cfg(), 0.1) == 30461

    def test_halves_with_alpha(self):
        a = 256 * 2 * math.sqrt(4 * math.log(200)) * math.log(640) / 0.5
        assert sv_size_bound(cfg(alpha=1.0), 0.1) == math.ceil(a / 2)

    def test_linear_in_S(self):
        assert sv_size_bound(cfg(S=4.0), 0.1) in (2 * 30461 - 1, 2 * 30461)

    def test_derived_bound(self):
        c = cfg()
        expect = 96 * 2 * math.log(2 * 16 / 0.1) / (0.5 * c.epoch_epsilon)
        assert sv_required_n(c, 0.1) == math.ceil(expect)


class TestOracle:
    def spec3(self, eps0=1.0):
        return OracleSpec(eps0=eps0, alpha0=0.1, beta0=0.1, spacing=0.5)

    def test_net(self, sq):
        assert np.array_equal(self.spec3().net(sq)[:, 0], [0, 0.5, 1])

    def test_default_spacing(self, sq):
        spec = OracleSpec(eps0=1.0, alpha0=0.125, beta0=0.1)
        assert spec.spacing_for(sq) == 0.125 / 4
        assert len(spec.net(sq)) == 33

    def test_large_eps_is_grid_argmin(self, sq, rng):
        spec = OracleSpec(eps0=1e6, alpha0=0.1, beta0=0.1, spacing=0.01)
        ds = Dataset([0, 1, 1, 1])
        for _ in range(20):
            assert oracle_answer(spec, sq, ds, rng)[0] == 0.75

    def test_noise_free_is_argmin(self, sq, rng):
        spec = OracleSpec(eps0=1e-3, alpha0=0.1, beta0=0.1, spacing=0.25, noise=0.0)
        assert oracle_answer(spec, sq, Dataset([1, 1, 0]), rng)[0] == 0.75

    def test_single_point_net(self):
        q = LossFamily("constant").member(grid_line(3), 0, 0)
        spec = OracleSpec(eps0=1.0, alpha0=0.1, beta0=0.1)
        out = {float(oracle_answer(spec, q, Dataset([i]), np.random.default_rng(i))[0]) for i in range(3)}
        assert out == {0.5}

    def test_closed_form_frequencies(self, sq):
        # eps0 n / (2S) = 1 with n = 4, S = 2
        spec = self.spec3()
        h = hist(0.5, 0.5)
        w = np.exp([-0.5, -0.25, -0.5])
        expect = w / w.sum()
        assert np.allclose(expect, [0.30450434242028, 0.39099131515943, 0.30450434242028], atol=1e-13)
        assert np.allclose(oracle_distribution(spec, sq, h, 4), expect, rtol=0, atol=1e-15)
        logits = oracle_logits(spec, sq, h, 4)
        u = np.random.default_rng(5).random(1_000_000)
        idx = np.array([kernels.sample_index(logits, x) for x in u])
        freq = np.bincount(idx, minlength=3) / len(idx)
        assert np.allclose(freq, expect, atol=0.01)

    @pytest.mark.filterwarnings("ignore:n=4 is below")
    def test_answer_path_frequencies(self, sq):
        spec = self.spec3()
        rng = np.random.default_rng(6)
        ds = Dataset([0, 0, 1, 1])
        draws = np.array([oracle_answer(spec, sq, ds, rng)[0] for _ in range(50_000)])
        freq = [np.mean(draws == v) for v in (0, 0.5, 1)]
        assert np.allclose(freq, [0.3045, 0.3910, 0.3045], atol=0.01)

    def test_warns_below_min_n(self, sq, rng):
        spec = OracleSpec(eps0=0.1, alpha0=0.1, beta0=0.1)
        with pytest.warns(UserWarning, match="below the oracle's accuracy size"):
            oracle_answer(spec, sq, Dataset([0, 1]), rng)

    def test_min_n_example(self):
        assert exp_mech_min_n(101, 2.0, 0.1, 0.125, 0.01) == math.ceil(8 * math.log(10100) / 0.0125) == 5901

    def test_min_n_alpha_ratio(self):
        a = 4 * 2 * math.log(101 / 0.01) / (0.1 * 0.125)
        assert exp_mech_min_n(101, 2.0, 0.1, 0.25, 0.01) == math.ceil(a / 2)

    def test_min_n_decreasing_in_beta(self):
        vals = [exp_mech_min_n(101, 2.0, 0.1, 0.125, b) for b in (1e-6, 1e-3, 0.1, 0.5, 0.999)]
        assert vals == sorted(vals, reverse=True)

    def test_oracle_min_n_uses_net(self, sq):
        spec = OracleSpec(eps0=0.1, alpha0=0.125, beta0=0.01)
        assert oracle_min_n(spec, sq) == exp_mech_min_n(len(spec.net(sq)), 2.0, 0.1, 0.125, 0.01)

    def test_pointwise_dp_small(self, sq):
        spec = OracleSpec(eps0=0.7, alpha0=1.0, beta0=0.1, spacing=0.25)
        for n in (1, 2, 3):
            for a in range(n + 1):
                D = Histogram(np.array([a, n - a]) / n)
                for b in (a - 1, a + 1):
                    if 0 <= b <= n:
                        D2 = Histogram(np.array([b, n - b]) / n)
                        p, p2 = oracle_distribution(spec, sq, D, n), oracle_distribution(spec, sq, D2, n)
                        assert np.all(np.log(p) - np.log(p2) <= spec.eps0 + 1e-12)

    @pytest.mark.parametrize("kw", [dict(eps0=0), dict(alpha0=-1), dict(beta0=1), dict(spacing=0), dict(noise=-1)])
    def test_invalid(self, kw):
        base = dict(eps0=1.0, alpha0=0.1, beta0=0.1)
        base.update(kw)
        with pytest.raises(ValueError):
            OracleSpec(**base)


class TestComposition:
    def test_single_step(self):
        e0, dp = 0.2, 1e-5
        b = compose(e0, 0.0, 1, dp)
        assert b.epsilon == math.sqrt(2 * math.log(1 / dp)) * e0 + 2 * e0 ** 2 and b.delta == dp

    def test_example(self):
        b = compose(0.1, 0.0, 10, 1e-6)
        assert b.epsilon == pytest.approx(1.8622581362691, abs=1e-12)
        assert b.delta == 1e-6

    def test_delta_adds(self):
        assert compose(0.1, 1e-7, 10, 1e-6).delta == pytest.approx(2e-6, rel=1e-12)

    def test_inverse_split(self, rng):
        for _ in range(1000):
            eps, delta, T = rng.uniform(1e-3, 1), 10 ** rng.uniform(-9, -0.31), int(rng.integers(1, 10 ** 5))
            e0, d0, dp = split_budget(eps, delta, T)
            b = compose(e0, d0, T, dp)
            assert b.epsilon <= eps and b.delta <= delta

    def test_monotone(self):
        assert compose(0.1, 0, 10, 1e-6).epsilon < compose(0.1, 0, 11, 1e-6).epsilon
        assert compose(0.1, 0, 10, 1e-6).epsilon < compose(0.11, 0, 10, 1e-6).epsilon
        assert compose(0.1, 0, 10, 1e-6).epsilon < compose(0.1, 0, 10, 1e-7).epsilon

    @pytest.mark.parametrize("args", [(0.6, 0, 1, 0.1), (0.1, 0.6, 1, 0.1), (0.1, 0, 1, 0),
                                      (0.1, 0, 1, 0.6), (0.1, 0, 0, 0.1), (0.1, 0, 1.5, 0.1), (-0.1, 0, 1, 0.1)])
    def test_preconditions(self, args):
        with pytest.raises(ValueError, match="composition preconditions"):
            compose(*args)


class TestBudget:
    def test_sanity_guard(self):
        with pytest.raises(ValueError):
            PrivacyBudget(11.0, 1e-6).check_sane()
        with pytest.raises(ValueError):
            PrivacyBudget(1.0, 1.0).check_sane()
        assert PrivacyBudget(1.0, 0.0).check_sane().epsilon == 1.0

    def test_negative(self):
        with pytest.raises(ValueError):
            PrivacyBudget(-1.0, 0.0)
