"""Online private multiplicative weights for convex minimisation queries.

The engine keeps a public hypothesis histogram, starting uniform.  For each
query it asks the sparse vector whether the hypothesis minimiser has excess
risk on the real data above the threshold.  Below: it answers with the
hypothesis minimiser.  Above: it answers with a private oracle estimate
and moves the hypothesis by a multiplicative-weights step.

The raw dataset is held only by ``SensitiveData``, which exposes exactly
two channels: the excess-risk value fed to the sparse vector, and the
private oracle.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from pmwcm import erm, kernels
from pmwcm.losses import LossQuery, loss_on_histogram
from pmwcm.mechanisms import (Branch, OracleSpec, PrivacyBudget, SparseVector, SvConfig,
                              compose, oracle_answer_hist, oracle_min_n, sv_required_n)
from pmwcm.transcript import Transcript
from pmwcm.universe import Dataset, Histogram, uniform

log = logging.getLogger(__name__)

UPDATE_CLAMP_SLACK = 1e-9


class EngineHalted(RuntimeError):
    pass


@dataclass(frozen=True)
class ParameterSchedule:
    epsilon: float
    delta: float
    alpha: float
    beta: float
    k: int
    S: float
    universe_size: int
    n: int
    T: int
    eta: float
    eps0: float
    delta0: float
    alpha0: float
    beta0: float

    @property
    def sv_epsilon(self) -> float:
        return self.epsilon / 2.0

    @property
    def sv_delta(self) -> float:
        return self.delta / 2.0

    @property
    def solver_tol(self) -> float:
        return self.alpha / 100.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def privacy_spent(self) -> PrivacyBudget:
        """Actual guarantee: the sparse vector's (eps/2, delta/2) plus T pure-DP
        oracle calls composed with slack delta/4.

        The oracle share is ``eps/2 + eps^2 / (4 ln(4/delta))``; the second
        term is the overshoot of the per-call budget above ``eps/2``.
        """
        oracle = compose(self.eps0, 0.0, self.T, self.delta / 4.0)
        return PrivacyBudget(self.sv_epsilon + oracle.epsilon, self.sv_delta + oracle.delta)


def schedule(epsilon: float, delta: float, alpha: float, beta: float, k: int, S: float,
             universe_size: int, n: int) -> ParameterSchedule:
    """Derive T, eta and the oracle's per-call parameters.

    T = ceil(64 S^2 ln|X| / alpha^2), eta = sqrt(ln|X| / T),
    eps0 = epsilon / sqrt(8 T ln(4/delta)), delta0 = delta / (4T),
    alpha0 = alpha / 4, beta0 = beta / (2T).
    """
    if not (epsilon > 0 and 0 < delta < 1 and alpha > 0 and 0 < beta < 1 and S > 0):
        raise ValueError("need epsilon, alpha, S > 0 and delta, beta in (0, 1)")
    if k < 1 or universe_size < 1 or n < 1:
        raise ValueError("k, |X| and n must be >= 1")
    ln_x = math.log(universe_size)
    T = math.ceil(64.0 * S * S * ln_x / alpha ** 2)
    if T < 1:
        warnings.warn("degenerate schedule (T < 1); clamping T to 1", stacklevel=2)
        T = 1
    return ParameterSchedule(
        epsilon=epsilon, delta=delta, alpha=alpha, beta=beta, k=int(k), S=float(S),
        universe_size=int(universe_size), n=int(n), T=int(T),
        eta=math.sqrt(ln_x / T),
        eps0=epsilon / math.sqrt(8.0 * T * math.log(4.0 / delta)),
        delta0=delta / (4.0 * T), alpha0=alpha / 4.0, beta0=beta / (2.0 * T))


def sv_config(sched: ParameterSchedule, noise: float = 1.0) -> SvConfig:
    return SvConfig(T=sched.T, k=sched.k, alpha=sched.alpha, S=sched.S, n=sched.n,
                    epsilon=sched.sv_epsilon, delta=sched.sv_delta, noise=noise)


def oracle_spec(sched: ParameterSchedule, noise: float = 1.0) -> OracleSpec:
    return OracleSpec(eps0=sched.eps0, alpha0=sched.alpha0, beta0=sched.beta0,
                      delta0=0.0, noise=noise)


def required_n(sched: ParameterSchedule, q: LossQuery) -> int:
    """Dataset size at which both the sparse vector (failure beta/2) and every
    oracle call (failure beta0 each, beta/2 in total) meet their contracts."""
    return max(oracle_min_n(oracle_spec(sched), q),
               sv_required_n(sv_config(sched), sched.beta / 2.0))


class SensitiveData:
    """Sole holder of the raw dataset.

    ``excess_risk`` feeds the sparse vector; ``private_minimizer`` is the
    oracle.  Nothing else reads the rows.
    """

    def __init__(self, ds: Dataset, universe_size: int):
        if ds.n == 0:
            raise ValueError("empty dataset")
        if ds.rows.min() < 0 or ds.rows.max() >= universe_size:
            raise ValueError("row outside universe")
        self._hist = Histogram(np.bincount(ds.rows, minlength=universe_size) / ds.n)
        self.n = ds.n
        self.universe_size = universe_size
        self._optima: dict = {}

    def _optimum(self, q: LossQuery, tol: float) -> erm.MinimizerResult:
        key = (q.key, tol)
        res = self._optima.get(key)
        if res is None:
            res = self._optima[key] = erm.minimize(q, self._hist, tol)
        return res

    def excess_risk(self, q: LossQuery, theta, tol: float) -> float:
        return erm.err_answer(q, self._hist, theta, tol, optimum=self._optimum(q, tol))

    def private_minimizer(self, q: LossQuery, spec: OracleSpec,
                          rng: np.random.Generator) -> np.ndarray:
        return oracle_answer_hist(spec, q, self._hist, self.n, rng)


def build_update_vector(q: LossQuery, theta, theta_hat) -> np.ndarray:
    """u(x) = <theta - theta_hat, grad l_x(theta_hat)> for every universe point."""
    theta = np.asarray(theta, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    u = q.point_grads(theta_hat) @ (theta - theta_hat)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError(f"non-finite gradient for {q.key}")
    worst = float(np.max(np.abs(u))) if u.size else 0.0
    if worst > q.S:
        if worst > q.S + UPDATE_CLAMP_SLACK:
            raise AssertionError(f"update entry {worst!r} exceeds S={q.S} for {q.key}")
        log.warning("clamping update vector: |u| = %r exceeds S = %r", worst, q.S)
        u = np.clip(u, -q.S, q.S)
    return u


def mw_update(h: Histogram, u, eta: float) -> Histogram:
    """Reweight by ``exp(-eta * u)`` and renormalise.

    The minus sign moves mass away from points where the hypothesis
    minimiser's directional derivative is large, i.e. toward the data.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != h.mass.shape:
        raise ValueError("update vector and histogram differ in length")
    return Histogram(kernels.mw_reweight(h.mass, u, float(eta)))


UpdateHook = Callable[[LossQuery, np.ndarray, np.ndarray, np.ndarray, Histogram], None]


class PMWEngine:
    """One session of the online algorithm.  Single-threaded; not reusable."""

    def __init__(self, data: SensitiveData, sched: ParameterSchedule, *,
                 sv_rng: np.random.Generator, oracle_rng: np.random.Generator,
                 noise: float = 1.0, on_update: UpdateHook | None = None):
        if data.universe_size != sched.universe_size or data.n != sched.n:
            raise ValueError("schedule does not match the dataset")
        self.sched = sched
        self.noise = noise
        self._data = data
        self.sv = SparseVector(sv_config(sched, noise), sv_rng)
        self.oracle = oracle_spec(sched, noise)
        self._oracle_rng = oracle_rng
        self.hypothesis = uniform(sched.universe_size)
        self.t = 0
        self.on_update = on_update
        # per-hypothesis caches: minimiser and sparse-vector value by query key
        self._argmins: dict = {}
        self._values: dict = {}

    @property
    def halted(self) -> bool:
        return self.sv.halted

    def hypothesis_minimizer(self, q: LossQuery) -> np.ndarray:
        theta = self._argmins.get(q.key)
        if theta is None:
            theta = erm.minimize(q, self.hypothesis, self.sched.solver_tol).theta
            theta.setflags(write=False)
            self._argmins[q.key] = theta
        return theta

    def answer_query(self, q: LossQuery) -> tuple[np.ndarray, Branch]:
        if self.sv.halted:
            if self.sv.updates >= self.sched.T:
                raise EngineHalted("query budget exhausted (T updates reached)")
            raise EngineHalted("query budget exhausted (k queries answered)")
        if q.S > self.sched.S:
            raise ValueError(f"query S={q.S} exceeds the schedule's S={self.sched.S}")
        if q.universe_size != self.sched.universe_size:
            raise ValueError("query is bound to a different universe")
        theta_hat = self.hypothesis_minimizer(q)
        value = self._values.get(q.key)
        if value is None:
            value = self._values[q.key] = self._data.excess_risk(q, theta_hat, self.sched.solver_tol)
        branch = self.sv.process(value)
        if branch is Branch.BOTTOM:
            return theta_hat, branch
        theta = self._data.private_minimizer(q, self.oracle, self._oracle_rng)
        u = build_update_vector(q, theta, theta_hat)
        before = self.hypothesis
        self.hypothesis = mw_update(before, u, self.sched.eta)
        self.t += 1
        self._argmins.clear()
        self._values.clear()
        if self.on_update is not None:
            self.on_update(q, theta, theta_hat, u, before)
        return theta, branch


def answer_query(engine: PMWEngine, q: LossQuery) -> tuple[np.ndarray, Branch]:
    return engine.answer_query(q)


class TrueErrors:
    """Test-mode evaluator of true excess risk on the real histogram.

    Deliberately separate from ``SensitiveData``: it exists only to score
    answers and must never feed back into the engine.
    """

    def __init__(self, ds: Dataset, universe_size: int, tol: float):
        self.truth = Histogram(np.bincount(ds.rows, minlength=universe_size) / ds.n)
        self.tol = tol
        self._optima: dict = {}

    def optimum(self, q: LossQuery) -> erm.MinimizerResult:
        res = self._optima.get(q.key)
        if res is None:
            res = self._optima[q.key] = erm.minimize(q, self.truth, self.tol)
        return res

    def __call__(self, q: LossQuery, theta) -> float:
        return erm.err_answer(q, self.truth, theta, self.tol, optimum=self.optimum(q))


def run_session(ds: Dataset, queries: Iterable[LossQuery], sched: ParameterSchedule, *,
                seed=0, noise: float = 1.0, mode: str | None = None,
                check_potential: bool = False) -> Transcript:
    """Answer ``queries`` in order until exhausted or the engine halts.

    In noise-free mode (``noise == 0``) the transcript carries true errors and
    ``check_potential`` asserts the per-update potential-drop inequality.
    """
    mode = mode or ("noise-free" if noise == 0 else "private")
    if mode == "private" and noise == 0:
        raise ValueError("private mode requires noise")
    sv_ss, or_ss = np.random.SeedSequence(seed).spawn(2)
    evaluate = TrueErrors(ds, sched.universe_size, sched.solver_tol) if mode == "noise-free" else None
    hook = None
    if check_potential:
        truth = evaluate.truth if evaluate else TrueErrors(ds, sched.universe_size, 1.0).truth
        hook = potential_check(truth, 10 * sched.solver_tol)
    engine = PMWEngine(SensitiveData(ds, sched.universe_size), sched,
                       sv_rng=np.random.default_rng(sv_ss), oracle_rng=np.random.default_rng(or_ss),
                       noise=noise, on_update=hook)
    return play(engine, iter(queries), mode, evaluate)


def play(engine: PMWEngine, queries, mode: str, evaluate: TrueErrors | None,
         after_answer: Callable | None = None) -> Transcript:
    """Drive ``engine`` with ``queries`` until exhausted, k is reached or it halts.

    ``queries`` is consumed lazily, so an adaptive adversary may be a
    generator that reads the history delivered through ``after_answer``.
    """
    sched = engine.sched
    tr = Transcript(mode=mode, params=sched.as_dict())
    # a BOTTOM answer depends only on (query, t), so its error is cached too
    bottom_err: dict = {}
    cache_t = -1
    start = time.perf_counter()
    for q in queries:
        if len(tr) >= sched.k:
            raise ValueError("more queries than the schedule's k")
        t = engine.t
        try:
            theta, branch = engine.answer_query(q)
        except EngineHalted as exc:
            tr.halted, tr.halt_reason = True, str(exc)
            break
        err = None
        if evaluate is not None:
            if branch is Branch.TOP:
                err = evaluate(q, theta)
            else:
                if t != cache_t:
                    bottom_err.clear()
                    cache_t = t
                err = bottom_err.get(q.key)
                if err is None:
                    err = bottom_err[q.key] = evaluate(q, theta)
        tr.append(q.key, branch, theta, err)
        if after_answer is not None:
            after_answer(q, theta, branch)
    tr.updates_used = engine.t
    tr.wall_time = time.perf_counter() - start
    return tr


def potential_check(truth: Histogram, slack: float) -> UpdateHook:
    """Hook asserting <u, D_hat - D> >= l_D(theta_hat) - l_D(theta) - slack on every update."""
    def hook(q, theta, theta_hat, u, before):
        lhs = float(u @ (before.mass - truth.mass))
        rhs = loss_on_histogram(q, theta_hat, truth) - loss_on_histogram(q, theta, truth)
        if lhs < rhs - slack:
            raise AssertionError(f"potential drop violated for {q.key}: {lhs!r} < {rhs!r}")
    return hook
