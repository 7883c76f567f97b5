"""Executable property suites behind ``pmwcm verify``.

Each suite returns a ``SuiteResult``; failures carry a short diagnostic.
The test suite runs the same checks at larger sizes.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from pmwcm import engine as eng
from pmwcm import erm
from pmwcm.losses import FAMILIES, LossFamily, LossQuery, grad_on_histogram, loss_on_histogram
from pmwcm.mechanisms import OracleSpec, compose, oracle_distribution, split_budget
from pmwcm.universe import (Dataset, Histogram, boolean_cube, from_records, grid_line,
                            labeled_ball, neighbors, uniform)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    checked: int
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checked} checks, {self.seconds:.2f}s. {self.detail}"


def _timed(name, fn) -> SuiteResult:
    start = time.perf_counter()
    passed, checked, detail = fn()
    return SuiteResult(name, passed, checked, detail, time.perf_counter() - start)


def random_histogram(rng, size: int) -> Histogram:
    return Histogram(rng.dirichlet(np.full(size, 0.5)) + 1e-300)


def regret_excess(size: int, S: float, T: int, updates: np.ndarray) -> float:
    """Worst-comparator average regret minus the bound ``2 S sqrt(ln N / T)``.

    ``updates`` has shape (T, size).  The worst comparator is the point mass
    at the argmin of the summed updates.
    """
    eta = math.sqrt(math.log(size) / T)
    h = uniform(size)
    acc = 0.0
    for u in updates:
        acc += float(u @ h.mass)
        h = eng.mw_update(h, u, eta)
    worst = acc - float(updates.sum(axis=0).min())
    return worst / T - 2.0 * S * math.sqrt(math.log(size) / T)


def regret_suite(sequences: int = 12, alpha: float = 0.5, seed: int = 0):
    def run():
        rng = np.random.default_rng(seed)
        worst = -math.inf
        count = 0
        for size, S in itertools.product((4, 16), (1.0, 2.0)):
            T = eng.schedule(1.0, 1e-6, alpha, 0.1, 1, S, size, 1).T
            for _ in range(sequences // 4):
                ups = rng.choice([-S, S], size=(T, size))
                worst = max(worst, regret_excess(size, S, T, ups))
                count += 1
        return worst <= 1e-9, count, f"max(regret - bound) = {worst:.3g}"
    return _timed("regret", run)


def potential_instance(rng, fam: LossFamily, u, tol: float):
    """One random (q, D, D_hat, theta, theta_hat) with theta_hat the D_hat minimiser."""
    q = fam.member(u, int(rng.integers(1 << 30)), 0)
    D = random_histogram(rng, u.size)
    D_hat = random_histogram(rng, u.size)
    theta_hat = erm.minimize(q, D_hat, tol).theta
    theta = q.domain.sample(rng, 1)[0]
    lhs = float(eng.build_update_vector(q, theta, theta_hat) @ (D_hat.mass - D.mass))
    rhs = loss_on_histogram(q, theta_hat, D) - loss_on_histogram(q, theta, D)
    return lhs, rhs


def potential_suite(instances: int = 200, seed: int = 1, tol: float = 1e-9, slack: float = 1e-6):
    def run():
        rng = np.random.default_rng(seed)
        cube = boolean_cube(3)
        ball = labeled_ball(8, 3, np.random.default_rng(seed))
        fams = [(LossFamily("linear_query"), cube), (LossFamily("glm_squared"), ball),
                (LossFamily("logistic"), ball), (LossFamily("logistic_l2"), ball)]
        worst = math.inf
        for i in range(instances):
            fam, u = fams[i % len(fams)]
            lhs, rhs = potential_instance(rng, fam, u, tol)
            worst = min(worst, lhs - rhs)
        return worst >= -slack, instances, f"min(lhs - rhs) = {worst:.3g}"
    return _timed("potential_drop", run)


def all_datasets(n: int, size: int):
    for rows in itertools.combinations_with_replacement(range(size), n):
        yield Dataset(np.array(rows))


def sensitivity_gap(q: LossQuery, u, n: int, hyps, tol: float = 1e-10) -> float:
    """max over datasets of size n, neighbours and hypotheses of |err_db(D) - err_db(D')| - 3S/n."""
    worst = -math.inf
    thetas = [erm.minimize(q, h, tol).theta for h in hyps]
    cache: dict = {}

    def errs(ds):
        key = tuple(sorted(ds.rows.tolist()))
        if key not in cache:
            D = from_records(ds, u)
            opt = erm.minimize(q, D, tol)
            cache[key] = np.array([erm.err_answer(q, D, th, tol, optimum=opt) for th in thetas])
        return cache[key]

    for ds in all_datasets(n, u.size):
        base = errs(ds)
        for nb in neighbors(ds, u):
            worst = max(worst, float(np.max(np.abs(errs(nb) - base))) - 3.0 * q.S / n)
    return worst


def sensitivity_suite(hypotheses: int = 3, seed: int = 2):
    def run():
        rng = np.random.default_rng(seed)
        u = labeled_ball(3, 2, np.random.default_rng(seed))
        worst = -math.inf
        count = 0
        for name in ("linear_query", "glm_squared", "logistic", "logistic_l2"):
            q = LossFamily(name).member(u, seed, 0)
            hyps = [random_histogram(rng, u.size) for _ in range(hypotheses)]
            for n in (1, 2, 3):
                worst = max(worst, sensitivity_gap(q, u, n, hyps))
                count += 1
        return worst <= 1e-6, count, f"max(gap - 3S/n) = {worst:.3g}"
    return _timed("sensitivity", run)


def dp_ratio_excess(spec: OracleSpec, q: LossQuery, u, n: int) -> float:
    """max over neighbours and outcomes of ln p_D - ln p_D' - eps0 (float arithmetic)."""
    worst = -math.inf
    for ds in all_datasets(n, u.size):
        p = oracle_distribution(spec, q, from_records(ds, u), n)
        for nb in neighbors(ds, u):
            p2 = oracle_distribution(spec, q, from_records(nb, u), n)
            worst = max(worst, float(np.max(np.log(p) - np.log(p2))) - spec.eps0)
    return worst


def dp_suite(seed: int = 3):
    def run():
        u = labeled_ball(3, 2, np.random.default_rng(seed))
        worst = -math.inf
        count = 0
        for name in ("linear_query", "logistic"):
            q = LossFamily(name, {} if name == "linear_query" else {"dim": 1}).member(u, seed, 0)
            spec = OracleSpec(eps0=0.5, alpha0=1.0, beta0=0.1, spacing=0.5)
            for n in (1, 2, 3):
                worst = max(worst, dp_ratio_excess(spec, q, u, n))
                count += 1
        return worst <= 1e-12, count, f"max(log-ratio - eps0) = {worst:.3g}"
    return _timed("oracle_dp", run)


def composition_suite(draws: int = 1000, seed: int = 4):
    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for _ in range(draws):
            eps = float(rng.uniform(1e-3, 1.0))
            delta = float(10 ** rng.uniform(-9, math.log10(0.5)))
            T = int(rng.integers(1, 10_000))
            e0, d0, dp = split_budget(eps, delta, T)
            tot = compose(e0, d0, T, dp)
            if tot.epsilon > eps or tot.delta > delta * (1 + 1e-12):
                bad += 1
        return bad == 0, draws, f"{bad} draws exceeded the budget"
    return _timed("composition", run)


def gradient_suite(points: int = 200, seed: int = 5):
    def run():
        rng = np.random.default_rng(seed)
        ball = labeled_ball(8, 3, np.random.default_rng(seed))
        cube = boolean_cube(3)
        worst_fd = 0.0
        worst_cvx = math.inf
        count = 0
        for name in sorted(FAMILIES):
            u = {"linear_query": cube, "linear": cube, "mean": grid_line(8)}.get(name, ball)
            q = LossFamily(name).member(u, seed, 0)
            h = random_histogram(rng, u.size)
            for th, th2 in zip(q.domain.sample(rng, points), q.domain.sample(rng, points)):
                worst_fd = max(worst_fd, fd_rel_error(q, th, h))
                lo = q.point_losses(th) + q.point_grads(th) @ (th2 - th)
                lo += 0.5 * q.sigma * float((th2 - th) @ (th2 - th))
                worst_cvx = min(worst_cvx, float(np.min(q.point_losses(th2) - lo)))
                count += 1
        ok = worst_fd <= 1e-5 and worst_cvx >= -1e-9
        return ok, count, f"max fd rel err {worst_fd:.3g}, min convexity gap {worst_cvx:.3g}"
    return _timed("gradients", run)


def fd_rel_error(q: LossQuery, theta, h: Histogram, step: float = 1e-6) -> float:
    """Relative error of ``grad_on_histogram`` against central differences.

    Steps stay inside the domain by shrinking the base point slightly toward
    the centre; the scale floor of 1 keeps near-zero gradients meaningful.
    """
    theta = q.domain.center + (1 - 4 * step) * (np.asarray(theta, float) - q.domain.center)
    g = grad_on_histogram(q, theta, h)
    fd = np.empty_like(g)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = step
        fd[i] = (loss_on_histogram(q, theta + e, h) - loss_on_histogram(q, theta - e, h)) / (2 * step)
    return float(np.max(np.abs(fd - g)) / max(1.0, float(np.max(np.abs(g)))))


SUITES = {
    "regret": regret_suite,
    "potential_drop": potential_suite,
    "sensitivity": sensitivity_suite,
    "oracle_dp": dp_suite,
    "composition": composition_suite,
    "gradients": gradient_suite,
}


def run_all(names=None) -> list[SuiteResult]:
    return [SUITES[name]() for name in (names or SUITES)]
