"""Non-private empirical risk minimisation and the two error functionals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pmwcm import kernels
from pmwcm.losses import LossQuery, loss_on_histogram
from pmwcm.universe import Histogram

MAX_ITER = 100_000
GRID_MAX_DIM = 3


@dataclass(frozen=True, eq=False)
class MinimizerResult:
    theta: np.ndarray
    value: float
    iterations: int
    converged: bool


class ConvergenceError(RuntimeError):
    """Raised when the solver hits its iteration cap; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: MinimizerResult):
        super().__init__(message)
        self.best = best


def _check_universe(q: LossQuery, h: Histogram) -> None:
    if h.size != q.universe_size:
        raise ValueError("histogram and query are over different universes")


def minimize(q: LossQuery, h: Histogram, tol: float, max_iter: int = MAX_ITER) -> MinimizerResult:
    """Projected gradient descent from the domain centre.

    Step ``1/smoothness`` when the query declares one, backtracking otherwise.
    Stops once ``||gradient mapping|| * diam(domain) <= tol``, which certifies
    ``value <= min + tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_universe(q, h)
    dom = q.domain
    step = 1.0 / q.smoothness if q.smoothness > 0 else 0.0
    theta, value, iters, ok = kernels.pgd(
        q.link, q.features, q.labels, q.clip, q.sigma, h.mass,
        np.ascontiguousarray(dom.center), dom.lo_array, dom.hi_array,
        dom.kernel_radius, step, tol, max(dom.diameter, 1e-300), max_iter)
    # clears float dust left by the projection
    theta = dom.project(np.asarray(theta))
    res = MinimizerResult(theta, loss_on_histogram(q, theta, h), int(iters), bool(ok))
    if not ok:
        raise ConvergenceError(f"no convergence within {max_iter} iterations for {q.key}", res)
    return res


def grid_minimize(q: LossQuery, h: Histogram, resolution: int) -> MinimizerResult:
    """Exact minimum over ``q.domain.grid(resolution)``; lowest grid index wins ties."""
    _check_universe(q, h)
    if q.dim > GRID_MAX_DIM:
        raise ValueError(f"grid_minimize supports dim <= {GRID_MAX_DIM}")
    net = q.domain.grid(resolution)
    vals = kernels.net_values(q.link, q.features, q.labels, q.clip, q.sigma, h.mass, net)
    i = int(np.argmin(vals))
    return MinimizerResult(net[i].copy(), float(vals[i]), len(net), True)


def _clamp(err: float, tol: float) -> float:
    if err < -10.0 * tol:
        raise RuntimeError(f"negative excess risk {err!r} beyond solver slack")
    return max(err, 0.0)


def err_answer(q: LossQuery, D: Histogram, theta_hat, tol: float = 1e-9,
               optimum: MinimizerResult | None = None) -> float:
    """Excess empirical risk of ``theta_hat`` on ``D``.

    ``optimum`` may carry a precomputed ``minimize(q, D, tol)``.
    """
    value = loss_on_histogram(q, theta_hat, D)
    best = optimum if optimum is not None else minimize(q, D, tol)
    return _clamp(value - best.value, tol)


def err_db(q: LossQuery, D: Histogram, D_prime: Histogram, tol: float = 1e-9) -> float:
    """Excess risk on ``D`` of the minimiser of ``q`` over ``D_prime``."""
    if D.size != D_prime.size:
        raise ValueError("histograms are over different universes")
    return err_answer(q, D, minimize(q, D_prime, tol).theta, tol)
