"""Differential-privacy building blocks.

* Laplace sampling.
* An online sparse-vector mechanism (AboveThreshold restarted after every
  above-threshold answer, halting after ``T`` of them).
* A single-query private oracle: the exponential mechanism over a uniform
  net of the parameter domain.
* Advanced-composition arithmetic.

All logarithms are natural.  Noise comes from numpy's PCG64 generator and is
for research use only: it is not hardened against floating-point or timing
side channels.

Setting a ``noise`` multiplier of 0 turns every mechanism deterministic (the
sparse vector compares against ``3 alpha / 4`` exactly, the oracle returns the
best net point).  That mode is for accuracy tests and carries no privacy.
"""
from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from pmwcm import kernels
from pmwcm.losses import LossQuery, ParameterDomain
from pmwcm.universe import Dataset, Histogram

MAX_SANE_EPSILON = 10.0


class Branch(enum.Enum):
    TOP = "top"
    BOTTOM = "bottom"


class MechanismHalted(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon >= 0 and self.delta >= 0):
            raise ValueError("privacy parameters must be non-negative")

    def check_sane(self) -> "PrivacyBudget":
        """Reject budgets that are not meaningful as a user request."""
        if not 0 < self.epsilon <= MAX_SANE_EPSILON:
            raise ValueError(f"epsilon must be in (0, {MAX_SANE_EPSILON}]")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must be in [0, 1)")
        return self


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    if not scale > 0:
        raise ValueError("Laplace scale must be positive")
    return float(rng.laplace(0.0, scale))


# ---------------------------------------------------------------------------
# sparse vector


@dataclass(frozen=True)
class SvConfig:
    """Parameters of the online sparse vector.

    Queries are ``3 S / n``-sensitive.  ``noise`` multiplies every noise
    scale (0 disables noise and privacy).
    """

    T: int
    k: int
    alpha: float
    S: float
    n: int
    epsilon: float
    delta: float
    noise: float = 1.0

    def __post_init__(self):
        if self.T < 1 or self.k < 1 or self.n < 1:
            raise ValueError("T, k and n must be >= 1")
        if not self.alpha > 0 or not self.S > 0:
            raise ValueError("alpha and S must be positive")
        if not self.epsilon > 0 or not 0 < self.delta < 1:
            raise ValueError("need epsilon > 0 and 0 < delta < 1")
        if self.noise < 0:
            raise ValueError("noise multiplier must be >= 0")

    @property
    def sensitivity(self) -> float:
        return 3.0 * self.S / self.n

    @property
    def epoch_epsilon(self) -> float:
        """Pure-DP budget of each AboveThreshold epoch; T epochs compose to (epsilon, delta)."""
        return self.epsilon / math.sqrt(8.0 * self.T * math.log(2.0 / self.delta))

    @property
    def threshold_scale(self) -> float:
        return self.noise * 2.0 * self.sensitivity / self.epoch_epsilon

    @property
    def query_scale(self) -> float:
        return self.noise * 4.0 * self.sensitivity / self.epoch_epsilon

    @property
    def cut(self) -> float:
        return 0.75 * self.alpha


class SparseVector:
    """Mutable state of one sparse-vector run.  Single owner at a time."""

    def __init__(self, cfg: SvConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.updates = 0
        self.seen = 0
        self.halted = False
        self.threshold = self._fresh_threshold()

    def _noise(self, scale: float) -> float:
        return laplace_sample(scale, self.rng) if scale > 0 else 0.0

    def _fresh_threshold(self) -> float:
        return self.cfg.cut + self._noise(self.cfg.threshold_scale)

    def process(self, q_value: float) -> Branch:
        """Answer one query whose true value is ``q_value``."""
        if self.halted:
            raise MechanismHalted("mechanism halted")
        if not math.isfinite(q_value):
            raise ValueError("query value must be finite")
        self.seen += 1
        above = q_value + self._noise(self.cfg.query_scale) >= self.threshold
        if above:
            self.updates += 1
            if self.updates < self.cfg.T:
                self.threshold = self._fresh_threshold()
        if self.updates >= self.cfg.T or self.seen >= self.cfg.k:
            self.halted = True
        return Branch.TOP if above else Branch.BOTTOM


def sv_init(cfg: SvConfig, seed) -> SparseVector:
    return SparseVector(cfg, np.random.default_rng(seed))


def sv_process(st: SparseVector, q_value: float) -> Branch:
    return st.process(q_value)


def sv_size_bound(cfg: SvConfig, beta: float) -> int:
    """The generic sufficient dataset size quoted for an unspecified sparse vector."""
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    val = (256.0 * cfg.S * math.sqrt(cfg.T * math.log(2.0 / cfg.delta))
           * math.log(4.0 * cfg.k / beta) / (cfg.epsilon * cfg.alpha))
    return int(math.ceil(val))


def sv_required_n(cfg: SvConfig, beta: float) -> int:
    """Dataset size at which this sparse vector meets its accuracy contract.

    Contract: with probability >= 1 - beta, every query with value >= alpha is
    answered TOP and every query with value <= alpha / 2 is answered BOTTOM.
    It suffices that every noise draw stays below alpha / 8 in magnitude; a
    union bound over at most ``k`` query draws and ``k`` threshold draws gives
    ``n >= 96 S ln(2k / beta) / (alpha * epoch_epsilon)``.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    val = 96.0 * cfg.S * math.log(2.0 * cfg.k / beta) / (cfg.alpha * cfg.epoch_epsilon)
    return int(math.ceil(val))


# ---------------------------------------------------------------------------
# single-query oracle


@dataclass(frozen=True)
class OracleSpec:
    """Exponential mechanism over a net of the query's domain.

    ``spacing`` is the per-axis net spacing; by default ``alpha0 / (2 L)`` so
    the best net point is within ``alpha0 / 2`` of the continuum optimum for
    any domain of dimension <= 3 (covering radius is ``spacing * sqrt(d) / 2``).
    The mechanism is pure DP, so ``delta0`` is carried only for bookkeeping.
    """

    eps0: float
    alpha0: float
    beta0: float
    delta0: float = 0.0
    spacing: float | None = None
    noise: float = 1.0

    def __post_init__(self):
        if not self.eps0 > 0 or not self.alpha0 > 0 or not 0 < self.beta0 < 1:
            raise ValueError("need eps0 > 0, alpha0 > 0, 0 < beta0 < 1")
        if self.spacing is not None and not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.noise < 0:
            raise ValueError("noise multiplier must be >= 0")

    def spacing_for(self, q: LossQuery) -> float:
        if self.spacing is not None:
            return self.spacing
        if q.lipschitz <= 0:
            return math.inf
        return self.alpha0 / (2.0 * q.lipschitz)

    def net(self, q: LossQuery) -> np.ndarray:
        return _net(q.domain, self.spacing_for(q))


@functools.lru_cache(maxsize=64)
def _net(domain: ParameterDomain, spacing: float) -> np.ndarray:
    res = 1 if math.isinf(spacing) else domain.resolution_for_spacing(spacing)
    net = domain.grid(res)
    net.setflags(write=False)
    return net


def _hist_of(q: LossQuery, ds: Dataset) -> Histogram:
    if ds.n == 0:
        raise ValueError("empty dataset")
    if ds.rows.max() >= q.universe_size or ds.rows.min() < 0:
        raise ValueError("row outside universe")
    return Histogram(np.bincount(ds.rows, minlength=q.universe_size) / ds.n)


def oracle_logits(spec: OracleSpec, q: LossQuery, h: Histogram, n: int,
                  net: np.ndarray | None = None) -> np.ndarray:
    """Unnormalised log-probabilities ``-eps0 n l_D(theta) / (2 S)`` over the net."""
    net = spec.net(q) if net is None else net
    vals = kernels.net_values(q.link, q.features, q.labels, q.clip, q.sigma, h.mass, net)
    if q.S == 0:
        return np.zeros(len(net))
    return -spec.eps0 * n * np.asarray(vals) / (2.0 * q.S)


def oracle_distribution(spec: OracleSpec, q: LossQuery, h: Histogram, n: int) -> np.ndarray:
    """Exact output distribution of ``oracle_answer`` over ``spec.net(q)``."""
    logits = oracle_logits(spec, q, h, n)
    w = np.exp(logits - logits.max())
    return w / w.sum()


def oracle_answer_hist(spec: OracleSpec, q: LossQuery, h: Histogram, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    net = spec.net(q)
    if spec.noise == 0:
        vals = kernels.net_values(q.link, q.features, q.labels, q.clip, q.sigma, h.mass, net)
        return net[int(np.argmin(vals))].copy()
    if n < oracle_min_n(spec, q):
        warnings.warn(f"n={n} is below the oracle's accuracy size", stacklevel=2)
    logits = oracle_logits(spec, q, h, n, net) / spec.noise
    return net[kernels.sample_index(logits, rng.random())].copy()


def oracle_answer(spec: OracleSpec, q: LossQuery, ds: Dataset,
                  rng: np.random.Generator) -> np.ndarray:
    """Private estimate of the minimiser of ``q`` on ``ds``; (eps0, 0)-DP."""
    return oracle_answer_hist(spec, q, _hist_of(q, ds), ds.n, rng)


def exp_mech_min_n(net_size: int, S: float, eps0: float, alpha0: float, beta0: float) -> int:
    """Size at which the net mechanism's excess loss is <= alpha0 / 2 w.p. 1 - beta0."""
    if S == 0:
        return 1
    return int(math.ceil(4.0 * S * math.log(net_size / beta0) / (eps0 * alpha0)))


def oracle_min_n(spec: OracleSpec, q: LossQuery) -> int:
    return exp_mech_min_n(len(spec.net(q)), q.S, spec.eps0, spec.alpha0, spec.beta0)


# ---------------------------------------------------------------------------
# composition


def compose(eps0: float, delta0: float, T: int, delta_prime: float) -> PrivacyBudget:
    """Budget of a T-fold adaptive composition of (eps0, delta0)-DP mechanisms."""
    ok = (0 <= eps0 <= 0.5 and 0 <= delta0 <= 0.5 and 0 < delta_prime <= 0.5
          and int(T) == T and T >= 1)
    if not ok:
        raise ValueError("composition preconditions violated: need 0 <= eps0, delta0 <= 1/2, "
                         "0 < delta' <= 1/2 and integer T >= 1")
    eps = math.sqrt(2.0 * T * math.log(1.0 / delta_prime)) * eps0 + 2.0 * T * eps0 ** 2
    return PrivacyBudget(eps, delta_prime + T * delta0)


def split_budget(epsilon: float, delta: float, T: int) -> tuple[float, float, float]:
    """Per-step ``(eps0, delta0, delta')`` whose T-fold composition stays within (epsilon, delta)
    whenever ``epsilon <= 2 ln(2 / delta)``."""
    if not epsilon > 0 or not 0 < delta < 1 or T < 1:
        raise ValueError("need epsilon > 0, 0 < delta < 1, T >= 1")
    eps0 = epsilon / math.sqrt(8.0 * T * math.log(2.0 / delta))
    delta0, delta_prime = delta / (2.0 * T), delta / 2.0
    # step down past rounding so the float total never exceeds delta
    while delta_prime + T * delta0 > delta:
        delta0 = math.nextafter(delta0, 0.0)
    return eps0, delta0, delta_prime
