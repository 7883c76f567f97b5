"""Convex loss queries and the concrete families used as workloads.

Every shipped loss has the generalised-linear form

    l(theta; x) = phi(<theta, a_x>, b_x) + (sigma / 2) * ||theta||^2

where ``a_x`` (features) and ``b_x`` (label) are derived from universe point
``x`` when the query is built.  A query is therefore bound to one universe
and evaluates all |X| points at once.

Family registry (``FAMILIES``), by string id:

``linear_query``  (theta - p(x))^2 on [0, 1], p a random halfspace predicate.
                  S=2, L=2.  Params: none.
``mean``          (theta - x[coord])^2 on [0, 1]; points must lie in [0, 1].
                  S=2, L=2.  Params: coord.
``glm_squared``   Huber-clipped squared residual (<theta, Wx> - y), unit ball.
                  S=4*clip, L=2*clip.  Params: dim, clip (default 0.5 => S=2).
``logistic``      log(1 + exp(-y <theta, Wx>)), unit ball.  S=2, L=1.  Params: dim.
``logistic_l2``   logistic + (sigma/2)||theta||^2.  S=2+2 sigma, L=1+sigma.
                  Params: dim, sigma.
``linear``        <theta, Wx>, unit ball.  S=2, L=1.  Params: dim.
``constant``      constant value on a box or ball.  S=0.  Params: dim, value.

For the GLM families the last universe coordinate is the label ``y`` and the
remaining ones are the features; ``W`` is a random matrix with all singular
values 1, so ``||Wx|| <= ||x|| <= 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pmwcm import kernels
from pmwcm.universe import Histogram, Universe

DOMAIN_TOL = 1e-9
MAX_GRID_POINTS = 10 ** 7


@dataclass(frozen=True)
class ParameterDomain:
    """A box ``[lo, hi]`` or a centred l2 ball of ``radius`` in R^dim."""

    kind: str
    dim: int
    lo: tuple = ()
    hi: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("domain dimension must be >= 1")
        if self.kind == "box":
            if len(self.lo) != self.dim or len(self.hi) != self.dim:
                raise ValueError("box bounds must match the dimension")
            if any(h < l for l, h in zip(self.lo, self.hi)):
                raise ValueError("empty box")
        elif self.kind == "l2_ball":
            if not self.radius > 0:
                raise ValueError("ball radius must be positive")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def box(cls, lo, hi, dim: int = 1) -> "ParameterDomain":
        lo = tuple(float(v) for v in np.broadcast_to(lo, (dim,)))
        hi = tuple(float(v) for v in np.broadcast_to(hi, (dim,)))
        return cls("box", dim, lo, hi)

    @classmethod
    def ball(cls, dim: int, radius: float = 1.0) -> "ParameterDomain":
        return cls("l2_ball", dim, radius=float(radius))

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo if self.kind == "box" else [-self.radius] * self.dim)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi if self.kind == "box" else [self.radius] * self.dim)

    @property
    def kernel_radius(self) -> float:
        return self.radius if self.kind == "l2_ball" else 0.0

    @property
    def center(self) -> np.ndarray:
        if self.kind == "box":
            return (self.lo_array + self.hi_array) / 2.0
        return np.zeros(self.dim)

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.hi_array - self.lo_array))
        return 2.0 * self.radius

    def project(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(self.dim)
        if self.kind == "box":
            return np.clip(theta, self.lo_array, self.hi_array)
        nrm = np.linalg.norm(theta)
        return theta if nrm <= self.radius else theta * (self.radius / nrm)

    def contains(self, theta, tol: float = DOMAIN_TOL) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,) or not np.all(np.isfinite(theta)):
            return False
        return bool(np.linalg.norm(theta - self.project(theta)) <= tol)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Random points of the domain; every other one lies on the boundary."""
        if self.kind == "box":
            pts = rng.uniform(self.lo_array, self.hi_array, size=(count, self.dim))
            edge = rng.integers(0, self.dim, size=count)
            side = rng.integers(0, 2, size=count)
            bnd = np.where(side == 0, self.lo_array[edge], self.hi_array[edge])
            pts[1::2, :][np.arange(len(pts[1::2])), edge[1::2]] = bnd[1::2]
            return pts
        g = rng.normal(size=(count, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(count, 1)) ** (1.0 / self.dim)
        r[1::2] = self.radius
        return g * r

    def grid(self, resolution: int) -> np.ndarray:
        """Uniform grid with ``resolution`` points per axis, lowest index first.

        For a ball the enclosing cube's grid is projected onto the ball and
        exact duplicates are dropped, keeping the first occurrence.
        """
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        if resolution ** self.dim > MAX_GRID_POINTS:
            raise ValueError(f"grid too large: {resolution}^{self.dim} points")
        axes = []
        for lo, hi in zip(self.lo_array, self.hi_array):
            axes.append(np.array([(lo + hi) / 2.0]) if resolution == 1
                        else np.linspace(lo, hi, resolution))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        if self.kind == "box":
            return pts
        nrm = np.linalg.norm(pts, axis=1)
        out = nrm > self.radius
        pts[out] *= (self.radius / nrm[out])[:, None]
        _, first = np.unique(pts, axis=0, return_index=True)
        return pts[np.sort(first)]

    def resolution_for_spacing(self, spacing: float) -> int:
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        width = float(np.max(self.hi_array - self.lo_array))
        if width == 0:
            return 1
        return int(math.ceil(width / spacing - 1e-12)) + 1


@dataclass(frozen=True, eq=False)
class LossQuery:
    """A convex loss bound to one universe, with declared constants.

    ``S`` bounds ``|<theta - theta', grad l_x(theta)>|`` over the domain and
    universe, ``lipschitz`` bounds ``||grad l_x||``, ``smoothness`` bounds the
    Hessian of the averaged loss (0 means unknown: the solver backtracks), and
    ``sigma`` is the strong-convexity modulus.
    """

    key: str
    link: int
    features: np.ndarray
    labels: np.ndarray
    domain: ParameterDomain
    S: float
    lipschitz: float
    smoothness: float = 0.0
    sigma: float = 0.0
    clip: float = math.inf
    family: str = ""

    def __post_init__(self):
        A = np.ascontiguousarray(self.features, dtype=float)
        b = np.ascontiguousarray(self.labels, dtype=float)
        if A.ndim != 2 or A.shape[1] != self.domain.dim or b.shape != (A.shape[0],):
            raise ValueError("features must be |X| x dim and labels |X|")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "features", A)
        object.__setattr__(self, "labels", b)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def universe_size(self) -> int:
        return self.features.shape[0]

    def point_losses(self, theta) -> np.ndarray:
        """l(theta; x) for every universe point x."""
        theta = np.ascontiguousarray(theta, dtype=float)
        return kernels.point_losses(self.link, self.features, self.labels, self.clip,
                                    self.sigma, theta)

    def point_grads(self, theta) -> np.ndarray:
        """Gradient (right derivative at kinks) of l_x at theta, one row per x."""
        theta = np.ascontiguousarray(theta, dtype=float)
        d = kernels.link_derivs(self.link, self.features, self.labels, self.clip, theta)
        return d[:, None] * self.features + self.sigma * theta[None, :]

    def __repr__(self):
        return f"LossQuery({self.key!r}, S={self.S}, dim={self.dim})"


def _check_args(q: LossQuery, theta, h: Histogram) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if h.size != q.universe_size:
        raise ValueError("histogram and query are over different universes")
    if not q.domain.contains(theta):
        raise ValueError("parameter outside domain")
    return np.ascontiguousarray(theta)


def loss_on_histogram(q: LossQuery, theta, h: Histogram) -> float:
    theta = _check_args(q, theta, h)
    val, _ = kernels.objective(q.link, q.features, q.labels, q.clip, q.sigma, h.mass, theta)
    return float(val)


def grad_on_histogram(q: LossQuery, theta, h: Histogram) -> np.ndarray:
    theta = _check_args(q, theta, h)
    _, grad = kernels.objective(q.link, q.features, q.labels, q.clip, q.sigma, h.mass, theta)
    return np.asarray(grad)


def scaling_constant(q: LossQuery, u: Universe, samples: int, seed: int = 0) -> float:
    """Sampled lower estimate of max |<theta - theta', grad l_x(theta)>|.

    Used to audit a declared ``S``; never substitutes for it.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if u.size != q.universe_size:
        raise ValueError("query is bound to a different universe")
    rng = np.random.default_rng(seed)
    thetas = q.domain.sample(rng, samples)
    others = q.domain.sample(rng, samples)
    best = 0.0
    for th, other in zip(thetas, others):
        g = q.point_grads(th)
        best = max(best, float(np.max(np.abs(g @ (th - other)))))
    return best


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class LossFamily:
    """A named, parametrised generator of loss queries.

    Members are deterministic in ``(universe, seed, index)``.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown loss family {self.name!r}; known: {sorted(FAMILIES)}")
        _, allowed = FAMILIES[self.name]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")

    def member(self, u: Universe, seed: int, index: int) -> LossQuery:
        build, _ = FAMILIES[self.name]
        rng = np.random.default_rng([int(seed), int(index)])
        tag = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        key = f"{self.name}[{tag}]#{seed}:{index}"
        return build(u, rng, key, **self.params)

    def generate(self, u: Universe, seed: int, count: int) -> list[LossQuery]:
        return [self.member(u, seed, i) for i in range(count)]


def _unit_spectrum(rng, m: int, d: int) -> np.ndarray:
    g = rng.normal(size=(m, d))
    left, _, right = np.linalg.svd(g, full_matrices=False)
    return left @ right


def _glm_parts(u: Universe, rng, dim, with_label=True):
    pts = u.points
    feat = pts[:, :-1] if with_label else pts
    if feat.shape[1] < 1:
        raise ValueError("GLM families need universe points of dimension >= 2 (features + label)")
    dim = feat.shape[1] if dim is None else int(dim)
    if not 1 <= dim <= 3:
        raise ValueError("GLM parameter dimension must be in [1, 3]")
    if np.max(np.linalg.norm(feat, axis=1)) > 1.0 + 1e-12:
        raise ValueError("GLM features must lie in the unit ball")
    A = feat @ _unit_spectrum(rng, feat.shape[1], dim)
    y = pts[:, -1] if with_label else None
    return A, y, dim


def _linear_query(u, rng, key):
    w = rng.normal(size=u.dim)
    z = u.points @ w
    t = np.quantile(z, rng.uniform(0.1, 0.9))
    p = (z > t).astype(float)
    return LossQuery(key, kernels.HUBER, np.ones((u.size, 1)), p,
                     ParameterDomain.box(0.0, 1.0), S=2.0, lipschitz=2.0,
                     smoothness=2.0, family="linear_query")


def _mean(u, rng, key, coord=0):
    x = u.points[:, int(coord)]
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("mean family needs universe coordinates in [0, 1]")
    return LossQuery(key, kernels.HUBER, np.ones((u.size, 1)), x,
                     ParameterDomain.box(0.0, 1.0), S=2.0, lipschitz=2.0,
                     smoothness=2.0, family="mean")


def _glm_squared(u, rng, key, dim=None, clip=0.5):
    A, y, dim = _glm_parts(u, rng, dim)
    clip = float(clip)
    if not clip > 0:
        raise ValueError("clip must be positive")
    return LossQuery(key, kernels.HUBER, A, np.clip(y, -1.0, 1.0), ParameterDomain.ball(dim),
                     S=4.0 * clip, lipschitz=2.0 * clip, smoothness=2.0, clip=clip,
                     family="glm_squared")


def _logistic(u, rng, key, dim=None):
    A, y, dim = _glm_parts(u, rng, dim)
    return LossQuery(key, kernels.LOGISTIC, A, np.where(y < 0, -1.0, 1.0),
                     ParameterDomain.ball(dim), S=2.0, lipschitz=1.0, smoothness=0.25,
                     family="logistic")


def _logistic_l2(u, rng, key, dim=None, sigma=0.1):
    A, y, dim = _glm_parts(u, rng, dim)
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return LossQuery(key, kernels.LOGISTIC, A, np.where(y < 0, -1.0, 1.0),
                     ParameterDomain.ball(dim), S=2.0 + 2.0 * sigma,
                     lipschitz=1.0 + sigma, smoothness=0.25 + sigma, sigma=sigma,
                     family="logistic_l2")


def _linear(u, rng, key, dim=None):
    A, _, dim = _glm_parts(u, rng, dim, with_label=False)
    return LossQuery(key, kernels.LINEAR, A, np.zeros(u.size), ParameterDomain.ball(dim),
                     S=2.0, lipschitz=1.0, smoothness=0.0, family="linear")


def _constant(u, rng, key, dim=1, value=1.0, domain="box"):
    dom = ParameterDomain.box(0.0, 1.0, int(dim)) if domain == "box" else ParameterDomain.ball(int(dim))
    return LossQuery(key, kernels.CONSTANT, np.zeros((u.size, int(dim))),
                     np.full(u.size, float(value)), dom, S=0.0, lipschitz=0.0,
                     smoothness=0.0, family="constant")


FAMILIES: dict[str, tuple[Callable, tuple]] = {
    "linear_query": (_linear_query, ()),
    "mean": (_mean, ("coord",)),
    "glm_squared": (_glm_squared, ("dim", "clip")),
    "logistic": (_logistic, ("dim",)),
    "logistic_l2": (_logistic_l2, ("dim", "sigma")),
    "linear": (_linear, ("dim",)),
    "constant": (_constant, ("dim", "value", "domain")),
}
