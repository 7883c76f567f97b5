"""Finite data universes, datasets of row indices, and histograms.

Adjacency is row replacement with ``n`` fixed.  Replacing one row moves
``1/n`` of mass from one bin to another, so neighbouring histograms are at
L1 distance at most ``2/n``.

File format (``load_text`` / ``save_text``)::

    # comments and blank lines are ignored
    <d> <size>
    <size lines, each with d reals>       universe points, in index order
    <one integer per line>                dataset rows (universe indices)

Non-finite reals are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

NORMALIZATION_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Universe:
    """Ordered, distinct points in R^d.  Index ``i`` always refers to ``points[i]``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("universe needs at least one point of dimension >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("universe points must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("universe points must be distinct")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.size


@dataclass(frozen=True, eq=False)
class Dataset:
    """A vector of ``n`` rows, each an index into a universe."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 1:
            raise ValueError("dataset rows must be a flat sequence of indices")
        if rows.size == 0:
            rows = rows.astype(np.int64)
        elif not np.issubdtype(rows.dtype, np.integer):
            raise TypeError("dataset rows must be integers")
        object.__setattr__(self, "rows", _frozen(rows))

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class Histogram:
    """Probability mass over universe indices; renormalised on construction."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 1 or m.size < 1:
            raise ValueError("histogram mass must be a non-empty vector")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("histogram mass must be finite and non-negative")
        # fsum is correctly rounded, hence independent of bin order
        total = math.fsum(m)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"histogram mass sums to {total!r}, not 1")
        object.__setattr__(self, "mass", _frozen(m / total))

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return isinstance(other, Histogram) and np.array_equal(self.mass, other.mass)

    __hash__ = None


def _check_rows(ds: Dataset, u: Universe) -> None:
    if ds.n == 0:
        raise ValueError("empty dataset")
    if ds.rows.min() < 0 or ds.rows.max() >= u.size:
        raise ValueError("row outside universe")


def from_records(ds: Dataset, u: Universe) -> Histogram:
    _check_rows(ds, u)
    counts = np.bincount(ds.rows, minlength=u.size)
    return Histogram(counts / ds.n)


def uniform(u: Universe | int) -> Histogram:
    size = u if isinstance(u, int) else u.size
    if size < 1:
        raise ValueError("universe must be non-empty")
    return Histogram(np.full(size, 1.0 / size))


def l1_distance(a: Histogram, b: Histogram) -> float:
    if a.size != b.size:
        raise ValueError("histograms are over different universes")
    return float(np.abs(a.mass - b.mass).sum())


def neighbors(ds: Dataset, u: Universe) -> Iterator[Dataset]:
    """Yield every dataset obtained by replacing one row (self-replacements included).

    Yields ``n * |X|`` datasets, row position major.
    """
    _check_rows(ds, u)
    for i in range(ds.n):
        for x in range(u.size):
            rows = np.array(ds.rows, copy=True)
            rows[i] = x
            yield Dataset(rows)


def neighbor_histograms(ds: Dataset, u: Universe) -> Iterator[Histogram]:
    """Histograms of ``neighbors(ds, u)`` without materialising the row vectors."""
    base = np.bincount(ds.rows, minlength=u.size).astype(float)
    for i in range(ds.n):
        old = ds.rows[i]
        for x in range(u.size):
            counts = base.copy()
            counts[old] -= 1
            counts[x] += 1
            yield Histogram(counts / ds.n)


def permute(u: Universe, perm) -> Universe:
    """Universe whose point ``i`` is ``u.points[perm[i]]``."""
    return Universe(u.points[np.asarray(perm)])


def boolean_cube(d: int) -> Universe:
    """All 2^d points of {+-1/sqrt(d)}^d, in binary counting order."""
    if d < 1 or d > 20:
        raise ValueError("cube dimension must be in [1, 20]")
    bits = (np.arange(2 ** d)[:, None] >> np.arange(d - 1, -1, -1)) & 1
    return Universe((2.0 * bits - 1.0) / math.sqrt(d))


def labeled_ball(size: int, d: int, rng: np.random.Generator) -> Universe:
    """Random points ``(x, y)`` with ``||x||_2 <= 1`` and label ``y`` in [-1, 1] \\ {0}."""
    x = rng.normal(size=(size, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x *= rng.uniform(0.2, 1.0, size=(size, 1)) ** (1.0 / d)
    y = rng.uniform(0.1, 1.0, size=size) * rng.choice([-1.0, 1.0], size=size)
    return Universe(np.column_stack([x, y]))


def grid_line(size: int) -> Universe:
    """``size`` equally spaced points on [0, 1]."""
    if size == 1:
        return Universe(np.array([[0.0]]))
    return Universe(np.linspace(0.0, 1.0, size)[:, None])


def synthetic_dataset(u: Universe, n: int, rng: np.random.Generator,
                      concentration: float = 0.5) -> Dataset:
    """``n`` rows drawn i.i.d. from a Dirichlet(concentration)-distributed skew over ``u``.

    Rows come out grouped by universe index; order carries no meaning.
    """
    if n < 1:
        raise ValueError("n must be positive")
    p = rng.dirichlet(np.full(u.size, concentration))
    counts = rng.multinomial(n, p)
    dtype = np.min_scalar_type(max(u.size - 1, 0))
    return Dataset(np.repeat(np.arange(u.size, dtype=dtype), counts))


def _parse_float(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ValueError(f"{where}: not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{where}: non-finite value {tok!r}")
    return v


def load_text(path) -> tuple[Universe, Dataset]:
    with open(path) as fh:
        lines = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(fh)]
    lines = [(no, ln) for no, ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty file")
    no, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise ValueError(f"{path}:{no}: header must be '<d> <size>'")
    try:
        d, size = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"{path}:{no}: header must hold two integers") from None
    if d < 1 or size < 1:
        raise ValueError(f"{path}:{no}: d and size must be positive")
    if len(lines) < 1 + size:
        raise ValueError(f"{path}: expected {size} universe points")
    pts = []
    for no, ln in lines[1:1 + size]:
        toks = ln.split()
        if len(toks) != d:
            raise ValueError(f"{path}:{no}: expected {d} coordinates, got {len(toks)}")
        pts.append([_parse_float(t, f"{path}:{no}") for t in toks])
    rows = []
    for no, ln in lines[1 + size:]:
        try:
            rows.append(int(ln))
        except ValueError:
            raise ValueError(f"{path}:{no}: row must be an integer index") from None
    u = Universe(np.array(pts))
    ds = Dataset(np.array(rows, dtype=np.int64))
    _check_rows(ds, u)
    return u, ds


def save_text(path, u: Universe, ds: Dataset) -> None:
    with open(path, "w") as fh:
        fh.write(f"{u.dim} {u.size}\n")
        for p in u.points:
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")
        for r in ds.rows:
            fh.write(f"{int(r)}\n")
