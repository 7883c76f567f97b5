"""Experiment harness: plays the sample accuracy game and writes reports.

Configuration is a flat TOML document (no tables).  Recognised keys and their
defaults are the fields of ``ExperimentConfig``; anything else is an error::

    universe = "cube"          # cube | line | ball | file
    universe_dim = 4           # cube: 2**dim points; ball: point dimension
    family = "linear_query"
    family_params = { }        # passed to the family, e.g. { dim = 2 }
    adversary = "fixed_pool"   # fixed_pool | random | greedy
    n = 1000                   # or "auto": the engine's required size
    k = 100
    alpha = 0.25

Seeds: one master seed fans out to independent streams for every trial and
component through ``component_seed``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from pmwcm import engine as eng
from pmwcm.losses import LossFamily, LossQuery
from pmwcm.mechanisms import Branch, OracleSpec, PrivacyBudget, oracle_answer_hist
from pmwcm.transcript import Transcript
from pmwcm.universe import (Dataset, Histogram, Universe, boolean_cube, grid_line,
                            labeled_ball, load_text, synthetic_dataset)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

# seed components
DATA, ADVERSARY, SV, ORACLE = range(4)

MODES = ("private", "noise-free")
UNIVERSES = ("cube", "line", "ball", "file")
ADVERSARIES = ("fixed_pool", "random", "greedy")


class ConfigError(ValueError):
    pass


def component_seed(master: int, trial: int, component: int) -> np.random.SeedSequence:
    """Independent stream for one (trial, component) pair."""
    return np.random.SeedSequence(int(master), spawn_key=(int(trial), int(component)))


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    universe: str = "cube"
    universe_size: int | None = None
    universe_dim: int = 4
    universe_path: str | None = None
    data: str = "synthetic"
    concentration: float = 0.5
    family: str = "linear_query"
    family_params: dict = field(default_factory=dict)
    adversary: str = "fixed_pool"
    pool_size: int = 16
    n: int | str = 1000
    k: int = 100
    alpha: float = 0.25
    beta: float = 0.1
    epsilon: float = 1.0
    delta: float = 1e-6
    mode: str = "private"
    trials: int = 1
    workers: int = 1
    out: str = "results"
    seed: int = 0
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.mode not in MODES:
            bad(f"mode must be one of {MODES}")
        if self.universe not in UNIVERSES:
            bad(f"universe must be one of {UNIVERSES}")
        if self.adversary not in ADVERSARIES:
            bad(f"adversary must be one of {ADVERSARIES}")
        if self.universe == "file" and not self.universe_path:
            bad("universe = 'file' needs universe_path")
        if self.data not in ("synthetic", "file"):
            bad("data must be 'synthetic' or 'file'")
        if self.data == "file" and self.universe != "file":
            bad("data = 'file' requires universe = 'file'")
        if self.universe in ("line", "ball") and not (self.universe_size or 0) >= 1:
            bad(f"universe = {self.universe!r} needs universe_size >= 1")
        if self.universe == "cube" and not 1 <= self.universe_dim <= 20:
            bad("cube universes need 1 <= universe_dim <= 20")
        if self.trials < 1:
            bad("trials must be >= 1")
        if self.workers < 1:
            bad("workers must be >= 1")
        if self.k < 0:
            bad("k must be >= 0")
        if self.pool_size < 1:
            bad("pool_size must be >= 1")
        if not (isinstance(self.n, int) and self.n >= 1) and self.n != "auto":
            bad("n must be a positive integer or 'auto'")
        if not self.concentration > 0:
            bad("concentration must be positive")
        if not (self.alpha > 0 and 0 < self.beta < 1):
            bad("need alpha > 0 and 0 < beta < 1")
        try:
            PrivacyBudget(self.epsilon, self.delta).check_sane()
        except ValueError as exc:
            bad(str(exc))
        if not self.delta > 0:
            bad("delta must be positive")
        try:
            LossFamily(self.family, dict(self.family_params))
        except ValueError as exc:
            bad(str(exc))
        for key, values in self.sweep.items():
            if key not in _FIELD_TYPES or key in ("sweep", "out", "mode", "trials", "workers"):
                bad(f"cannot sweep over {key!r}")
            if not isinstance(values, list) or not values:
                bad(f"sweep.{key} must be a non-empty list")

    @property
    def noise(self) -> float:
        return 0.0 if self.mode == "noise-free" else 1.0

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_NUMERIC = {"concentration", "alpha", "beta", "epsilon", "delta"}
_INTEGER = {"universe_size", "universe_dim", "pool_size", "k", "trials", "workers", "seed"}


def _coerce(key, value):
    if key in _NUMERIC and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if key in _NUMERIC and not isinstance(value, float):
        raise ConfigError(f"{key} must be a number")
    if key in _INTEGER and (not isinstance(value, int) or isinstance(value, bool)):
        raise ConfigError(f"{key} must be an integer")
    if key in ("family_params", "sweep") and not isinstance(value, dict):
        raise ConfigError(f"{key} must be an inline table")
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in raw.items()})


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in raw.items() if isinstance(v, dict) and k not in ("family_params", "sweep")]
    if nested:
        raise ConfigError(f"{path}: config must be flat; unexpected tables {nested}")
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# workload construction


@dataclass
class Workload:
    universe: Universe
    dataset: Dataset
    family: LossFamily
    adversary_seed: int

    def member(self, index: int) -> LossQuery:
        return self.family.member(self.universe, self.adversary_seed, index)

    def member_from_key(self, key: str) -> LossQuery:
        seed, index = key.rsplit("#", 1)[1].split(":")
        return self.family.member(self.universe, int(seed), int(index))


def build_workload(cfg: ExperimentConfig, trial: int = 0) -> Workload:
    rng = np.random.default_rng(component_seed(cfg.seed, trial, DATA))
    rows = None
    if cfg.universe == "cube":
        u = boolean_cube(cfg.universe_dim)
        if cfg.universe_size not in (None, u.size):
            raise ConfigError(f"cube of dimension {cfg.universe_dim} has {u.size} points")
    elif cfg.universe == "line":
        u = grid_line(cfg.universe_size)
    elif cfg.universe == "ball":
        u = labeled_ball(cfg.universe_size, cfg.universe_dim, rng)
    else:
        try:
            u, rows = load_text(cfg.universe_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{cfg.universe_path}: {exc}") from None
    if cfg.data == "file":
        if rows is None or rows.n == 0:
            raise ConfigError(f"{cfg.universe_path}: no dataset rows")
        ds = rows
    else:
        n = cfg.n if isinstance(cfg.n, int) else None
        if n is None:
            n = resolve_n(cfg, u)
        ds = synthetic_dataset(u, n, rng, concentration=cfg.concentration)
    family = LossFamily(cfg.family, dict(cfg.family_params))
    try:
        family.member(u, 0, 0)
    except ValueError as exc:
        raise ConfigError(f"family {cfg.family!r} on this universe: {exc}") from None
    return Workload(u, ds, family, _int_seed(component_seed(cfg.seed, trial, ADVERSARY)))


def _schedule(cfg: ExperimentConfig, u: Universe, S: float, n: int) -> eng.ParameterSchedule:
    return eng.schedule(cfg.epsilon, cfg.delta, cfg.alpha, cfg.beta, max(cfg.k, 1), S, u.size, n)


def resolve_n(cfg: ExperimentConfig, u: Universe) -> int:
    """The engine's required dataset size for this family and schedule."""
    q = LossFamily(cfg.family, dict(cfg.family_params)).member(u, 0, 0)
    return eng.required_n(_schedule(cfg, u, q.S, 1), q)


# ---------------------------------------------------------------------------
# adversaries


class FixedPoolAdversary:
    """Cycles through a seeded pool."""

    def __init__(self, pool: list[LossQuery]):
        self.pool = pool

    def next_query(self, history: list) -> LossQuery:
        return self.pool[len(history) % len(self.pool)]


class RandomAdversary:
    """A fresh family member every round."""

    def __init__(self, work: Workload):
        self.work = work

    def next_query(self, history: list) -> LossQuery:
        return self.work.member(len(history))


class GreedyAdversary:
    """Picks the pool member whose hypothesis answer has the largest true error.

    Reads the engine's hypothesis and the true data, so it exists only in
    noise-free mode.  Ties go to the lowest pool index.
    """

    def __init__(self, pool: list[LossQuery], engine: eng.PMWEngine, evaluate: eng.TrueErrors):
        self.pool = pool
        self.engine = engine
        self.evaluate = evaluate
        self._t = -1
        self._choice = 0

    def errors(self) -> np.ndarray:
        return np.array([self.evaluate(q, self.engine.hypothesis_minimizer(q)) for q in self.pool])

    def next_query(self, history: list) -> LossQuery:
        if self.engine.t != self._t:
            self._choice = int(np.argmax(self.errors()))
            self._t = self.engine.t
        return self.pool[self._choice]


def adversary_next(adv, history: list) -> LossQuery:
    return adv.next_query(history)


def make_adversary(cfg: ExperimentConfig, work: Workload, engine=None, evaluate=None):
    if cfg.adversary == "random":
        return RandomAdversary(work)
    pool = [work.member(i) for i in range(cfg.pool_size)]
    if cfg.adversary == "fixed_pool":
        return FixedPoolAdversary(pool)
    if cfg.mode != "noise-free" or engine is None:
        raise ConfigError("the greedy adversary reads internal state and runs only in noise-free mode")
    return GreedyAdversary(pool, engine, evaluate)


# ---------------------------------------------------------------------------
# games


def run_game(cfg: ExperimentConfig, trial: int = 0, work: Workload | None = None) -> Transcript:
    """Play the accuracy game between the configured adversary and the engine."""
    work = work or build_workload(cfg, trial)
    S = work.member(0).S
    sched = _schedule(cfg, work.universe, S, work.dataset.n)
    evaluate = None
    if cfg.mode == "noise-free":
        evaluate = eng.TrueErrors(work.dataset, work.universe.size, sched.solver_tol)
    engine = eng.PMWEngine(
        eng.SensitiveData(work.dataset, work.universe.size), sched,
        sv_rng=np.random.default_rng(component_seed(cfg.seed, trial, SV)),
        oracle_rng=np.random.default_rng(component_seed(cfg.seed, trial, ORACLE)),
        noise=cfg.noise)
    adv = make_adversary(cfg, work, engine, evaluate)
    history: list = []
    queries = (adv.next_query(history) for _ in range(cfg.k))
    tr = eng.play(engine, queries, cfg.mode, evaluate,
                  after_answer=lambda q, theta, branch: history.append((q, theta)))
    tr.params = dict(tr.params, trial=trial, seed=cfg.seed, family=cfg.family,
                     adversary=cfg.adversary, algorithm="pmw")
    return tr


def run_baseline(cfg: ExperimentConfig, trial: int = 0, work: Workload | None = None) -> Transcript:
    """Answer every query independently with the oracle at budget eps / sqrt(8 k ln(2/delta))."""
    if cfg.adversary == "greedy":
        raise ConfigError("the baseline has no hypothesis; use a fixed_pool or random adversary")
    work = work or build_workload(cfg, trial)
    k = max(cfg.k, 1)
    eps0 = cfg.epsilon / math.sqrt(8.0 * k * math.log(2.0 / cfg.delta))
    spec = OracleSpec(eps0=eps0, alpha0=cfg.alpha / 4.0, beta0=cfg.beta / k, noise=cfg.noise)
    rng = np.random.default_rng(component_seed(cfg.seed, trial, ORACLE))
    hist = Histogram(np.bincount(work.dataset.rows, minlength=work.universe.size) / work.dataset.n)
    adv = make_adversary(cfg, work)
    tol = cfg.alpha / 100.0
    evaluate = eng.TrueErrors(work.dataset, work.universe.size, tol) if cfg.mode == "noise-free" else None
    tr = Transcript(mode=cfg.mode, params={
        "epsilon": cfg.epsilon, "delta": cfg.delta, "alpha": cfg.alpha, "beta": cfg.beta,
        "k": cfg.k, "n": work.dataset.n, "universe_size": work.universe.size, "eps0": eps0,
        "trial": trial, "seed": cfg.seed, "family": cfg.family, "adversary": cfg.adversary,
        "algorithm": "baseline"})
    history: list = []
    for _ in range(cfg.k):
        q = adv.next_query(history)
        theta = oracle_answer_hist(spec, q, hist, work.dataset.n, rng)
        tr.append(q.key, Branch.TOP, theta, evaluate(q, theta) if evaluate else None)
        history.append((q, theta))
    tr.updates_used = len(tr)
    return tr


def true_errors(cfg: ExperimentConfig, tr: Transcript, trial: int = 0,
                work: Workload | None = None) -> np.ndarray:
    """Evaluator-side scoring of any transcript against the true data.

    Kept outside the transcript so private-mode records never hold a
    deterministic function of the rows.
    """
    work = work or build_workload(cfg, trial)
    evaluate = eng.TrueErrors(work.dataset, work.universe.size, cfg.alpha / 100.0)
    queries: dict = {}
    out = np.empty(len(tr))
    for j, (key, ans) in enumerate(zip(tr.members, tr.answers)):
        q = queries.get(key)
        if q is None:
            q = queries[key] = work.member_from_key(key)
        out[j] = evaluate(q, ans)
    return out


@dataclass(frozen=True)
class TrialResult:
    trial: int
    transcript: Transcript
    max_error: float
    mean_error: float


def _one_trial(args) -> TrialResult:
    cfg, trial, algorithm = args
    work = build_workload(cfg, trial)
    tr = (run_baseline if algorithm == "baseline" else run_game)(cfg, trial, work)
    errs = np.asarray(tr.errors) if tr.errors is not None else true_errors(cfg, tr, trial, work)
    mx = float(errs.max()) if errs.size else 0.0
    mean = float(errs.mean()) if errs.size else 0.0
    return TrialResult(trial, tr, mx, mean)


def run_trials(cfg: ExperimentConfig, algorithm: str = "pmw") -> list[TrialResult]:
    """Run ``cfg.trials`` independent trials; results come back in trial order."""
    jobs = [(cfg, t, algorithm) for t in range(cfg.trials)]
    if cfg.workers == 1 or cfg.trials == 1:
        return [_one_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_one_trial, jobs))


def sweep_configs(cfg: ExperimentConfig) -> list[tuple[dict, ExperimentConfig]]:
    """Cartesian product of ``cfg.sweep`` applied to ``cfg``."""
    keys = sorted(cfg.sweep)
    out = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        point = dict(zip(keys, combo))
        raw = {k: v for k, v in asdict(cfg).items() if k != "sweep" and v is not None}
        raw.update(point)
        out.append((point, config_from_dict(raw)))
    return out


def failure_rate(results: list[TrialResult], alpha: float) -> float:
    return float(np.mean([r.max_error > alpha for r in results]))


# ---------------------------------------------------------------------------
# reports

CSV_COLUMNS = ("j", "member", "branch", "err", "answer")


def _fmt(x: float) -> str:
    return "%.12g" % x


def report_stem(mode: str, trial: int, algorithm: str = "pmw") -> str:
    tag = "noisefree" if mode == "noise-free" else "private"
    prefix = "" if algorithm == "pmw" else f"{algorithm}_"
    return f"{prefix}{tag}_trial{trial:03d}"


def _guard(tr: Transcript, path: Path) -> None:
    if tr.mode == "noise-free" and "private" in path.name:
        raise ValueError(f"refusing to write a noise-free transcript to {path}: labelled private")


def summary_of(tr: Transcript) -> dict:
    return {"queries": len(tr), "top_count": tr.top_count, "updates_used": tr.updates_used,
            "halted": tr.halted, "halt_reason": tr.halt_reason,
            "max_error": tr.max_error, "mean_error": tr.mean_error}


def write_report(tr: Transcript, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (one row per query) and ``<path>.json`` (summary,
    parameters and records).  Returns both paths.

    CSV schema v1: ``j, member, branch, err, answer``; ``err`` is empty in
    private mode and ``answer`` is the space-separated parameter vector, all
    floats at 12 significant digits.  JSON floats are exact.
    """
    stem = Path(path)
    csv_path, json_path = stem.with_name(stem.name + ".csv"), stem.with_name(stem.name + ".json")
    for p in (csv_path, json_path):
        _guard(tr, p)
    records = list(tr.records)
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow([r.j, r.member, r.branch.value,
                            "" if r.error is None else _fmt(r.error),
                            " ".join(_fmt(a) for a in r.answer)])
        doc = {"schema_version": SCHEMA_VERSION, "mode": tr.mode, "summary": summary_of(tr),
               "params": tr.params,
               "records": [{"j": r.j, "member": r.member, "branch": r.branch.value,
                            "answer": list(r.answer), "error": r.error} for r in records]}
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write report {stem}: {exc}") from exc
    return csv_path, json_path


def read_report(path) -> Transcript:
    """Parse a ``.json`` report (the ``.json`` suffix may be omitted)."""
    p = Path(path)
    if p.suffix != ".json":
        p = p.with_name(p.name + ".json")
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise OSError(f"cannot read report {p}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{p}: unsupported schema version {doc.get('schema_version')!r}")
    s = doc["summary"]
    tr = Transcript(mode=doc["mode"], params=doc["params"], updates_used=s["updates_used"],
                    halted=s["halted"], halt_reason=s["halt_reason"])
    for r in doc["records"]:
        tr.append(r["member"], Branch(r["branch"]), np.array(r["answer"]), r["error"])
    return tr


def write_summary(results: list[TrialResult], cfg: ExperimentConfig, out: Path,
                  name: str = "summary") -> Path:
    """One row per trial plus the failure rate at ``alpha``.

    ``max_error``/``mean_error`` are evaluator-side scores; in private mode
    they are computed outside the transcript.
    """
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trial", "queries", "top_count", "updates_used", "halted", "max_error", "mean_error"))
        for r in results:
            tr = r.transcript
            w.writerow((r.trial, len(tr), tr.top_count, tr.updates_used, int(tr.halted),
                        _fmt(r.max_error), _fmt(r.mean_error)))
    return path


def save_trials(results: list[TrialResult], cfg: ExperimentConfig, out, algorithm: str = "pmw") -> Path:
    out = Path(out)
    for r in results:
        write_report(r.transcript, out / report_stem(cfg.mode, r.trial, algorithm))
    return write_summary(results, cfg, out, "summary" if algorithm == "pmw" else f"{algorithm}_summary")

