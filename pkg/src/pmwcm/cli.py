"""Command-line entry point.

Exit codes: 0 success, 1 configuration or I/O error, 2 assertion or
property failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from pmwcm import harness, properties

EXIT_OK, EXIT_CONFIG, EXIT_PROPERTY = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmwcm", description="Private multiplicative weights for convex minimisation queries.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="flat TOML experiment config")
        sp.add_argument("--seed", type=_u64, help="master seed")
        sp.add_argument("--mode", choices=harness.MODES)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--trials", type=_positive)
        return sp

    experiment("run", "play the accuracy game against the engine")
    experiment("sweep", "run the cartesian grid given by the config's sweep table")
    experiment("baseline", "answer every query independently with the private oracle")
    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--suite", action="append", choices=sorted(properties.SUITES),
                   help="run only this suite (repeatable)")
    r = sub.add_parser("report", help="re-render CSV tables from JSON transcripts")
    r.add_argument("paths", nargs="+", type=Path, help="JSON reports or directories holding them")
    r.add_argument("--out", type=Path, help="directory for the re-rendered tables")
    return p


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, mode=args.mode, trials=args.trials,
                              out=str(args.out) if args.out else None)


def _accuracy_ok(results, cfg) -> bool:
    """Noise-free games are deterministic: any error above alpha or any halt is a failure."""
    if cfg.mode != "noise-free":
        return True
    return all(r.max_error <= cfg.alpha and not r.transcript.halted for r in results)


def _print_results(results, cfg, label):
    for r in results:
        tr = r.transcript
        print(f"{label} trial {r.trial}: queries={len(tr)} updates={tr.updates_used} "
              f"halted={tr.halted} max_error={r.max_error:.6g}")
    print(f"{label}: failure rate at alpha={cfg.alpha}: {harness.failure_rate(results, cfg.alpha):.4f}")


def cmd_run(args) -> int:
    cfg = _config(args)
    results = harness.run_trials(cfg)
    path = harness.save_trials(results, cfg, cfg.out)
    _print_results(results, cfg, "pmw")
    print(f"summary: {path}")
    return EXIT_OK if _accuracy_ok(results, cfg) else EXIT_PROPERTY


def cmd_baseline(args) -> int:
    cfg = _config(args)
    results = harness.run_trials(cfg, "baseline")
    path = harness.save_trials(results, cfg, cfg.out, "baseline")
    _print_results(results, cfg, "baseline")
    print(f"summary: {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if not cfg.sweep:
        raise harness.ConfigError("sweep needs a non-empty 'sweep' table, e.g. sweep = { k = [1, 10] }")
    out = Path(cfg.out)
    rows = []
    ok = True
    for point, sub_cfg in harness.sweep_configs(cfg):
        tag = "_".join(f"{k}={v}" for k, v in point.items())
        results = harness.run_trials(sub_cfg)
        harness.save_trials(results, sub_cfg, out / tag)
        maxes = [r.max_error for r in results]
        rows.append([tag, harness.failure_rate(results, sub_cfg.alpha), float(np.median(maxes))])
        ok &= _accuracy_ok(results, sub_cfg)
        print(f"{tag}: failure rate {rows[-1][1]:.4f}, median max error {rows[-1][2]:.6g}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("point", "failure_rate", "median_max_error"))
        w.writerows([[t, "%.12g" % f, "%.12g" % m] for t, f, m in rows])
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_verify(args) -> int:
    results = properties.run_all(args.suite)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_report(args) -> int:
    files = []
    for p in args.paths:
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise harness.ConfigError("no JSON reports found")
    for f in files:
        tr = harness.read_report(f)
        dest = (args.out / f.stem) if args.out else f.with_suffix("")
        csv_path, _ = harness.write_report(tr, dest)
        s = harness.summary_of(tr)
        print(f"{csv_path}: queries={s['queries']} updates={s['updates_used']} max_error={s['max_error']}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "baseline": cmd_baseline,
            "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(f"pmwcm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"pmwcm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"pmwcm: assertion failed: {exc}", file=sys.stderr)
        return EXIT_PROPERTY


if __name__ == "__main__":
    sys.exit(main())
