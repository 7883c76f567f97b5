"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 64]

Prints the best-of-``repeat`` time per call for each kernel and backend,
plus the speed-up.  Workloads mirror what one engine step does.
"""
import argparse
import timeit

import numpy as np

from pmwcm import kernels
from pmwcm.losses import LossFamily
from pmwcm.universe import boolean_cube, labeled_ball, uniform


def workloads(size: int, rng):
    cube = boolean_cube(int(np.log2(size)))
    ball = labeled_ball(size, 3, rng)
    lq = LossFamily("linear_query").member(cube, 0, 0)
    lg = LossFamily("logistic", {"dim": 2}).member(ball, 0, 0)
    h = uniform(size).mass
    u = rng.uniform(-2, 2, size)
    net = lg.domain.grid(41)
    logits = rng.normal(size=len(net))
    th0 = np.ascontiguousarray(lg.domain.center)

    def pgd(mod, q, step):
        dom = q.domain
        return lambda: mod.pgd(q.link, q.features, q.labels, q.clip, q.sigma, h,
                               np.ascontiguousarray(dom.center), dom.lo_array, dom.hi_array,
                               dom.kernel_radius, step, 1e-6, dom.diameter, 100_000)

    return {
        "pgd linear_query": lambda mod: pgd(mod, lq, 0.5),
        "pgd logistic (d=2)": lambda mod: pgd(mod, lg, 4.0),
        "objective logistic": lambda mod: lambda: mod.objective(
            lg.link, lg.features, lg.labels, lg.clip, lg.sigma, h, th0),
        f"net_values logistic ({len(net)} pts)": lambda mod: lambda: mod.net_values(
            lg.link, lg.features, lg.labels, lg.clip, lg.sigma, h, net),
        "mw_reweight": lambda mod: lambda: mod.mw_reweight(h, u, 0.01),
        "sample_index": lambda mod: lambda: mod.sample_index(logits, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64, help="universe size (power of two)")
    args = ap.parse_args()
    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled backend not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{name:>14s}" for name in mods) + "   speed-up")
    for label, make in workloads(args.size, rng).items():
        times = {}
        for name, mod in mods.items():
            fn = make(mod)
            number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
            times[name] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
        row = "".join(f"{times[n] * 1e6:12.1f}us" for n in mods)
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:34s}{row}   {ratio:8.1f}x")


if __name__ == "__main__":
    main()
