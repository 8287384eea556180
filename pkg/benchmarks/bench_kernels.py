"""Time the Yee update kernels of each available backend.

Usage: python benchmarks/bench_kernels.py [--n 96] [--steps 20] [--threads 1]

Also runs a short end-to-end vacuum simulation per backend and checks that
both backends produce the same fields.
"""

import argparse
import logging
import time

import numpy as np

from labcbg.fdtd import backend, engine
from labcbg.geometry import PermittivityGrid


def fields(n, rng):
    shape = (n + 2,) * 3
    return [rng.standard_normal(shape) * 1e-3 for _ in range(6)]


def bench_updates(mod, n, steps, threads):
    rng = np.random.default_rng(0)
    ex, ey, ez, hx, hy, hz = fields(n, rng)
    cb = [np.full(ex.shape, 0.3) for _ in range(3)]
    ch = 0.2
    t = time.perf_counter()
    for _ in range(steps):
        mod.update_h(hx, hy, hz, ex, ey, ez, ch, ch, ch, threads)
        mod.update_e(ex, ey, ez, hx, hy, hz, *cb, 1.0, 1.0, 1.0, threads)
    dt = (time.perf_counter() - t) / steps
    return dt, n**3 / dt / 1e6, ex


def bench_run(name, n, threads):
    grid = PermittivityGrid.uniform((n, n, n), 25.0, absorber=8)
    src = engine.DipoleSource(1000.0, 0.3, position_nm=(0.0, 0.0, 0.0))
    cfg = engine.SimConfig(grid, src, [950.0, 1000.0, 1050.0], (engine.box_monitor(grid),),
                           max_steps=300, backend=name, nthreads=threads)
    t = time.perf_counter()
    res = engine.run(cfg)
    return time.perf_counter() - t, res


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=96)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--run-n", type=int, default=40)
    a = p.parse_args()
    # the short runs stop at max_steps on purpose
    logging.getLogger("labcbg").setLevel(logging.ERROR)

    print(f"backends: {', '.join(backend.available())}")
    print(f"{'backend':<8} {'ms/step':>9} {'Mcell/s':>9}   ({a.n}^3 cells, {a.steps} steps)")
    out = {}
    for name in backend.available():
        dt, rate, ex = bench_updates(backend.get(name), a.n, a.steps, a.threads)
        out[name] = ex
        print(f"{name:<8} {dt * 1e3:9.2f} {rate:9.1f}")
    if len(out) > 1:
        ref, other = out["python"], out["cython"]
        print(f"max |cython - python| after update loop: {np.max(np.abs(ref - other)):.3e}")

    print(f"\nend-to-end vacuum run, {a.run_n}^3 grid, 300 steps")
    results = {}
    for name in backend.available():
        wall, res = bench_run(name, a.run_n, a.threads)
        results[name] = res
        print(f"{name:<8} {wall:7.2f} s   ({wall / res.steps * 1e3:.2f} ms/step)")
    if len(results) > 1:
        a_, b_ = results["python"], results["cython"]
        same = (np.array_equal(a_.source_power, b_.source_power)
                and np.array_equal(a_.total_flux(), b_.total_flux()))
        print(f"source power and box flux bit-identical across backends: {same}")


if __name__ == "__main__":
    main()
