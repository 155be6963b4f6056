"""Compare the numba and numpy movement kernels, alone and inside full runs.

    python benchmarks/bench_kernels.py [--agents 100] [--ticks 2000] [--runs 20]
"""
import argparse
import statistics
import time

import numpy as np

from trailsim import kernels, load_scenario, run
from trailsim.engine import _Routes, rng_streams
from trailsim.population import sample_population


def kernel_inputs(n_agents, seed=0):
    cfg = load_scenario("nonlinear")
    cfg = cfg.with_population(size=n_agents)
    streams = rng_streams(seed)
    agents = sample_population(cfg.population, cfg.graph, streams["population"], streams["routing"])
    routes = _Routes(agents, cfg)
    n, m = len(agents), len(cfg.graph.sensors)
    return dict(
        speed=np.array([a.attributes.speed for a in agents]),
        spawn=np.array([a.spawn_tick for a in agents], dtype=np.int64),
        routes=routes,
        sensor_xy=cfg.graph.coords(),
        rho=np.array([s.rho for s in cfg.graph.sensors]),
        n=n,
        m=m,
    )


def time_kernel(backend, w, ticks):
    step = kernels.get_step(backend)
    n, m = w["n"], w["m"]
    state = np.zeros(n, dtype=np.int8)
    hop = np.zeros(n, dtype=np.int64)
    inrange = np.zeros((n, m), dtype=np.bool_)
    ev = [np.zeros(n * m, dtype=np.int64) for _ in range(3)]
    r = w["routes"]
    t0 = time.perf_counter()
    events = 0
    for t in range(ticks):
        events += step(t, 1.0, w["speed"], w["spawn"], state, hop, r.off, r.xy, r.cum,
                       w["sensor_xy"], w["rho"], inrange, *ev)
    return time.perf_counter() - t0, events


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=100)
    ap.add_argument("--ticks", type=int, default=2000)
    ap.add_argument("--runs", type=int, default=20)
    args = ap.parse_args()

    backends = ["numba", "numpy"] if kernels.HAVE_NUMBA else ["numpy"]
    w = kernel_inputs(args.agents)
    print(f"kernel only: {args.agents} agents, {args.ticks} ticks")
    for b in backends:
        time_kernel(b, w, 5)  # compile / warm up
        dt, events = time_kernel(b, w, args.ticks)
        print(f"  {b:6s} {dt * 1e6 / args.ticks:8.1f} us/tick  ({events} range events)")

    cfg = load_scenario("nonlinear")
    print(f"full runs: nonlinear scenario, {args.runs} seeds")
    for b in backends:
        run(cfg, 0, backend=b)
        times = []
        for seed in range(args.runs):
            t0 = time.perf_counter()
            run(cfg, seed, backend=b)
            times.append(time.perf_counter() - t0)
        print(f"  {b:6s} {statistics.mean(times) * 1e3:8.1f} ms/run  (median {statistics.median(times) * 1e3:.1f})")


if __name__ == "__main__":
    main()
