"""GN and LM on the standard benchmark files, optionally bootstrapped from an agent.

Benchmark g2o files are not shipped; pass their paths explicitly.

    python scripts/benchmarks.py data/manhattanOlson3500.g2o data/intel.g2o --csv bench.csv
"""

import argparse
from pathlib import Path

from rlpgo.cli import summarize, write_results
from rlpgo.env import EpisodeConfig
from rlpgo.graph import odometry_init, parse_g2o
from rlpgo.sac import SACAgent, evaluate
from rlpgo.solvers import gauss_newton, levenberg_marquardt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("graphs", nargs="+")
    ap.add_argument("--checkpoint")
    ap.add_argument("--boot-iters", type=int, default=30)
    ap.add_argument("--runs", type=int, default=1)
    ap.add_argument("--csv", default="bench.csv")
    args = ap.parse_args()

    agent = SACAgent.load(args.checkpoint) if args.checkpoint else None
    rows = []
    for path in args.graphs:
        g = parse_g2o(path)
        name = Path(path).stem
        init = odometry_init(g)
        print(f"{name}: {g.n} poses, {g.m} edges", flush=True)
        for method, solver in (("gn100", gauss_newton), ("lm100", levenberg_marquardt)):
            rep = solver(g, init, 100)
            rows.append({"dataset": name, "method": method, "seed": 0, "F": rep.final_chi2,
                         "iterations": rep.iterations, "time_s": rep.wall_time})
            print(f"  {method}: F = {rep.final_chi2:.4e} in {rep.iterations} it, {rep.wall_time:.2f} s", flush=True)
        if agent is None:
            continue
        ev = evaluate(g, agent, EpisodeConfig(), runs=args.runs, init=init)
        boot = levenberg_marquardt(g, ev.best_state, args.boot_iters)
        rows.append({"dataset": name, "method": "rl", "seed": 0, "F": ev.best_F, "iterations": 0,
                     "time_s": ev.mean_time})
        rows.append({"dataset": name, "method": f"rl+lm{args.boot_iters}", "seed": 0, "F": boot.final_chi2,
                     "iterations": boot.iterations, "time_s": ev.mean_time + boot.wall_time})
        print(f"  rl: F = {ev.best_F:.4e}; rl+lm{args.boot_iters}: F = {boot.final_chi2:.4e}", flush=True)

    write_results(args.csv, rows)
    for r in summarize(rows):
        print(r)


if __name__ == "__main__":
    main()
