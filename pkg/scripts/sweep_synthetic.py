"""Classical solvers versus agent-bootstrapped solvers on synthetic sweeps.

Two sweeps mirror the ratio and spacing studies: translation noise sigma_t at
fixed d, and node spacing d at fixed noise. Without a checkpoint only the GN/LM
baselines are run.

    python scripts/sweep_synthetic.py --sweep sigma_t --checkpoint runs/env1_seed0.npz --csv sweep.csv
"""

import argparse

from rlpgo.cli import RESULT_COLUMNS, summarize, write_results
from rlpgo.env import EpisodeConfig
from rlpgo.sac import SACAgent, evaluate
from rlpgo.solvers import gauss_newton, levenberg_marquardt
from rlpgo.synth import EnvParams, generate

SWEEPS = {
    "sigma_t": (EnvParams(n=300, sigma_R=0.3, sigma_t=0.2, d=3.0, lc=0.5), [0.2, 0.1, 0.05, 0.03, 0.01]),
    "d": (EnvParams(n=300, sigma_R=0.1, sigma_t=0.01, d=1.0, lc=0.5), [1.0, 3.0, 5.0, 8.0, 10.0]),
}


def row(dataset, method, seed, rep, time_s=None):
    return {"dataset": dataset, "method": method, "seed": seed, "F": rep.final_chi2,
            "iterations": rep.iterations, "time_s": rep.wall_time if time_s is None else time_s}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweep", choices=sorted(SWEEPS), default="sigma_t")
    ap.add_argument("--n", type=int, help="override the number of poses")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--checkpoint")
    ap.add_argument("--boot-iters", type=int, default=50)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--cycles", type=int, default=7)
    ap.add_argument("--action-range", type=float, default=0.25)
    ap.add_argument("--csv", default="sweep.csv")
    args = ap.parse_args()

    base, values = SWEEPS[args.sweep]
    if args.n:
        base = base.replace(n=args.n)
    agent = SACAgent.load(args.checkpoint) if args.checkpoint else None
    episode = EpisodeConfig(cycles=args.cycles, action_range=args.action_range)

    rows = []
    for v in values:
        for seed in args.seeds:
            g, _ = generate(base.replace(**{args.sweep: v}, seed=seed))
            name = f"{args.sweep}={v}"
            rows.append(row(name, "gn100", seed, gauss_newton(g, g.estimate, 100)))
            rows.append(row(name, "lm100", seed, levenberg_marquardt(g, g.estimate, 100)))
            if agent is None:
                continue
            ev = evaluate(g, agent, episode, runs=args.runs)
            boot = gauss_newton(g, ev.best_state, args.boot_iters)
            rows.append({"dataset": name, "method": "rl", "seed": seed, "F": ev.best_F, "iterations": 0,
                         "time_s": ev.mean_time})
            rows.append(row(name, f"rl+gn{args.boot_iters}", seed, boot, ev.mean_time + boot.wall_time))
            print(f"{name} seed {seed}: RL F = {ev.best_F:.3e}, RL+GN F = {boot.final_chi2:.3e}", flush=True)

    write_results(args.csv, rows)
    for r in summarize(rows):
        print("  ".join(f"{k}={r[k]}" for k in r))
    print(f"wrote {len(rows)} rows ({', '.join(RESULT_COLUMNS)}) to {args.csv}")


if __name__ == "__main__":
    main()
