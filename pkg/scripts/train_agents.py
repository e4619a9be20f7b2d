"""Train agents on one of the five training environments over several seeds.

Writes a checkpoint and a reward-curve CSV per seed, then prints the first/last
decile means used to judge whether training made progress.

    python scripts/train_agents.py --env 1 --seeds 0 1 2 3 4 --episodes 300 --out runs/env1
"""

import argparse
from pathlib import Path

import numpy as np

from rlpgo.env import EpisodeConfig
from rlpgo.sac import EnvFactory, TrainConfig, train
from rlpgo.synth import TRAINING_ENVS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", type=int, default=1, choices=sorted(TRAINING_ENVS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--full", action="store_true", help="full-size networks instead of the desk preset")
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()

    params, cycles, action_range = TRAINING_ENVS[args.env]
    factory = EnvFactory(params, EpisodeConfig(cycles=cycles, action_range=action_range))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    improved = 0
    for seed in args.seeds:
        cfg = TrainConfig(seed=seed) if args.full else TrainConfig.desk(seed)
        tag = out / f"env{args.env}_seed{seed}"
        res = train(factory, cfg, args.episodes, checkpoint=tag.with_suffix(".npz"),
                    curve_csv=tag.with_suffix(".curve.csv"))
        r = res.rewards
        k = max(1, len(r) // 10)
        first, last = float(np.mean(r[:k])), float(np.mean(r[-k:]))
        improved += last > first
        print(f"seed {seed}: first decile {first:9.1f}  last decile {last:9.1f}  "
              f"final OC {res.curve[-1]['final_oc']:.4f}  {res.wall_time:6.1f} s")
    print(f"{improved}/{len(args.seeds)} seeds improved")


if __name__ == "__main__":
    main()
