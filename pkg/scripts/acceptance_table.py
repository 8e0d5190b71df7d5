"""Goal-sampling acceptance rate for every region and number of active joints.

A zero entry means the region cannot be reached from the start pose with that
many joints; training such a configuration fails at the first reset.
"""
import argparse

import numpy as np

from reacherbench.arm import ur5
from reacherbench.env import NAMED_REGIONS, EnvConfig, ReacherEnv, acceptance_rate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    names = list(NAMED_REGIONS)
    print("joints  " + "  ".join(f"{n:>13}" for n in names))
    for n in range(2, 7):
        row = []
        for name in names:
            env = ReacherEnv(ur5(), EnvConfig(region=NAMED_REGIONS[name], n_active=n))
            rng = np.random.default_rng(args.seed)
            row.append(acceptance_rate(env.model, env.config.region, rng, env.start, env.config.floor, args.samples))
        print(f"{n:>6}  " + "  ".join(f"{r:>13.4f}" for r in row))


if __name__ == "__main__":
    main()
