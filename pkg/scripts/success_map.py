"""Success map of a trained policy, printed as a coarse text heatmap.

    python scripts/success_map.py runs/unconstrained_3j/run_seed0.ckpt.npz configs/unconstrained_3j.cfg

Writes success_map.csv next to the checkpoint, same schema as `reacherbench map`.
"""
import argparse
from pathlib import Path

import numpy as np

from reacherbench.analysis import success_region_map, write_grid
from reacherbench.config import load_config_file
from reacherbench.harness import load_agent

SHADES = " .:-=+*#%@"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--slice", type=float, nargs=2, default=(0.7, 0.8))
    p.add_argument("--cell", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = load_config_file(args.config)
    agent = load_agent(args.checkpoint)
    grid = success_region_map(agent, cfg.load_arm(), cfg.env, args.samples, args.cell, tuple(args.slice),
                              np.random.default_rng(args.seed))
    write_grid(grid, Path(args.checkpoint).with_name("success_map.csv"))
    if not grid.cells:
        print("no sampled goals fell inside the slice")
        return
    xs = [k[0] for k in grid.cells]
    ys = [k[1] for k in grid.cells]
    # rows run from +y (top) to -y; each character is one cell's success rate
    for iy in range(max(ys), min(ys) - 1, -1):
        line = ""
        for ix in range(min(xs), max(xs) + 1):
            att, suc = grid.cells.get((ix, iy), (0, 0))
            line += " " if att == 0 else SHADES[min(int(10 * suc / att), 9)]
        print(f"{iy * args.cell:+.1f} |{line}|")
    print(f"{grid.successes}/{grid.attempts} in-slice goals reached")


if __name__ == "__main__":
    main()
