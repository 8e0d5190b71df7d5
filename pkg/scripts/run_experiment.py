"""Train every seed of a config, then aggregate the runs into curve.csv.

    python scripts/run_experiment.py configs/farbox_3j.cfg --out runs/farbox_3j

Rerunning with the same --out resumes unfinished seeds from their checkpoints.
"""
import argparse
import logging
import time
from pathlib import Path

from reacherbench.analysis import emit_curve
from reacherbench.config import load_config_file
from reacherbench.harness import aggregate_runs, run_training


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, nargs="+", help="override the configured seeds")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config_file(args.config)
    out = Path(args.out or Path("runs") / cfg.name)
    records = []
    for seed in args.seeds or cfg.seeds:
        t0 = time.perf_counter()
        rec = run_training(cfg, seed, out)
        records.append(rec)
        print(f"seed {seed}: best {rec.best}/{cfg.test_episodes}  curve {rec.successes}  "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)
    curve = aggregate_runs(records)
    emit_curve(curve, out / "curve.csv")
    if curve:
        last = curve[-1]
        print(f"final session: mean {last.mean:.1f}, 65% CI [{last.ci_low:.1f}, {last.ci_high:.1f}]")
    print(f"curve written to {out / 'curve.csv'}")


if __name__ == "__main__":
    main()
