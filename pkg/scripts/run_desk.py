"""Run both desk-scale experiments and print the trend checks.

Usage: python3 scripts/run_desk.py [--steps N] [--out DIR]
"""

import argparse
from pathlib import Path

from pfopt.config import load_config
from pfopt.io import summary_text, write_outputs
from pfopt.optimizer import run_optimization


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--out", default="output")
    args = ap.parse_args()
    for name in ("drag_desk.cfg", "liftdrag_desk.cfg"):
        cfg = load_config(name)
        if args.steps is not None:
            cfg.stepping.max_steps = args.steps
        cfg.output.dir = str(Path(args.out) / name.removesuffix(".cfg"))
        traj = run_optimization(cfg, lambda k, opt, st: print(
            f"{name} step {k} vertices={opt.mesh.n_vertices} tau={opt.tau:.2e}", flush=True))
        write_outputs(traj, cfg)
        print(summary_text(traj, cfg))


if __name__ == "__main__":
    main()
