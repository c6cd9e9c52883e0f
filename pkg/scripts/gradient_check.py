"""Adjoint gradient against centred differences for several seeds.

Usage: python3 scripts/gradient_check.py [config] [--seeds 0 1 2]
"""

import argparse

from pfopt.config import load_config
from pfopt.optimizer import fd_gradient_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="coarse_drag.cfg")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    cfg = load_config(args.config)
    print("seed,delta,analytic,fd,rel_error")
    for seed in args.seeds:
        cfg.seed = seed
        rep = fd_gradient_check(cfg)
        for d, fd, e in zip(rep.deltas, rep.fd, rep.rel_errors):
            print(f"{seed},{d:.0e},{rep.analytic:.12e},{fd:.12e},{e:.3e}")


if __name__ == "__main__":
    main()
