"""Repeated attack/refit rounds: per-round degradation and attack size.

    python3 scripts/multiround.py --lam 0.5 --rounds 5
"""
import argparse
import logging

from stealthlqg.model import preset
from stealthlqg.multiround import run_rounds, write_rounds_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="1d-mean-revert")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--out", default="out/multiround.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    hist = run_rounds(preset(args.preset).model, args.lam, args.rounds, args.adaptive)
    for r in hist.records:
        print(f"round {r.round}: D={r.D:.4g} |rho|={r.rho_sup:.3g} |tau|={r.tau_sup:.3g}")
    if not hist.ok:
        print(f"stopped at round {hist.failed_round}: {hist.error}")
    print("wrote", write_rounds_csv(args.out, hist))


if __name__ == "__main__":
    main()
