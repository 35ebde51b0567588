"""Exact D, S, attack energy and objective across a lambda grid for the optimal attacks.

    python3 scripts/lambda_tradeoff.py --preset 1d-mean-revert --out out/tradeoff.csv
"""
import argparse
import logging

import numpy as np

from stealthlqg.attacks import build_optimal_adaptive, build_optimal_det
from stealthlqg.evaluate import exact_adaptive_objective, exact_objective
from stealthlqg.io import write_csv
from stealthlqg.model import preset
from stealthlqg.synthesis import SolverDivergence, existence_bound, solve_agent, solve_det_attack, solve_filter

HEADER = ["lambda", "bound", "det_D", "det_S", "det_energy", "det_objective",
          "adaptive_D", "adaptive_S", "adaptive_energy", "adaptive_objective"]


def row(model):
    f, a = solve_filter(model), solve_agent(model)
    path, _ = build_optimal_det(model, f, a, solve_det_attack(model, f, a))
    det = exact_objective(model, f, a, path)
    strat, _ = build_optimal_adaptive(model, f, a)
    ad = exact_adaptive_objective(model, f, a, strat)
    return [model.lam, existence_bound(model, f, a), det.D, det.S, det.rho_energy, det.objective,
            ad.D, ad.S, ad.rho_energy, ad.objective]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="1d-mean-revert")
    p.add_argument("--lambdas", default=",".join(f"{x:g}" for x in np.linspace(0, 0.9, 10)))
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--out", default="out/lambda_tradeoff.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    base = preset(args.preset, n_steps=args.n_steps).model
    rows = []
    for lam in (float(x) for x in args.lambdas.split(",")):
        try:
            rows.append(row(base.with_lambda(lam)))
        except SolverDivergence as exc:
            print(f"lambda={lam:g}: {exc}")
            break
        print(", ".join(f"{h}={v:.5g}" for h, v in zip(HEADER, rows[-1])))
    print("wrote", write_csv(args.out, HEADER, rows))


if __name__ == "__main__":
    main()
