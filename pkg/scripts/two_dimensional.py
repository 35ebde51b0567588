"""2D tracking scenario: exact and Monte Carlo degradation plus mean trajectories per strategy.

    python3 scripts/two_dimensional.py --paths 25000
"""
import argparse
from pathlib import Path

from stealthlqg.attacks import ZeroAttack, build_optimal_adaptive, build_optimal_det
from stealthlqg.evaluate import exact_report, mc_objective
from stealthlqg.io import write_csv
from stealthlqg.model import preset
from stealthlqg.sim import export_trajectory_csv, mean_bundle, simulate_batch
from stealthlqg.synthesis import solve_agent, solve_det_attack, solve_filter


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lam", type=float, default=0.3)
    p.add_argument("--paths", type=int, default=25000)
    p.add_argument("--mean-paths", type=int, default=500)
    p.add_argument("--seed", type=int, default=20_240_601)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out/two_dimensional")
    args = p.parse_args()
    out = Path(args.out)
    m = preset("2d-tracking", lam=args.lam, n_steps=1000).model
    f, a = solve_filter(m), solve_agent(m)
    path, _ = build_optimal_det(m, f, a, solve_det_attack(m, f, a))
    adaptive, _ = build_optimal_adaptive(m, f, a)
    rows = []
    for name, s in (("zero", ZeroAttack()), ("optimal-det", path), ("optimal-adaptive", adaptive)):
        ex = exact_report(m, f, a, s)
        rep = mc_objective(m, f, a, s, args.paths, args.seed, args.workers)
        rows.append([name, ex.D, ex.objective, rep.D, rep.D_se, rep.objective, rep.objective_se])
        print(f"{name:17s} exact D {ex.D:.4f}  MC D {rep.D:.4f} +/- {rep.D_se:.4f}")
        b = simulate_batch(m, f, a, s, args.mean_paths, args.seed, args.workers)
        export_trajectory_csv(out / f"mean_{name}.csv", mean_bundle(b))
    print("wrote", write_csv(out / "summary.csv", ["strategy", "exact_D", "exact_objective", "D",
                                                   "D_se", "objective", "objective_se"], rows))


if __name__ == "__main__":
    main()
