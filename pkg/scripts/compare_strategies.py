"""Monte Carlo comparison of the attack strategies at one lambda, with the chi-square detector.

    python3 scripts/compare_strategies.py --lam 0.3 --paths 5000
"""
import argparse

from stealthlqg.attacks import GaussianWhite, SinusoidAttack, ZeroAttack, build_optimal_adaptive, build_optimal_det
from stealthlqg.evaluate import exact_report, mc_objective
from stealthlqg.io import write_csv
from stealthlqg.model import preset
from stealthlqg.synthesis import solve_agent, solve_det_attack, solve_filter

HEADER = ["strategy", "D", "D_se", "S", "S_se", "energy", "objective", "objective_se",
          "exact_D", "exact_objective", "chi2_mean", "chi2_dof"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--preset", default="1d-mean-revert")
    p.add_argument("--lam", type=float, default=0.3)
    p.add_argument("--paths", type=int, default=5000)
    p.add_argument("--seed", type=int, default=20_240_601)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--out", default="out/strategies.csv")
    args = p.parse_args()
    m = preset(args.preset, lam=args.lam, n_steps=args.n_steps).model
    f, a = solve_filter(m), solve_agent(m)
    path, _ = build_optimal_det(m, f, a, solve_det_attack(m, f, a))
    adaptive, _ = build_optimal_adaptive(m, f, a)
    strategies = {"zero": ZeroAttack(), "optimal-det": path, "optimal-adaptive": adaptive,
                  "gaussian": GaussianWhite(), "sinusoid": SinusoidAttack().as_path(m.grid, m.d, m.m)}
    nan = float("nan")
    rows = []
    for name, s in strategies.items():
        rep, det = mc_objective(m, f, a, s, args.paths, args.seed, args.workers, with_detection=True)
        try:
            ex = exact_report(m, f, a, s)
            ex_D, ex_obj = ex.D, ex.objective
        except TypeError:
            ex_D = ex_obj = nan
        rows.append([name, rep.D, rep.D_se, rep.S, rep.S_se, rep.rho_energy, rep.objective,
                     rep.objective_se, ex_D, ex_obj, det.chi2_mean, det.chi2_dof])
        print(f"{name:17s} D={rep.D:.4f}+/-{rep.D_se:.4f} S={rep.S:.3e} chi2 mean {det.chi2_mean:.2f}")
    print("wrote", write_csv(args.out, HEADER, rows))


if __name__ == "__main__":
    main()
