"""Command-line entry point: ``stealthlqg {solve,simulate,evaluate,multiround,scenario}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks as atk
from .detect import UnsupportedConfiguration, detectability_residual
from .evaluate import exact_report, mc_objective, write_sweep_csv
from .io import config_hash, export_gridfunctions, write_json
from .model import ConfigError, SystemModel, preset, preset_names, validate
from .multiround import run_rounds, write_rounds_csv
from .ode import OdeNumericError
from .sim import export_trajectory_csv, make_plan, mean_bundle, simulate_batch
from .synthesis import (
    SolverDivergence,
    existence_bound,
    solve_adaptive_rho,
    solve_adaptive_tau,
    solve_agent,
    solve_det_attack,
    solve_f_phi_c_phi,
    solve_filter,
)

log = logging.getLogger("stealthlqg")

STRATEGIES = ("optimal-det", "optimal-adaptive", "zero", "gaussian", "sinusoid", "imported")
EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


@dataclass
class RunConfig:
    model: SystemModel
    model_source: dict
    lambdas: list
    strategies: list
    n_paths: int = 5000
    base_seed: int = 20_240_601
    workers: int = 1
    chi2_window: int = 50
    out: Path = Path("out")
    attack_csv: str | None = None
    mean_paths: int = 200
    rounds: int = 5
    gaussian: dict = field(default_factory=dict)
    sinusoid: dict = field(default_factory=dict)

    def provenance(self) -> dict:
        """Everything that determines the numbers; worker count and output path excluded."""
        return {"model": self.model_source, "lambda": self.lambdas, "strategies": self.strategies,
                "n_paths": self.n_paths, "base_seed": self.base_seed,
                "chi2_window": self.chi2_window, "attack_csv": self.attack_csv,
                "mean_paths": self.mean_paths, "rounds": self.rounds,
                "gaussian": self.gaussian, "sinusoid": self.sinusoid}

    @property
    def sha(self):
        return config_hash(self.provenance())


def _parse_list(text, cast=float):
    return [cast(x) for x in str(text).split(",") if x.strip()]


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    preset_name = args.preset or raw.get("preset")
    n_steps = args.n_steps or raw.get("n_steps")
    try:
        if "model" in raw and not args.preset:
            model = SystemModel.from_dict(raw["model"])
            if n_steps:
                model = model.replace(horizon=type(model.horizon)(model.T, int(n_steps)))
            source = model.to_dict()
        elif preset_name:
            model = preset(preset_name, n_steps=int(n_steps or 1000)).model
            source = {"preset": preset_name, "n_steps": model.grid.n_steps}
        else:
            raise ConfigError("give --preset NAME or a config with a model/preset entry")
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot build the model: {exc}") from exc
    problems = validate(model)
    if problems:
        raise ConfigError("invalid model", problems)

    default_lam = 0.5 if getattr(args, "command", None) == "multiround" else model.lam
    lambdas = (_parse_list(args.lambda_) if args.lambda_ is not None
               else [float(x) for x in np.atleast_1d(raw.get("lambda", [default_lam]))])
    strategies = (_parse_list(args.strategy, str) if args.strategy
                  else list(raw.get("strategies", ["optimal-det"])))
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}; choose from {', '.join(STRATEGIES)}")
    mc = raw.get("mc", {})
    cfg = RunConfig(
        model=model, model_source=source, lambdas=lambdas, strategies=strategies,
        n_paths=int(args.paths if args.paths is not None else mc.get("n_paths", 5000)),
        base_seed=int(args.seed if args.seed is not None else mc.get("base_seed", 20_240_601)),
        workers=int(args.workers if args.workers is not None else mc.get("workers", 1)),
        chi2_window=int(args.chi2_window if args.chi2_window is not None
                        else raw.get("chi2_window", 50)),
        out=Path(args.out or raw.get("out", "out")),
        attack_csv=args.attack_csv or raw.get("attack_csv"),
        mean_paths=int(getattr(args, "mean_paths", None) or raw.get("mean_paths", 200)),
        rounds=int(getattr(args, "rounds", None) or raw.get("rounds", 5)),
        gaussian=dict(raw.get("gaussian", {})),
        sinusoid=dict(raw.get("sinusoid", {})),
    )
    if any(lam < 0 for lam in cfg.lambdas):
        raise ConfigError("lambda must be nonnegative")
    if cfg.n_paths < 0 or cfg.workers < 1 or cfg.chi2_window < 1:
        raise ConfigError("paths must be >= 0, workers and chi2 window >= 1")
    if "imported" in cfg.strategies and not cfg.attack_csv:
        raise ConfigError("the imported strategy needs --attack-csv")
    return cfg


def _lam_dir(cfg, lam):
    return cfg.out if len(cfg.lambdas) == 1 else cfg.out / f"lambda_{lam:g}"


class _Pipeline:
    """Lazily solved gains for one lambda, shared by every strategy."""

    def __init__(self, model):
        self.model = model
        self.filt = solve_filter(model)
        self.agent = solve_agent(model)
        self._det = self._adaptive = None

    @property
    def det(self):
        if self._det is None:
            gains = solve_det_attack(self.model, self.filt, self.agent)
            path, means = atk.build_optimal_det(self.model, self.filt, self.agent, gains)
            self._det = (gains, path, means)
        return self._det

    @property
    def adaptive(self):
        if self._adaptive is None:
            m, f, a = self.model, self.filt, self.agent
            rho = solve_adaptive_rho(m, f, a)
            tau = solve_adaptive_tau(m, f, a, rho)
            rho = solve_f_phi_c_phi(m, f, a, rho, tau.tau_star)
            self._adaptive = (rho, tau, atk.adaptive_from_gains(m, rho, tau.tau_star))
        return self._adaptive

    def strategy(self, name, cfg):
        m = self.model
        if name == "zero":
            return atk.ZeroAttack()
        if name == "optimal-det":
            return self.det[1]
        if name == "optimal-adaptive":
            return self.adaptive[2]
        if name == "gaussian":
            return atk.GaussianWhite(**cfg.gaussian)
        if name == "sinusoid":
            return atk.SinusoidAttack(**cfg.sinusoid).as_path(m.grid, m.d, m.m)
        if name == "imported":
            return atk.import_attack_csv(cfg.attack_csv, m.grid)
        raise ConfigError(f"unknown strategy {name}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: RunConfig) -> int:
    for lam in cfg.lambdas:
        model = cfg.model.with_lambda(lam)
        out = _lam_dir(cfg, lam)
        pipe = _Pipeline(model)
        f, a, g = pipe.filt, pipe.agent, model.grid
        export_gridfunctions(out / "R.csv", g, [("R", f.R), ("T", f.T_cal), ("Theta", f.Theta),
                                                  ("Lambda", f.Lambda)], cfg.sha)
        export_gridfunctions(out / "agent.csv", g, [("F", a.F), ("f", a.f_vec), ("K", a.K)], cfg.sha)
        bound = existence_bound(model, f, a)
        info = {"lambda": lam, "T": model.T, "existence_bound": bound if np.isfinite(bound) else "inf",
                "T_below_bound": bool(model.T < bound), "warnings": []}
        if model.T >= bound:
            info["warnings"].append(f"T={model.T} is not below the sufficient bound {bound:.6g}")
        if "optimal-det" in cfg.strategies or not cfg.strategies:
            gains, path, _ = pipe.det
            export_gridfunctions(out / "det_gains.csv", g,
                                 [("Fc", gains.Fc), ("Fa", gains.Fa), ("Gc", gains.Gc),
                                  ("Ga", gains.Ga), ("frho", gains.f_rho), ("gtau", gains.g_tau)],
                                 cfg.sha)
            atk.export_attack_csv(out / "det_attack.csv", path, cfg.sha)
        if "optimal-adaptive" in cfg.strategies:
            rho, tau, _ = pipe.adaptive
            export_gridfunctions(out / "adaptive_gains.csv", g,
                                 [("Fphi", rho.F_phi), ("fphi", rho.f_phi), ("cphi", rho.c_phi)],
                                 cfg.sha)
            export_gridfunctions(out / "tau_gains.csv", g,
                                 [("Ftau", tau.F_tau), ("ftau", tau.f_tau), ("tau", tau.tau_star)],
                                 cfg.sha)
            info["adaptive_trace_constant"] = rho.trace_constant
        write_json(out / "bound.json", info)
        for w in info["warnings"]:
            log.warning("lambda=%g: %s", lam, w)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    summary = {"config": cfg.sha, "runs": []}
    for lam in cfg.lambdas:
        model = cfg.model.with_lambda(lam)
        out = _lam_dir(cfg, lam)
        pipe = _Pipeline(model)
        plan = make_plan(model, pipe.filt, pipe.agent)
        for name in cfg.strategies:
            strat = pipe.strategy(name, cfg)
            entry = {"lambda": lam, "strategy": name, "sample_paths": cfg.n_paths}
            if cfg.n_paths > 0:
                batch = simulate_batch(model, pipe.filt, pipe.agent, strat, cfg.n_paths,
                                       cfg.base_seed, cfg.workers, plan=plan)
                for i in range(cfg.n_paths):
                    export_trajectory_csv(out / f"traj_{name}_{i}.csv", batch.path(i), cfg.sha)
            if cfg.mean_paths > 0:
                mb = simulate_batch(model, pipe.filt, pipe.agent, strat, cfg.mean_paths,
                                    cfg.base_seed, cfg.workers, plan=plan)
                export_trajectory_csv(out / f"mean_{name}.csv", mean_bundle(mb), cfg.sha)
                entry["mean_paths"] = cfg.mean_paths
                entry["final_state_mean"] = mb.X_c[:, -1].mean(axis=0).tolist()
            summary["runs"].append(entry)
    write_json(cfg.out / "simulate_summary.json", summary)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    results = {"config": cfg.sha, "evaluations": []}
    exact_rows = {s: [] for s in cfg.strategies}
    mc_rows = {s: [] for s in cfg.strategies}
    for lam in cfg.lambdas:
        model = cfg.model.with_lambda(lam)
        pipe = _Pipeline(model)
        for name in cfg.strategies:
            strat = pipe.strategy(name, cfg)
            entry = {"lambda": lam, "strategy": name, "attack": strat.describe()}
            try:
                rep = exact_report(model, pipe.filt, pipe.agent, strat, lam)
                entry["exact"] = rep.to_dict()
                exact_rows[name].append(rep)
            except TypeError:
                pass
            if cfg.n_paths > 0:
                rep, det = mc_objective(model, pipe.filt, pipe.agent, strat, cfg.n_paths,
                                        cfg.base_seed, cfg.workers, cfg.chi2_window, lam,
                                        with_detection=True)
                entry["monte_carlo"] = rep.to_dict()
                entry["detection"] = det.to_dict()
                mc_rows[name].append(rep)
            elif isinstance(strat, atk.DeterministicPath):
                try:
                    entry["detectability_residual_sup"] = detectability_residual(model, strat).sup_norm()
                except UnsupportedConfiguration as exc:
                    entry["detectability_residual_sup"] = None
                    entry["note"] = str(exc)
            results["evaluations"].append(entry)
    for name in cfg.strategies:
        if exact_rows[name]:
            write_sweep_csv(cfg.out / f"sweep_{name}_exact.csv", exact_rows[name], cfg.sha)
        if mc_rows[name]:
            write_sweep_csv(cfg.out / f"sweep_{name}_mc.csv", mc_rows[name], cfg.sha)
    write_json(cfg.out / "evaluate.json", results)
    return EXIT_OK


def cmd_multiround(cfg: RunConfig) -> int:
    lam = cfg.lambdas[0]
    hist = run_rounds(cfg.model, lam, cfg.rounds, adaptive="optimal-adaptive" in cfg.strategies)
    write_rounds_csv(cfg.out / "rounds.csv", hist, cfg.sha)
    write_json(cfg.out / "rounds.json", {"config": cfg.sha, "lambda": lam, **hist.to_dict()})
    if not hist.ok:
        log.error("round %d diverged: %s", hist.failed_round, hist.error)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action != "list":
        return EXIT_CONFIG
    for name in preset_names():
        sp = preset(name)
        print(f"{name}\t{sp.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stealthlqg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--preset", help="scenario preset name")
        sp.add_argument("--lambda", dest="lambda_", help="comma-separated lambda list")
        sp.add_argument("--strategy", help=f"comma-separated subset of {','.join(STRATEGIES)}")
        sp.add_argument("--paths", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--chi2-window", type=int)
        sp.add_argument("--n-steps", type=int)
        sp.add_argument("--attack-csv")
        sp.add_argument("--out")

    for name in ("solve", "evaluate"):
        common(sub.add_parser(name))
    sim = sub.add_parser("simulate")
    common(sim)
    sim.add_argument("--mean-paths", type=int, help="paths averaged into the mean-path CSV")
    mr = sub.add_parser("multiround")
    common(mr)
    mr.add_argument("--rounds", type=int)
    sc = sub.add_parser("scenario")
    sc.add_argument("action", choices=["list"])
    return p


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "evaluate": cmd_evaluate,
            "multiround": cmd_multiround}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "scenario":
        return cmd_scenario(args)
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        problems = exc.args[1] if len(exc.args) > 1 else []
        diag = {"error": "config", "message": str(exc.args[0]), "violations": problems}
        print(json.dumps(diag, sort_keys=True))
        if out is not None:
            write_json(out / "error.json", diag)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except SolverDivergence as exc:
        diag = {"error": "divergence", "message": str(exc), "t": exc.t, "system": exc.system,
                "existence_bound": exc.bound}
    except (OdeNumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        diag = {"error": "numeric", "message": str(exc)}
    except ConfigError as exc:
        diag = {"error": "config", "message": str(exc.args[0])}
        print(json.dumps(diag, sort_keys=True))
        write_json(cfg.out / "error.json", diag)
        return EXIT_CONFIG
    print(json.dumps(diag, sort_keys=True, default=str))
    write_json(cfg.out / "error.json", diag)
    return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
