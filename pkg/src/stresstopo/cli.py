"""Command-line entry point: ``stresstopo run | postprocess | verify | presets``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, RunConfig, preset
from .uncertainty import ConfigurationError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_CHECK_FAILED = 4

log = logging.getLogger("stresstopo")


def _threads(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _positive_int(text: str) -> int:
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v != float(text) or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _resolve_config(args) -> RunConfig:
    if args.preset and args.config:
        raise ConfigError("give either a configuration file or --preset, not both")
    if args.preset:
        cfg = preset(args.preset)
    elif args.config:
        cfg = RunConfig.load(args.config)
    else:
        raise ConfigError("a configuration file or --preset is required")
    if getattr(args, "nx", None):
        cfg = cfg.scaled(args.nx)
    if getattr(args, "out", None):
        cfg.output = str(args.out)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "samples", None):
        cfg.mc_samples = args.samples
    if getattr(args, "max_iterations", None):
        cfg.solver["max_iterations"] = args.max_iterations
    cfg.validate()
    return cfg


def write_convergence_csv(path, history) -> None:
    from .optimizer import IterationRecord

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(IterationRecord.FIELDS)
        for rec in history:
            w.writerow([repr(getattr(rec, k)) for k in IterationRecord.FIELDS])


def save_design(path, cfg: RunConfig, rho: np.ndarray, rho_bar: np.ndarray, converged: bool) -> None:
    np.savez(path, rho=rho, rho_bar=rho_bar, config=np.array(cfg.to_text()), converged=np.array(converged))


def load_design(path):
    try:
        with np.load(path, allow_pickle=False) as data:
            return (RunConfig.from_text(str(data["config"]), source=f"{path}[config]"),
                    data["rho"].copy(), data["rho_bar"].copy())
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"not a design file written by 'stresstopo run': {exc}", source=str(path)) from exc


def _postprocess(problem, cfg: RunConfig, rho_bar, ratios, out: Path, samples: int | None, seed: int):
    from .postprocess import ExportPaths, MCSettings, export_fields, reliability_of_design

    rmap = None
    if samples and problem.reference_model is not None:
        rmap = reliability_of_design(problem, rho_bar, MCSettings(n_samples=samples, seed=seed))
    elif samples:
        log.warning("no Gaussian description of the loads; skipping Monte Carlo sampling")
    export_fields(problem.mesh, rho_bar, ratios, rmap, ExportPaths(out))
    return rmap


def _mc_lines(rmap, samples, seed) -> list[str]:
    if rmap is None:
        return ["monte_carlo = skipped"]
    return [f"mc_samples = {samples}", f"mc_seed = {seed}", f"beta_cap = {rmap.beta_cap:.6f}",
            f"beta_min = {rmap.beta_min:.6f}", f"pf_max = {rmap.pf_max:.6e}",
            f"worst_element = {rmap.worst_element}"]


def cmd_run(args) -> int:
    from .optimizer import run

    cfg = _resolve_config(args)
    problem = cfg.build_problem()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    log.info("%s: %d elements, formulation %s", problem.name, problem.n_elements, cfg.formulation)
    res = run(problem, cfg.al_settings(), log_every=args.log_every)
    write_convergence_csv(out / "convergence.csv", res.history)
    save_design(out / "design.npz", cfg, res.rho, res.rho_bar, res.converged)
    samples = 0 if args.no_mc else cfg.mc_samples
    rmap = _postprocess(problem, cfg, res.rho_bar, res.analysis.ratios, out, samples, cfg.seed)
    lines = [f"name = {problem.name}", f"formulation = {cfg.formulation}",
             f"mesh = {cfg.nx} x {cfg.ny} ({problem.n_elements} active elements)",
             f"converged = {res.converged}", f"iterations = {res.iterations}",
             f"subproblems = {res.subproblems}", f"volume_fraction = {res.volume_fraction:.6f}",
             f"max_violation = {res.max_violation:.6e}", f"final_penalty = {res.r:g}",
             f"seed = {cfg.seed}", f"elapsed_seconds = {res.elapsed:.1f}"]
    lines += _mc_lines(rmap, samples, cfg.seed)
    if res.note:
        lines.append(f"note = {res.note}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_postprocess(args) -> int:
    from .sensitivity import analyze

    cfg, rho, rho_bar = load_design(args.design)
    if args.config:
        cfg = RunConfig.load(args.config)
    problem = cfg.build_problem()
    if rho_bar.shape != (problem.n_elements,):
        raise ConfigError(f"design has {rho_bar.size} elements but the configuration describes "
                          f"{problem.n_elements}", source=str(args.design))
    delta = problem.constants.delta_max
    ratios = analyze(problem, rho, delta, with_partials=False).ratios
    out = Path(args.out or Path(args.design).parent)
    rmap = _postprocess(problem, cfg, rho_bar, ratios, out, args.samples, args.seed)
    lines = _mc_lines(rmap, args.samples, args.seed)
    (out / "reliability.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite(s) {', '.join(unknown)}; available: {', '.join(SUITES)}")
    checks = run_suites(names)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def cmd_presets(args) -> int:
    if args.show:
        print(preset(args.show).to_text(), end="")
    else:
        for name in PRESETS:
            print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stresstopo",
                                description="Stress-constrained topology optimization under uncertain loads.")
    p.add_argument("--threads", type=_positive_int, help="bound BLAS/solver threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimize a design and export results")
    r.add_argument("config", nargs="?", help="configuration file")
    r.add_argument("--preset", choices=list(PRESETS))
    r.add_argument("--nx", type=_positive_int, help="elements along x; ny and h follow")
    r.add_argument("--out", help="output directory (overrides the configuration)")
    r.add_argument("--seed", type=int)
    r.add_argument("--samples", type=_positive_int, help="Monte Carlo samples")
    r.add_argument("--no-mc", action="store_true", help="skip Monte Carlo post-processing")
    r.add_argument("--max-iterations", type=_positive_int)
    r.add_argument("--log-every", type=int, default=100, metavar="N")
    r.set_defaults(func=cmd_run)

    pp = sub.add_parser("postprocess", help="Monte Carlo reliability maps of a saved design")
    pp.add_argument("design", help="design.npz written by 'run'")
    pp.add_argument("--config", help="configuration to use instead of the one stored with the design")
    pp.add_argument("--samples", type=_positive_int, default=1_000_000)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", help="output directory (default: next to the design)")
    pp.set_defaults(func=cmd_postprocess)

    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("suite", nargs="*", help="gradient, superposition, antiopt, hmv, phi (default: all)")
    v.set_defaults(func=cmd_verify)

    pr = sub.add_parser("presets", help="list built-in benchmark configurations")
    pr.add_argument("--show", metavar="NAME", help="print one preset as a configuration file")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
