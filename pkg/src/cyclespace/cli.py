"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import harness
from .autoencoder import TrainingDivergence
from .case_io import CaseError, load_case, write_json_case
from .dcsim import NoiseModel, build_h
from .graph import basis_to_json, build_graph, fundamental_cycle_basis, minimum_cycle_basis
from .harness import ConfigError, ExperimentConfig, StageError

log = logging.getLogger("cyclespace")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = ExperimentConfig.from_json(text)
    changes = {}
    if args.case:
        changes["case"] = args.case
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def cmd_parse_case(cfg, args):
    case = load_case(cfg.case)
    g = build_graph(case)
    mcb = minimum_cycle_basis(g)
    fb = fundamental_cycle_basis(g)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "case.json").write_text(write_json_case(case) + "\n")
    (out / "mcb.json").write_text(basis_to_json(mcb) + "\n")
    summary = {
        "case_name": case.case_name,
        "n_buses": case.n_buses,
        "n_branches": case.n_branches,
        "slack_bus": case.slack_bus,
        "cycle_rank": g.cycle_rank(),
        "mcb_lengths": mcb.lengths,
        "mcb_total_length": mcb.total_length,
        "fundamental_total_length": fb.total_length,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))


def cmd_simulate(cfg, args):
    inputs = harness._load_inputs(cfg)
    case, _, profile_text = inputs
    h = build_h(case)
    with harness.stage("simulate"):
        noise = NoiseModel.homoscedastic(cfg.sigma, h.m)
        series = harness._simulate(case, h, noise, profile_text, cfg.t_o + cfg.t_u, cfg.jitter,
                                   harness.subseed(cfg.seed, harness._SERIES))
    out = harness._claim_dir(args.out, cfg, "simulate", args.force)
    harness._write_series(out, "measurements", series, harness._header(cfg))
    print(f"wrote {series.m} x {series.T} measurements to {out}")


def cmd_attack(cfg, args):
    res = harness.run_scenario(cfg.replace(detectors=("bdd",)))
    out = harness._claim_dir(args.out, cfg, "attack", args.force)
    head = harness._header(cfg)
    harness._write_series(out, "clean", res.clean, head)
    harness._write_series(out, "attacked", res.attacked, head)
    (out / "scenario.json").write_text(res.scenario.to_json() + "\n")
    if res.model is not None:
        (out / "autoencoder.json").write_text(res.model.to_json() + "\n")
    bdd = res.reports["bdd"]
    rate = float(np.mean(bdd.flags[res.attacked.labels])) if res.attacked.labels.any() else 0.0
    print(f"{cfg.family} kappa={cfg.kappa} window={cfg.attack_window} bdd_rate={rate:.4f}")


def cmd_detect(cfg, args):
    res = harness.run_scenario(cfg)
    harness.write_scenario(res, args.out, args.force)
    for r in res.rows():
        if not r.detector.startswith("cycle"):
            print(f"{r.detector:>10}  precision={r.precision:.4f} recall={r.recall:.4f} f1={r.f1:.4f}")


def _executor(args):
    return ProcessPoolExecutor(args.workers) if args.workers and args.workers > 1 else None


def cmd_sweep(cfg, args):
    ex = _executor(args)
    try:
        rows = harness.run_sweep(cfg, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()
    harness.write_sweep(rows, cfg, args.out, args.force)
    for det, cells in sorted(harness.f1_regions(rows).items()):
        print(f"{det:>10}  cells with f1>=0.8: {len(cells)}")


def cmd_theory(cfg, args):
    ex = _executor(args)
    try:
        estimates, rows = harness.run_theory(cfg, args.out, args.force, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()
    for e in estimates:
        print(f"sigma={e.sigma:<6g} closed={e.e_gen_closed:.6g} empirical={e.e_gen_empirical:.6g} "
              f"rel_dev={e.rel_dev:.4f}")
    print(f"mcb closed={rows[0].closed:.6g}, best fundamental={min(r.closed for r in rows[1:]):.6g}")


def cmd_partial(cfg, args):
    ex = _executor(args)
    try:
        surfaces, masks = harness.run_partial(cfg, args.remove_small, args.remove_large, executor=ex)
    finally:
        if ex is not None:
            ex.shutdown()
    harness.write_partial(surfaces, masks, cfg, args.out, args.force)
    for label in ("baseline", "missing_small", "missing_large"):
        f1 = np.mean([r.f1 for r in surfaces[label]])
        print(f"{label:>14}  removed={masks[label]['removed']} basis={masks[label]['basis_size']} "
              f"mean_f1={f1:.4f}")


COMMANDS = {
    "parse-case": (cmd_parse_case, "parse a case and report its cycle structure"),
    "simulate": (cmd_simulate, "simulate noisy branch-flow measurements"),
    "attack": (cmd_attack, "simulate and inject a false-data attack"),
    "detect": (cmd_detect, "run one end-to-end detection scenario"),
    "sweep": (cmd_sweep, "F1 over the (kappa, sigma) grid"),
    "theory": (cmd_theory, "Monte-Carlo check of the generalization-error formula"),
    "partial": (cmd_partial, "detection with unobserved branches"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclespace", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--case", help="builtin name (ieee14, ...) or path to .m/.json")
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", default="out")
        s.add_argument("--force", action="store_true", help="overwrite output of a different config")
        if name in ("sweep", "theory", "partial"):
            s.add_argument("--workers", type=int, default=0)
        if name == "partial":
            s.add_argument("--remove-small", type=int)
            s.add_argument("--remove-large", type=int)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, TrainingDivergence)):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = _config(args)
        fn(cfg, args)
    except (ConfigError, CaseError, StageError, ValueError, OSError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
