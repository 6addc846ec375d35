"""Command-line entry point.

``nrrd CONFIG`` runs the command named in the config's ``[run]`` section and
writes its artifacts to the output directory.  Exit codes: 0 success, 2 bad
configuration, 3 run ended in blow-up (informational), 4 a check failed,
5 solver or I/O error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, evaluate_expression, parse_config, to_text
from .core import NRRDError, StatePair, StateError, l2_norm
from .evolve import comparison_check, evolve, evolve_lockstep
from .experiments import dichotomy_violations, run_threshold_part1, run_threshold_part2, sweep
from .functionals import BracketParams, bracket_infimum
from .io import (
    SeriesWriter,
    ensure_dir,
    load_checkpoint,
    plot_norms,
    plot_profiles,
    save_checkpoint,
    write_series,
)
from .spectral import hopf_floor, robin_eigenpair
from .steady import find_positive_steady, ordered_uniqueness_check

log = logging.getLogger("nrrd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_CHECKS = 4
EXIT_SOLVER = 5

NONNEGATIVE_TOL = 1e-12
CUTOFF_TOL = 1e-12
CHECK_HORIZON = 1.0
UNIQUENESS_SEEDS = (0.5, 2.0)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return "none"
    return str(value)


class Report:
    def __init__(self):
        self.lines = []

    def add(self, key, value):
        self.lines.append(f"{key}: {_fmt(value)}")

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.lines) + "\n")


def _steady(cfg):
    result = find_positive_steady(cfg.grid, cfg.params, options=cfg.options)
    if not result.is_positive:
        raise StateError(f"steady state is {result.classification}")
    return result


def initial_state(cfg: RunConfig, base_dir=None) -> StatePair:
    init, grid = cfg.initial, cfg.grid
    if init.kind == "zero":
        return StatePair.zeros(grid)
    if init.kind == "scaled_steady":
        return _steady(cfg).state.scaled(init.l1, init.l2)
    if init.kind == "file":
        return load_checkpoint(os.path.join(base_dir or os.getcwd(), init.path), grid).at(0.0)
    return StatePair(grid, evaluate_expression(init.u1, grid), evaluate_expression(init.u2, grid))


def _cmd_eig(cfg, out, report, base_dir):
    pair = robin_eigenpair(cfg.grid, cfg.params.alpha, "L2_unit")
    floor = hopf_floor(pair)
    report.add("lambda1", pair.lambda1)
    report.add("hopf_floor", floor)
    report.add("iterations", pair.iterations)
    ok = floor > 0
    report.add("positive_eigenfunction", ok)
    plot_profiles(cfg.grid, {"phi1": pair.phi1}, os.path.join(out, "plot_eigenfunction.svg"))
    return EXIT_OK if ok else EXIT_CHECKS


def _cmd_steady(cfg, out, report, base_dir):
    res = find_positive_steady(cfg.grid, cfg.params, options=cfg.options)
    report.add("classification", res.classification)
    report.add("method", res.method)
    report.add("residual", res.residual)
    report.add("iterations", res.iterations)
    ok = res.is_positive
    if ok:
        for seed in UNIQUENESS_SEEDS:
            # bare Newton from seed * ubar can fall into the basin of zero on
            # coarse grids, so reseed the full search at that amplitude
            scale = seed * l2_norm(cfg.grid, res.state.u1)
            other = find_positive_steady(cfg.grid, cfg.params, scale, cfg.options)
            check = ordered_uniqueness_check(cfg.grid, cfg.params, other.state, res.state)
            report.add(f"uniqueness_seed_{seed}", check.status)
            report.add(f"uniqueness_deviation_{seed}", check.deviation)
            ok = ok and check.passed
    save_checkpoint(res.state, os.path.join(out, "final.ckpt"), cfg.params)
    plot_profiles(cfg.grid, {"u1": res.state.u1, "u2": res.state.u2},
                  os.path.join(out, "plot_steady.svg"), "steady state")
    report.add("checks_ok", ok)
    return EXIT_OK if ok else EXIT_CHECKS


def _report_outcome(report, outcome):
    report.add("outcome", outcome.kind)
    report.add("t_final", outcome.t_final)
    report.add("blowup_estimate", outcome.blowup_estimate)
    report.add("peak_linf_u1", outcome.peak_norms[0])
    report.add("peak_linf_u2", outcome.peak_norms[1])
    report.add("steps", outcome.steps)
    report.add("rejected_steps", outcome.rejected)


def _cmd_evolve(cfg, out, report, base_dir):
    state0 = initial_state(cfg, base_dir)
    with SeriesWriter(os.path.join(out, "series.csv")) as writer:
        outcome, series = evolve(
            state0, cfg.T_end, cfg.params, cfg.options, cutoff_M=cfg.cutoff_M, scheme=cfg.scheme,
            sample_dt=cfg.sample_dt, stride=cfg.stride, keep_states=False, callback=writer,
        )
    _report_outcome(report, outcome)
    plot_norms(series, os.path.join(out, "plot_norms.svg"))
    return EXIT_BLOWUP if outcome.kind == "BlowUp" else EXIT_OK


def _finish_threshold(cfg, out, report, rep):
    write_series(rep.series, os.path.join(out, "series.csv"))
    _report_outcome(report, rep.outcome)
    report.add("l1", rep.l1)
    report.add("l2", rep.l2)
    report.add("steady_residual", rep.steady.residual)
    if rep.epsilon is not None:
        report.add("epsilon", rep.epsilon)
    for key, value in rep.checks.items():
        report.add(key, value)
    save_checkpoint(rep.series.states[-1], os.path.join(out, "final.ckpt"), cfg.params)
    plot_norms(rep.series, os.path.join(out, "plot_norms.svg"))
    ubar = rep.steady.state
    plot_profiles(cfg.grid, {"u1": ubar.u1, "u2": ubar.u2}, os.path.join(out, "plot_steady.svg"),
                  "steady state")


def _cmd_threshold1(cfg, out, report, base_dir):
    rep = run_threshold_part1(cfg.grid, cfg.params, cfg.initial.l1, cfg.initial.l2, cfg.options,
                              T_end=cfg.T_end, sample_dt=cfg.sample_dt)
    _finish_threshold(cfg, out, report, rep)
    ok = rep.passed and rep.outcome.kind in ("Decayed", "Inconclusive")
    report.add("checks_ok", ok)
    return EXIT_OK if ok else EXIT_CHECKS


def _cmd_threshold2(cfg, out, report, base_dir):
    kwargs = {"T_end": cfg.T_end}
    if cfg.sample_dt is not None:
        kwargs["sample_dt"] = cfg.sample_dt
    rep = run_threshold_part2(cfg.grid, cfg.params, cfg.initial.l1, cfg.initial.l2, cfg.options, **kwargs)
    _finish_threshold(cfg, out, report, rep)
    ok = rep.passed and rep.outcome.kind == "BlowUp"
    report.add("checks_ok", ok)
    return EXIT_BLOWUP if ok else EXIT_CHECKS


SWEEP_COLUMNS = ("value", "l1", "l2", "kind", "experiment", "t_final", "blowup_estimate",
                 "peak_u1", "peak_u2", "checks_ok", "error")


def _cmd_sweep(cfg, out, report, base_dir):
    kwargs = {"T_end": cfg.T_end}
    if cfg.sample_dt is not None:
        kwargs["sample_dt"] = cfg.sample_dt
    rows = sweep(cfg.grid, cfg.params, cfg.sweep_axis, cfg.sweep_values,
                 cfg.initial.l1, cfg.initial.l2, cfg.options, **kwargs)
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(getattr(r, c)).replace(",", ";") for c in SWEEP_COLUMNS) + "\n")
    report.add("axis", cfg.sweep_axis)
    report.add("rows", len(rows))
    for r in rows:
        report.add(f"row {r.value!r}", f"{r.kind} ({r.experiment})" + (f" error={r.error}" if r.error else ""))
    violations = (dichotomy_violations(rows)
                  if cfg.sweep_axis in ("l", "l1", "l2") else [])
    report.add("dichotomy_consistent", not violations)
    failed = [r for r in rows if r.error or r.checks_ok is False]
    report.add("failed_rows", len(failed))
    ok = not violations and not failed
    report.add("checks_ok", ok)
    return EXIT_OK if ok else EXIT_CHECKS


def invariant_suite(cfg: RunConfig, report: Report) -> bool:
    """Comparison, nonnegativity, cut-off consistency and bracket dichotomy."""
    rng = np.random.default_rng(cfg.seed)
    grid, params, options = cfg.grid, cfg.params, cfg.options
    T = min(cfg.T_end, CHECK_HORIZON)
    ubar = _steady(cfg).state
    eigen = robin_eigenpair(grid, params.alpha, "L1_unit")
    n = cfg.check_samples

    comparison_ok = True
    worst = 0.0
    for _ in range(n):
        b1, b2 = rng.random(grid.size) * ubar.u1, rng.random(grid.size) * ubar.u2
        a1, a2 = rng.random(grid.size) * b1, rng.random(grid.size) * b2
        (_, sa), (_, sb) = evolve_lockstep(
            [StatePair(grid, a1, a2), StatePair(grid, b1, b2)], T, params, options, eigen=eigen)
        rep = comparison_check(sa, sb)
        comparison_ok &= rep.passed
        worst = max(worst, rep.max_violation)
    report.add("comparison_ok", comparison_ok)
    report.add("comparison_max_violation", worst)

    lowest = math.inf
    for _ in range(n):
        scale = 2.0 * max(ubar.u1.max(), ubar.u2.max())
        s0 = StatePair(grid, scale * rng.random(grid.size), scale * rng.random(grid.size))
        _, series = evolve(s0, T, params, options, keep_states=True, eigen=eigen)
        lowest = min(lowest, min(min(s.u1.min(), s.u2.min()) for s in series.states))
    positivity_ok = bool(lowest >= -NONNEGATIVE_TOL)
    report.add("nonnegativity_ok", positivity_ok)
    report.add("nonnegativity_min", lowest)

    s0 = ubar.scaled(0.5, 0.75)
    plain, ps = evolve(s0, T, params, options, keep_states=True, eigen=eigen)
    M = 2.0 * max(plain.peak_norms) + 1.0
    _, cs = evolve(s0, T, params, options, cutoff_M=M, keep_states=True, eigen=eigen)
    gap = max(np.max(np.abs(ps.states[-1].u1 - cs.states[-1].u1)),
              np.max(np.abs(ps.states[-1].u2 - cs.states[-1].u2)))
    cutoff_ok = bool(gap <= CUTOFF_TOL)
    report.add("cutoff_consistency_ok", cutoff_ok)
    report.add("cutoff_gap", float(gap))

    mismatches = 0
    for ratio in np.linspace(0.0, 4.0, 20):
        for gamma in np.linspace(2.0, 4.0, 20):
            for shift in (0.5, 2.0, 8.0):
                finite = math.isfinite(bracket_infimum(BracketParams(1.0, gamma, ratio, shift)))
                expected = params.with_(alpha=ratio, beta=1.0, gamma=gamma).condition_A_or_B
                mismatches += finite != expected
    bracket_ok = mismatches == 0
    report.add("bracket_dichotomy_ok", bracket_ok)
    return comparison_ok and positivity_ok and cutoff_ok and bracket_ok


def _cmd_check(cfg, out, report, base_dir):
    ok = invariant_suite(cfg, report)
    report.add("checks_ok", ok)
    return EXIT_OK if ok else EXIT_CHECKS


COMMAND_TABLE = {
    "eig": _cmd_eig,
    "steady": _cmd_steady,
    "evolve": _cmd_evolve,
    "threshold1": _cmd_threshold1,
    "threshold2": _cmd_threshold2,
    "sweep": _cmd_sweep,
    "check": _cmd_check,
}


def run(cfg: RunConfig, base_dir=None) -> int:
    """Execute ``cfg.command``; returns the process exit code."""
    out = ensure_dir(os.path.join(base_dir or os.getcwd(), cfg.output))
    report = Report()
    report.add("command", cfg.command)
    try:
        code = COMMAND_TABLE[cfg.command](cfg, out, report, base_dir)
    except (NRRDError, OSError, ArithmeticError) as exc:
        print(f"nrrd: {cfg.command} failed: {exc}", file=sys.stderr)
        report.add("error", str(exc).replace("\n", " "))
        code = EXIT_SOLVER
    report.add("exit_code", code)
    report.write(os.path.join(out, "report.txt"))
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="nrrd", description="Reaction-diffusion reactor model runs.")
    p.add_argument("config", help="run configuration file")
    p.add_argument("--command", choices=sorted(COMMAND_TABLE), help="override [run] command")
    p.add_argument("--output", help="override [run] output directory")
    p.add_argument("--canonical", action="store_true", help="print the canonical config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"nrrd: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base_dir = os.path.dirname(os.path.abspath(args.config))
    try:
        cfg = parse_config(text, base_dir)
    except ConfigError as exc:
        print(f"nrrd: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command:
        cfg = replace(cfg, command=args.command)
    if args.output:
        cfg = replace(cfg, output=os.path.abspath(args.output))
    if args.canonical:
        sys.stdout.write(to_text(cfg))
        return EXIT_OK
    return run(cfg, base_dir)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
