"""``anisons`` command line: simulate | couple | tails | ergodic | gn-check | calibrate.

Exit codes: 0 pass, 2 statistical or analytic bound violated, 3 numerical
blow-up, 64 configuration error.  ``ANISONS_OUT`` sets the default output
directory.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import coupling, ergodic
from ._accel import backend_name
from .energy import diagnostics_table, gn_sweep
from .errors import BlowUpError, ConfigError
from .io import (
    RunManifest,
    load_config,
    parse_init,
    save_field,
    write_columns,
    write_csv,
    write_ledger,
)
from .stepper import simulate, simulate_coupled

EXIT_OK = 0
EXIT_BOUND = 2
EXIT_BLOWUP = 3
EXIT_CONFIG = 64

# Frozen output of `calibrate` on configs/calibrate.toml.
DEFAULT_C2 = 0.0


def _num(section, key, default, kind=float):
    name = f"{section.name}.{key}"
    val = section.get(key, default)
    try:
        if isinstance(val, bool) or (kind is int and int(val) != val):
            raise ValueError
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"key '{name}' must be {kind.__name__}, got {val!r}", name) from None


def _list(section, key, default):
    name = f"{section.name}.{key}"
    val = section.get(key, default)
    if not isinstance(val, list) or not val:
        raise ConfigError(f"'{name}' must be a non-empty list", name)
    return val


def _second_field(run, section):
    name = f"{section.name}.v0"
    spec = section.get("v0")
    if spec is None:
        raise ConfigError(f"missing required table '{name}'", name)
    init = parse_init(spec, name + ".")
    return init.build(run.solver.grid, run.solver.seed, purpose="init-v0")


def cmd_simulate(run, out, args, man):
    cfg = run.solver
    traj, ledger = simulate(cfg, keep_fields=False)
    write_ledger(os.path.join(out, "ledger.csv"), ledger)
    write_columns(os.path.join(out, "diagnostics.csv"), diagnostics_table(ledger))
    man.outputs += ["ledger.csv", "diagnostics.csv"]
    save_field(traj.final_field(), os.path.join(out, "final_state.bin"))
    man.outputs.append("final_state.bin")
    man.verdicts["simulate"] = "completed"
    return EXIT_OK


def cmd_couple(run, out, args, man):
    cfg = run.solver
    sec = run.section("couple")
    u0 = cfg.initial_field()
    v0 = _second_field(run, sec)
    K = cfg.sigma.K
    R = _num(sec, "R", 6 * K if K > 0 else 1.0)
    C2 = _num(sec, "C2", DEFAULT_C2)
    floor = _num(sec, "floor", 1e-6)
    _, _, rec, lu, _ = simulate_coupled(cfg, u0, v0)
    verdict = coupling.contraction_check(rec, lu, C2, R, floor)
    bound = coupling.coupled_bound_curve(rec.delta0_sq, rec.lam, K, R, rec.u0_h1_sq, rec.t, C2)
    write_columns(os.path.join(out, "coupling.csv"), {"t": rec.t, "delta_sq": rec.delta_sq, "bound": bound})
    man.outputs.append("coupling.csv")
    man.verdicts["couple"] = {
        "status": verdict.status,
        "reason": verdict.reason,
        "first_violation_t": verdict.first_violation_t,
        "final_ratio": verdict.final_ratio,
        "event_ER": bool(coupling.event_ER(lu, R)),
        "R": R,
        "C2": C2,
    }
    return EXIT_OK if verdict.passed else EXIT_BOUND


def cmd_tails(run, out, args, man):
    cfg = run.solver
    sec = run.section("tails")
    K = cfg.sigma.K
    replicas = _num(sec, "replicas", 2000, int)
    T = _num(sec, "T", cfg.t_final)
    try:
        cells = [(float(g), float(r)) for g, r in sec.get("cells", [])]
    except (TypeError, ValueError):
        raise ConfigError("'tails.cells' entries must be [gamma, R] pairs", "tails.cells") from None
    R_E = _num(sec, "R_over_K", 6.0) * K if K > 0 else _num(sec, "R", 1.0)
    eps_num = _num(sec, "eps_num", 0.0)
    e_replicas = min(_num(sec, "e_replicas", replicas, int), replicas)
    if replicas < 100 and K > 0:
        raise ConfigError(f"'tails.replicas' must be at least 100, got {replicas}", "tails.replicas")
    sample = coupling.tail_ensemble(cfg, replicas, T, sorted({g for g, _ in cells}), threads=args.threads)
    report = coupling.TailReport([])
    if cells and K > 0:
        report += coupling.exp_martingale_tail(cfg, cells, replicas, T, sample=sample)
    elif cells:
        # sigma = 0: M vanishes identically, so every cell has zero exceedances
        report += coupling.exp_martingale_tail(cfg, cells, max(replicas, 100), T, sample=sample)
    for f in ("E0", "E1"):
        report += coupling.tail_probability_E(cfg, f, R_E, e_replicas, T, sample=sample, eps_num=eps_num)
    report += coupling.probability_ER(sample.head(e_replicas), R_E)
    write_csv(os.path.join(out, "tails.csv"), report.columns, report.table())
    man.outputs.append("tails.csv")
    man.verdicts["tails"] = {"passed": report.passed, "cells": len(report.rows), "excluded": sample.excluded}
    return EXIT_OK if report.passed else EXIT_BOUND


def cmd_ergodic(run, out, args, man):
    cfg = run.solver
    sec = run.section("ergodic")
    u0 = cfg.initial_field()
    v0 = _second_field(run, sec)
    horizon = _num(sec, "horizon", 200.0)
    burn_in = _num(sec, "burn_in", 0.25 * horizon)
    stride = _num(sec, "stride", 1.0)
    tol = _num(sec, "tol", ergodic.GAP_TOL)
    obs = ergodic.canonical_observables(cfg.grid, _num(sec, "witness_seed", 20240601, int))
    if sec.get("swap", False):
        u0, v0 = v0, u0
        streams = (1, 0)
    else:
        streams = (0, 1)
    report = ergodic.uniqueness_gap(cfg, u0, v0, obs, horizon, burn_in, stride, streams=streams, tol=tol)
    write_csv(os.path.join(out, "ergodic.csv"), report.columns, report.table())
    man.outputs.append("ergodic.csv")
    verdict = {"passed": report.passed, "n": report.n, "burn_in": burn_in, "horizon": horizon}
    if sec.get("coupling_series", True):
        every = int(round(stride / cfg.dt))
        pair_cfg = replace(cfg, t_final=horizon, output_every=every)
        tu, tv, rec, _, _ = simulate_coupled(pair_cfg, u0, v0, keep_fields=True)
        series = ergodic.coupling_limit_series(tu.t, tu.fields, tv.fields, obs, stride)
        cols, rows = series.table()
        write_csv(os.path.join(out, "coupling_series.csv"), cols, rows)
        man.outputs.append("coupling_series.csv")
        verdict["cesaro_bound_holds"] = series.bound_holds
    man.verdicts["ergodic"] = verdict
    ok = report.passed and verdict.get("cesaro_bound_holds", True)
    return EXIT_OK if ok else EXIT_BOUND


def cmd_gn_check(run, out, args, man):
    cfg = run.solver
    sec = run.section("gn")
    pairs = _num(sec, "pairs", 1000, int)
    lhs, rhs = gn_sweep(cfg.grid, pairs, cfg.seed, _num(sec, "spectrum_exponent", 2.0))
    ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    write_columns(os.path.join(out, "gn.csv"), {"sample_id": np.arange(pairs), "lhs": lhs, "rhs_unit": rhs, "ratio": ratio})
    man.outputs.append("gn.csv")
    man.verdicts["gn-check"] = {"max_ratio": float(ratio.max()), "argmax": int(ratio.argmax()), "pairs": pairs}
    return EXIT_OK


def cmd_calibrate(run, out, args, man):
    cfg = run.solver
    sec = run.section("calibrate")
    runs = coupling.coupled_ensemble(
        cfg,
        [float(x) for x in _list(sec, "lambdas", [0.25, 1.0, 5.0])],
        [float(x) for x in _list(sec, "Ks", [0.04, 0.2])],
        [float(x) for x in _list(sec, "h1_norms", [1.0, 4.0, 16.0])],
        _num(sec, "runs_per_cell", 1, int),
        _num(sec, "T", 2.0),
        kinds=tuple(_list(sec, "kinds", list(coupling.PERTURBATIONS))),
        delta_h1=_num(sec, "delta_h1", 0.1),
        threads=args.threads,
    )
    if len(runs) < 30:
        raise ConfigError(f"calibration needs at least 30 coupled runs, the plan gives {len(runs)}", "calibrate")
    cal = coupling.calibrate_constants(runs, _num(sec, "R", 0.24))
    write_csv(os.path.join(out, "calibration.csv"), cal.columns, cal.rows)
    man.outputs.append("calibration.csv")
    man.verdicts["calibrate"] = {
        "C0": cal.C0,
        "C0_run": cal.C0_run,
        "C2": cal.C2,
        "C2_run": cal.C2_run,
        "runs": cal.runs,
        "runs_in_ER": cal.runs_in_ER,
    }
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "tails": cmd_tails,
    "ergodic": cmd_ergodic,
    "gn-check": cmd_gn_check,
    "calibrate": cmd_calibrate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="anisons", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML run config")
        s.add_argument("--seed", type=int, default=None, help="override the master seed (unsigned 64-bit)")
        s.add_argument("--out", default=None, help="output directory (default: output.dir, then $ANISONS_OUT, then .)")
        s.add_argument("--threads", type=int, default=1, help="cap on parallel replica workers")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}", "seed")
            run.solver = replace(run.solver, seed=args.seed)
        out = args.out or run.output_dir or os.environ.get("ANISONS_OUT") or "."
        os.makedirs(out, exist_ok=True)
        snapshot = dict(run.raw, seed=run.solver.seed)
        man = RunManifest(args.command, snapshot, run.solver.seed, backend=backend_name())
        code = COMMANDS[args.command](run, out, args, man)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        man.verdicts[args.command] = "blow-up"
        man.exit_code = EXIT_BLOWUP
        man.write(out)
        return EXIT_BLOWUP
    man.exit_code = code
    man.write(out)
    print(f"{args.command}: exit {code}, outputs in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
