"""Command line entry point: ``dispersal run|step|norms|graphs|check``.

Exit status 0 means success, 2 a partial trajectory, 1 a configuration or
usage error.  ``--out`` wins over the ``DISPERSAL_OUT`` environment variable,
which wins over ``./out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    FLOAT_FORMAT,
    field_from_config,
    load_document,
    nodal_columns,
    scenario_from_config,
    step_problem_from_config,
    write_csv,
)
from .elliptic import hminus1_norm
from .energy_laws import DomainError, law_from_config
from .evolution import apriori_bound, region_classify, run, run_weighted

OUT_ENV = "DISPERSAL_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args):
    if not args.config:
        raise DomainError("config: --config is required for this command")
    return load_document(args.config)


def _fmt(v) -> float | None:
    v = float(v)
    return v if np.isfinite(v) else None


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- run ---------------------------------------------------------------------------

def write_snapshot(path, mesh, rho, eta, threshold=1e-6):
    cols = nodal_columns(mesh)
    cols.update(rho1=rho[0], rho2=rho[1], eta1=eta[0], eta2=eta[1], region_label=region_classify(rho, threshold))
    write_csv(path, cols)


def cmd_run(args) -> int:
    doc, base = _config(args)
    scenario, config = scenario_from_config(doc, base)
    out = _out_dir(args)
    traj = run_weighted(scenario, config) if scenario.alpha is not None else run(scenario, config)
    reps = traj.reports
    write_csv(out / "monitors.csv", {
        "t": [0.0] + [r.time for r in reps],
        "mass1": [traj.initial_mass[0]] + [r.mass[0] for r in reps],
        "mass2": [traj.initial_mass[1]] + [r.mass[1] for r in reps],
        "energy": [traj.initial_energy] + [r.energy for r in reps],
        "dissipation": [0.0] + [r.dissipation for r in reps],
        "slack": [0.0] + [r.slack for r in reps],
        "gap": [0.0] + [r.gap for r in reps],
        "kkt_max": [0.0] + [r.kkt_max for r in reps],
    })
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    for old in snaps.glob("snap_*.csv"):
        old.unlink()
    for step, rho, eta in zip(traj.steps, traj.rho, traj.eta):
        write_snapshot(snaps / f"snap_{step}.csv", scenario.mesh, rho, eta)
    last = reps[-1] if reps else None
    report = {
        "converged": traj.converged,
        "message": traj.message,
        "steps": len(reps),
        "final_time": last.time if last else 0.0,
        "final_energy": _fmt(last.energy if last else traj.initial_energy),
        "final_mass": list(last.mass if last else traj.initial_mass),
        "worst_slack": _fmt(max((r.slack for r in reps), default=0.0)),
        "worst_gap": _fmt(max((r.gap for r in reps), default=0.0)),
        "worst_kkt": _fmt(max((r.kkt_max for r in reps), default=0.0)),
        "apriori_max": _fmt(max((r.apriori for r in reps), default=0.0)),
        "apriori_bound": _fmt(apriori_bound(scenario)),
    }
    _write_json(out / "report.json", report)
    print(f"{len(reps)} steps, final energy {FLOAT_FORMAT % report['final_energy'] if report['final_energy'] is not None else 'inf'}, "
          f"worst slack {report['worst_slack']:.3e}, worst gap {report['worst_gap']:.3e}")
    if not traj.converged:
        print(f"partial trajectory: {traj.message}", file=sys.stderr)
        return 2
    return 0


# -- step --------------------------------------------------------------------------

def cmd_step(args) -> int:
    from .prox_step import solve_step

    doc, base = _config(args)
    problem, config = step_problem_from_config(doc, base)
    out = _out_dir(args)
    sol = solve_step(problem, config)
    cols = nodal_columns(problem.mesh)
    cols.update(rho1=sol.rho[0], rho2=sol.rho[1], eta1=sol.eta[0], eta2=sol.eta[1], eta_max=sol.eta_max)
    write_csv(out / "step_solution.csv", cols)
    flux = {f"flux{k + 1}_{'xy'[j]}": sol.flux[k, :, j] for k in range(2) for j in range(problem.mesh.dim)}
    write_csv(out / "step_flux.csv", flux)
    kkt = sol.kkt
    _write_json(out / "step_report.json", {
        "gap": _fmt(sol.gap), "relative_gap": _fmt(sol.relative_gap), "iterations": sol.iterations,
        "converged": sol.converged, "kkt": kkt.as_dict(),
    })
    print(f"gap={sol.gap:.3e} relative_gap={sol.relative_gap:.3e} negativity={max(kkt.negativity):.3e} "
          f"fenchel={kkt.fenchel:.3e} complementarity={max(kkt.complementarity):.3e} "
          f"iterations={sol.iterations} converged={sol.converged}")
    return 0 if sol.converged else 2


# -- norms -------------------------------------------------------------------------

def cmd_norms(args) -> int:
    doc, base = _config(args)
    mesh, partition, sigma, (f0, fbar) = field_from_config(doc, base)
    norms = [hminus1_norm(mesh, partition[k], sigma[k], (f0[k], fbar[k])) for k in range(2)]
    for k, v in enumerate(norms):
        print(f"species {k + 1}: {FLOAT_FORMAT % v}")
    if args.out or os.environ.get(OUT_ENV):
        _write_json(_out_dir(args) / "norms.json", {"norms": norms})
    return 0


# -- graphs ------------------------------------------------------------------------

def cmd_graphs(args) -> int:
    doc = {}
    if args.config:
        doc, _ = load_document(args.config)
    try:
        law = law_from_config(doc.get("law", {"family": "quadratic"}))
    except (DomainError, TypeError, ValueError) as exc:
        raise DomainError(f"law: {exc}") from exc
    spec = doc.get("graphs", {})
    try:
        r = np.linspace(float(spec.get("r_min", 0.0)), float(spec.get("r_max", 3.0)), int(spec.get("points", 31)))
        q = np.linspace(float(spec.get("q_min", -3.0)), float(spec.get("q_max", 3.0)), r.size)
        s = float(spec.get("prox_step", 1.0))
    except (TypeError, ValueError) as exc:
        raise DomainError(f"graphs: {exc}") from exc
    if s <= 0:
        raise DomainError("graphs.prox_step: must be positive")
    inside = r <= law.domain_sup()
    lo = np.full(r.size, np.nan)
    hi = np.full(r.size, np.nan)
    if np.any(inside):
        lo[inside], hi[inside] = law.subdiff(r[inside])
    out = _out_dir(args)
    write_csv(out / "graphs.csv", {
        "r": r, "beta": law.beta(r), "subdiff_lo": lo, "subdiff_hi": hi,
        "q": q, "beta_star": law.conjugate(q), "prox_conjugate": law.prox_conjugate(s, q),
    })
    print(f"wrote {out / 'graphs.csv'} ({r.size} rows)")
    return 0


# -- check -------------------------------------------------------------------------

def cmd_check(args) -> int:
    from .checks import run_suite

    seed = args.seed
    if args.config:
        doc, _ = load_document(args.config)
        seed = int(doc.get("seed", seed)) if args.seed_default else seed
    results = run_suite(seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"run": cmd_run, "step": cmd_step, "norms": cmd_norms, "graphs": cmd_graphs, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dispersal", description="Two-species dispersal solver and diagnostics.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized checks (default 42)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_default = args.seed is None
    if args.seed is None:
        args.seed = 42
    try:
        return COMMANDS[args.command](args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
