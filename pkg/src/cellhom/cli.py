"""Run orchestration and the ``cellhom`` command-line entry point.

Artifacts written into the configured output directory:

* ``CH.txt``        homogenized stiffness, 6x6 Mandel matrix, one row per
                    line, 17 significant digits (homogenize and verify tasks)
* ``report.json``   solver reports, verification residuals, wall time
* ``convergence.csv``  per-solve iteration history: label, iteration,
                    residual, gap (gap only where the solver produces one)

Exit codes: 0 converged and all checks passed, 1 I/O or configuration error,
2 solver did not converge, 3 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cell import Lattice, load_voxel_file
from .checks import (
    PROBE_STRAIN,
    duality_gap_displacement,
    duality_gap_strain,
    equivalence_matrix,
    hill_mandel_residual,
    voigt_reuss_margins,
)
from .config import RunConfig, load_config
from .energies import MacroLoad, complementary_energy
from .fem import is_equilibrated, sym_gradient
from .homogenize import dual_consistency, homogenize
from .solvers import (
    NotConverged,
    SolveParams,
    Stencil,
    StepTooLarge,
    solve_strain_driven,
    solve_strain_route,
    solve_stress_driven,
    solve_stress_uzawa,
)

#: verification thresholds applied by the runner, relative scales noted
HILL_MANDEL_FACTOR = 10.0      # x solver tolerance
ENERGY_CHECK_LIMIT = 1e-8      # x Frobenius norm of CH
BOUND_MARGIN_LIMIT = -1e-8     # x Frobenius norm of CH, eigenvalue floor
GAP_FACTOR = 10.0              # x solver tolerance, relative gap at optima
INVERSE_PAIR_LIMIT = 1e-8      # |CH DH - I|
ARROW_TOL = 1e-7               # equivalence-matrix residuals


def _report_of(label: str, rep) -> dict:
    out = {
        "label": label,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "final_residual": rep.residual_history[-1],
        "final_energy": rep.final_energy,
    }
    if rep.gap_history:
        out["final_gap"] = rep.gap_history[-1]
    return out


def _format_matrix(m: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n"


def _write_artifacts(outdir: Path, report: dict, rows: list, ch=None):
    if ch is not None:
        (outdir / "CH.txt").write_text(_format_matrix(ch), encoding="utf-8")
    (outdir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = ["label,iteration,residual,gap"]
    for label, rep in rows:
        gaps = rep.gap_history if rep.gap_history else [None] * len(rep.residual_history)
        for i, (res, gap) in enumerate(zip(rep.residual_history, gaps)):
            gtxt = "" if gap is None else f"{gap:.17g}"
            lines.append(f"{label},{i},{res:.17g},{gtxt}")
    (outdir / "convergence.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _probe_checks(cell, params, ch, solve_rows, checks):
    """Hill-Mandel and duality residuals at one probe solution pair."""
    a_probe = PROBE_STRAIN
    u, rep_u = solve_strain_driven(cell, a_probe, params)
    solve_rows.append(("probe_strain", rep_u))
    st = Stencil(cell, params.precond)
    sig_u = st.stress(sym_gradient(cell, u, st.tables))
    checks["hill_mandel"] = hill_mandel_residual(cell, u, sig_u)

    s_probe = ch @ a_probe
    w, rep_w = solve_stress_driven(cell, s_probe, params)
    solve_rows.append(("probe_stress", rep_w))
    sig_w = st.stress(sym_gradient(cell, w, st.tables))
    scale = abs(complementary_energy(cell, sig_w))
    e_route, rep_e = solve_strain_route(cell, MacroLoad.stress_driven(s_probe), params)
    solve_rows.append(("probe_strain_route", rep_e))
    checks["duality_gap_displacement"] = abs(
        duality_gap_displacement(cell, sig_w, w, s_probe, 10 * params.tol)) / scale
    checks["duality_gap_strain"] = abs(
        duality_gap_strain(cell, sig_w, e_route, s_probe, 10 * params.tol)) / scale


def run(config: RunConfig, threads: int = 1, quiet: bool = False) -> int:
    """Execute one configured task; returns the process exit code."""
    t0 = time.perf_counter()
    try:
        g = np.asarray(config.lattice, dtype=float).reshape(3, 3)
        lattice = Lattice(g[0], g[1], g[2])
        cell = load_voxel_file(config.voxel_path, lattice)
        outdir = Path(config.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError) as exc:
        print(f"cellhom: {exc}", file=sys.stderr)
        return 1

    params = SolveParams(tol=config.tol, max_iter=config.max_iter,
                         uzawa_step=config.uzawa_step, seed=config.seed)
    report: dict = {
        "task": config.task,
        "formulation": config.formulation,
        "voxel_path": str(config.voxel_path),
        "params": {"tol": config.tol, "max_iter": config.max_iter,
                   "uzawa_step": str(config.uzawa_step), "seed": config.seed,
                   "threads": threads},
        "solves": [],
        "checks": {},
    }
    solve_rows: list = []
    checks: dict = {}
    ch_matrix = None
    failures: list = []

    def check(name, value, ok):
        checks[name] = value
        if not ok:
            failures.append(name)

    try:
        if config.task in ("homogenize", "verify"):
            result = homogenize(cell, params, formulation=config.formulation
                                if config.task == "homogenize" else "displacement",
                                threads=threads)
            ch_matrix = result.CH
            for i, rep in enumerate(result.per_column_reports):
                solve_rows.append((f"column_{i + 1}", rep))
            report["CH"] = result.CH.tolist()
            report["DH"] = result.DH.tolist()
            ch_norm = float(np.linalg.norm(result.CH))
            check("energy_check_max", float(result.energy_check.max()),
                  result.energy_check.max() <= ENERGY_CHECK_LIMIT * ch_norm)
            upper, lower = voigt_reuss_margins(cell, result.CH)
            check("voigt_margin", upper, upper >= BOUND_MARGIN_LIMIT * ch_norm)
            check("reuss_margin", lower, lower >= BOUND_MARGIN_LIMIT * ch_norm)
            pair = float(np.linalg.norm(result.CH @ result.DH - np.eye(6)))
            check("inverse_pair", pair, pair <= INVERSE_PAIR_LIMIT)

            _probe_checks(cell, params, result.CH, solve_rows, checks)
            if checks["hill_mandel"] > HILL_MANDEL_FACTOR * params.tol:
                failures.append("hill_mandel")
            if checks["duality_gap_displacement"] > GAP_FACTOR * params.tol:
                failures.append("duality_gap_displacement")
            if checks["duality_gap_strain"] > GAP_FACTOR * params.tol:
                failures.append("duality_gap_strain")

            if config.task == "verify":
                consist = dual_consistency(cell, result, params, threads=threads)
                check("dual_consistency", consist, consist <= 1e-7)
                arrows = equivalence_matrix(cell, params, tol=ARROW_TOL)
                report["arrows"] = [
                    {"name": a.name, "residual": a.residual, "tol": a.tol,
                     "passed": a.passed} for a in arrows
                ]
                for a in arrows:
                    if not a.passed:
                        failures.append(f"arrow: {a.name}")

        else:  # task == "solve"
            st = Stencil(cell, params.precond)
            value = np.asarray(config.macro_value, dtype=float)
            if config.formulation == "stress-uzawa":
                sig, v, rep = solve_stress_uzawa(cell, value, params)
                solve_rows.append(("uzawa", rep))
                report["mean_strain"] = np.asarray(
                    np.mean(st.compliance_stress(sig), axis=(0, 1, 2, 3))).tolist()
                ok, dres, mres = is_equilibrated(cell, sig, value, 10 * params.tol)
                check("stress_admissibility", max(dres, mres), ok)
                checks["hill_mandel"] = hill_mandel_residual(cell, v, sig)
                gap = abs(duality_gap_displacement(cell, sig, v, value, 10 * params.tol))
                check("duality_gap_displacement",
                      gap / abs(complementary_energy(cell, sig)),
                      gap <= GAP_FACTOR * params.tol
                      * abs(complementary_energy(cell, sig)))
            elif config.formulation == "strain":
                load = (MacroLoad.strain_driven(value) if config.macro_kind == "strain"
                        else MacroLoad.stress_driven(value))
                e, rep = solve_strain_route(cell, load, params)
                solve_rows.append(("strain_route", rep))
                report["mean_field"] = np.asarray(
                    np.mean(e, axis=(0, 1, 2, 3))).tolist()
                checks["final_residual"] = rep.residual_history[-1]
            elif config.macro_kind == "strain":
                u, rep = solve_strain_driven(cell, value, params)
                solve_rows.append(("strain_driven", rep))
                sig = st.stress(sym_gradient(cell, u, st.tables))
                report["mean_stress"] = np.asarray(
                    np.mean(sig, axis=(0, 1, 2, 3))).tolist()
                hm = hill_mandel_residual(cell, u, sig)
                check("hill_mandel", hm, hm <= HILL_MANDEL_FACTOR * params.tol)
            else:
                w, rep = solve_stress_driven(cell, value, params)
                solve_rows.append(("stress_driven", rep))
                sig = st.stress(sym_gradient(cell, w, st.tables))
                report["mean_strain"] = np.asarray(
                    np.mean(sym_gradient(cell, w, st.tables), axis=(0, 1, 2, 3))).tolist()
                hm = hill_mandel_residual(cell, w, sig)
                check("hill_mandel", hm, hm <= HILL_MANDEL_FACTOR * params.tol)
                gap = abs(duality_gap_displacement(cell, sig, w, value, 10 * params.tol))
                scale = abs(complementary_energy(cell, sig))
                check("duality_gap_displacement", gap / scale,
                      gap <= GAP_FACTOR * params.tol * scale)

    except (NotConverged, StepTooLarge) as exc:
        report["error"] = str(exc)
        solve_rows.append(("failed", exc.report))
        report["solves"] = [_report_of(lbl, rep) for lbl, rep in solve_rows]
        report["checks"] = checks
        report["wall_time_s"] = time.perf_counter() - t0
        _write_artifacts(outdir, report, solve_rows, ch=ch_matrix)
        if not quiet:
            print(f"cellhom: not converged: {exc}", file=sys.stderr)
        return 2

    report["solves"] = [_report_of(lbl, rep) for lbl, rep in solve_rows]
    report["checks"] = checks
    report["checks_failed"] = failures
    report["wall_time_s"] = time.perf_counter() - t0
    _write_artifacts(outdir, report, solve_rows, ch=ch_matrix)
    if not quiet:
        wrote = "CH.txt, report.json, convergence.csv" if ch_matrix is not None \
            else "report.json, convergence.csv"
        print(f"cellhom: task {config.task} done, wrote {wrote} in {outdir}")
        if failures:
            print(f"cellhom: checks failed: {', '.join(failures)}", file=sys.stderr)
    return 3 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cellhom",
        description="Homogenize periodic voxel microstructures and verify the "
                    "equivalent solver formulations.")
    parser.add_argument("config", help="path to the key = value run configuration")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for independent column solves")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"cellhom: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"cellhom: config error: {exc}", file=sys.stderr)
        return 1
    if args.threads < 1:
        print("cellhom: --threads must be at least 1", file=sys.stderr)
        return 1
    return run(config, threads=args.threads, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
