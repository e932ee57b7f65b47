"""Command-line front end: ``svcip run | convergence | robustness | mesh-info``.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (CSV_HEADER, ConvergenceReport, ReportRow, divergence_norm, l2_error,
                       max_time_error)
from .assembly import build_discretization
from .config import SCHEMES, RunConfig
from .mesh import barycentric_refine, build_face_topology, build_unit_square_mesh, write_vtk
from .mms import ManufacturedSolution
from .timeloop import SolverError, Trajectory, run_transient

log = logging.getLogger("svcip")

ROBUSTNESS_TOL = 1e-8

# flag name -> RunConfig field
_FIELDS = {
    "scheme": "scheme", "k": "k", "N": "N", "nu": "nu", "T": "T",
    "delta1": "delta1", "delta2": "delta2", "delta3": "delta3", "u_floor": "u_floor",
    "gamma_gd": "gamma_gd", "dt": "dt", "theta": "theta", "global_h": "global_h",
    "load_degree": "load_degree", "N_list": "N_list",
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_config_flags(p: argparse.ArgumentParser, n_list: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--k", type=int)
    if n_list:
        p.add_argument("--N-list", dest="N_list", type=_int_list)
    else:
        p.add_argument("--N", type=int)
    p.add_argument("--nu", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--delta1", type=float)
    p.add_argument("--delta2", type=float)
    p.add_argument("--delta3", type=float)
    p.add_argument("--u-floor", dest="u_floor", type=float)
    p.add_argument("--gamma-gd", dest="gamma_gd", type=float)
    p.add_argument("--dt", type=float, help="fixed step dividing 0.1 (default: automatic)")
    p.add_argument("--theta", type=float, help="factor of the automatic step policy")
    p.add_argument("--global-h", dest="global_h", action="store_true", default=None,
                   help="weight face terms with the global mesh size")
    p.add_argument("--load-degree", dest="load_degree", type=int)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--tag", default=None, help="basename for the output files")
    p.add_argument("--vtk", action="store_true", help="write legacy-VTK snapshots of every sample")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcip",
        description="Scott-Vogelius Navier-Stokes solver with interior-penalty stabilization")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="single mesh run, one CSV row")
    _add_config_flags(run)

    conv = sub.add_parser("convergence", help="run a list of meshes and fit the rate")
    _add_config_flags(conv, n_list=True)

    rob = sub.add_parser("robustness", help="gradient-forcing invariance check")
    _add_config_flags(rob)
    rob.add_argument("--amplitude", type=float, default=10.0)

    info = sub.add_parser("mesh-info", help="mesh and space sizes")
    info.add_argument("--N", type=int, default=6)
    info.add_argument("--k", type=int, default=2)
    info.add_argument("--vtk", type=Path, default=None, help="write the refined mesh here")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
    for flag, name in _FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    try:
        return RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def _write_echo(path: Path, config: RunConfig, extra: dict | None = None) -> None:
    payload = {"config": config.to_dict()}
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def evaluate_run(traj: Trajectory) -> ReportRow:
    disc = traj.disc
    exact = ManufacturedSolution()
    final = traj.states[-1]
    div = max(divergence_norm(disc, s.u) for s in traj.states)
    return ReportRow(traj.config.N, disc.h, max_time_error(disc, traj.states, exact),
                     l2_error(disc, final.p, exact, final.t, "pressure"), div)


def write_vtk_series(traj: Trajectory, out: Path, tag: str) -> list[Path]:
    disc = traj.disc
    mesh = disc.mesh
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    paths = []
    for i, state in enumerate(traj.states):
        vals = disc.velocity.element.tabulate(ref, 0)[0]  # (3, nb)
        local = state.u.reshape(2, -1)[:, disc.velocity.cell_dofs]
        at_vertices = np.einsum("kcn,vn->cvk", local, vals)
        vel = np.zeros((mesh.n_vertices, 2))
        vel[mesh.cells.ravel()] = at_vertices.reshape(-1, 2)
        pmean = disc.pressure_at_cells(state.p) @ disc.cell_rule.weights / disc.cell_rule.weights.sum()
        path = out / f"{tag}_{i:04d}.vtk"
        write_vtk(path, mesh, {"velocity": vel}, {"pressure": pmean}, title=f"t={state.t:.6g}")
        paths.append(path)
    return paths


def cmd_run(config: RunConfig, out: Path, tag: str | None = None, vtk: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    tag = tag or f"{config.scheme}_N{config.N}"
    traj = run_transient(config)
    row = evaluate_run(traj)
    report = ConvergenceReport(config.scheme, [row])
    report.write_csv(out / f"{tag}.csv")
    _write_echo(out / f"{tag}.json", config, {"dt": traj.dt})
    if vtk:
        write_vtk_series(traj, out, tag)
    return report


def cmd_convergence(config: RunConfig, out: Path, tag: str | None = None, vtk: bool = False):
    if len(config.N_list) < 3:
        raise UsageError("convergence needs at least three mesh sizes")
    out.mkdir(parents=True, exist_ok=True)
    tag = tag or f"{config.scheme}_convergence"
    report = ConvergenceReport(config.scheme)
    steps = {}
    for N in sorted(config.N_list):
        cfg = config.replace(N=N)
        try:
            traj = run_transient(cfg)
        except SolverError as exc:
            raise SolverError(f"N={N}: {exc}") from exc
        report.add(evaluate_run(traj))
        steps[str(N)] = traj.dt
        log.info("N=%d err_u=%.4e", N, report.rows[-1].err_u)
        if vtk:
            write_vtk_series(traj, out, f"{tag}_N{N}")
    report.write_csv(out / f"{tag}.csv")
    _write_echo(out / f"{tag}.json", config,
                {"dt": steps, "slope": report.slope, "pressure_slope": report.pressure_slope})
    return report


def velocity_change(base: Trajectory, other: Trajectory) -> float:
    """Largest relative change of the velocity coefficients over all samples."""
    worst = 0.0
    for a, b in zip(base.states, other.states):
        scale = max(np.abs(a.u).max(), np.finfo(float).tiny)
        worst = max(worst, float(np.abs(a.u - b.u).max() / scale))
    return worst


def cmd_robustness(config: RunConfig, amplitude: float, out: Path | None = None,
                   tag: str | None = None) -> dict:
    if not config.divergence_free:
        log.warning("%s is not divergence free; the invariance is expected to fail",
                    config.scheme)
    base = run_transient(config.replace(perturbation=0.0))
    pert = run_transient(config.replace(perturbation=amplitude), disc=base.disc)
    change = velocity_change(base, pert)
    p_change = max(float(np.abs(a.p - b.p).max()) for a, b in zip(base.states, pert.states))
    expected = config.divergence_free
    passed = change <= ROBUSTNESS_TOL
    result = {
        "scheme": config.scheme, "N": config.N, "amplitude": amplitude,
        "max_relative_velocity_change": change, "max_pressure_change": p_change,
        "tolerance": ROBUSTNESS_TOL, "passed": passed,
        "status": ("pass" if passed else "FAIL") if expected else
                  ("expected-fail" if not passed else "unexpected-pass"),
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        tag = tag or f"{config.scheme}_robustness"
        _write_echo(out / f"{tag}.json", config, {"result": result})
    return result


def cmd_mesh_info(N: int, k: int, vtk: Path | None = None) -> dict:
    coarse = build_unit_square_mesh(N)
    mesh = barycentric_refine(coarse)
    faces = build_face_topology(mesh)
    disc = build_discretization(N, k, "sv-plain")
    info = {
        "N": N, "k": k, "vertices": mesh.n_vertices, "cells": mesh.n_cells,
        "faces": faces.n_faces, "interior_faces": faces.interior_count, "h": mesh.h,
        "min_angle_deg": float(np.degrees(mesh.min_angle())),
        "velocity_dofs": disc.velocity.n_dofs, "pressure_dofs": disc.pressure.n_dofs,
    }
    if vtk is not None:
        write_vtk(vtk, mesh)
    return info


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh-info":
            if args.N < 1 or args.k < 2:
                raise UsageError("N must be >= 1 and k >= 2")
            print(json.dumps(cmd_mesh_info(args.N, args.k, args.vtk), indent=2))
            return 0
        config = config_from_args(args)
        if args.command == "run":
            report = cmd_run(config, args.out, args.tag, args.vtk)
        elif args.command == "convergence":
            report = cmd_convergence(config, args.out, args.tag, args.vtk)
        else:
            result = cmd_robustness(config, args.amplitude, args.out, args.tag)
            for key, value in result.items():
                print(f"{key}: {value}")
            return 0 if result["status"] in ("pass", "expected-fail") else 1
        print(",".join(CSV_HEADER))
        for row in report.csv_rows():
            print(",".join(str(v) for v in row))
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"svcip: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"svcip: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
