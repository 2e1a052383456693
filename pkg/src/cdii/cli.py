"""Command-line pipeline: simulate, reconstruct, calibrate, report.

Subcommands
-----------
forward      solve the forward problem for the configured phantom; writes
             u.csv (nodal potential), U.csv (electrode voltages), J.csv
             (per-triangle current density), a.csv (its magnitude)
simulate     writes sigma_true.csv, a.csv (noise applied), trace.csv
reconstruct  reads a.csv; writes sigma_v.csv, v.csv, V.csv, convergence.csv
calibrate    reads sigma_v.csv, v.csv, V.csv, trace.csv; writes phi.csv
             and sigma_final.csv
pipeline     all of the above in one process, plus metrics.csv
metrics      compare two per-triangle fields, write metrics.csv

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 reconstruction hit the iteration cap (files are still written).

File formats
------------
Field files carry a "# quantity,unit,entity" header then id,value rows
with 17 significant digits.  trace.csv rows are node_id,value; a measured
trace may instead carry the coordinate along the curve in its first column
(a file of bare integers is keyed by node id; any decimal point or
exponent switches the whole file to coordinates).  phi.csv is a
two-column s,t table of the calibration map.
convergence.csv columns: iteration,objective,max_grad_diff,wall_time_ms
(wall time is the one machine-dependent output).  metrics.csv rows:
relative_l2, absolute_l2, max_error, iterations, converged.  Mesh debug
dumps use a node table id,x,y and a triangle table id,v0,v1,v2
(``csvio.write_mesh_csv``).

The environment variable CDII_THREADS caps BLAS worker threads when set
before the package is imported (0 or unset keeps the library default).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .calibration import (
    BoundaryVoltageTrace,
    apply_calibration,
    build_monotone_map,
    collect_pairs,
)
from .config import ConfigError, PipelineConfig, load_config
from .csvio import (
    read_convergence,
    read_field,
    read_trace,
    write_convergence,
    write_field,
    write_metrics,
    write_phi,
    write_trace,
)
from .fem_cem import (
    ConductivityField,
    CurrentPattern,
    ForwardSolution,
    SolverError,
    interior_current,
    solve_forward,
)
from .mesh import ALIGN_TOL, Mesh, build_uniform_mesh, locate_electrodes, triangle_gradients
from .phantom import add_noise, gaussian_phantom, simulate_data
from .weighted_gradient import (
    InteriorData,
    ReconstructionConfig,
    ReconstructionResult,
    reconstruct,
)

log = logging.getLogger("cdii")

#: Coordinate tokens in a measured trace must match a node this closely.
TRACE_COORD_TOL = 1e-9


def _build_problem(cfg: PipelineConfig):
    mesh = build_uniform_mesh(cfg.side_nodes)
    h = mesh.h
    taken: list[tuple[str, int, int, int]] = []
    for k, es in enumerate(cfg.electrodes):
        i_lo, i_hi = round(es.lo / h), round(es.hi / h)
        if abs(es.lo - i_lo * h) > ALIGN_TOL or abs(es.hi - i_hi * h) > ALIGN_TOL:
            raise ConfigError(
                f"electrodes[{k}].interval",
                f"endpoints ({es.lo}, {es.hi}) do not align with the grid "
                f"of spacing {h:.6g}",
            )
        for side, j, a, b in taken:
            if side == es.side and a < i_hi and i_lo < b:
                raise ConfigError(
                    f"electrodes[{k}].interval",
                    f"overlaps electrodes[{j}] on side {side!r}",
                )
        taken.append((es.side, k, i_lo, i_hi))
    setup = locate_electrodes(
        mesh,
        [(es.side, (es.lo, es.hi)) for es in cfg.electrodes],
        [es.z for es in cfg.electrodes],
    )
    currents = CurrentPattern(np.asarray(cfg.currents))
    return mesh, setup, currents


def _check_gamma(cfg: PipelineConfig, mesh: Mesh, setup) -> None:
    gamma_edges = set(int(i) for i in mesh.edges_on_side(cfg.gamma_side))
    for k, e in enumerate(setup.electrodes):
        if gamma_edges & set(int(i) for i in e.edge_ids):
            raise ConfigError(
                "gamma.side",
                f"measurement curve overlaps electrodes[{k}]; it must join "
                "the electrodes without covering them",
            )


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _phantom(cfg: PipelineConfig, mesh: Mesh) -> ConductivityField:
    return gaussian_phantom(mesh, cfg.phantom_center, cfg.phantom_amplitude,
                            cfg.phantom_width)


def _metric_rows(reference: np.ndarray, candidate: np.ndarray) -> list[tuple[str, float]]:
    # Uniform mesh: every triangle carries area 1/n_tri of the unit square.
    area = 1.0 / len(reference)
    diff = candidate - reference
    abs_l2 = float(np.sqrt(np.sum(diff ** 2) * area))
    ref_l2 = float(np.sqrt(np.sum(reference ** 2) * area))
    rel_l2 = abs_l2 / ref_l2 if ref_l2 > 0.0 else float("inf")
    return [
        ("relative_l2", rel_l2),
        ("absolute_l2", abs_l2),
        ("max_error", float(np.max(np.abs(diff)))),
    ]


def cmd_forward(cfg: PipelineConfig) -> int:
    mesh, setup, currents = _build_problem(cfg)
    sigma = _phantom(cfg, mesh)
    sol = solve_forward(mesh, sigma, setup, currents, cfg.solver_tol)
    J, a = interior_current(mesh, sigma, sol)
    out = _out_dir(cfg)
    write_field(out / "u.csv", "u", "V", "node", sol.u)
    write_field(out / "U.csv", "U", "V", "electrode", sol.U)
    write_field(out / "J.csv", "J", "A/m^2", "triangle", J)
    write_field(out / "a.csv", "a", "A/m^2", "triangle", a)
    log.info("forward solve done: %d nodes, %d electrodes -> %s",
             mesh.node_count, setup.count, out)
    return 0


def _simulate(cfg: PipelineConfig, mesh: Mesh, setup, currents):
    sigma_true = _phantom(cfg, mesh)
    data, trace, sol = simulate_data(mesh, sigma_true, setup, currents,
                                     cfg.solver_tol, cfg.gamma_side)
    data = add_noise(data, cfg.noise_level, cfg.noise_seed)
    del sol  # generating solution stays out of the reconstruction path
    return sigma_true, data, trace


def cmd_simulate(cfg: PipelineConfig) -> int:
    mesh, setup, currents = _build_problem(cfg)
    _check_gamma(cfg, mesh, setup)
    sigma_true, data, trace = _simulate(cfg, mesh, setup, currents)
    out = _out_dir(cfg)
    write_field(out / "sigma_true.csv", "sigma", "S/m", "triangle", sigma_true.values)
    write_field(out / "a.csv", "a", "A/m^2", "triangle", data.values)
    write_trace(out / "trace.csv", trace.node_ids, trace.values)
    log.info("simulated data: essinf a = %.3e -> %s", data.essinf, out)
    return 0


def _write_reconstruction(out: Path, result: ReconstructionResult) -> None:
    write_field(out / "sigma_v.csv", "sigma", "S/m", "triangle", result.sigma_v.values)
    write_field(out / "v.csv", "v", "V", "node", result.solution.u)
    write_field(out / "V.csv", "V", "V", "electrode", result.solution.U)
    write_convergence(out / "convergence.csv", result.log)


def _reconstruct(cfg: PipelineConfig, mesh: Mesh, setup, currents,
                 data: InteriorData) -> ReconstructionResult:
    rc = ReconstructionConfig(epsilon=cfg.epsilon, delta=cfg.delta,
                              max_iter=cfg.max_iter, solver_tol=cfg.solver_tol)
    result = reconstruct(mesh, data, setup, currents, rc)
    if result.converged:
        log.info("reconstruction converged in %d iterations", result.iterations)
    else:
        log.warning("reconstruction hit the iteration cap (%d)", cfg.max_iter)
    return result


def cmd_reconstruct(cfg: PipelineConfig) -> int:
    mesh, setup, currents = _build_problem(cfg)
    out = _out_dir(cfg)
    a_path = out / "a.csv"
    if not a_path.exists():
        raise ConfigError("output.dir", f"{a_path} not found; run simulate first")
    _, _, a_values = read_field(a_path)
    if len(a_values) != mesh.triangle_count:
        raise ConfigError("output.dir",
                          f"{a_path} holds {len(a_values)} triangles, the mesh has "
                          f"{mesh.triangle_count}")
    result = _reconstruct(cfg, mesh, setup, currents, InteriorData(a_values))
    _write_reconstruction(out, result)
    return 0 if result.converged else 4


def _trace_from_rows(mesh: Mesh, gamma_side: str,
                     rows: list[tuple[str, float]]) -> BoundaryVoltageTrace:
    # The first column keys the whole file: bare integers throughout mean
    # node ids; any decimal point or exponent switches to coordinates along
    # the measurement side.
    keyed_by_id = all(not any(c in token for c in ".eE") for token, _ in rows)
    values = np.array([value for _, value in rows])
    if keyed_by_id:
        ids = np.array([int(token) for token, _ in rows])
        return BoundaryVoltageTrace(node_ids=ids, values=values)

    side_ids = mesh.nodes_on_side(gamma_side)
    axis = 0 if gamma_side in ("bottom", "top") else 1
    coords = mesh.nodes[side_ids, axis]
    ids = []
    for token, _ in rows:
        pos = float(token)
        j = int(np.argmin(np.abs(coords - pos)))
        if abs(coords[j] - pos) > TRACE_COORD_TOL:
            raise ConfigError(
                "trace", f"coordinate {pos} matches no node on side "
                         f"{gamma_side!r}")
        ids.append(int(side_ids[j]))
    return BoundaryVoltageTrace(node_ids=np.asarray(ids), values=values)


def _calibrate(cfg: PipelineConfig, mesh: Mesh, setup,
               result: ReconstructionResult, trace: BoundaryVoltageTrace,
               out: Path) -> ConductivityField:
    pairs = collect_pairs(mesh, setup, result, trace)
    phi = build_monotone_map(pairs)
    if phi.repaired:
        log.warning("calibration pairs violated monotonicity and were pooled")
    sigma_final = apply_calibration(mesh, result, phi)
    write_phi(out / "phi.csv", phi)
    write_field(out / "sigma_final.csv", "sigma", "S/m", "triangle",
                sigma_final.values)
    return sigma_final


def cmd_calibrate(cfg: PipelineConfig) -> int:
    mesh, setup, currents = _build_problem(cfg)
    _check_gamma(cfg, mesh, setup)
    out = _out_dir(cfg)
    for name in ("sigma_v.csv", "v.csv", "V.csv", "trace.csv"):
        if not (out / name).exists():
            raise ConfigError("output.dir", f"{out / name} not found; run the "
                              "earlier pipeline stages first")
    _, _, sigma_v = read_field(out / "sigma_v.csv")
    _, _, v = read_field(out / "v.csv")
    _, _, V = read_field(out / "V.csv")
    solution = ForwardSolution(u=v, U=V, grad_u=triangle_gradients(mesh, v))
    conv = read_convergence(out / "convergence.csv") if (out / "convergence.csv").exists() else []
    result = ReconstructionResult(
        sigma_v=ConductivityField(sigma_v),
        solution=solution,
        log=[],
        converged=True,
        iterations=conv[-1][0] if conv else 0,
    )
    trace = _trace_from_rows(mesh, cfg.gamma_side, read_trace(out / "trace.csv"))
    _calibrate(cfg, mesh, setup, result, trace, out)
    return 0


def cmd_pipeline(cfg: PipelineConfig) -> int:
    mesh, setup, currents = _build_problem(cfg)
    _check_gamma(cfg, mesh, setup)
    out = _out_dir(cfg)

    sigma_true, data, trace = _simulate(cfg, mesh, setup, currents)
    write_field(out / "sigma_true.csv", "sigma", "S/m", "triangle", sigma_true.values)
    write_field(out / "a.csv", "a", "A/m^2", "triangle", data.values)
    write_trace(out / "trace.csv", trace.node_ids, trace.values)

    result = _reconstruct(cfg, mesh, setup, currents, data)
    _write_reconstruction(out, result)

    sigma_final = _calibrate(cfg, mesh, setup, result, trace, out)

    rows = _metric_rows(sigma_true.values, sigma_final.values)
    rows.append(("iterations", result.iterations))
    rows.append(("converged", int(result.converged)))
    write_metrics(out / "metrics.csv", rows)
    log.info("pipeline done: relative_l2 = %.3e -> %s", rows[0][1], out)
    return 0 if result.converged else 4


def cmd_metrics(reference: str, candidate: str, out_dir: str) -> int:
    _, _, ref = read_field(reference)
    _, _, cand = read_field(candidate)
    if ref.shape != cand.shape or ref.ndim != 1:
        raise ConfigError("metrics",
                          f"field shapes differ: {ref.shape} vs {cand.shape}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", _metric_rows(ref, cand))
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdii", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_command(name, help_text):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", required=True, help="path to key=value config")
        q.add_argument("--out", help="override output.dir")
        q.add_argument("--seed", type=int, help="override noise.seed")
        q.add_argument("--quiet", action="store_true", help="suppress progress output")
        return q

    add_config_command("forward", "solve the forward problem and export fields")
    add_config_command("simulate", "generate interior data and a boundary trace")
    add_config_command("reconstruct", "run the iterative reconstruction on a.csv")
    add_config_command("calibrate", "build the calibration map and rescale")
    add_config_command("pipeline", "simulate, reconstruct, calibrate, report")

    q = sub.add_parser("metrics", help="compare two per-triangle fields")
    q.add_argument("reference", help="reference field CSV")
    q.add_argument("candidate", help="candidate field CSV")
    q.add_argument("--out", default="out", help="directory for metrics.csv")
    q.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


_COMMANDS = {
    "forward": cmd_forward,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "calibrate": cmd_calibrate,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO)
    try:
        if args.command == "metrics":
            return cmd_metrics(args.reference, args.candidate, args.out)
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=args.out)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, noise_seed=args.seed)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
