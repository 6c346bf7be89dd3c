"""Verbs behind the command line: run, compare, steady, verify.

Each verb takes validated RunConfig objects, produces artifacts in an
output directory (a deterministic report.json, CSV fields, optionally the
full trajectory), prints one status line per check group, and returns a
process exit code: 0 when every non-advisory check passed, 1 otherwise.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import analysis, mesh, stepper
from ..obstacle import PreconditionError
from ..reporting import Report
from .config import DEFAULT_CHECK_TOLERANCES, RunConfig
from .serialization import (
    read_trajectory_csv,
    write_field_csv,
    write_report,
    write_trajectory_csv,
)

__all__ = ["execute", "compare_runs", "solve_steady", "verify_directory"]

# Certificate residuals are gated against what the step solver actually
# promised: its tolerance is relative to max(1, |b|_inf) of each step's
# linear data, so the gate carries that scale (plus headroom for the
# change of variables from the solver's unknowns to rate and slack).
CERTIFICATE_HEADROOM = 1e3


def _solver_scale(trajectory: stepper.Trajectory) -> float:
    """Largest max(1, |b|_inf) over the steps, recomputed from the states."""
    w = trajectory.grid.free_weights
    taus = trajectory.partition.taus
    scale = 1.0
    for k in range(1, trajectory.m + 1):
        b = w * (trajectory.forcing_means[k - 1]
                 + trajectory.states[k - 1] / taus[k - 1])
        scale = max(scale, float(np.abs(b).max(initial=0.0)))
    return scale


def certificate_report(trajectory: stepper.Trajectory, tol: float) -> Report:
    """Summarise the per-step certificates against the solver's guarantee."""
    scale = _solver_scale(trajectory)
    tolerance = CERTIFICATE_HEADROOM * tol * scale
    fields = (
        "monotonicity_violation",
        "slack_negativity",
        "orthogonality_residual",
        "equation_residual",
        "slack_cap_violation",
    )
    report = Report(title="per-step certificates")
    for name in fields:
        worst = max(
            (getattr(c, name) for c in trajectory.certificates), default=0.0)
        report.add(name, worst, tolerance, detail={"scale": scale})
    return report


def _analysis_reports(trajectory: stepper.Trajectory, config: RunConfig):
    """Run the enabled trajectory checks; returns a list of Reports."""
    tols = DEFAULT_CHECK_TOLERANCES
    reports = []
    if config.checks.get("complementarity"):
        reports.append(analysis.complementarity_report(
            trajectory, tol=tols["complementarity"]))
    if config.checks.get("dissipation"):
        reports.append(analysis.dissipation_report(
            trajectory, tol=tols["dissipation"]))
    if config.checks.get("laplacian_bound"):
        reports.append(analysis.laplacian_bound_report(
            trajectory, config.f_star, tol=tols["laplacian_bound"]))
    if config.checks.get("energy"):
        record = analysis.energy_report(
            trajectory, config.f_inf, tol=tols["energy"])
        report = Report(title="lyapunov energy decay")
        worst = float(max(0.0, -record.slack.min())) if record.slack.size else 0.0
        report.add("energy_decay_slack", worst, tols["energy"],
                   detail={"initial_lyapunov": float(record.lyapunov[0]),
                           "final_lyapunov": float(record.lyapunov[-1])})
        reports.append(report)
    if config.checks.get("asymptotic"):
        steady = analysis.solve_steady_state(
            trajectory.grid, trajectory.states[0], config.f_inf,
            tol=config.solver.tol, method=config.solver.method)
        reports.append(analysis.asymptotic_report(
            trajectory, steady, f_inf=config.f_inf,
            tol=tols["asymptotic"], domination_tol=tols["domination"]))
    return reports


def _print_report(report: Report) -> None:
    print(f"[{'PASS' if report.passed else 'FAIL'}] {report.title}")
    for check in report.checks:
        if not check.passed:
            label = "advisory" if check.advisory else "FAILED"
            print(f"    {label}: {check.name} = {check.value:.3e} "
                  f"(tolerance {check.tolerance:.3e})")
    for note in report.notes:
        print(f"    note: {note}")


def _print_warnings(config: RunConfig) -> None:
    for message in config.warnings:
        print(f"warning: {message}")


def _summary(reports) -> tuple[list, bool]:
    payload = [r.to_dict() for r in reports]
    ok = all(r.passed for r in reports)
    return payload, ok


def _write_config_echo(directory: Path, config: RunConfig) -> None:
    text = json.dumps(config.raw, sort_keys=True, indent=2)
    (directory / "config.json").write_text(text + "\n")


def _snapshot_indices(m: int, stride: int):
    if stride <= 0:
        return []
    ks = list(range(0, m + 1, stride))
    if ks[-1] != m:
        ks.append(m)
    return ks


def execute(config: RunConfig, out_dir=None) -> int:
    """Run the evolution described by `config` and certify it.

    Writes report.json, config.json, fields/final.csv (plus strided
    snapshots), and trajectory.csv unless disabled.  Returns 0 when every
    non-advisory check passed.
    """
    directory = Path(out_dir if out_dir is not None else config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    _print_warnings(config)

    trajectory = stepper.run(config.grid, config.u0, config.forcing,
                             config.partition, config.solver)

    reports = [certificate_report(trajectory, config.solver.tol)]
    reports.extend(_analysis_reports(trajectory, config))
    for report in reports:
        _print_report(report)
    check_payload, ok = _summary(reports)

    payload = {
        "kind": "run",
        "grid": {"dim": config.grid.dim, "n_free": config.grid.n_free},
        "partition": {"steps": config.partition.m,
                      "horizon": config.partition.horizon},
        "solver": {"method": config.solver.method, "tol": config.solver.tol},
        "warnings": list(config.warnings),
        "checks": check_payload,
        "pass": ok,
    }

    _write_config_echo(directory, config)
    write_report(directory / "report.json", payload)
    fields_dir = directory / "fields"
    fields_dir.mkdir(exist_ok=True)
    write_field_csv(fields_dir / "final.csv", config.grid, trajectory.states[-1])
    for k in _snapshot_indices(trajectory.m, config.output.snapshot_stride):
        write_field_csv(fields_dir / f"state_{k:06d}.csv", config.grid,
                        trajectory.states[k])
    if config.output.save_trajectory:
        write_trajectory_csv(directory / "trajectory.csv",
                             config.partition.knots, trajectory.states)
    print(f"report written to {directory / 'report.json'}")
    return 0 if ok else 1


def _require_same_layout(a: RunConfig, b: RunConfig) -> None:
    ga, gb = a.grid, b.grid
    if not (ga.dim == gb.dim and ga.extents == gb.extents
            and ga.counts == gb.counts and ga.boundary == gb.boundary):
        raise PreconditionError("the two runs use different grids")
    if not np.array_equal(a.partition.knots, b.partition.knots):
        raise PreconditionError("the two runs use different time partitions")


def _require_ordered_data(low: RunConfig, high: RunConfig) -> None:
    """Fail fast (before any solve) if the data is visibly unordered."""
    bad = np.flatnonzero(low.u0 > high.u0)
    if bad.size:
        i = int(bad[0])
        raise PreconditionError(
            f"initial order violated at node {i}: "
            f"{low.u0[i]!r} > {high.u0[i]!r}")
    grid = low.grid
    knots = low.partition.knots
    if (getattr(low.forcing, "time_independent", False)
            and getattr(high.forcing, "time_independent", False)):
        knots = knots[:1]
    for t in knots:
        fa = np.asarray(low.forcing(grid.free_x, grid.free_y, float(t)),
                        dtype=float)
        fb = np.asarray(high.forcing(grid.free_x, grid.free_y, float(t)),
                        dtype=float)
        gap = fa - fb
        if float(gap.max(initial=0.0)) > 0.0:
            i = int(np.argmax(gap))
            raise PreconditionError(
                f"forcing order violated at t = {float(t):.6g}, node {i}")


def compare_runs(low: RunConfig, high: RunConfig, out_dir) -> int:
    """Run two configurations with ordered data and check order preservation.

    `low` must start below `high` (u0 and forcing componentwise); both runs
    must share the grid and the time partition.  The factor-2 continuous
    dependence bound is checked alongside.
    """
    directory = Path(out_dir)
    _require_same_layout(low, high)
    _require_ordered_data(low, high)
    directory.mkdir(parents=True, exist_ok=True)
    _print_warnings(low)
    _print_warnings(high)

    t_low = stepper.run(low.grid, low.u0, low.forcing, low.partition, low.solver)
    t_high = stepper.run(high.grid, high.u0, high.forcing, high.partition,
                         high.solver)

    reports = [
        certificate_report(t_low, low.solver.tol),
        certificate_report(t_high, high.solver.tol),
        analysis.comparison_report(
            t_low, t_high, tol=DEFAULT_CHECK_TOLERANCES["comparison"]),
        analysis.continuous_dependence_report(t_low, t_high),
    ]
    for report in reports:
        _print_report(report)
    check_payload, ok = _summary(reports)

    payload = {
        "kind": "compare",
        "grid": {"dim": low.grid.dim, "n_free": low.grid.n_free},
        "partition": {"steps": low.partition.m,
                      "horizon": low.partition.horizon},
        "checks": check_payload,
        "pass": ok,
    }
    write_report(directory / "report.json", payload)
    write_field_csv(directory / "final_low.csv", low.grid, t_low.states[-1])
    write_field_csv(directory / "final_high.csv", high.grid, t_high.states[-1])
    print(f"report written to {directory / 'report.json'}")
    return 0 if ok else 1


def solve_steady(config: RunConfig, out_dir=None) -> int:
    """Solve the stationary problem for the configured f_inf above u0."""
    from .config import ConfigError

    if config.f_inf is None:
        raise ConfigError("steady: needs f_inf in the config")
    directory = Path(out_dir if out_dir is not None else config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    _print_warnings(config)

    steady = analysis.solve_steady_state(
        config.grid, config.u0, config.f_inf,
        tol=config.solver.tol, method=config.solver.method)
    report = Report(title="stationary obstacle problem")
    tolerance = config.solver.tol * steady.kkt.scale
    report.add("kkt_worst", steady.kkt.worst, tolerance,
               detail=steady.kkt.to_dict())
    laplacian = mesh.assemble_laplacian(config.grid)
    energy = mesh.dirichlet_energy(config.grid, laplacian, steady.z)
    _print_report(report)
    check_payload, ok = _summary([report])

    payload = {
        "kind": "steady",
        "grid": {"dim": config.grid.dim, "n_free": config.grid.n_free},
        "dirichlet_energy": float(energy),
        "checks": check_payload,
        "pass": ok,
    }
    _write_config_echo(directory, config)
    write_report(directory / "report.json", payload)
    write_field_csv(directory / "steady.csv", config.grid, steady.z)
    print(f"report written to {directory / 'report.json'}")
    return 0 if ok else 1


def verify_directory(directory) -> int:
    """Re-certify a finished run from its artifacts alone.

    Reads config.json and trajectory.csv from `directory`, recomputes the
    per-step forcing averages and certificates from the stored states, and
    re-runs the enabled checks.  Returns 0 when everything passes, 1 when a
    check fails or the artifacts are unreadable or inconsistent.
    """
    from .config import load_config

    directory = Path(directory)
    try:
        config = load_config(directory / "config.json")
        knots, states = read_trajectory_csv(
            directory / "trajectory.csv", config.grid)
    except (OSError, ValueError) as exc:
        print(f"verify: {exc}")
        return 1

    if not np.array_equal(knots, config.partition.knots):
        print("verify: trajectory knots do not match the configured partition")
        return 1

    structure = Report(title="stored trajectory structure")
    initial_gap = float(np.abs(states[0] - config.u0).max(initial=0.0))
    structure.add("initial_state_matches", initial_gap, 0.0)

    grid = config.grid
    laplacian = mesh.assemble_laplacian(grid)
    taus = np.diff(knots)
    means = []
    certificates = []
    neg_lap_prev = (laplacian @ states[0]) / grid.free_weights
    for k in range(1, len(states)):
        mean = stepper.average_forcing(
            config.forcing, float(knots[k - 1]), float(knots[k]), grid,
            config.solver.forcing_samples)
        certificate, neg_lap_prev = stepper.step_certificate(
            grid, laplacian, states[k - 1], states[k], mean, taus[k - 1],
            neg_lap_prev=neg_lap_prev)
        means.append(mean)
        certificates.append(certificate)
    trajectory = stepper.Trajectory(
        grid=grid,
        partition=config.partition,
        states=states,
        forcing_means=means,
        certificates=certificates,
    )

    reports = [structure, certificate_report(trajectory, config.solver.tol)]
    reports.extend(_analysis_reports(trajectory, config))
    for report in reports:
        _print_report(report)
    ok = all(r.passed for r in reports)
    print(f"verify: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1
