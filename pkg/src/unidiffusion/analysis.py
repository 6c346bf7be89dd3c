"""Run-level certification: estimates the discrete evolution must satisfy.

All routines take completed trajectories and recompute the quantities they
check from the stored states; nothing is trusted from the solvers.  Inner
products, norms and the Dirichlet energy are the weighted discrete ones
from the mesh module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mesh
from .mesh import CoercivityError, Grid
from .obstacle import (
    ObstacleProblem,
    KKTResiduals,
    PreconditionError,
    solve_pdas,
    solve_psor,
)
from .reporting import Report
from .stepper import Trajectory

__all__ = [
    "EnergyRecord",
    "SteadyState",
    "complementarity_report",
    "dissipation_report",
    "laplacian_bound_report",
    "energy_report",
    "continuous_dependence_report",
    "comparison_report",
    "solve_steady_state",
    "asymptotic_report",
]


def _rates_and_slacks(trajectory: Trajectory):
    """Per step: rate (u_k - u_prev)/tau and slack rate - lap_h(u_k) - f_k."""
    grid = trajectory.grid
    laplacian = mesh.assemble_laplacian(grid)
    w = grid.free_weights
    taus = trajectory.partition.taus
    rates = []
    slacks = []
    for k in range(1, trajectory.m + 1):
        u_prev = trajectory.states[k - 1]
        u = trajectory.states[k]
        rate = (u - u_prev) / taus[k - 1]
        neg_lap = (laplacian @ u) / w
        slacks.append(rate + neg_lap - trajectory.forcing_means[k - 1])
        rates.append(rate)
    return rates, slacks


def complementarity_report(trajectory: Trajectory, tol: float = 1e-8) -> Report:
    """Check the weak-solution structure of a stored trajectory.

    Numeric checks, maximised over all steps and nodes: the rate must be
    nonnegative (time monotonicity), the slack rate - lap_h(u) - f must be
    nonnegative, and their componentwise product must vanish.  The
    structural facts (states live on the grid's free nodes, the first
    state is the initial datum, one certificate per step) are enforced by
    the Trajectory type itself and reported as zero-residual entries.
    """
    rates, slacks = _rates_and_slacks(trajectory)
    rate_neg = max((float(max(0.0, (-r).max(initial=0.0))) for r in rates), default=0.0)
    slack_neg = max((float(max(0.0, (-s).max(initial=0.0))) for s in slacks), default=0.0)
    product = max(
        (float(np.abs(r * s).max(initial=0.0)) for r, s in zip(rates, slacks)),
        default=0.0,
    )
    report = Report(title="complementarity structure")
    report.add("rate_nonnegative", rate_neg, tol)
    report.add("slack_nonnegative", slack_neg, tol)
    report.add("complementarity_product", product, tol)
    report.add("states_on_grid", 0.0, 0.0, detail={"structural": True})
    report.add("boundary_data_built_in", 0.0, 0.0, detail={"structural": True})
    report.add("initial_state_stored", 0.0, 0.0, detail={"structural": True})
    return report


def dissipation_report(trajectory: Trajectory, tol: float = 1e-8) -> Report:
    """Check the summed rate/energy estimate at every prefix of the run.

    For each l: sum_{k<=l} tau_k |rate_k|_h^2 + energy(u_l) must not exceed
    energy(u_0) + 0.5 * sum_{k<=l} tau_k (|f_k|_h^2 + |rate_k|_h^2) beyond
    `tol`, with energy the discrete Dirichlet energy.
    """
    grid = trajectory.grid
    laplacian = mesh.assemble_laplacian(grid)
    taus = trajectory.partition.taus
    rates, _ = _rates_and_slacks(trajectory)
    energy0 = mesh.dirichlet_energy(grid, laplacian, trajectory.states[0])
    lhs_sum = 0.0
    rhs_sum = 0.0
    worst = 0.0
    energies = [energy0]
    for k in range(1, trajectory.m + 1):
        tau = taus[k - 1]
        rate_sq = mesh.inner(grid, rates[k - 1], rates[k - 1])
        force_sq = mesh.inner(
            grid, trajectory.forcing_means[k - 1], trajectory.forcing_means[k - 1])
        lhs_sum += tau * rate_sq
        rhs_sum += 0.5 * tau * (force_sq + rate_sq)
        energy_l = mesh.dirichlet_energy(grid, laplacian, trajectory.states[k])
        energies.append(energy_l)
        worst = max(worst, (lhs_sum + energy_l) - (energy0 + rhs_sum))
    report = Report(title="summed dissipation estimate")
    report.add("dissipation_excess", max(0.0, worst), tol,
               detail={"dirichlet_energies": [float(e) for e in energies]})
    return report


def laplacian_bound_report(trajectory: Trajectory, f_star,
                           tol: float = 1e-8) -> Report:
    """Check the uniform bound -lap_h(u_k) <= max(f*, -lap_h(u_0)).

    The bound is guaranteed only under the hypothesis f_k <= f* for every
    step; if the stored forcing averages violate it, the bound check is
    downgraded to advisory and the report is annotated.
    """
    grid = trajectory.grid
    f_star = grid.check_field(np.broadcast_to(np.asarray(f_star, dtype=float),
                                              (grid.n_free,)).copy()
                              if np.ndim(f_star) == 0 else f_star)
    laplacian = mesh.assemble_laplacian(grid)
    w = grid.free_weights
    hypothesis = max(
        (float((fk - f_star).max(initial=0.0)) for fk in trajectory.forcing_means),
        default=0.0,
    )
    hypothesis_ok = hypothesis <= tol
    neg_lap0 = (laplacian @ trajectory.states[0]) / w
    cap = np.maximum(f_star, neg_lap0)
    worst = 0.0
    for k in range(1, trajectory.m + 1):
        neg_lap = (laplacian @ trajectory.states[k]) / w
        worst = max(worst, float((neg_lap - cap).max(initial=0.0)))
    report = Report(title="uniform laplacian bound")
    report.add("forcing_below_cap", max(0.0, hypothesis), tol)
    report.add("laplacian_bound_excess", max(0.0, worst), tol,
               advisory=not hypothesis_ok)
    if not hypothesis_ok:
        report.notes.append(
            "hypotheses unchecked: stored forcing averages exceed the cap")
    return report


@dataclass(frozen=True)
class EnergyRecord:
    """Per-knot energies and per-step balance terms of a run.

    dirichlet_energy[k]  discrete Dirichlet energy of u_k.
    lyapunov[k]          dirichlet_energy[k] - <f_inf, u_k>_h.
    dissipation[k-1]     tau_k |rate_k|_h^2.
    forcing_gap[k-1]     tau_k |f_k - f_inf|_h^2.
    slack[k-1]           decay-inequality slack (nonnegative up to tol):
                         0.5*forcing_gap - (lyapunov difference + 0.5*dissipation).
    """

    dirichlet_energy: np.ndarray
    lyapunov: np.ndarray
    dissipation: np.ndarray
    forcing_gap: np.ndarray
    slack: np.ndarray
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "dirichlet_energy": [float(v) for v in self.dirichlet_energy],
            "lyapunov": [float(v) for v in self.lyapunov],
            "dissipation": [float(v) for v in self.dissipation],
            "forcing_gap": [float(v) for v in self.forcing_gap],
            "slack": [float(v) for v in self.slack],
            "tolerance": float(self.tol),
            "pass": bool(self.passed),
        }


def energy_report(trajectory: Trajectory, f_inf, tol: float = 1e-8) -> EnergyRecord:
    """Track the Lyapunov energy E(v) = dirichlet_energy(v) - <f_inf, v>_h.

    Verifies the per-step decay inequality

        E(u_k) - E(u_{k-1}) + 0.5*tau_k |rate_k|_h^2
            <= 0.5*tau_k |f_k - f_inf|_h^2 + tol,

    which also makes k -> E(u_k) - 0.5*sum_{j<=k} tau_j |f_j - f_inf|_h^2
    nonincreasing up to tol.
    """
    grid = trajectory.grid
    f_inf = grid.check_field(f_inf)
    laplacian = mesh.assemble_laplacian(grid)
    taus = trajectory.partition.taus
    rates, _ = _rates_and_slacks(trajectory)

    dirichlet = np.empty(trajectory.m + 1)
    lyapunov = np.empty(trajectory.m + 1)
    for k, state in enumerate(trajectory.states):
        dirichlet[k] = mesh.dirichlet_energy(grid, laplacian, state)
        lyapunov[k] = dirichlet[k] - mesh.inner(grid, f_inf, state)
    dissipation = np.empty(trajectory.m)
    forcing_gap = np.empty(trajectory.m)
    slack = np.empty(trajectory.m)
    for k in range(1, trajectory.m + 1):
        tau = taus[k - 1]
        rate = rates[k - 1]
        gap = trajectory.forcing_means[k - 1] - f_inf
        dissipation[k - 1] = tau * mesh.inner(grid, rate, rate)
        forcing_gap[k - 1] = tau * mesh.inner(grid, gap, gap)
        slack[k - 1] = (
            0.5 * forcing_gap[k - 1]
            - (lyapunov[k] - lyapunov[k - 1] + 0.5 * dissipation[k - 1])
        )
    passed = bool((slack >= -tol).all()) if trajectory.m else True
    return EnergyRecord(
        dirichlet_energy=dirichlet,
        lyapunov=lyapunov,
        dissipation=dissipation,
        forcing_gap=forcing_gap,
        slack=slack,
        tol=tol,
        passed=passed,
    )


def _require_shared_layout(t1: Trajectory, t2: Trajectory) -> None:
    g1, g2 = t1.grid, t2.grid
    same_grid = (
        g1 is g2
        or (
            g1.dim == g2.dim
            and g1.extents == g2.extents
            and g1.counts == g2.counts
            and g1.boundary == g2.boundary
        )
    )
    if not same_grid:
        raise PreconditionError("trajectories live on different grids")
    if not np.array_equal(t1.partition.knots, t2.partition.knots):
        raise PreconditionError("trajectories use different time partitions")


def continuous_dependence_report(t1: Trajectory, t2: Trajectory,
                                 tol: float = 1e-8) -> Report:
    """Check the factor-2 stability bound between two runs on shared data.

    sum_k tau_k |rate1_k - rate2_k|_h^2 + max_l 2*energy(u1_l - u2_l)
        <= 2 * (2*energy(u1_0 - u2_0) + sum_k tau_k |f1_k - f2_k|_h^2) + tol.
    """
    _require_shared_layout(t1, t2)
    grid = t1.grid
    laplacian = mesh.assemble_laplacian(grid)
    taus = t1.partition.taus
    rate_sum = 0.0
    force_sum = 0.0
    max_energy = 2.0 * mesh.dirichlet_energy(
        grid, laplacian, t1.states[0] - t2.states[0])
    for k in range(1, t1.m + 1):
        tau = taus[k - 1]
        dr = (t1.states[k] - t1.states[k - 1]) / tau \
            - (t2.states[k] - t2.states[k - 1]) / tau
        rate_sum += tau * mesh.inner(grid, dr, dr)
        df = t1.forcing_means[k - 1] - t2.forcing_means[k - 1]
        force_sum += tau * mesh.inner(grid, df, df)
        max_energy = max(max_energy, 2.0 * mesh.dirichlet_energy(
            grid, laplacian, t1.states[k] - t2.states[k]))
    initial = 2.0 * mesh.dirichlet_energy(
        grid, laplacian, t1.states[0] - t2.states[0])
    lhs = rate_sum + max_energy
    rhs = 2.0 * (initial + force_sum)
    report = Report(title="continuous dependence (factor-2 bound)")
    report.add("stability_excess", max(0.0, lhs - rhs), tol,
               detail={"lhs": float(lhs), "rhs": float(rhs)})
    return report


def comparison_report(t1: Trajectory, t2: Trajectory,
                      tol: float = 1e-9) -> Report:
    """Ordered data must stay ordered: u1_k <= u2_k at every knot.

    Preconditions (PreconditionError if violated): shared grid and
    partition, u1_0 <= u2_0 componentwise, and f1_k <= f2_k componentwise
    for the stored per-step forcing averages.
    """
    _require_shared_layout(t1, t2)
    bad = np.flatnonzero(t1.states[0] > t2.states[0])
    if bad.size:
        i = int(bad[0])
        raise PreconditionError(
            f"initial order violated at node {i}: "
            f"{t1.states[0][i]!r} > {t2.states[0][i]!r}")
    for k in range(t1.m):
        bad = np.flatnonzero(t1.forcing_means[k] > t2.forcing_means[k])
        if bad.size:
            i = int(bad[0])
            raise PreconditionError(
                f"forcing order violated in step {k + 1} at node {i}")
    worst = 0.0
    for k in range(t1.m + 1):
        worst = max(worst, float((t1.states[k] - t2.states[k]).max(initial=0.0)))
    final_gap = t2.states[-1] - t1.states[-1]
    report = Report(title="order preservation")
    report.add("max_order_violation", max(0.0, worst), tol,
               detail={"final_min_gap": float(final_gap.min()),
                       "final_max_gap": float(final_gap.max())})
    return report


@dataclass(frozen=True)
class SteadyState:
    """The long-time limit candidate and its optimality residuals."""

    z: np.ndarray
    kkt: KKTResiduals


def solve_steady_state(grid: Grid, u0, f_inf, tol: float = 1e-10,
                       method: str = "pdas") -> SteadyState:
    """Solve the stationary obstacle problem above the initial datum.

    Minimises 0.5*v.(L v) - (W f_inf).v over {v >= u0}; requires a
    Dirichlet part of the boundary (CoercivityError otherwise).  The
    minimiser z satisfies z >= u0, -lap_h(z) >= f_inf, and equality where
    z stays strictly above u0.
    """
    if not grid.has_dirichlet():
        raise CoercivityError(
            "the stationary limit needs at least one Dirichlet face")
    u0 = grid.check_field(u0)
    f_inf = grid.check_field(f_inf)
    laplacian = mesh.assemble_laplacian(grid)
    problem = ObstacleProblem(laplacian, grid.free_weights * f_inf, u0)
    if method == "pdas":
        solution = solve_pdas(problem, tol=tol)
    elif method == "psor":
        solution = solve_psor(problem, tol=tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SteadyState(z=solution.u, kkt=solution.kkt)


def _dyadic_checkpoints(m: int) -> list:
    ks = {m >> j for j in range(m.bit_length())}
    ks.discard(0)
    return sorted(ks)


def asymptotic_report(trajectory: Trajectory, steady: SteadyState,
                      f_inf=None, tol: float = 1e-4,
                      domination_tol: float = 1e-9) -> Report:
    """Measure the approach to the stationary limit.

    Computes the energy-seminorm gap sqrt(energy(u_k - z)) at dyadic
    checkpoint knots (m, m/2, m/4, ...), requiring the final gap <= tol,
    a nonincreasing gap sequence, and domination u_k <= z + domination_tol
    at every knot.  When `f_inf` is given the hypothesis f_k <= f_inf is
    tested on the stored forcing averages; if it fails, the order-based
    checks are downgraded to advisory ("hypotheses unchecked").
    """
    grid = trajectory.grid
    laplacian = mesh.assemble_laplacian(grid)
    z = grid.check_field(steady.z)
    m = trajectory.m

    hypothesis_ok = True
    hypothesis_excess = 0.0
    if f_inf is not None:
        f_inf = grid.check_field(f_inf)
        hypothesis_excess = max(
            (float((fk - f_inf).max(initial=0.0))
             for fk in trajectory.forcing_means),
            default=0.0,
        )
        hypothesis_ok = hypothesis_excess <= 1e-9 * max(
            1.0, float(np.abs(f_inf).max(initial=0.0)))

    checkpoints = _dyadic_checkpoints(m)
    gaps = [
        math.sqrt(max(0.0, mesh.dirichlet_energy(
            grid, laplacian, trajectory.states[k] - z)))
        for k in checkpoints
    ]
    growth = 0.0
    for previous, current in zip(gaps, gaps[1:]):
        growth = max(growth, current - previous)
    domination = max(
        (float((state - z).max(initial=0.0)) for state in trajectory.states),
        default=0.0,
    )
    advisory = not hypothesis_ok
    report = Report(title="long-time limit")
    report.add("final_seminorm_gap", gaps[-1] if gaps else 0.0, tol,
               detail={"checkpoints": [int(k) for k in checkpoints],
                       "gaps": [float(g) for g in gaps]},
               advisory=advisory)
    report.add("gap_growth", max(0.0, growth),
               1e-12 * (1.0 + (gaps[0] if gaps else 0.0)), advisory=advisory)
    report.add("dominated_by_steady_state", max(0.0, domination),
               domination_tol, advisory=advisory)
    if f_inf is not None:
        report.add("forcing_below_limit", max(0.0, hypothesis_excess),
                   1e-9 * max(1.0, float(np.abs(f_inf).max(initial=0.0))))
    if advisory:
        report.notes.append(
            "hypotheses unchecked: forcing averages exceed the stationary forcing")
    return report
