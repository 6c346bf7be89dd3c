"""Implicit time stepping for the irreversible diffusion law.

The evolution du/dt = (laplacian(u) + f)+ is discretised by backward Euler
with the increment constraint folded in: the state at the new time level
minimises

    0.5*v.(A v) - b.v   over  {v >= u_prev},

where A = (1/tau)*W + L is the boundary-weighted shifted operator,
b = W (f_k + u_prev/tau), W the diagonal of trapezoidal boundary weights,
L the weighted negative Laplacian, and f_k the time average of the forcing
over the step.  Because the weights are strictly positive, the
componentwise optimality conditions of this program are exactly the
discrete evolution law: with rate d = (u_k - u_prev)/tau and slack
s = d - laplacian_h(u_k) - f_k,

    d >= 0,   s >= 0,   s_i d_i = 0,   hence   d = (laplacian_h(u_k) + f_k)+.

Every step emits a certificate with the recomputed residuals of these
conditions plus the step bound 0 <= s <= (-laplacian_h(u_prev) - f_k)+.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mesh
from .mesh import Grid
from .obstacle import ObstacleProblem, ConvergenceError, solve_pdas, solve_psor

__all__ = [
    "TimePartition",
    "SolverOptions",
    "StepCertificate",
    "StepOutput",
    "Trajectory",
    "StepError",
    "ConstantInTime",
    "average_forcing",
    "step",
    "step_certificate",
    "iterate_steps",
    "run",
    "transform_negative_variant",
    "interpolate",
]


class StepError(RuntimeError):
    """A time step failed.  Carries the failing index, the time, the solver
    residuals if any, and (when raised from run) the completed prefix as
    `partial_trajectory`."""

    def __init__(self, message: str, step_index: int, time: float,
                 residuals=None):
        super().__init__(message)
        self.step_index = step_index
        self.time = time
        self.residuals = residuals
        self.partial_trajectory = None


@dataclass(frozen=True, eq=False)
class TimePartition:
    """Strictly increasing time knots starting at 0."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a partition needs at least two knots")
        if knots[0] != 0.0:
            raise ValueError(f"the first knot must be 0, got {knots[0]!r}")
        if not np.all(np.diff(knots) > 0.0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimePartition":
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps!r}")
        if not (math.isfinite(horizon) and horizon > 0.0):
            raise ValueError(f"horizon must be positive, got {horizon!r}")
        return cls(np.linspace(0.0, horizon, steps + 1))

    @classmethod
    def from_knots(cls, knots) -> "TimePartition":
        return cls(np.asarray(knots, dtype=float))

    @property
    def m(self) -> int:
        return self.knots.size - 1

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def taus(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def mesh_size(self) -> float:
        return float(self.taus.max())


@dataclass(frozen=True)
class SolverOptions:
    """Per-run solver configuration.

    method           "pdas" (direct-factorisation active set) or "psor".
    tol              optimality tolerance, scaled by max(1, |b|_inf).
    omega            relaxation factor for psor.
    max_iter         0 means the per-method default (100 pdas, 50000 psor).
    forcing_samples  odd sample count >= 5 for the per-step time average.
    """

    method: str = "pdas"
    tol: float = 1e-10
    omega: float = 1.5
    max_iter: int = 0
    forcing_samples: int = 17

    def __post_init__(self):
        if self.method not in ("pdas", "psor"):
            raise ValueError(f"unknown method {self.method!r}")

    def resolved_max_iter(self) -> int:
        if self.max_iter:
            return self.max_iter
        return 100 if self.method == "pdas" else 50_000


@dataclass(frozen=True)
class StepCertificate:
    """Recomputed residuals of the per-step optimality structure.

    monotonicity_violation  max(u_prev - u_k)_+ : the state may not decrease.
    slack_negativity        max(-s)_+ for s = rate - laplacian_h(u_k) - f_k.
    orthogonality_residual  |<s, u_k - u_prev>_h| (weighted inner product).
    equation_residual       |rate - (laplacian_h(u_k) + f_k)+|_inf.
    slack_cap_violation     max(s - (-laplacian_h(u_prev) - f_k)+)_+ : the
                            slack may not exceed the previous state's excess.
    """

    monotonicity_violation: float
    slack_negativity: float
    orthogonality_residual: float
    equation_residual: float
    slack_cap_violation: float

    @property
    def worst(self) -> float:
        return max(
            self.monotonicity_violation,
            self.slack_negativity,
            self.orthogonality_residual,
            self.equation_residual,
            self.slack_cap_violation,
        )

    def to_dict(self) -> dict:
        return {
            "monotonicity_violation": self.monotonicity_violation,
            "slack_negativity": self.slack_negativity,
            "orthogonality_residual": self.orthogonality_residual,
            "equation_residual": self.equation_residual,
            "slack_cap_violation": self.slack_cap_violation,
        }


@dataclass(frozen=True)
class StepOutput:
    """One completed step as yielded by iterate_steps (index is 1-based)."""

    index: int
    time: float
    state: np.ndarray
    forcing_mean: np.ndarray
    certificate: StepCertificate


@dataclass(eq=False)
class Trajectory:
    """A completed run: states at every knot plus per-step data.

    states[k] is the state at knots[k]; forcing_means[k-1] and
    certificates[k-1] belong to the step from knot k-1 to knot k.
    Two interpolants are supported by `interpolate`: "linear" (continuous,
    piecewise linear in time) and "constant" (right-continuous, takes the
    new state on each step interval).
    """

    INTERPOLATION_RULES = ("linear", "constant")

    grid: Grid
    partition: TimePartition
    states: list
    forcing_means: list
    certificates: list

    def __post_init__(self):
        m = self.partition.m
        if len(self.states) != m + 1:
            raise ValueError(f"expected {m + 1} states, got {len(self.states)}")
        if len(self.forcing_means) != m or len(self.certificates) != m:
            raise ValueError("per-step data must have one entry per step")

    @property
    def m(self) -> int:
        return self.partition.m

    def delta(self, k: int) -> np.ndarray:
        """Rate (u_k - u_{k-1}) / tau_k for step k in 1..m."""
        if not 1 <= k <= self.m:
            raise IndexError(f"step index {k} out of range 1..{self.m}")
        tau = self.partition.knots[k] - self.partition.knots[k - 1]
        return (self.states[k] - self.states[k - 1]) / tau


class ConstantInTime:
    """Wrap a space-only callable f(x, y) as a time-independent forcing."""

    time_independent = True

    def __init__(self, fn):
        self._fn = fn

    def __call__(self, x, y, t):
        return self._fn(x, y)


class _NegatedForcing:
    """Forcing wrapper returning the negated values of another forcing."""

    def __init__(self, fn):
        self._fn = fn

    @property
    def time_independent(self):
        return getattr(self._fn, "time_independent", False)

    def __call__(self, x, y, t):
        return np.negative(self._fn(x, y, t))


def _eval_forcing(f, grid: Grid, t: float) -> np.ndarray:
    values = f(grid.free_x, grid.free_y, t)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(grid.n_free, float(values))
    return grid.check_field(values)


def average_forcing(f, t_start: float, t_end: float, grid: Grid,
                    samples: int = 17) -> np.ndarray:
    """Average the forcing over [t_start, t_end] at every free node.

    Uses composite Simpson quadrature with `samples` equispaced sample
    times (odd, >= 5), which integrates polynomials in t up to degree 3
    exactly.  A forcing object with a true `time_independent` attribute is
    evaluated once; a plain array is treated as a constant-in-time field.
    """
    if not t_end > t_start:
        raise ValueError("the step interval must have positive length")
    if not callable(f):
        return grid.check_field(np.asarray(f, dtype=float))
    if getattr(f, "time_independent", False):
        return _eval_forcing(f, grid, t_start)
    if samples < 5 or samples % 2 == 0:
        raise ValueError(f"samples must be odd and >= 5, got {samples!r}")
    times = np.linspace(t_start, t_end, samples)
    weights = np.ones(samples)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    h = (t_end - t_start) / (samples - 1)
    weights *= h / 3.0
    acc = np.zeros(grid.n_free)
    for w, t in zip(weights, times):
        acc += w * _eval_forcing(f, grid, t)
    return acc / (t_end - t_start)


def step_certificate(grid: Grid, laplacian, u_prev, u, forcing_mean, tau,
                     neg_lap_prev=None):
    """Recompute the per-step residuals from the states alone.

    Returns (certificate, neg_lap_u) where neg_lap_u = -laplacian_h(u) can
    be chained into the next step's call as `neg_lap_prev`.
    """
    w = grid.free_weights
    rate = (u - u_prev) / tau
    neg_lap_u = (laplacian @ u) / w
    if neg_lap_prev is None:
        neg_lap_prev = (laplacian @ u_prev) / w
    slack = rate + neg_lap_u - forcing_mean
    monotonicity = float(max(0.0, (u_prev - u).max(initial=0.0)))
    slack_neg = float(max(0.0, (-slack).max(initial=0.0)))
    orthogonality = abs(mesh.inner(grid, slack, u - u_prev))
    equation = float(np.abs(rate - np.maximum(forcing_mean - neg_lap_u, 0.0)).max(initial=0.0))
    cap = np.maximum(neg_lap_prev - forcing_mean, 0.0)
    cap_violation = float(max(0.0, (slack - cap).max(initial=0.0)))
    certificate = StepCertificate(
        monotonicity_violation=monotonicity,
        slack_negativity=slack_neg,
        orthogonality_residual=orthogonality,
        equation_residual=equation,
        slack_cap_violation=cap_violation,
    )
    return certificate, neg_lap_u


def _solve_step(problem: ObstacleProblem, options: SolverOptions, u_prev,
                warm_active, factor_cache):
    if options.method == "pdas":
        return solve_pdas(
            problem,
            tol=options.tol,
            max_iter=options.resolved_max_iter(),
            start=u_prev,
            initial_active=warm_active,
            factor_cache=factor_cache,
        )
    return solve_psor(
        problem,
        omega=options.omega,
        tol=options.tol,
        max_iter=options.resolved_max_iter(),
        start=u_prev,
    )


def step(u_prev, forcing_mean, tau: float, grid: Grid,
         options: SolverOptions | None = None):
    """Advance one implicit step of length tau from u_prev.

    forcing_mean is the per-node time average of the forcing over the
    step.  Returns (u, certificate).
    """
    options = options or SolverOptions()
    if not (math.isfinite(tau) and tau > 0.0):
        raise ValueError(f"tau must be positive, got {tau!r}")
    u_prev = grid.check_field(u_prev)
    forcing_mean = grid.check_field(forcing_mean)
    laplacian = mesh.assemble_laplacian(grid)
    w = grid.free_weights
    a = mesh.shift_operator(laplacian, w, 1.0 / tau)
    b = w * (forcing_mean + u_prev / tau)
    problem = ObstacleProblem(a, b, u_prev)
    solution = _solve_step(problem, options, u_prev, None, None)
    certificate, _ = step_certificate(
        grid, laplacian, u_prev, solution.u, forcing_mean, tau)
    return solution.u, certificate


def iterate_steps(grid: Grid, u0, forcing, partition: TimePartition,
                  options: SolverOptions | None = None):
    """Generate StepOutput records one step at a time (memory lean).

    Reuses the assembled operator and its factorisations across steps with
    bitwise-equal step lengths and warm-starts each solve from the previous
    step.  Raises StepError if a solve fails.
    """
    options = options or SolverOptions()
    u_prev = grid.check_field(u0).copy()
    laplacian = mesh.assemble_laplacian(grid)
    w = grid.free_weights
    knots = partition.knots
    operators: dict = {}
    warm_active = None
    prev_entry = None
    prev_load = None
    neg_lap_prev = (laplacian @ u_prev) / w
    for k in range(1, partition.m + 1):
        t_prev, t_k = float(knots[k - 1]), float(knots[k])
        tau = t_k - t_prev
        forcing_mean = average_forcing(
            forcing, t_prev, t_k, grid, options.forcing_samples)
        entry = operators.get(tau)
        if entry is None:
            a = mesh.shift_operator(laplacian, w, 1.0 / tau)
            entry = (a, {})
            operators[tau] = entry
        a, factor_cache = entry
        b = w * (forcing_mean + u_prev / tau)
        # the previous step's A @ u is this step's A @ psi when the
        # operator is unchanged (same tau)
        psi_image = prev_load if entry is prev_entry else None
        problem = ObstacleProblem(a, b, u_prev, psi_image=psi_image)
        try:
            solution = _solve_step(problem, options, u_prev, warm_active,
                                   factor_cache)
        except ConvergenceError as exc:
            error = StepError(
                f"step {k} (t = {t_k:.6g}) failed: {exc}", k, t_k,
                residuals=exc.residuals)
            raise error from exc
        certificate, neg_lap_prev = step_certificate(
            grid, laplacian, u_prev, solution.u, forcing_mean, tau,
            neg_lap_prev=neg_lap_prev)
        yield StepOutput(
            index=k,
            time=t_k,
            state=solution.u,
            forcing_mean=forcing_mean,
            certificate=certificate,
        )
        u_prev = solution.u
        warm_active = solution.active_set if options.method == "pdas" else None
        prev_entry = entry
        prev_load = solution.load_image


def run(grid: Grid, u0, forcing, partition: TimePartition,
        options: SolverOptions | None = None) -> Trajectory:
    """Run the full partition and collect a Trajectory.

    On a failed step the StepError is re-raised with the completed prefix
    attached as `partial_trajectory`.
    """
    u0 = grid.check_field(u0).copy()
    states = [u0]
    means = []
    certificates = []
    try:
        for out in iterate_steps(grid, u0, forcing, partition, options):
            states.append(out.state)
            means.append(out.forcing_mean)
            certificates.append(out.certificate)
    except StepError as error:
        completed = len(states) - 1
        if completed >= 1:
            prefix = TimePartition(partition.knots[: completed + 1])
            error.partial_trajectory = Trajectory(
                grid=grid,
                partition=prefix,
                states=states,
                forcing_means=means,
                certificates=certificates,
            )
        raise
    return Trajectory(
        grid=grid,
        partition=partition,
        states=states,
        forcing_means=means,
        certificates=certificates,
    )


def transform_negative_variant(u0, forcing):
    """Map data of the decreasing-variant law onto this solver's form.

    The evolution dv/dt = -(-(laplacian(v) + g))+ (solutions may only
    decrease) turns into du/dt = (laplacian(u) + f)+ under u = -v,
    f = -g.  Returns (-u0, negated forcing); applying it twice restores
    the originals.  Array forcings are negated directly.
    """
    u0 = np.negative(np.asarray(u0, dtype=float))
    if callable(forcing):
        return u0, _NegatedForcing(forcing)
    return u0, np.negative(np.asarray(forcing, dtype=float))


def interpolate(trajectory: Trajectory, t: float, rule: str = "linear") -> np.ndarray:
    """Evaluate the trajectory at time t by the named interpolation rule.

    "linear" joins consecutive states; "constant" is the right-continuous
    piecewise-constant interpolant that takes the new state on each step
    interval (t_{k-1}, t_k].  t must lie within [0, horizon].
    """
    if rule not in Trajectory.INTERPOLATION_RULES:
        raise ValueError(f"unknown interpolation rule {rule!r}")
    knots = trajectory.partition.knots
    if not (knots[0] <= t <= knots[-1]):
        raise ValueError(
            f"t = {t!r} outside the partition range [0, {knots[-1]!r}]")
    k = int(np.searchsorted(knots, t, side="left"))
    if knots[k] == t:
        return trajectory.states[k].copy()
    if rule == "constant":
        return trajectory.states[k].copy()
    tau = knots[k] - knots[k - 1]
    theta = (t - knots[k - 1]) / tau
    return (1.0 - theta) * trajectory.states[k - 1] + theta * trajectory.states[k]
