"""Run configuration: a documented JSON schema, validated with field paths.

Top-level keys (see docs/config.md for the full reference):

    grid       dim, extents, counts, boundary (face -> "dirichlet"|"neumann")
    u0         expression string, or {"file": "field.csv"}
    f          expression string in x, y, t, or {"file": "field.csv"}
               (a file is a constant-in-time field)
    f_inf      optional stationary forcing (expression or file); enables
               the energy and asymptotic checks
    f_star     optional pointwise forcing cap (expression or file); enables
               the uniform laplacian bound check
    partition  {"horizon": T, "steps": m} or {"knots": [...]}
    solver     method ("pdas"|"psor"), tol, omega, max_iter, forcing_samples
    output     directory, snapshot_stride (0 = final only), save_trajectory
    checks     booleans: complementarity, dissipation, laplacian_bound,
               energy, asymptotic

Hypothesis pre-checks run at load time: f <= f_star and (when asymptotic
checks are enabled) f <= f_inf, sampled at every knot and node.  Violations
become warnings and downgrade the dependent checks to advisory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .. import expr as expr_mod
from ..mesh import Grid, build_grid
from ..stepper import SolverOptions, TimePartition

__all__ = ["ConfigError", "RunConfig", "ExpressionField", "load_config",
           "config_from_dict", "DEFAULT_CHECK_TOLERANCES"]

DEFAULT_CHECK_TOLERANCES = {
    "complementarity": 1e-8,
    "dissipation": 1e-8,
    "laplacian_bound": 1e-8,
    "energy": 1e-8,
    "asymptotic": 1e-4,
    "domination": 1e-9,
    "comparison": 1e-9,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class ExpressionField:
    """A space-time function backed by a parsed expression."""

    def __init__(self, source: str, path: str):
        self.source = source
        try:
            self.ast = expr_mod.parse(source)
        except expr_mod.ParseError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        self._path = path

    @property
    def time_independent(self) -> bool:
        return "t" not in expr_mod.free_variables(self.ast)

    def __call__(self, x, y, t):
        try:
            value = expr_mod.evaluate(self.ast, x=x, y=y, t=t)
        except expr_mod.EvaluationError as exc:
            raise ConfigError(f"{self._path}: {exc}") from exc
        return value


class ConstantField:
    """A space-time function that returns a fixed nodal field."""

    time_independent = True

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, x, y, t):
        return self.values


@dataclass
class OutputOptions:
    directory: str = "out"
    snapshot_stride: int = 0
    save_trajectory: bool = True


@dataclass
class RunConfig:
    """A fully validated run description."""

    grid: Grid
    u0: np.ndarray
    forcing: object
    partition: TimePartition
    solver: SolverOptions
    output: OutputOptions
    checks: dict
    f_inf: np.ndarray | None = None
    f_star: np.ndarray | None = None
    warnings: list = field(default_factory=list)
    hypotheses_ok: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _expect_mapping(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    return raw


def _take(raw: dict, key: str, path: str, required=True, default=None):
    if key not in raw:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    return raw[key]


def _number(value, path: str, minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if minimum is not None and value <= minimum:
        raise ConfigError(f"{path}: must be > {minimum}")
    return value


def _integer(value, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return value


def _build_grid(raw, path: str) -> Grid:
    raw = _expect_mapping(raw, path)
    dim = _integer(_take(raw, "dim", path), f"{path}.dim", 1)
    extents = _take(raw, "extents", path)
    counts = _take(raw, "counts", path)
    boundary = _expect_mapping(_take(raw, "boundary", path), f"{path}.boundary")
    try:
        return build_grid(dim, extents, counts, boundary)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _field_values(spec, grid: Grid, path: str, base_dir, time: float = 0.0):
    """Evaluate a field spec (expression or file reference) on the free nodes."""
    fn = _space_time_function(spec, grid, path, base_dir)
    values = fn(grid.free_x, grid.free_y, time)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(grid.n_free, float(values))
    return grid.check_field(values)


def _space_time_function(spec, grid: Grid, path: str, base_dir):
    if isinstance(spec, str):
        return ExpressionField(spec, path)
    if isinstance(spec, dict):
        name = _take(spec, "file", path)
        if not isinstance(name, str):
            raise ConfigError(f"{path}.file: expected a path string")
        from .serialization import read_field_csv  # local import to avoid a cycle

        target = name if base_dir is None else str(base_dir / name)
        try:
            values = read_field_csv(target, grid)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}.file: {exc}") from exc
        return ConstantField(values)
    raise ConfigError(f"{path}: expected an expression string or {{\"file\": ...}}")


def _build_partition(raw, path: str) -> TimePartition:
    raw = _expect_mapping(raw, path)
    if "knots" in raw:
        knots = raw["knots"]
        if not isinstance(knots, list) or not knots:
            raise ConfigError(f"{path}.knots: expected a nonempty list")
        try:
            return TimePartition.from_knots([_number(k, f"{path}.knots") for k in knots])
        except ValueError as exc:
            raise ConfigError(f"{path}.knots: {exc}") from exc
    horizon = _number(_take(raw, "horizon", path), f"{path}.horizon", minimum=0.0)
    steps = _integer(_take(raw, "steps", path), f"{path}.steps", 1)
    return TimePartition.uniform(horizon, steps)


def _build_solver(raw, path: str) -> SolverOptions:
    if raw is None:
        return SolverOptions()
    raw = _expect_mapping(raw, path)
    method = _take(raw, "method", path, required=False, default="pdas")
    if method not in ("pdas", "psor"):
        raise ConfigError(f"{path}.method: expected 'pdas' or 'psor', got {method!r}")
    tol = _number(_take(raw, "tol", path, required=False, default=1e-10),
                  f"{path}.tol", minimum=0.0)
    omega = _number(_take(raw, "omega", path, required=False, default=1.5),
                    f"{path}.omega", minimum=0.0)
    if not omega < 2.0:
        raise ConfigError(f"{path}.omega: must lie in (0, 2)")
    max_iter = _take(raw, "max_iter", path, required=False, default=0)
    max_iter = _integer(max_iter, f"{path}.max_iter", 0)
    samples = _take(raw, "forcing_samples", path, required=False, default=17)
    samples = _integer(samples, f"{path}.forcing_samples", 5)
    if samples % 2 == 0:
        raise ConfigError(f"{path}.forcing_samples: must be odd")
    unknown = set(raw) - {"method", "tol", "omega", "max_iter", "forcing_samples"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return SolverOptions(method=method, tol=tol, omega=omega,
                         max_iter=max_iter, forcing_samples=samples)


def _build_output(raw, path: str) -> OutputOptions:
    if raw is None:
        return OutputOptions()
    raw = _expect_mapping(raw, path)
    directory = _take(raw, "directory", path, required=False, default="out")
    if not isinstance(directory, str) or not directory:
        raise ConfigError(f"{path}.directory: expected a nonempty string")
    stride = _integer(_take(raw, "snapshot_stride", path, required=False, default=0),
                      f"{path}.snapshot_stride", 0)
    save = _take(raw, "save_trajectory", path, required=False, default=True)
    if not isinstance(save, bool):
        raise ConfigError(f"{path}.save_trajectory: expected a boolean")
    unknown = set(raw) - {"directory", "snapshot_stride", "save_trajectory"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return OutputOptions(directory=directory, snapshot_stride=stride,
                         save_trajectory=save)


def _build_checks(raw, path: str, has_f_inf: bool, has_f_star: bool,
                  grid: Grid) -> dict:
    checks = {
        "complementarity": True,
        "dissipation": True,
        "laplacian_bound": has_f_star,
        "energy": has_f_inf,
        "asymptotic": False,
    }
    if raw is not None:
        raw = _expect_mapping(raw, path)
        unknown = set(raw) - set(checks)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for key, value in raw.items():
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected a boolean")
            checks[key] = value
    if checks["laplacian_bound"] and not has_f_star:
        raise ConfigError(f"{path}.laplacian_bound: needs f_star in the config")
    if checks["energy"] and not has_f_inf:
        raise ConfigError(f"{path}.energy: needs f_inf in the config")
    if checks["asymptotic"]:
        if not has_f_inf:
            raise ConfigError(f"{path}.asymptotic: needs f_inf in the config")
        if not grid.has_dirichlet():
            raise ConfigError(
                f"{path}.asymptotic: needs a Dirichlet face for the stationary limit")
    return checks


def _sampled_upper_check(forcing, cap: np.ndarray, grid: Grid,
                         partition: TimePartition, label: str,
                         warnings: list) -> bool:
    """Sample `forcing <= cap` at every knot and node; warn on violations."""
    scale = max(1.0, float(np.abs(cap).max(initial=0.0)))
    knots = partition.knots
    if getattr(forcing, "time_independent", False):
        knots = knots[:1]
    worst = 0.0
    worst_t = 0.0
    for t in knots:
        values = forcing(grid.free_x, grid.free_y, float(t))
        values = np.asarray(values, dtype=float)
        excess = float((values - cap).max(initial=0.0))
        if excess > worst:
            worst, worst_t = excess, float(t)
    if worst > 1e-12 * scale:
        warnings.append(
            f"hypothesis violated: f exceeds {label} by {worst:.3e} "
            f"(first seen at t = {worst_t:.6g}); dependent checks are advisory")
        return False
    return True


def config_from_dict(raw: dict, base_dir=None) -> RunConfig:
    """Validate a parsed configuration object into a RunConfig."""
    raw = _expect_mapping(raw, "config")
    known = {"grid", "u0", "f", "f_inf", "f_star", "partition", "solver",
             "output", "checks"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")

    grid = _build_grid(_take(raw, "grid", "config"), "grid")
    partition = _build_partition(_take(raw, "partition", "config"), "partition")
    solver = _build_solver(raw.get("solver"), "solver")
    output = _build_output(raw.get("output"), "output")

    u0_spec = _take(raw, "u0", "config")
    u0 = _field_values(u0_spec, grid, "u0", base_dir)

    forcing = _space_time_function(_take(raw, "f", "config"), grid, "f", base_dir)

    f_inf = None
    if raw.get("f_inf") is not None:
        f_inf = _field_values(raw["f_inf"], grid, "f_inf", base_dir)
    f_star = None
    if raw.get("f_star") is not None:
        f_star = _field_values(raw["f_star"], grid, "f_star", base_dir)

    checks = _build_checks(raw.get("checks"), "checks",
                           f_inf is not None, f_star is not None, grid)

    warnings: list = []
    if isinstance(u0_spec, str):
        _warn_on_dirichlet_mismatch(u0_spec, grid, warnings)

    hypotheses_ok = {}
    if f_star is not None:
        hypotheses_ok["f_le_f_star"] = _sampled_upper_check(
            forcing, f_star, grid, partition, "f_star", warnings)
    if f_inf is not None and checks["asymptotic"]:
        hypotheses_ok["f_le_f_inf"] = _sampled_upper_check(
            forcing, f_inf, grid, partition, "f_inf", warnings)

    return RunConfig(
        grid=grid,
        u0=u0,
        forcing=forcing,
        partition=partition,
        solver=solver,
        output=output,
        checks=checks,
        f_inf=f_inf,
        f_star=f_star,
        warnings=warnings,
        hypotheses_ok=hypotheses_ok,
        raw=raw,
    )


def _warn_on_dirichlet_mismatch(u0_source: str, grid: Grid, warnings: list) -> None:
    from ..mesh import DIRICHLET_BOUNDARY

    nodes = np.flatnonzero(grid.node_class == DIRICHLET_BOUNDARY)
    if nodes.size == 0:
        return
    counts = grid.counts
    if grid.dim == 1:
        x = nodes * grid.spacings[0]
        y = np.zeros(nodes.size)
    else:
        x = (nodes // counts[1]) * grid.spacings[0]
        y = (nodes % counts[1]) * grid.spacings[1]
    try:
        values = ExpressionField(u0_source, "u0")(x, y, 0.0)
    except ConfigError:
        return
    worst = float(np.abs(np.asarray(values, dtype=float)).max(initial=0.0))
    if worst > 1e-12:
        warnings.append(
            f"u0 is nonzero on the Dirichlet boundary (max |u0| = {worst:.3e}); "
            "the homogeneous boundary value is used there")


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration from disk."""
    from pathlib import Path

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)
