"""CSV field/trajectory files and the JSON report, all deterministic.

Floats are written with repr, the shortest decimal form that round-trips
to the identical double, so write-then-read is bit exact and identical
configurations produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..mesh import Grid

__all__ = [
    "write_field_csv",
    "read_field_csv",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_report",
]


def _fmt(value: float) -> str:
    return repr(float(value))


def _node_coordinates(grid: Grid):
    node = np.arange(grid.n_total)
    if grid.dim == 1:
        x = node * grid.spacings[0]
        y = None
    else:
        x = (node // grid.counts[1]) * grid.spacings[0]
        y = (node % grid.counts[1]) * grid.spacings[1]
    return x, y


def write_field_csv(path, grid: Grid, values) -> None:
    """Write a free-node field as one row per grid node (coords + value).

    Dirichlet nodes are written with their boundary value 0.
    """
    values = grid.check_field(values)
    full = np.zeros(grid.n_total)
    full[grid.free_nodes] = values
    x, y = _node_coordinates(grid)
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        if grid.dim == 1:
            writer.writerow(["x", "value"])
            for i in range(grid.n_total):
                writer.writerow([_fmt(x[i]), _fmt(full[i])])
        else:
            writer.writerow(["x", "y", "value"])
            for i in range(grid.n_total):
                writer.writerow([_fmt(x[i]), _fmt(y[i]), _fmt(full[i])])


def read_field_csv(path, grid: Grid) -> np.ndarray:
    """Read a field written by write_field_csv back onto the free nodes."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        expected = ["x", "value"] if grid.dim == 1 else ["x", "y", "value"]
        if header != expected:
            raise ValueError(f"{path}: expected header {expected}, got {header}")
        rows = list(reader)
    if len(rows) != grid.n_total:
        raise ValueError(
            f"{path}: expected {grid.n_total} rows, got {len(rows)}")
    full = np.empty(grid.n_total)
    x, y = _node_coordinates(grid)
    for i, row in enumerate(rows):
        if len(row) != len(expected):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} columns")
        try:
            coords = [float(c) for c in row[:-1]]
            full[i] = float(row[-1])
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 2}: {exc}") from None
        if coords[0] != x[i] or (y is not None and coords[1] != y[i]):
            raise ValueError(f"{path}: row {i + 2} coordinates do not match the grid")
    boundary_values = np.delete(full, grid.free_nodes)
    if boundary_values.size and np.abs(boundary_values).max() != 0.0:
        raise ValueError(f"{path}: nonzero value at a Dirichlet node")
    return full[grid.free_nodes]


def write_trajectory_csv(path, knots, states) -> None:
    """Write all states as rows t, v0, v1, ... over the free nodes."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        n = states[0].shape[0]
        writer.writerow(["t"] + [f"v{i}" for i in range(n)])
        for t, state in zip(knots, states):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in state])


def read_trajectory_csv(path, grid: Grid):
    """Read a trajectory file; returns (knots, states)."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: missing trajectory header")
        n = len(header) - 1
        if n != grid.n_free:
            raise ValueError(
                f"{path}: {n} columns for {grid.n_free} free nodes")
        knots = []
        states = []
        for i, row in enumerate(reader):
            if len(row) != n + 1:
                raise ValueError(f"{path}: row {i + 2} has {len(row)} columns")
            try:
                knots.append(float(row[0]))
                states.append(np.array([float(v) for v in row[1:]]))
            except ValueError:
                raise ValueError(f"{path}: row {i + 2}: bad number") from None
    if len(knots) < 2:
        raise ValueError(f"{path}: a trajectory needs at least two states")
    return np.asarray(knots), states


def write_report(path, payload: dict) -> None:
    """Write the JSON report deterministically (sorted keys, no timestamps)."""
    path = Path(path)
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")
