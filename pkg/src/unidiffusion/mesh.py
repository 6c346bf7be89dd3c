"""Uniform box grids and the sparse finite-difference operators on them.

Grids are tensor products of uniform 1D meshes on an interval (dim 1) or a
rectangle (dim 2).  Every boundary face carries either a homogeneous
Dirichlet or a homogeneous Neumann condition.  Dirichlet nodes are
eliminated, so fields are vectors over the remaining "free" nodes in
lexicographic node order; Neumann nodes stay and are discretised with
mirror-ghost stencils.

The assembled negative Laplacian is stored in boundary-weighted form: rows
at Neumann boundary nodes are scaled by the trapezoidal weight of the node
(1/2 per touching face, so 1/4 in a Neumann-Neumann corner).  The scaling
makes the matrix exactly symmetric while keeping the componentwise meaning
of each row: dividing row i of the weighted residual by the weight w_i
recovers the plain mirror-ghost stencil bit for bit, because the weights
are powers of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "INTERIOR",
    "DIRICHLET_BOUNDARY",
    "NEUMANN_BOUNDARY",
    "Grid",
    "GridError",
    "CoercivityError",
    "build_grid",
    "assemble_laplacian",
    "assemble_a_sigma",
    "shift_operator",
    "inner",
    "norm_h",
    "dirichlet_energy",
    "neg_laplacian",
    "symmetry_defect",
]

INTERIOR = 0
DIRICHLET_BOUNDARY = 1
NEUMANN_BOUNDARY = 2

_FACES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}
_TAGS = ("dirichlet", "neumann")


class GridError(ValueError):
    """Invalid grid construction data."""


class CoercivityError(ValueError):
    """The requested operator would be singular (no zeroth-order term and
    no Dirichlet boundary to pin the constants)."""


@dataclass(frozen=True, eq=False)
class Grid:
    """A uniform box grid with classified nodes.

    Attributes
    ----------
    dim : 1 or 2.
    extents : domain side lengths per axis; the box is [0, extents[a]].
    counts : node counts per axis (>= 3 each).
    spacings : grid spacing per axis, extents[a] / (counts[a] - 1).
    boundary : face -> "dirichlet" | "neumann" for the faces of the box
        ("left", "right" and, in 2D, "bottom", "top").
    node_class : int8 array over all nodes in lexicographic order
        (axis 0 major): INTERIOR, DIRICHLET_BOUNDARY or NEUMANN_BOUNDARY.
        A corner adjacent to any Dirichlet face is Dirichlet.
    free_index : per-node index into field vectors, -1 at Dirichlet nodes.
    free_nodes : node ids of the free nodes, ascending.
    free_weights : trapezoidal boundary weight of each free node, in
        {1, 1/2, 1/4}; used by the weighted inner product and the
        symmetrising row scaling.
    free_x, free_y : node coordinates of the free nodes (free_y is all
        zeros in 1D).
    """

    dim: int
    extents: tuple
    counts: tuple
    spacings: tuple
    boundary: dict
    node_class: np.ndarray
    free_index: np.ndarray
    free_nodes: np.ndarray
    free_weights: np.ndarray
    free_x: np.ndarray
    free_y: np.ndarray

    @property
    def n_total(self) -> int:
        return int(np.prod(self.counts))

    @property
    def n_free(self) -> int:
        return int(self.free_nodes.size)

    @property
    def cell(self) -> float:
        """Cell measure prod(h_a); the quadrature scale of inner products."""
        return float(math.prod(self.spacings))

    def has_dirichlet(self) -> bool:
        return bool((self.node_class == DIRICHLET_BOUNDARY).any())

    def check_field(self, values) -> np.ndarray:
        """Coerce to a float field over the free nodes, validating length."""
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_free,):
            raise GridError(
                f"field has shape {v.shape}, expected ({self.n_free},)"
            )
        return v


def _as_tuple(value, dim: int, name: str):
    if np.ndim(value) == 0:
        seq = (value,)
    else:
        seq = tuple(value)
    if len(seq) != dim:
        raise GridError(f"{name} must have {dim} entr{'y' if dim == 1 else 'ies'}")
    return seq


def build_grid(dim: int, extents, counts, boundary_spec: dict) -> Grid:
    """Build a grid with classified nodes.

    Parameters
    ----------
    dim : 1 or 2.
    extents : side length (scalar in 1D) or pair of side lengths.
    counts : node count per axis, each >= 3.
    boundary_spec : mapping of every face name to "dirichlet" or
        "neumann".  Faces are "left"/"right" (axis 0) and, in 2D,
        "bottom"/"top" (axis 1).
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim!r}")
    extents = tuple(float(e) for e in _as_tuple(extents, dim, "extents"))
    counts = _as_tuple(counts, dim, "counts")
    for e in extents:
        if not (math.isfinite(e) and e > 0.0):
            raise GridError(f"extents must be positive and finite, got {e!r}")
    clean_counts = []
    for c in counts:
        if int(c) != c or int(c) < 3:
            raise GridError(f"counts must be integers >= 3, got {c!r}")
        clean_counts.append(int(c))
    counts = tuple(clean_counts)

    faces = _FACES[dim]
    if set(boundary_spec) != set(faces):
        raise GridError(
            f"boundary spec must define exactly the faces {sorted(faces)}, "
            f"got {sorted(boundary_spec)}"
        )
    boundary = {}
    for face in faces:
        tag = boundary_spec[face]
        if tag not in _TAGS:
            raise GridError(f"face {face!r} has unknown tag {tag!r}")
        boundary[face] = tag

    spacings = tuple(extents[a] / (counts[a] - 1) for a in range(dim))

    n_total = int(np.prod(counts))
    node = np.arange(n_total)
    if dim == 1:
        axis_index = (node,)
    else:
        axis_index = (node // counts[1], node % counts[1])

    face_masks = {
        "left": axis_index[0] == 0,
        "right": axis_index[0] == counts[0] - 1,
    }
    if dim == 2:
        face_masks["bottom"] = axis_index[1] == 0
        face_masks["top"] = axis_index[1] == counts[1] - 1

    on_boundary = np.zeros(n_total, dtype=bool)
    on_dirichlet = np.zeros(n_total, dtype=bool)
    for face, mask in face_masks.items():
        on_boundary |= mask
        if boundary[face] == "dirichlet":
            on_dirichlet |= mask

    node_class = np.full(n_total, INTERIOR, dtype=np.int8)
    node_class[on_boundary] = NEUMANN_BOUNDARY
    node_class[on_dirichlet] = DIRICHLET_BOUNDARY

    free_mask = node_class != DIRICHLET_BOUNDARY
    free_nodes = np.flatnonzero(free_mask)
    free_index = np.full(n_total, -1, dtype=np.int64)
    free_index[free_nodes] = np.arange(free_nodes.size)

    weights = np.ones(n_total)
    for a in range(dim):
        at_end = (axis_index[a] == 0) | (axis_index[a] == counts[a] - 1)
        weights[at_end] *= 0.5

    free_x = axis_index[0][free_nodes] * spacings[0]
    if dim == 2:
        free_y = axis_index[1][free_nodes] * spacings[1]
    else:
        free_y = np.zeros(free_nodes.size)

    return Grid(
        dim=dim,
        extents=extents,
        counts=counts,
        spacings=spacings,
        boundary=boundary,
        node_class=node_class,
        free_index=free_index,
        free_nodes=free_nodes,
        free_weights=weights[free_nodes],
        free_x=free_x,
        free_y=free_y,
    )


def _axis_operator(count: int, h: float) -> sp.csr_matrix:
    # Weighted 1D second-difference matrix: interior rows are the standard
    # (-1, 2, -1)/h^2 stencil, end rows are the mirror-ghost rows
    # (2, -2)/h^2 pre-scaled by the trapezoidal end weight 1/2, which makes
    # the matrix symmetric entry for entry.
    inv = 1.0 / (h * h)
    main = np.full(count, 2.0 * inv)
    main[0] = inv
    main[-1] = inv
    off = np.full(count - 1, -inv)
    return sp.diags([off, main, off], offsets=[-1, 0, 1], format="csr")


def _axis_weights(count: int) -> np.ndarray:
    w = np.ones(count)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def assemble_laplacian(grid: Grid) -> sp.csr_matrix:
    """Assemble the boundary-weighted negative Laplacian on the free nodes.

    The returned matrix L is exactly symmetric positive semidefinite with
    positive diagonal and nonpositive off-diagonal entries.  Row i encodes
    w_i times the mirror-ghost stencil for -laplacian at free node i;
    columns of Dirichlet nodes are dropped (their values are zero).
    L annihilates constants on grids without Dirichlet nodes.
    """
    if grid.dim == 1:
        full = _axis_operator(grid.counts[0], grid.spacings[0])
    else:
        s0 = _axis_operator(grid.counts[0], grid.spacings[0])
        s1 = _axis_operator(grid.counts[1], grid.spacings[1])
        w0 = sp.diags(_axis_weights(grid.counts[0]))
        w1 = sp.diags(_axis_weights(grid.counts[1]))
        full = sp.kron(s0, w1) + sp.kron(w0, s1)
    full = sp.csr_matrix(full)
    restricted = full[grid.free_nodes][:, grid.free_nodes]
    return sp.csr_matrix(restricted)


def shift_operator(laplacian: sp.spmatrix, weights, sigma: float) -> sp.csr_matrix:
    """Add the weighted zeroth-order term: L + sigma * diag(weights)."""
    w = np.asarray(weights, dtype=float)
    return sp.csr_matrix(laplacian + sp.diags(sigma * w))


def assemble_a_sigma(grid: Grid, sigma: float) -> sp.csr_matrix:
    """Assemble the shifted operator sigma*I + L in boundary-weighted form.

    On rows of weight one (every free node of a grid whose free nodes are
    interior) this is literally sigma*I + L.  On weighted Neumann rows the
    shift is sigma*w_i so that the whole row stays a consistent w_i-scaled
    discretisation of sigma*u - laplacian(u).

    Raises CoercivityError when sigma == 0 and the grid has no Dirichlet
    nodes, since the operator would annihilate constants.
    """
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise GridError(f"sigma must be finite and >= 0, got {sigma!r}")
    if sigma == 0.0 and not grid.has_dirichlet():
        raise CoercivityError(
            "sigma = 0 needs at least one Dirichlet face to stay positive definite"
        )
    return shift_operator(assemble_laplacian(grid), grid.free_weights, sigma)


def inner(grid: Grid, u, v) -> float:
    """Weighted discrete L2 inner product: cell * sum_i w_i u_i v_i."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return grid.cell * float(np.dot(grid.free_weights * u, v))


def norm_h(grid: Grid, v) -> float:
    """Weighted discrete L2 norm."""
    return math.sqrt(max(inner(grid, v, v), 0.0))


def dirichlet_energy(grid: Grid, laplacian: sp.spmatrix, v) -> float:
    """Discrete Dirichlet energy 0.5 * cell * v . (L v).

    The weighted matrix already carries the boundary weights, so the plain
    dot product is the correct trapezoidal quadrature of 0.5*|grad v|^2.
    """
    v = np.asarray(v, dtype=float)
    return 0.5 * grid.cell * float(np.dot(v, laplacian @ v))


def neg_laplacian(grid: Grid, laplacian: sp.spmatrix, v) -> np.ndarray:
    """Apply the plain (unweighted) mirror-ghost stencil for -laplacian.

    Exact componentwise unscaling of the weighted matrix: the weights are
    powers of two, so the division is lossless.
    """
    return (laplacian @ np.asarray(v, dtype=float)) / grid.free_weights


def symmetry_defect(matrix: sp.spmatrix) -> float:
    """Largest absolute entry of A - A^T (0.0 means exactly symmetric)."""
    d = (matrix - matrix.T).tocoo()
    if d.nnz == 0:
        return 0.0
    return float(np.abs(d.data).max())
