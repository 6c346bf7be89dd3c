"""Grid construction and the weighted finite-difference operators.

The frozen matrices below were derived by hand from the mirror-ghost
stencil: interior rows are (-1, 2, -1)/h^2, a Neumann end row is
(2, -2)/h^2 scaled by its trapezoidal weight 1/2, and Dirichlet rows and
columns are dropped.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unidiffusion import mesh
from unidiffusion.mesh import (
    CoercivityError,
    DIRICHLET_BOUNDARY,
    GridError,
    NEUMANN_BOUNDARY,
    assemble_a_sigma,
    assemble_laplacian,
    build_grid,
    dirichlet_energy,
    inner,
    neg_laplacian,
    norm_h,
    shift_operator,
    symmetry_defect,
)

NN_1D = {"left": "neumann", "right": "neumann"}
DN_1D = {"left": "dirichlet", "right": "neumann"}
DD_1D = {"left": "dirichlet", "right": "dirichlet"}
NN_2D = {"left": "neumann", "right": "neumann",
         "bottom": "neumann", "top": "neumann"}


def grid_1d(n=5, boundary=NN_1D, extent=1.0):
    return build_grid(1, [extent], [n], boundary)


# hand-derived weighted operator for n = 5, h = 1/4 (inv = 16), all Neumann
L_5_NEUMANN = np.array([
    [16.0, -16.0, 0.0, 0.0, 0.0],
    [-16.0, 32.0, -16.0, 0.0, 0.0],
    [0.0, -16.0, 32.0, -16.0, 0.0],
    [0.0, 0.0, -16.0, 32.0, -16.0],
    [0.0, 0.0, 0.0, -16.0, 16.0],
])


class TestBuildGrid:
    def test_1d_layout(self):
        grid = grid_1d()
        assert grid.n_total == 5
        assert grid.n_free == 5
        assert grid.spacings == (0.25,)
        assert grid.cell == 0.25
        np.testing.assert_array_equal(grid.free_weights,
                                      [0.5, 1.0, 1.0, 1.0, 0.5])
        np.testing.assert_array_equal(grid.free_x, [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_array_equal(grid.free_y, np.zeros(5))

    def test_dirichlet_nodes_eliminated(self):
        grid = grid_1d(boundary=DN_1D)
        assert grid.n_free == 4
        assert grid.free_index[0] == -1
        np.testing.assert_array_equal(grid.free_nodes, [1, 2, 3, 4])
        np.testing.assert_array_equal(grid.free_weights, [1.0, 1.0, 1.0, 0.5])
        assert grid.has_dirichlet()

    def test_2d_free_count_left_dirichlet(self):
        grid = build_grid(2, [1.0, 1.0], [4, 4],
                          {"left": "dirichlet", "right": "neumann",
                           "bottom": "neumann", "top": "neumann"})
        assert grid.n_total == 16
        assert grid.n_free == 12  # the whole i0 = 0 column is eliminated

    def test_corner_rule_dirichlet_wins(self):
        grid = build_grid(2, [1.0, 1.0], [4, 4],
                          {"left": "dirichlet", "right": "neumann",
                           "bottom": "neumann", "top": "neumann"})
        # node (0, 0) sits on both the Dirichlet left face and the Neumann
        # bottom face; Dirichlet must win
        assert grid.node_class[0] == DIRICHLET_BOUNDARY
        # node (3, 0) is Neumann-Neumann, weight 1/4
        node = 3 * 4 + 0
        assert grid.node_class[node] == NEUMANN_BOUNDARY
        assert grid.free_weights[grid.free_index[node]] == 0.25

    def test_2d_weights_and_coords(self):
        grid = build_grid(2, [1.0, 2.0], [3, 5], NN_2D)
        assert grid.n_free == 15
        assert grid.spacings == (0.5, 0.5)
        # weight of the node (1, 2) in the middle is 1
        node = 1 * 5 + 2
        i = grid.free_index[node]
        assert grid.free_weights[i] == 1.0
        assert grid.free_x[i] == 0.5
        assert grid.free_y[i] == 1.0

    @pytest.mark.parametrize("bad", [
        dict(dim=3, extents=[1, 1, 1], counts=[3, 3, 3],
             boundary_spec={"left": "neumann", "right": "neumann"}),
        dict(dim=1, extents=[1.0], counts=[2], boundary_spec=NN_1D),
        dict(dim=1, extents=[-1.0], counts=[5], boundary_spec=NN_1D),
        dict(dim=1, extents=[1.0], counts=[5.5], boundary_spec=NN_1D),
        dict(dim=1, extents=[1.0], counts=[5],
             boundary_spec={"left": "neumann"}),
        dict(dim=1, extents=[1.0], counts=[5],
             boundary_spec={"left": "neumann", "right": "clamped"}),
        dict(dim=2, extents=[1.0, 1.0], counts=[4, 4], boundary_spec=NN_1D),
    ])
    def test_rejects_bad_inputs(self, bad):
        with pytest.raises(GridError):
            build_grid(**bad)

    def test_check_field_shape(self):
        grid = grid_1d()
        with pytest.raises(GridError):
            grid.check_field(np.zeros(4))
        out = grid.check_field([0, 1, 2, 3, 4])
        assert out.dtype == float


class TestLaplacian:
    def test_frozen_matrix_all_neumann(self):
        grid = grid_1d()
        L = assemble_laplacian(grid).toarray()
        np.testing.assert_array_equal(L, L_5_NEUMANN)

    def test_frozen_matrix_dirichlet_restriction(self):
        grid = grid_1d(boundary=DN_1D)
        L = assemble_laplacian(grid).toarray()
        np.testing.assert_array_equal(L, L_5_NEUMANN[1:, 1:])

    def test_exactly_symmetric(self):
        for grid in (
            grid_1d(7),
            grid_1d(6, DN_1D),
            build_grid(2, [1.0, 2.0], [5, 7],
                       {"left": "dirichlet", "right": "neumann",
                        "bottom": "neumann", "top": "dirichlet"}),
        ):
            assert symmetry_defect(assemble_laplacian(grid)) == 0.0

    def test_annihilates_constants_without_dirichlet(self):
        # 1D rows cancel bitwise; 2D rows mix the two axis terms, whose
        # independently rounded products leave only eps-level residue
        grid = grid_1d(9)
        L = assemble_laplacian(grid)
        assert np.abs(L @ np.ones(grid.n_free)).max() == 0.0
        grid2 = build_grid(2, [1.0, 1.0], [5, 6], NN_2D)
        L2 = assemble_laplacian(grid2)
        scale = np.abs(L2.data).max()
        assert np.abs(L2 @ np.ones(grid2.n_free)).max() <= 1e-14 * scale

    def test_interior_rows_kill_linear_functions(self):
        grid = grid_1d(9, DN_1D)
        L = assemble_laplacian(grid)
        values = neg_laplacian(grid, L, grid.free_x)
        interior = grid.node_class[grid.free_nodes] == 0
        np.testing.assert_array_equal(values[interior], 0.0)

    def test_neg_laplacian_of_quadratic_2d(self):
        # -laplacian(x^2 + y^2) = -4 exactly at interior nodes (the 5-point
        # stencil differentiates quadratics without truncation error)
        grid = build_grid(2, [1.0, 1.0], [5, 5], NN_2D)
        L = assemble_laplacian(grid)
        u = grid.free_x ** 2 + grid.free_y ** 2
        values = neg_laplacian(grid, L, u)
        interior = grid.node_class[grid.free_nodes] == 0
        assert interior.sum() == 9
        np.testing.assert_allclose(values[interior], -4.0, atol=1e-12)

    def test_weighted_unscaling_is_lossless(self, rng):
        grid = build_grid(2, [1.0, 1.0], [6, 5], NN_2D)
        L = assemble_laplacian(grid)
        v = rng.standard_normal(grid.n_free)
        raw = neg_laplacian(grid, L, v)
        np.testing.assert_array_equal(raw * grid.free_weights, L @ v)

    def test_sign_pattern_m_matrix(self):
        grid = build_grid(2, [1.0, 1.0], [5, 4],
                          {"left": "dirichlet", "right": "neumann",
                           "bottom": "neumann", "top": "neumann"})
        L = assemble_laplacian(grid).tocoo()
        for i, j, v in zip(L.row, L.col, L.data):
            if i == j:
                assert v > 0.0
            else:
                assert v <= 0.0


class TestShiftedOperator:
    def test_shift_adds_weighted_diagonal(self):
        grid = grid_1d()
        L = assemble_laplacian(grid)
        a = assemble_a_sigma(grid, 4.0).toarray()
        expected = L.toarray() + 4.0 * np.diag(grid.free_weights)
        np.testing.assert_array_equal(a, expected)

    def test_degenerate_single_entry(self):
        import scipy.sparse as sp

        a = shift_operator(sp.csr_matrix([[1.0]]), [2.0], 3.0)
        assert a.shape == (1, 1)
        assert a.toarray()[0, 0] == 7.0

    def test_spd_with_positive_shift(self):
        grid = build_grid(2, [1.0, 1.0], [5, 5], NN_2D)
        a = assemble_a_sigma(grid, 4.0).toarray()
        eigenvalues = np.linalg.eigvalsh(a)
        assert eigenvalues.min() >= 4.0 * grid.free_weights.min() - 1e-9
        assert eigenvalues.min() > 0.0

    def test_spd_with_dirichlet_and_zero_shift(self):
        grid = grid_1d(9, DD_1D)
        a = assemble_a_sigma(grid, 0.0).toarray()
        assert np.linalg.eigvalsh(a).min() > 0.0

    def test_coercivity_error_without_dirichlet(self):
        grid = grid_1d(9)
        with pytest.raises(CoercivityError):
            assemble_a_sigma(grid, 0.0)

    def test_rejects_negative_sigma(self):
        grid = grid_1d()
        with pytest.raises(GridError):
            assemble_a_sigma(grid, -1.0)

    def test_solve_residual(self, rng):
        from scipy.sparse.linalg import spsolve

        grid = build_grid(2, [1.0, 1.0], [8, 8], NN_2D)
        a = assemble_a_sigma(grid, 2.0)
        b = rng.standard_normal(grid.n_free)
        x = spsolve(a.tocsc(), b)
        assert np.abs(a @ x - b).max() <= 1e-10 * max(1.0, np.abs(b).max())


class TestInnerProducts:
    def test_weights_integrate_the_area(self):
        grid = grid_1d(11, extent=2.0)
        ones = np.ones(grid.n_free)
        assert inner(grid, ones, ones) == pytest.approx(2.0, abs=1e-14)
        grid2 = build_grid(2, [1.0, 3.0], [5, 7], NN_2D)
        ones2 = np.ones(grid2.n_free)
        assert inner(grid2, ones2, ones2) == pytest.approx(3.0, abs=1e-13)

    def test_norm_matches_inner(self, rng):
        grid = grid_1d(8)
        v = rng.standard_normal(grid.n_free)
        assert norm_h(grid, v) == pytest.approx(np.sqrt(inner(grid, v, v)))

    def test_green_identity(self, rng):
        grid = build_grid(2, [1.0, 1.0], [6, 6],
                          {"left": "dirichlet", "right": "neumann",
                           "bottom": "neumann", "top": "neumann"})
        L = assemble_laplacian(grid)
        u = rng.standard_normal(grid.n_free)
        v = rng.standard_normal(grid.n_free)
        lhs = inner(grid, u, neg_laplacian(grid, L, v))
        rhs = inner(grid, neg_laplacian(grid, L, u), v)
        assert lhs == pytest.approx(rhs, abs=1e-11)

    def test_dirichlet_energy_is_half_the_pairing(self, rng):
        grid = grid_1d(10, DN_1D)
        L = assemble_laplacian(grid)
        v = rng.standard_normal(grid.n_free)
        pairing = inner(grid, v, neg_laplacian(grid, L, v))
        assert dirichlet_energy(grid, L, v) == pytest.approx(0.5 * pairing)

    def test_dirichlet_energy_of_linear_slope(self):
        # v = x on a Dirichlet-Neumann interval: |grad v|^2 = 1, so the
        # energy is extent / 2
        grid = grid_1d(21, DN_1D, extent=1.0)
        L = assemble_laplacian(grid)
        energy = dirichlet_energy(grid, L, grid.free_x)
        assert energy == pytest.approx(0.5, abs=1e-12)


@given(
    n=st.integers(min_value=3, max_value=9),
    left=st.sampled_from(["dirichlet", "neumann"]),
    right=st.sampled_from(["dirichlet", "neumann"]),
    extent=st.floats(min_value=0.5, max_value=4.0),
)
def test_laplacian_psd_property(n, left, right, extent):
    grid = build_grid(1, [extent], [n], {"left": left, "right": right})
    L = assemble_laplacian(grid).toarray()
    assert symmetry_defect(assemble_laplacian(grid)) == 0.0
    eigenvalues = np.linalg.eigvalsh(L)
    assert eigenvalues.min() >= -1e-10 * max(1.0, np.abs(L).max())


@given(
    n0=st.integers(min_value=3, max_value=6),
    n1=st.integers(min_value=3, max_value=6),
    tags=st.tuples(*[st.sampled_from(["dirichlet", "neumann"])] * 4),
)
def test_row_consistency_property_2d(n0, n1, tags):
    """Unscaled rows reproduce the stencil value sum: L @ 1 >= 0, with
    strict positivity only on rows coupled to an eliminated Dirichlet node."""
    boundary = dict(zip(("left", "right", "bottom", "top"), tags))
    grid = build_grid(2, [1.0, 1.0], [n0, n1], boundary)
    L = assemble_laplacian(grid)
    row_sums = neg_laplacian(grid, L, np.ones(grid.n_free))
    scale = np.abs(L.data).max()
    assert row_sums.min() >= -1e-14 * scale
    if not grid.has_dirichlet():
        assert np.abs(row_sums).max() <= 1e-14 * scale
