import numpy as np
import pytest

from statetame import linalg
from statetame.errors import InvalidInputError, NoSolutionError


def test_rank_and_bases_of_rank_one_matrix():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    rep = linalg.rank_with_tolerance(A)
    assert rep.rank == 1
    assert rep.kernel_basis.shape == (1, 2)
    np.testing.assert_allclose(A @ rep.kernel_basis[0], 0.0, atol=1e-14)
    np.testing.assert_allclose(abs(rep.rowspace_basis[0] @ np.array([1, 1]) / np.sqrt(2)), 1.0)


def test_zero_matrix_has_rank_zero():
    rep = linalg.rank_with_tolerance(np.zeros((3, 2)))
    assert rep.rank == 0
    assert rep.kernel_basis.shape == (2, 2)


def test_rank_respects_relative_tolerance():
    A = np.diag([1.0, 1e-12])
    assert linalg.rank_with_tolerance(A, 1e-10).rank == 1
    assert linalg.rank_with_tolerance(A, 1e-14).rank == 2


def test_project_kernel_hand_example():
    sigma = np.array([[1.0], [1.0]])
    v_ker, v_row = linalg.project_kernel(sigma, np.array([0.1, 0.3]))
    np.testing.assert_allclose(v_row, [0.2, 0.2], atol=1e-15)
    np.testing.assert_allclose(v_ker, [-0.1, 0.1], atol=1e-15)


def test_min_norm_split_is_rowspace_solution():
    sigma = np.array([[0.2, 0.0]])
    theta, resid = linalg.min_norm_split(sigma, np.array([0.03]))
    np.testing.assert_allclose(theta, [0.15, 0.0], atol=1e-15)
    np.testing.assert_allclose(resid, 0.0, atol=1e-15)


def test_solve_raises_with_residual():
    sigma = np.array([[1.0], [1.0]])
    with pytest.raises(NoSolutionError) as info:
        linalg.solve_min_norm_rowspace(sigma, np.array([0.1, 0.3]))
    assert info.value.residual == pytest.approx(np.sqrt(0.02), rel=1e-12)


def test_stacked_inputs_match_single():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 3, 2))
    v = rng.normal(size=(5, 3))
    k, r = linalg.project_kernel(A, v)
    for i in range(5):
        ki, ri = linalg.project_kernel(A[i], v[i])
        np.testing.assert_allclose(k[i], ki, atol=1e-14)
        np.testing.assert_allclose(r[i], ri, atol=1e-14)


def test_shape_and_finiteness_errors():
    with pytest.raises(InvalidInputError):
        linalg.project_kernel(np.ones((2, 2)), np.ones(3))
    with pytest.raises(InvalidInputError):
        linalg.project_kernel(np.array([[np.nan]]), np.ones(1))
    with pytest.raises(InvalidInputError):
        linalg.rank_with_tolerance(np.ones(3))
    with pytest.raises(InvalidInputError):
        linalg.min_norm_split(np.ones((2, 2)), np.ones(2), tol=0.0)


def test_rowspace_selector_zero_only_for_zero_matrix():
    assert not np.any(linalg.rowspace_selector(np.zeros((2, 3))))
    v = linalg.rowspace_selector(np.array([[0.0, 2.0, 0.0]]))
    np.testing.assert_allclose(np.abs(v), [0.0, 2.0, 0.0])


def test_rowspace_selector_stack_matches_single():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(2, 3, 2))
    stack = np.concatenate([A, A])
    out = linalg.rowspace_selector(stack)
    np.testing.assert_allclose(out[0], linalg.rowspace_selector(A[0]))
    np.testing.assert_allclose(out[2], out[0])


def test_kernel_projector():
    P = linalg.kernel_projector(np.array([[0.2, 0.0]]))
    np.testing.assert_allclose(P, [[0.0, 0.0], [0.0, 1.0]], atol=1e-15)


def test_independent_columns_drops_duplicates():
    x = np.linspace(0, 1, 20)
    X = np.column_stack([np.ones(20), x, 2 * x, x**2])
    keep = linalg.independent_columns(X)
    assert len(keep) == 3
    assert np.linalg.matrix_rank(X[:, keep]) == 3
