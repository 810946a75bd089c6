import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convex_relu.decomp import (
    CdaConfig,
    RankDeficientError,
    active_condition_number,
    cd_approx,
    closed_form_decompose,
    condition_number,
    decompose_model,
    is_full_row_rank,
)
from convex_relu.fista import OneSidedQuadratic
from convex_relu.patterns import PatternSet, cone_gap, signed_matrix
from oracles import fd_gradient, rel_err

PROP4_X = np.array([[1.0, 0.5], [-1.0, 0.5]])
PROP4_U = np.array([2.0, 0.0])


def full_row_rank_case(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    mask = rng.random(n) < 0.5
    if not mask.any():
        mask[0] = True
    return X, mask, rng.standard_normal(d)


def test_rank_checks():
    assert is_full_row_rank(np.eye(2))
    assert not is_full_row_rank(np.ones((2, 3)))
    assert not is_full_row_rank(np.ones((3, 2)))
    with pytest.raises(RankDeficientError):
        closed_form_decompose([1, 0, 1], np.ones((3, 2)), np.ones(2))


def test_closed_form_on_two_point_instance():
    # both rows active: X u = [2, -2] leaves the cone; the exact split is v = [1, 2], w = [-1, 2]
    dec = closed_form_decompose([1, 1], PROP4_X, PROP4_U)
    np.testing.assert_allclose(dec.v, [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(dec.w, [-1.0, 2.0], atol=1e-12)
    assert dec.residual_v == 0.0 and dec.residual_w == 0.0
    assert dec.blowup == pytest.approx(np.sqrt(5.0), rel=1e-12)


def test_closed_form_when_u_already_in_cone():
    X = np.eye(2)
    dec = closed_form_decompose([1, 0], X, np.array([1.0, -1.0]))
    np.testing.assert_allclose(dec.w, 0.0)
    assert dec.blowup == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(0, 6))
def test_closed_form_valid_on_full_row_rank(seed, n, extra):
    X, mask, u = full_row_rank_case(seed, n, n + extra)
    dec = closed_form_decompose(mask, X, u)
    np.testing.assert_allclose(dec.v - dec.w, u, atol=1e-12)
    assert dec.residual_v <= 1e-16 and dec.residual_w <= 1e-16
    Xs = signed_matrix(mask, X)
    np.testing.assert_allclose(Xs @ dec.w, np.maximum(-(Xs @ u), 0.0), atol=1e-9)


def test_closed_form_multi_column():
    X, mask, _ = full_row_rank_case(2, 3, 5)
    U = np.random.default_rng(9).standard_normal((5, 2))
    dec = closed_form_decompose(mask, X, U)
    for k in range(2):
        single = closed_form_decompose(mask, X, U[:, k])
        np.testing.assert_allclose(dec.w[:, k], single.w, atol=1e-12)


def test_cd_approx_recovers_two_point_instance():
    dec = cd_approx([1, 1], PROP4_X, PROP4_U, CdaConfig(rho=1e-10))
    np.testing.assert_allclose(dec.v, [1.0, 2.0], atol=1e-3)
    np.testing.assert_allclose(dec.w, [-1.0, 2.0], atol=1e-3)


@pytest.mark.parametrize("rho", [1e-2, 1e-4, 1e-6])
def test_cd_approx_residual_bound(rho):
    X, mask, u = full_row_rank_case(11, 4, 6)
    dec = cd_approx(mask, X, u, CdaConfig(rho=rho))
    sigma_min = np.linalg.svd(signed_matrix(mask, X), compute_uv=False)[-1]
    assert dec.converged
    assert dec.residual_norm <= 2 * rho / sigma_min + 10 * 1e-3 * rho
    np.testing.assert_allclose(dec.v - dec.w, u, atol=1e-12)


def test_cd_approx_tall_data_small_residual():
    rng = np.random.default_rng(5)
    X = np.hstack([rng.standard_normal((8, 2)), np.ones((8, 1))])
    g = rng.standard_normal(3)
    mask = X @ g >= 0
    dec = cd_approx(mask, X, rng.standard_normal(3), CdaConfig(rho=1e-8))
    assert dec.residual_v + dec.residual_w <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_cda_objective_gradient(seed):
    X, mask, u = full_row_rank_case(seed, 5, 3)
    Xs = signed_matrix(mask, X)
    f = OneSidedQuadratic(Xs, np.maximum(-(Xs @ u), 0.0))
    w = np.random.default_rng(seed).standard_normal((1, 3, 1))
    _, g = f.value_and_grad(w)
    assert rel_err(g, fd_gradient(f.value, w)) <= 1e-5


def test_condition_numbers():
    assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)
    assert condition_number(np.zeros((0, 2))) == 1.0
    assert condition_number(np.array([[1.0, 0.0], [0.0, 0.0]])) == 1.0
    dec = closed_form_decompose([1, 1], PROP4_X, PROP4_U)
    assert active_condition_number([1, 1], PROP4_X, PROP4_U, dec.w) == pytest.approx(
        condition_number(PROP4_X))


def test_decompose_model_auto_and_fallback():
    X = np.eye(2)
    ps = PatternSet(np.array([[1, 0], [1, 1]], bool))
    U = np.array([[[1.0], [1.0]], [[0.0], [0.0]]])
    weights, rep = decompose_model(U, ps, X)
    assert rep.method == "closed_form" and not rep.failed
    np.testing.assert_allclose(weights.v - weights.w, U, atol=1e-12)
    assert rep.max_residual == 0.0
    for m, v, w in zip(ps.masks, weights.v, weights.w):
        assert cone_gap(m, X, v) == 0.0 and cone_gap(m, X, w) == 0.0
    with pytest.raises(ValueError):
        decompose_model(U, ps, X, method="svd")


def test_decompose_model_reports_failed_blocks():
    from convex_relu.fista import GReLUConfig

    X = np.hstack([np.linspace(-1, 1, 6)[:, None], np.ones((6, 1))])
    mask = X[:, 0] >= 0
    ps = PatternSet(mask[None])
    U = np.array([[[-3.0], [1.0]]])
    starved = CdaConfig(rho=1e-10, subsolver=GReLUConfig(max_iters=1, grad_tol=0.0))
    weights, rep = decompose_model(U, ps, X, starved, method="cd_approx")
    assert rep.failed == [0]
    np.testing.assert_array_equal(weights.v, U)
    assert not weights.w.any()
