import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bscvt.exceptions import DegenerateShapeError, EncodingError
from bscvt.maps import (
    APW_DISK,
    APWMap,
    BoxDomain,
    TraceDetMap,
    TRACEDET2_AREA,
    adjugate,
    apw_eval,
    apw_jacobian,
    get_map,
    monte_carlo,
    params_from_heights,
    shape_build,
    shape_heights,
    sym_from_vec,
    tracedet2_boundary,
    tracedet2_contains,
    tracedet_eval,
    tracedet_jacobian,
    vec_from_sym,
)


def central_fd(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


# --- domain and encodings ------------------------------------------------------


def test_box_domain_validation():
    with pytest.raises(ValueError):
        BoxDomain([0, 1], [1, 1])
    d = BoxDomain([-1, 0], [1, 2])
    assert d.n_params == 2
    np.testing.assert_allclose(d.center, [0, 1])
    assert d.contains([[0, 1], [2, 1]]).tolist() == [True, False]


def test_symmetric_encoding_roundtrip():
    v = np.arange(1.0, 7.0)  # d = 3: diagonal (1,2,3), first off-diagonal (4,5), corner 6
    A = sym_from_vec(v, 3)
    np.testing.assert_array_equal(A, [[1, 4, 6], [4, 2, 5], [6, 5, 3]])
    np.testing.assert_array_equal(vec_from_sym(A), v)


def test_adjugate_identity():
    rng = np.random.default_rng(3)
    for d in (2, 3, 4):
        A = rng.normal(size=(d, d))
        A = A + A.T
        np.testing.assert_allclose(adjugate(A) @ A, np.linalg.det(A) * np.eye(d), atol=1e-10)


# --- trace / determinant ---------------------------------------------------------


def test_tracedet_examples():
    np.testing.assert_allclose(tracedet_eval([1, 1, 0], 2), [2, 1])
    np.testing.assert_allclose(tracedet_eval([0, 0, 0], 2), [0, 0])
    np.testing.assert_allclose(tracedet_eval([-1, -1, -1, 1, 1, 1], 3), [-3, 4])


def test_tracedet_length_mismatch():
    with pytest.raises(EncodingError):
        tracedet_eval([1, 2], 2)


def test_tracedet_jacobian_examples():
    np.testing.assert_allclose(tracedet_jacobian([1, 1, 0], 2), [[1, 1, 0], [1, 1, 0]])
    J = tracedet_jacobian(np.full(6, 0.3), 3)
    np.testing.assert_array_equal(J[0], [1, 1, 1, 0, 0, 0])


@pytest.mark.parametrize("d", [2, 3, 4])
def test_tracedet_jacobian_fd(d):
    rng = np.random.default_rng(100 + d)
    N = d * (d + 1) // 2
    for _ in range(30):
        v = rng.uniform(-1, 1, N)
        J = tracedet_jacobian(v, d)
        assert rel_err(J, central_fd(lambda x: tracedet_eval(x, d), v)) < 1e-6


def test_tracedet_rank_on_equal_diagonal():
    # with a = b and c = 0 the two gradient rows (1,1,0) and (a,a,0) are parallel
    J = tracedet_jacobian([0.4, 0.4, 0.0], 2)
    assert np.linalg.matrix_rank(J, tol=1e-12) == 1


def test_tracedet_rank_distinct_diagonal_is_two():
    # rows (1,1,0) and (b,a,0) are independent once a != b
    J = tracedet_jacobian([0.9, -0.3, 0.0], 2)
    assert np.linalg.matrix_rank(J, tol=1e-12) == 2


@pytest.mark.xfail(strict=True, reason="diagonal d=2 matrices with distinct entries give rank 2, not 1")
def test_tracedet_rank_one_claim_for_distinct_diagonal():
    J = tracedet_jacobian([0.9, -0.3, 0.0], 2)
    assert np.linalg.matrix_rank(J, tol=1e-12) == 1


def test_tracedet2_region_oracle():
    assert TRACEDET2_AREA == pytest.approx(16 / 3)
    poly = tracedet2_boundary(4000)
    assert poly.area == pytest.approx(16 / 3, rel=1e-5)
    assert tracedet2_contains([[0, 0], [2, 1], [0, -2]]).all()
    assert not tracedet2_contains([[0, 0.5], [0, -2.1], [2.1, 1]]).any()


def test_tracedet_map_class_batches():
    m = TraceDetMap(3)
    X = np.random.default_rng(1).uniform(-1, 1, (5, 6))
    Y, J = m.value_and_jacobian(X)
    assert Y.shape == (5, 2) and J.shape == (5, 2, 6)
    np.testing.assert_allclose(Y[2], tracedet_eval(X[2], 3))
    np.testing.assert_allclose(m(X), Y)


# --- convex shapes -----------------------------------------------------------------


def test_shape_build_square():
    p = shape_build([0, 0, 1], 2)
    v = {tuple(np.round(x, 12)) for x in p.vertices}
    assert v == {(1, 1), (-1, 1), (-1, -1), (1, -1)}
    assert p.is_ccw()


def test_shape_build_rhombus():
    p = shape_build([0.5, 0, 0], 2)
    v = {tuple(np.round(x, 12) + 0.0) for x in p.vertices}
    assert v == {(1, 0), (0, 1), (-1, 0), (0, -1)}


def test_shape_build_degenerate():
    with pytest.raises(DegenerateShapeError):
        shape_build([0, 0, 0], 2)


def test_heights_roundtrip():
    x = np.linspace(0, 1, 11)
    h = np.sqrt(1 - x**2)
    np.testing.assert_allclose(shape_heights(params_from_heights(h), 10), h, atol=1e-14)


def test_apw_square_and_rhombus():
    # square [-1,1]^2: A = 4, P = 8, W = 8/3; rhombus: A = 2, P = 4*sqrt(2), W = 2/3
    np.testing.assert_allclose(apw_eval([0, 0, 1], 2), [6.25, 6.0], rtol=1e-14)
    np.testing.assert_allclose(apw_eval([0.5, 0, 0], 2), [6.25, 6.0], rtol=1e-14)


@pytest.mark.xfail(strict=True, reason="the square [-1,1]^2 has perimeter 8, so 100A/P^2 = 6.25, not 1.5625")
def test_apw_square_with_perimeter_16():
    np.testing.assert_allclose(apw_eval([0, 0, 1], 2), [1.5625, 6.0], rtol=1e-12)


def test_apw_disk_profile():
    q = 200
    x = np.arange(q + 1) / q
    p = params_from_heights(np.sqrt(1 - x**2))
    np.testing.assert_allclose(apw_eval(p, q), APW_DISK, atol=1e-2)


def test_apw_closed_form_matches_polygon():
    m = APWMap(12)
    X = m.domain.sample(np.random.default_rng(5), 20)
    Y = m.evaluate(X)
    for x, y in zip(X, Y):
        np.testing.assert_allclose(y, apw_eval(x, 12), rtol=1e-12)


def test_apw_jacobian_fd():
    q = 8
    rng = np.random.default_rng(8)
    for _ in range(30):
        p = rng.uniform(0.05, 1.0, q + 1)
        J = apw_jacobian(p, q)
        assert rel_err(J, central_fd(lambda x: apw_eval(x, q), p)) < 1e-5


def test_apw_constant_height_area_derivative():
    # the square family h = const: A = 4h, so dA/dh_q = 4; check via the first output
    q = 2
    h = 0.7
    p = np.array([0, 0, h])
    A, P = 4 * h, 4 + 4 * h
    dA, dP = 4.0, 4.0
    expected = 100 * (dA * P**2 - A * 2 * P * dP) / P**4
    assert apw_jacobian(p, q)[0, q] == pytest.approx(expected, rel=1e-12)


def test_apw_not_scale_invariant():
    # heights scale with the parameters while the half-width stays 1
    p = np.array([0.1, 0.2, 0.3, 0.5])
    assert not np.allclose(apw_eval(2 * p, 3), apw_eval(p, 3), rtol=1e-6)


@pytest.mark.xfail(strict=True, reason="the map is not 0-homogeneous: width is fixed at 1")
@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
def test_apw_scale_invariance_claim(lam):
    p = np.array([0.1, 0.2, 0.3, 0.5])
    np.testing.assert_allclose(apw_eval(lam * p, 3), apw_eval(p, 3), rtol=1e-10)


@pytest.mark.xfail(strict=True, reason="J.p vanishes only for 0-homogeneous maps")
def test_apw_euler_relation_claim():
    p = np.array([0.1, 0.2, 0.3, 0.5])
    np.testing.assert_allclose(apw_jacobian(p, 3) @ p, 0.0, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30))
def test_shape_build_convex_and_symmetric(seed, q):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 1, q + 1) * (rng.uniform(size=q + 1) < 0.7)
    p[-1] += 0.05
    poly = shape_build(p, q)
    v = poly.vertices
    e = np.roll(v, -1, axis=0) - v
    cr = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    assert np.all(cr >= -1e-12)
    key = lambda a: set(map(tuple, np.round(a, 10) + 0.0))  # noqa: E731
    assert key(v * [-1, 1]) == key(v)
    assert key(v * [1, -1]) == key(v)


# --- registry and Monte Carlo ---------------------------------------------------------


def test_registry():
    assert isinstance(get_map("tracedet:3"), TraceDetMap)
    assert get_map("apw:7").n_params == 8
    with pytest.raises(ValueError):
        get_map("nope:2")


def test_monte_carlo_tracedet2_inside_region():
    res = monte_carlo(TraceDetMap(2), 10_000, seed=1)
    q, t = res.images.T
    assert len(res.images) == 10_000
    assert np.all(np.abs(q) <= 2)
    assert np.all(t >= np.abs(q) - 2 - 1e-12)
    assert np.all(t <= q**2 / 4 + 1e-9)


def test_monte_carlo_deterministic():
    a = monte_carlo("tracedet:2", 1, seed=9).images
    b = monte_carlo("tracedet:2", 1, seed=9).images
    np.testing.assert_array_equal(a, b)
    # counter-based draws: a prefix of a longer run matches the shorter run
    c = monte_carlo("tracedet:2", 50, seed=9).images
    np.testing.assert_array_equal(c[:1], a)


def test_monte_carlo_apw_bounds():
    Y = monte_carlo(APWMap(2), 1000, seed=0).images
    assert np.all(Y[:, 0] <= 100 / (4 * math.pi) + 1e-6)
    assert np.all(Y[:, 1] <= 2 * math.pi + 1e-6)


def test_monte_carlo_rejects_nonpositive():
    with pytest.raises(ValueError):
        monte_carlo("tracedet:2", 0)
