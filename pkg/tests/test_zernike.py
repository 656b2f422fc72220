import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import eval_jacobi

from zernsym.errors import DataError
from zernsym.grid import ImageGrid
from zernsym.zernike import (
    MIDPOINT,
    PIXEL_INTEGRATED,
    MomentSet,
    ZernikeIndex,
    admissible_indices,
    disc_integral,
    estimate_moments,
    is_admissible,
    norm_sq,
    parseval_norm,
    quadrature_moments,
    quadrature_weights,
    radial_coefficients,
    radial_poly,
    reconstruct,
    zernike_basis,
    zernike_value,
)

pairs = st.integers(0, 14).flatmap(
    lambda p: st.tuples(st.just(p), st.sampled_from(list(range(-p, p + 1, 2))))
)


def jacobi_radial(p, q, rho):
    # independent route through the Jacobi polynomial representation
    q = abs(q)
    k = (p - q) // 2
    return (-1) ** k * rho**q * eval_jacobi(k, q, 0, 1 - 2 * rho**2)


def test_admissible_small_cases():
    assert admissible_indices(0) == [(0, 0)]
    assert admissible_indices(2) == [(0, 0), (1, -1), (1, 1), (2, -2), (2, 0), (2, 2)]


@pytest.mark.parametrize("n", [0, 1, 4, 7, 12])
def test_admissible_count_brute_force(n):
    brute = [(p, q) for p in range(n + 1) for q in range(-n, n + 1)
             if abs(q) <= p and (p - abs(q)) % 2 == 0]
    assert len(admissible_indices(n)) == len(brute) == (n + 1) * (n + 2) // 2
    assert len(admissible_indices(4)) == 15


def test_inadmissible_rejected():
    assert not is_admissible(3, 2)
    assert not is_admissible(1, 3)
    with pytest.raises(DataError):
        radial_poly(3, 0, 0.5)


def test_radial_examples():
    assert radial_poly(0, 0, 0.37) == 1.0
    assert radial_poly(1, 1, 0.5) == pytest.approx(0.5)
    assert radial_poly(2, 0, 1.0) == pytest.approx(1.0)
    assert radial_coefficients(2, 0) == ((2, 2), (0, -1))


@given(pairs, st.floats(0.0, 1.0))
def test_radial_matches_jacobi(pq, rho):
    p, q = pq
    assert radial_poly(p, q, rho) == pytest.approx(jacobi_radial(p, q, rho), abs=1e-9)


@given(pairs)
def test_radial_is_one_on_rim(pq):
    assert radial_poly(*pq, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_radial_domain():
    with pytest.raises(DataError):
        radial_poly(2, 0, 1.2)


def test_zernike_value_examples():
    assert zernike_value(ZernikeIndex(0, 0), 0.3, 0.4) == 1 + 0j
    assert zernike_value(ZernikeIndex(1, 1), 0.0, 0.5) == pytest.approx(0.5j)
    with pytest.raises(DataError):
        zernike_value(ZernikeIndex(0, 0), 1.0, 0.5)


@given(pairs, st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_conjugate_symmetry(pq, x, y):
    p, q = pq
    assert zernike_basis(p, -q, x, y) == pytest.approx(np.conj(zernike_basis(p, q, x, y)))


def test_norm_sq():
    assert norm_sq(0) == pytest.approx(math.pi)
    assert norm_sq(2) == pytest.approx(math.pi / 3)


def test_discrete_orthogonality():
    g = ImageGrid.zeros(201)
    x, y = g.coords
    mask = g.mask
    idx = admissible_indices(6)
    V = np.array([zernike_basis(p, q, x, y)[mask] for p, q in idx])
    gram = (V @ V.conj().T) * g.delta**2
    target = np.diag([norm_sq(p) for p, _ in idx])
    assert np.max(np.abs(gram - target)) < 0.02


def test_weights_midpoint_constant():
    g = ImageGrid.zeros(21)
    w = quadrature_weights(g, ZernikeIndex(0, 0), MIDPOINT)
    assert np.allclose(w[g.mask], g.delta**2)
    w11 = quadrature_weights(g, ZernikeIndex(1, 1), MIDPOINT)
    assert w11[10, 10] == 0


def test_weights_pixel_integrated_area():
    for m in (51, 101):
        g = ImageGrid.zeros(m)
        w = quadrature_weights(g, ZernikeIndex(0, 0), PIXEL_INTEGRATED)
        assert abs(w[g.mask].sum().real - math.pi) < 4 * g.delta


@pytest.mark.parametrize("scheme", [MIDPOINT, PIXEL_INTEGRATED])
def test_constant_image_moments(scheme):
    g = ImageGrid(np.ones((201, 201)))
    ms = estimate_moments(g, 4, scheme)
    assert ms[(0, 0)] == pytest.approx(math.pi, rel=0.01)
    others = np.delete(ms.values, ms.indices.index((0, 0)))
    assert np.max(np.abs(others)) < 0.02


def test_re_v22_moment():
    g = ImageGrid.from_function(lambda x, y: zernike_basis(2, 2, x, y).real, 201)
    ms = estimate_moments(g, 4)
    assert ms[(2, 2)] == pytest.approx(math.pi / 6, rel=2e-2)
    assert ms[(2, -2)] == pytest.approx(np.conj(ms[(2, 2)]))


def test_moments_of_noise_are_centred(rng):
    m, reps = 31, 500
    samples = np.array([estimate_moments(ImageGrid(rng.standard_normal((m, m))), 3).values
                        for _ in range(reps)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0) / math.sqrt(reps)
    se[se == 0] = np.inf
    assert np.all(np.abs(mean.real) < 3.5 * se.real + 1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_moments_linear(a, b):
    rng = np.random.default_rng(7)
    X = ImageGrid(rng.standard_normal((15, 15)))
    Y = ImageGrid(rng.standard_normal((15, 15)))
    lhs = estimate_moments(X.with_values(a * X.values + b * Y.values), 5).values
    rhs = a * estimate_moments(X, 5).values + b * estimate_moments(Y, 5).values
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_reconstruct_constant():
    g = ImageGrid.zeros(41)
    ms = MomentSet.from_dict(2, {(0, 0): math.pi})
    rec = reconstruct(ms, g)
    assert np.allclose(rec[g.mask], 1.0)


def test_reconstruct_re_v22():
    f = lambda x, y: zernike_basis(2, 2, x, y).real
    ms = quadrature_moments(f, 2)
    g = ImageGrid.from_function(f, 101)
    err = np.sqrt(np.sum((reconstruct(ms, g) - g.values)[g.mask] ** 2) * g.delta**2)
    assert err < 0.05


def test_reconstruct_fixed_point_improves_with_grid():
    f = lambda x, y: 1 + x - 2 * x * y + (x * x + y * y) ** 2

    def err(m):
        g = ImageGrid.from_function(f, m)
        back = estimate_moments(g.with_values(reconstruct(estimate_moments(g, 4), g)), 4)
        exact = quadrature_moments(f, 4)
        return np.max(np.abs(back.values - exact.values))

    assert err(101) < err(51) < 0.2


def test_parseval():
    assert parseval_norm(MomentSet.from_dict(2, {(0, 0): math.pi})) == pytest.approx(math.pi)
    assert parseval_norm(MomentSet.from_dict(3, {})) == 0.0


def test_quadrature_moments_exact_for_polynomials():
    # V_31 real part has moments n_3/2 at (3, +-1) only
    f = lambda x, y: zernike_basis(3, 1, x, y).real
    ms = quadrature_moments(f, 5)
    assert ms[(3, 1)] == pytest.approx(math.pi / 8, abs=1e-12)
    assert ms[(3, -1)] == pytest.approx(math.pi / 8, abs=1e-12)
    assert parseval_norm(ms) == pytest.approx(disc_integral(lambda x, y: f(x, y) ** 2), rel=1e-10)


def test_moment_set_access_and_truncate():
    ms = MomentSet.from_dict(3, {(2, 2): 1 + 2j})
    assert ms[(2, -2)] == 0
    assert ms.truncate(2)[(2, 2)] == 1 + 2j
    assert len(ms.truncate(2)) == 6
    with pytest.raises(DataError):
        ms.truncate(4)
