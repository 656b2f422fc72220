import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zernsym.errors import DataError, DegenerateContrastError, FlatContrastError
from zernsym.grid import ImageGrid
from zernsym.imaging import NoiseSpec, TargetSpec, add_noise, eval_target, snr_scale
from zernsym.symmetry import (
    ContrastSpec,
    confidence_interval,
    contrast,
    contrast_curvature,
    contrast_derivatives,
    contrast_direct,
    contrast_zeros,
    estimate_axis,
    estimate_noise_variance,
    gcd_identifiability,
    minimize_contrast,
    normal_quantile,
    reflect_moments,
    select_truncation,
)
from zernsym.zernike import MomentSet, admissible_indices, parseval_norm, quadrature_moments

N = 5


def random_real_moments(seed, n_max=N):
    """Random conjugate-symmetric moment set, as produced by a real image."""
    rng = np.random.default_rng(seed)
    d = {}
    for p, q in admissible_indices(n_max):
        if q > 0:
            a = complex(*rng.standard_normal(2))
            d[(p, q)], d[(p, -q)] = a, a.conjugate()
        elif q == 0:
            d[(p, 0)] = float(rng.standard_normal())
    return MomentSet.from_dict(n_max, d)


def single_pair(a, r=0.0, n_max=4):
    v = a * complex(math.cos(r), math.sin(r))
    return MomentSet.from_dict(n_max, {(2, 2): v, (2, -2): v.conjugate()})


seeds = st.integers(0, 10_000)
angles = st.floats(0.0, math.pi)


@given(seeds, angles)
def test_dual_forms_agree(seed, beta):
    ms = random_real_moments(seed)
    assert contrast(ms, beta) == pytest.approx(contrast_direct(ms, beta), rel=1e-10, abs=1e-10)


@given(seeds, angles)
def test_contrast_nonnegative_and_periodic(seed, beta):
    ms = random_real_moments(seed)
    assert contrast(ms, beta) >= -1e-10
    assert contrast(ms, beta + math.pi) == pytest.approx(contrast(ms, beta), abs=1e-9)


@given(seeds, angles)
def test_reflection_is_involution(seed, beta):
    ms = random_real_moments(seed)
    back = reflect_moments(reflect_moments(ms, beta), beta)
    assert np.allclose(back.values, ms.values, atol=1e-12)
    once = reflect_moments(ms, beta)
    mirror = [ms[(p, -q)] for p, q in ms.indices]
    assert np.allclose(np.abs(once.values), np.abs(mirror))


def test_reflect_at_zero_swaps():
    ms = random_real_moments(3)
    r = reflect_moments(ms, 0.0)
    for p, q in ms.indices:
        assert r[(p, q)] == pytest.approx(ms[(p, -q)])


def test_contrast_of_reflection_pair_is_squared_distance():
    ms = random_real_moments(4)
    beta = 0.7
    diff = ms.values - reflect_moments(ms, beta).values
    direct = parseval_norm(ms.with_values(diff))
    assert contrast(ms, beta) == pytest.approx(direct)


@given(seeds, st.floats(0.1, 3.0))
def test_curvature_matches_finite_difference(seed, beta):
    ms = random_real_moments(seed)
    h = 1e-4
    fd = (contrast(ms, beta + h) - 2 * contrast(ms, beta) + contrast(ms, beta - h)) / h**2
    scale = max(1.0, abs(fd))
    assert contrast_curvature(ms, beta) == pytest.approx(fd, abs=1e-3 * scale)
    _, d1, _ = contrast_derivatives(ms, beta)
    h = 1e-6
    fd1 = (contrast(ms, beta + h) - contrast(ms, beta - h)) / (2 * h)
    assert d1 == pytest.approx(fd1, abs=1e-5 * max(1.0, abs(fd1)))


@given(st.floats(0.1, 5.0), angles)
def test_single_pair_closed_form(a, beta):
    ms = single_pair(a)
    assert contrast(ms, beta) == pytest.approx(12 / math.pi * a**2 * (1 - math.cos(4 * beta)), abs=1e-9)


def test_single_pair_curvature_closed_form():
    a = 0.8
    ms = single_pair(a)
    assert contrast_curvature(ms, 0.0) == pytest.approx(192 * a**2 / math.pi)
    assert contrast_curvature(ms, 0.0, plug_in=True) == pytest.approx(192 * a**2 / math.pi)


def test_q0_only_contrast_is_zero():
    ms = MomentSet.from_dict(4, {(0, 0): 2.0, (2, 0): -1.0, (4, 0): 0.5})
    assert np.allclose(contrast(ms, np.linspace(0, math.pi, 17)), 0)
    assert contrast_curvature(ms, 0.3) == 0
    with pytest.raises(DegenerateContrastError):
        minimize_contrast(ms)


def test_single_pair_two_zeros():
    r = 0.5
    ms = single_pair(1.0, r)
    zeros = contrast_zeros(ms)
    expected = sorted(((-r / 2) % (math.pi / 2), (-r / 2) % (math.pi / 2) + math.pi / 2))
    assert len(zeros) == 2
    assert zeros == pytest.approx(expected, abs=1e-7)
    assert gcd_identifiability(ms) == 2


def test_gcd_cases():
    d24 = {(2, 2): 1.0, (2, -2): 1.0, (4, 4): 0.5j, (4, -4): -0.5j}
    assert gcd_identifiability(MomentSet.from_dict(4, d24)) == 2
    d23 = {(2, 2): 1.0, (2, -2): 1.0, (3, 3): 0.5, (3, -3): 0.5}
    assert gcd_identifiability(MomentSet.from_dict(4, d23)) == 1
    with pytest.raises(DataError):
        gcd_identifiability(MomentSet.from_dict(4, d23), threshold=-1)


def test_gcd_f2_exact_moments():
    ms = quadrature_moments(TargetSpec("f2"), 7)
    assert gcd_identifiability(ms, 1e-6) == 1


@pytest.mark.parametrize("target,beta_star,tol", [("f1", 0.0, 1e-8), ("f2", math.pi - 0.3, 1e-6)])
def test_exact_minimizers(target, beta_star, tol):
    ms = quadrature_moments(TargetSpec(target), 7)
    beta = minimize_contrast(ms)
    d = (beta - beta_star + math.pi / 2) % math.pi - math.pi / 2
    assert abs(d) < tol
    assert contrast(ms, beta_star) < 1e-12 * parseval_norm(ms)


def test_restricted_interval():
    ms = single_pair(1.0, 0.0)
    beta = minimize_contrast(ms, ContrastSpec(4, (math.pi / 4, 3 * math.pi / 4)))
    assert beta == pytest.approx(math.pi / 2, abs=1e-9)


def test_interval_validation():
    with pytest.raises(DataError):
        ContrastSpec(7, (1.0, 0.5))
    with pytest.raises(DataError):
        ContrastSpec(7, (-0.1, 1.0))


def test_noise_variance_constant_plus_noise(rng):
    vals = [estimate_noise_variance(ImageGrid(3.0 + rng.standard_normal((101, 101))))
            for _ in range(50)]
    assert np.mean(vals) == pytest.approx(1.0, rel=0.05)


def test_noise_variance_checkerboard():
    c = 1.5
    i, j = np.indices((9, 9))
    board = ImageGrid(c * (-1.0) ** (i + j))
    assert estimate_noise_variance(board) == pytest.approx(2 * c * c, rel=1e-14)


def test_noise_variance_smooth_image_small():
    g = eval_target(TargetSpec("f1"), ImageGrid.zeros(201))
    assert estimate_noise_variance(g) < 1e-3


def test_ci_examples():
    lo, hi = confidence_interval(0.0, 1.0, 0.04, 100.0, z=1.96)
    # 1.96 * 2 sqrt(2) * 0.04 / 10 = 0.0221749, quoted to four figures as 0.022173
    assert (hi - lo) / 2 == pytest.approx(0.022173, abs=5e-6)
    assert confidence_interval(0.3, 0.0, 0.04, 100.0) == (0.3, 0.3)
    w1 = np.diff(confidence_interval(0.0, 1.0, 0.04, 50.0))
    w2 = np.diff(confidence_interval(0.0, 1.0, 0.08, 50.0))
    assert w2 == pytest.approx(2 * w1)
    with pytest.raises(FlatContrastError):
        confidence_interval(0.0, 1.0, 0.04, 0.0)


@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_quantile_monotone(a1, a2):
    if a1 < a2:
        assert normal_quantile(a1) >= normal_quantile(a2)
        assert normal_quantile(a1, two_sided=False) < normal_quantile(a1)


def test_estimate_axis_noisy_f1_within_three_sd():
    g = snr_scale(eval_target(TargetSpec("f1"), ImageGrid.zeros(51)), 16.7)
    exact = quadrature_moments(TargetSpec("f1"), 7)
    scale = float(np.max(g.values))
    peak_raw = float(np.max(eval_target(TargetSpec("f1"), ImageGrid.zeros(51)).values))
    curv = contrast_curvature(exact, 0.0) * (scale / peak_raw) ** 2
    sd = math.sqrt(8 * g.delta**2 / curv)
    hits = 0
    for seed in range(200):
        est = estimate_axis(add_noise(g, NoiseSpec("gaussian", 1.0, seed)))
        d = (est.beta_hat + math.pi / 2) % math.pi - math.pi / 2
        hits += abs(d) < 3 * sd
    assert hits >= 198


def test_estimate_axis_f3_contrast_above_floor():
    g = eval_target(TargetSpec("f3"), ImageGrid.zeros(101))
    est = estimate_axis(g)
    ms = quadrature_moments(TargetSpec("f3"), 7)
    assert est.contrast_min > 1e-3 * parseval_norm(ms)
    assert est.gcd_diagnostic == 1


def test_estimate_axis_noise_free_symmetric():
    g = eval_target(TargetSpec("f1"), ImageGrid.zeros(101))
    est = estimate_axis(g)
    from zernsym.zernike import estimate_moments
    assert est.contrast_min < 1e-6 * parseval_norm(estimate_moments(g, 7))
    d = est.to_dict()
    assert d["beta_hat_deg"] == pytest.approx(math.degrees(est.beta_hat))


def test_estimate_axis_restricts_when_gcd_gt_one():
    # an image built from the |q| = 2 moment only
    x = lambda x, y: (x * x - y * y)
    g = ImageGrid.from_function(x, 51)
    est = estimate_axis(g, ContrastSpec(4))
    assert est.gcd_diagnostic == 2
    assert est.interval[1] == pytest.approx(math.pi / 2)


def test_select_truncation():
    f = lambda x, y: 1 + x * y
    g = ImageGrid.from_function(f, 61)
    noisy = add_noise(g, NoiseSpec("gaussian", 0.2, 1))
    n = select_truncation(noisy, 0.04, n_limit=10)
    assert 2 <= n <= 4
