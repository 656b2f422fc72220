"""Reflection-axis estimation by minimising a Zernike-moment contrast.

The contrast between an image and its reflection at the line through the
origin with direction ``(cos b, sin b)`` is, in moment form,

    M(b) = sum_p n_p^-1 sum_q |A_pq - exp(-2iqb) A_p,-q|^2
         = sum_p n_p^-1 sum_{q>0} 4 |A_pq|^2 (1 - cos(2 r_pq + 2 q b)),

with ``r_pq`` the phase of ``A_pq``. The second line assumes conjugate
symmetric moments, i.e. a real image.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache, reduce

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from .errors import (
    DataError,
    DegenerateContrastError,
    FlatContrastError,
    NoAngularInformationError,
)
from .grid import ImageGrid
from .zernike import MIDPOINT, MomentSet, _positions, estimate_moments, reconstruct

FULL_TURN = (0.0, math.pi)
NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


@dataclass(frozen=True)
class ContrastSpec:
    n_max: int = 7
    interval: tuple = FULL_TURN
    grid_points: int = 4096

    def __post_init__(self):
        a, b = (float(v) for v in self.interval)
        if not (0.0 <= a < b <= math.pi + 1e-12):
            raise DataError(f"search interval must satisfy 0 <= a < b <= pi, got {self.interval}")
        if self.grid_points < 2:
            raise DataError("grid_points must be at least 2")
        if self.n_max < 0:
            raise DataError("n_max must be nonnegative")
        object.__setattr__(self, "interval", (a, min(b, math.pi)))

    @property
    def is_full_turn(self) -> bool:
        a, b = self.interval
        return a == 0.0 and b >= math.pi - 1e-12


@dataclass
class SymmetryEstimate:
    beta_hat: float
    sigma2_hat: float
    curvature: float
    ci_low: float
    ci_high: float
    alpha: float
    contrast_min: float
    gcd_diagnostic: int
    n_max: int = 0
    delta: float = 0.0
    z: float = 0.0
    interval: tuple = field(default=FULL_TURN)

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interval"] = list(self.interval)
        d["beta_hat_deg"] = math.degrees(self.beta_hat)
        d["ci_low_deg"] = math.degrees(self.ci_low)
        d["ci_high_deg"] = math.degrees(self.ci_high)
        return d


@lru_cache(maxsize=64)
def _mirror_perm(n_max):
    pos = _positions(n_max)
    return np.array([pos[(p, -q)] for (p, q) in pos])


def reflect_moments(ms: MomentSet, beta: float) -> MomentSet:
    """Moments of the image reflected at angle ``beta``: ``exp(-2iq beta) A_p,-q``."""
    phase = np.exp(-2j * ms.q_array * beta)
    return ms.with_values(phase * ms.values[_mirror_perm(ms.n_max)])


def _terms(ms: MomentSet):
    """Amplitude, phase and frequency of each ``q > 0`` cosine term."""
    keep = ms.q_array > 0
    a = ms.values[keep]
    p = ms.p_array[keep]
    q = ms.q_array[keep].astype(float)
    amp = 4.0 * np.abs(a) ** 2 * (p + 1) / math.pi
    return amp, 2.0 * np.angle(a), 2.0 * q


def contrast_direct(ms: MomentSet, beta):
    """Contrast from the squared-difference form, summed over all indices."""
    beta = np.asarray(beta, dtype=float)
    mirrored = ms.values[_mirror_perm(ms.n_max)]
    inv_n = (ms.p_array + 1) / math.pi
    diff = ms.values[None, :] - np.exp(-2j * np.outer(beta.ravel(), ms.q_array)) * mirrored[None, :]
    out = (np.abs(diff) ** 2) @ inv_n
    return out.reshape(beta.shape) if beta.ndim else float(out[0])


def contrast_derivatives(ms: MomentSet, beta, order: int = 2):
    """Contrast and its first ``order`` derivatives in beta (cosine form)."""
    amp, phase, freq = _terms(ms)
    beta = np.asarray(beta, dtype=float)
    arg = phase[None, :] + np.outer(beta.ravel(), freq)
    c = np.cos(arg)
    out = [amp @ (1.0 - c).T]
    if order >= 1:
        out.append((amp * freq) @ np.sin(arg).T)
    if order >= 2:
        out.append((amp * freq * freq) @ c.T)
    shape = beta.shape
    return tuple(v.reshape(shape) if shape else float(v[0]) for v in out)


def contrast(ms: MomentSet, beta):
    """Empirical contrast at ``beta`` (scalar or array), cosine form."""
    return contrast_derivatives(ms, beta, order=0)[0]


def contrast_curvature(ms: MomentSet, beta: float, plug_in: bool = False) -> float:
    """Second derivative of the contrast at ``beta``.

    With ``plug_in=True`` the cosine factor is dropped, giving
    ``sum 16 q^2 |A_pq|^2 / n_p`` which is the curvature at an exact axis.
    """
    if plug_in:
        amp, _, freq = _terms(ms)
        return float(np.sum(amp * freq * freq))
    return contrast_derivatives(ms, beta, order=2)[2]


def contrast_curve(ms: MomentSet, n_points: int = 1024, interval=FULL_TURN):
    a, b = interval
    betas = a + (b - a) * np.arange(n_points) / n_points
    return betas, contrast(ms, betas)


def _check_nondegenerate(ms):
    amp, _, _ = _terms(ms)
    if amp.size == 0 or not np.any(amp > 0):
        raise DegenerateContrastError("degenerate contrast: no nonzero moment with q > 0")


def minimize_contrast(ms: MomentSet, spec: ContrastSpec = ContrastSpec()) -> float:
    """Global minimiser of the contrast over ``spec.interval``.

    Coarse scan on ``spec.grid_points`` equispaced angles (first minimum wins),
    then Newton steps with analytic derivatives. If a Newton step leaves the
    scan cell or meets nonpositive curvature, bounded Brent takes over inside
    that cell.
    """
    if spec.n_max < ms.n_max:
        ms = ms.truncate(spec.n_max)
    _check_nondegenerate(ms)
    a, b = spec.interval
    h = (b - a) / spec.grid_points
    betas = a + h * np.arange(spec.grid_points)
    vals = contrast(ms, betas)
    k = int(np.argmin(vals))
    beta0 = float(betas[k])
    lo, hi = beta0 - h, beta0 + h
    if not spec.is_full_turn:
        lo, hi = max(lo, a), min(hi, b)

    beta = beta0
    ok = True
    for _ in range(NEWTON_MAXITER):
        _, d1, d2 = contrast_derivatives(ms, beta)
        if d2 <= 0:
            ok = False
            break
        step = d1 / d2
        beta -= step
        if not lo <= beta <= hi:
            ok = False
            break
        if abs(step) < NEWTON_TOL:
            break
    if not ok:
        res = minimize_scalar(
            lambda t: contrast(ms, t), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-13},
        )
        beta = float(res.x)
        if contrast(ms, beta0) < contrast(ms, beta):
            beta = beta0
    if spec.is_full_turn:
        beta = beta % math.pi
    return float(beta)


def contrast_zeros(ms: MomentSet, rel_tol: float = 1e-8, n_points: int = 4096) -> list[float]:
    """Angles in [0, pi) where the contrast vanishes relative to its maximum.

    Each local minimum of a dense periodic scan is refined by Brent's method
    and kept when its value is below ``rel_tol * max``.
    """
    _check_nondegenerate(ms)
    betas, vals = contrast_curve(ms, n_points)
    h = math.pi / n_points
    top = float(vals.max())
    left, right = np.roll(vals, 1), np.roll(vals, -1)
    zeros = []
    for k in np.flatnonzero((vals <= left) & (vals < right)):
        res = minimize_scalar(
            lambda t: contrast(ms, t), bounds=(betas[k] - h, betas[k] + h),
            method="bounded", options={"xatol": 1e-13},
        )
        if res.fun <= rel_tol * top:
            zeros.append(float(res.x) % math.pi)
    return sorted(zeros)


def default_gcd_threshold(ms: MomentSet) -> float:
    """Half the median moment modulus over ``q > 0``, floored at 1e-9 of the largest.

    The floor keeps round-off sized moments of exactly structured images from
    counting as angular information.
    """
    mods = np.abs(ms.values[ms.q_array > 0])
    if mods.size == 0:
        return 0.0
    return max(0.5 * float(np.median(mods)), 1e-9 * float(mods.max()))


def gcd_identifiability(ms: MomentSet, threshold: float | None = None) -> int:
    """gcd of the angular frequencies ``q > 0`` whose moments exceed ``threshold``.

    A result of 1 means the axis is unique on [0, pi). Otherwise the contrast
    has period ``pi / gcd`` and the search should be limited to [0, pi / gcd).
    """
    if threshold is None:
        threshold = default_gcd_threshold(ms)
    if threshold < 0:
        raise DataError("threshold must be nonnegative")
    keep = (ms.q_array > 0) & (np.abs(ms.values) > threshold)
    qs = {int(q) for q in ms.q_array[keep]}
    if not qs:
        raise NoAngularInformationError("no angular information: no q > 0 moment above threshold")
    return reduce(math.gcd, qs)


def estimate_noise_variance(grid: ImageGrid) -> float:
    """Difference-based noise variance from right and upper neighbours inside the disc."""
    z = grid.values
    mask = grid.mask
    use = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:]
    count = int(use.sum())
    if count == 0:
        raise DataError("no pixel has both neighbours inside the disc")
    base = z[:-1, :-1]
    dx = base - z[1:, :-1]
    dy = base - z[:-1, 1:]
    return float(np.sum((dx * dx + dy * dy)[use]) / (4.0 * count))


def normal_quantile(alpha: float, two_sided: bool = True) -> float:
    if not 0 < alpha < 1:
        raise DataError("alpha must lie in (0, 1)")
    return float(norm.ppf(1 - alpha / 2 if two_sided else 1 - alpha))


def confidence_interval(beta_hat, sigma_hat, delta, curvature, alpha=0.05,
                        two_sided=True, z=None):
    """Asymptotic interval ``beta_hat -/+ z * 2 sqrt(2) sigma delta / sqrt(curvature)``.

    ``two_sided=True`` uses ``z = Phi^-1(1 - alpha/2)`` so the interval has
    level ``1 - alpha``; ``two_sided=False`` uses ``Phi^-1(1 - alpha)``. An
    explicit ``z`` overrides both.
    """
    if not curvature > 0:
        raise FlatContrastError(f"flat contrast: curvature {curvature} is not positive")
    if z is None:
        z = normal_quantile(alpha, two_sided)
    half = z * 2.0 * math.sqrt(2.0) * sigma_hat * delta / math.sqrt(curvature)
    return beta_hat - half, beta_hat + half


def estimate_axis(grid: ImageGrid, spec: ContrastSpec = ContrastSpec(), alpha: float = 0.05,
                  scheme: str = MIDPOINT, plug_in_curvature: bool = False,
                  gcd_threshold: float | None = None, two_sided: bool = True,
                  moments: MomentSet | None = None) -> SymmetryEstimate:
    """Full pipeline: moments, identifiability, minimiser, noise level, interval."""
    ms = moments if moments is not None else estimate_moments(grid, spec.n_max, scheme)
    g = gcd_identifiability(ms, gcd_threshold)
    if g > 1:
        a, b = spec.interval
        spec = ContrastSpec(spec.n_max, (a, min(b, a + math.pi / g)), spec.grid_points)
    beta = minimize_contrast(ms, spec)
    sigma2 = estimate_noise_variance(grid)
    curv = contrast_curvature(ms, beta, plug_in=plug_in_curvature)
    z = normal_quantile(alpha, two_sided)
    lo, hi = confidence_interval(beta, math.sqrt(sigma2), grid.delta, curv, z=z)
    return SymmetryEstimate(
        beta_hat=beta,
        sigma2_hat=sigma2,
        curvature=curv,
        ci_low=lo,
        ci_high=hi,
        alpha=alpha,
        contrast_min=max(float(contrast(ms, beta)), 0.0),
        gcd_diagnostic=g,
        n_max=spec.n_max,
        delta=grid.delta,
        z=z,
        interval=spec.interval,
    )


def select_truncation(grid: ImageGrid, sigma2: float | None = None, n_limit: int = 20,
                      tol: float = 0.1, scheme: str = MIDPOINT) -> int:
    """Smallest N whose reconstruction residual variance is within ``tol`` of sigma^2.

    A heuristic stand-in for a discrepancy-principle rule; returns ``n_limit``
    when no smaller truncation qualifies.
    """
    if sigma2 is None:
        sigma2 = estimate_noise_variance(grid)
    full = estimate_moments(grid, n_limit, scheme)
    z = grid.values[grid.mask]
    for n in range(n_limit + 1):
        resid = z - reconstruct(full.truncate(n), grid)[grid.mask]
        if np.mean(resid * resid) <= (1 + tol) * sigma2:
            return n
    return n_limit
