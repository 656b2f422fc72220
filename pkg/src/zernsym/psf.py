"""PSF models, bead simulation, symmetrisation and Richardson-Lucy deconvolution.

Arrays share the grid convention of :mod:`zernsym.grid`: axis 0 is x and
axis 1 is y. Lengths are in nanometres unless stated otherwise; kernels are
odd-sized with the PSF centre on the middle pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
import scipy.fft as sfft
from scipy.optimize import minimize

from .errors import ConvergenceError, DataError
from .grid import ImageGrid
from .imaging import make_rng

GAUSSIAN_MLE = "gaussian_mle"
POWER_GAUSSIAN_MLE = "power_gaussian_mle"
RAW = "raw_nonparametric"
SYMMETRIZED = "symmetrized_nonparametric"
METHODS = (GAUSSIAN_MLE, POWER_GAUSSIAN_MLE, RAW, SYMMETRIZED)

# exponent of the misspecified model exp(-q^k / 2)
POWER_EXPONENT = 0.95
FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))
RL_FLOOR = 1e-12


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / FWHM_FACTOR


def _as_array(img):
    return img.values if isinstance(img, ImageGrid) else np.asarray(img, dtype=float)


def _offsets(m: int) -> np.ndarray:
    return np.arange(m) - (m - 1) / 2.0


@dataclass(frozen=True)
class BeadSpec:
    fwhm_x: float = 250.0 / math.sqrt(2.0)
    fwhm_y: float = 250.0
    bead_diameter: float = 50.0
    peak_intensity: float = 22.0
    pixel_size: float = 8200.0 / 128
    size: int = 31

    def __post_init__(self):
        for name in ("fwhm_x", "fwhm_y", "bead_diameter", "peak_intensity", "pixel_size"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        if self.size < 3 or self.size % 2 == 0:
            raise DataError("bead window size must be odd and at least 3")


@dataclass
class PsfModel:
    kind: str
    kernel: ImageGrid
    params: Optional[dict] = field(default=None)

    def __post_init__(self):
        if self.kind not in METHODS and self.kind != "true":
            raise DataError(f"unknown PSF model kind {self.kind!r}")
        k = _as_array(self.kernel)
        if np.any(k < 0):
            raise DataError("PSF kernel must be nonnegative")
        total = k.sum()
        if not total > 0:
            raise DataError("PSF kernel has nonpositive sum")
        self.kernel = ImageGrid(k / total)


def gaussian_psf(grid, fwhm_x: float, fwhm_y: float, angle: float = 0.0,
                 pixel_size: float = 1.0) -> ImageGrid:
    """Bivariate Gaussian sampled at pixel centres and normalised to unit sum.

    ``grid`` is an ImageGrid or a window size. Widths and ``pixel_size`` share
    one length unit; ``angle`` rotates the x width axis counter-clockwise.
    """
    if not (fwhm_x > 0 and fwhm_y > 0):
        raise DataError("FWHM values must be positive")
    m = grid.m if isinstance(grid, ImageGrid) else int(grid)
    sx = fwhm_to_sigma(fwhm_x) / pixel_size
    sy = fwhm_to_sigma(fwhm_y) / pixel_size
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([sx * sx, sy * sy]) @ rot.T
    k = np.exp(-0.5 * _quadratic_form(m, np.linalg.inv(cov)))
    return ImageGrid(k / k.sum())


def _quadratic_form(m, prec):
    u = _offsets(m)
    x, y = np.meshgrid(u, u, indexing="ij")
    return prec[0, 0] * x * x + 2 * prec[0, 1] * x * y + prec[1, 1] * y * y


class Convolver:
    """Zero-extended 'same' convolution with a fixed odd-sized kernel.

    The kernel spectrum is cached per image shape; ``adjoint`` applies the
    transpose (correlation with the kernel) on the same support.
    """

    def __init__(self, kernel):
        k = _as_array(kernel)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise DataError(f"kernel must be 2-D with odd sides, got shape {k.shape}")
        self.kernel = k
        self._cache = {}

    def _spectra(self, shape):
        if shape not in self._cache:
            kx, ky = self.kernel.shape
            full = (shape[0] + kx - 1, shape[1] + ky - 1)
            fshape = tuple(sfft.next_fast_len(n, real=True) for n in full)
            fwd = sfft.rfft2(self.kernel, fshape)
            adj = sfft.rfft2(self.kernel[::-1, ::-1], fshape)
            self._cache[shape] = (fshape, fwd, adj)
        return self._cache[shape]

    def _apply(self, img, which):
        img = np.asarray(img, dtype=float)
        fshape, fwd, adj = self._spectra(img.shape)
        spec = fwd if which == 0 else adj
        full = sfft.irfft2(sfft.rfft2(img, fshape) * spec, fshape)
        cx, cy = self.kernel.shape[0] // 2, self.kernel.shape[1] // 2
        return full[cx:cx + img.shape[0], cy:cy + img.shape[1]]

    def forward(self, img) -> np.ndarray:
        return self._apply(img, 0)

    def adjoint(self, img) -> np.ndarray:
        return self._apply(img, 1)


def convolve(image, kernel) -> ImageGrid:
    """``k * image`` on the image support with zeros outside it."""
    out = Convolver(kernel).forward(_as_array(image))
    return ImageGrid(out)


def bead_indicator(spec: BeadSpec, supersample: int = 32) -> np.ndarray:
    """Fraction of each pixel covered by the bead disc centred on the window."""
    m = spec.size
    n = m * supersample
    sub = (np.arange(n) - (n - 1) / 2.0) * spec.pixel_size / supersample
    x, y = np.meshgrid(sub, sub, indexing="ij")
    inside = (x * x + y * y <= (spec.bead_diameter / 2) ** 2).astype(float)
    frac = inside.reshape(m, supersample, m, supersample).mean(axis=(1, 3))
    if not frac.any():
        frac[m // 2, m // 2] = 1.0
    return frac


def bead_intensity(spec: BeadSpec, psf) -> ImageGrid:
    """Noise-free bead image scaled so that its peak equals ``spec.peak_intensity``."""
    k = _as_array(psf.kernel if isinstance(psf, PsfModel) else psf)
    img = Convolver(k).forward(bead_indicator(spec))
    img = np.clip(img, 0.0, None)
    return ImageGrid(img * (spec.peak_intensity / img.max()))


def simulate_bead_image(spec: BeadSpec, psf, seed, noise: bool = True) -> ImageGrid:
    """Poisson-sampled bead image; returns the intensity itself when ``noise`` is off.

    ``seed`` is an integer or an existing ``numpy.random.Generator``.
    """
    lam = bead_intensity(spec, psf)
    if not noise:
        return lam
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return ImageGrid(rng.poisson(lam.values).astype(float))


def true_psf(spec: BeadSpec) -> PsfModel:
    k = gaussian_psf(spec.size, spec.fwhm_x, spec.fwhm_y, pixel_size=spec.pixel_size)
    return PsfModel("true", k, {"fwhm_x": spec.fwhm_x, "fwhm_y": spec.fwhm_y})


def _unpack_cov(theta):
    sx, sy = math.exp(theta[0]), math.exp(theta[1])
    r = math.tanh(theta[2])
    return np.array([[sx * sx, r * sx * sy], [r * sx * sy, sy * sy]])


def _shape_log(theta, m, exponent):
    q = _quadratic_form(m, np.linalg.inv(_unpack_cov(theta)))
    return -0.5 * q ** exponent if exponent != 1.0 else -0.5 * q


def poisson_loglik(data, intensity) -> float:
    """Poisson log-likelihood without the ``log Z!`` term."""
    z = _as_array(data)
    lam = _as_array(intensity)
    pos = z > 0
    return float(np.sum(z[pos] * np.log(lam[pos])) - lam.sum())


def fit_parametric_psf(data, kind: str = GAUSSIAN_MLE, maxiter: int = 5000,
                       rtol: float = 1e-8) -> PsfModel:
    """Poisson maximum likelihood fit of a centred (power-)Gaussian PSF.

    The intensity is ``a * exp(-q^k / 2)`` with ``q = v' inv(S) v`` for pixel
    offsets ``v`` from the window centre; ``k`` is 1 for ``gaussian_mle`` and
    fixed at 0.95 for ``power_gaussian_mle``. The amplitude is profiled out in
    closed form (``a = sum Z / sum shape``) and the covariance is searched by
    Nelder-Mead from the second moments of the data.
    """
    if kind not in (GAUSSIAN_MLE, POWER_GAUSSIAN_MLE):
        raise DataError(f"not a parametric PSF kind: {kind!r}")
    z = _as_array(data)
    if np.any(z < 0):
        raise DataError("data must be nonnegative")
    total = z.sum()
    if not total > 0:
        raise DataError("data has no counts")
    m = z.shape[0]
    exponent = 1.0 if kind == GAUSSIAN_MLE else POWER_EXPONENT

    u = _offsets(m)
    x, y = np.meshgrid(u, u, indexing="ij")
    cxx = max(np.sum(z * x * x) / total, 0.25)
    cyy = max(np.sum(z * y * y) / total, 0.25)
    cxy = np.sum(z * x * y) / total
    r0 = float(np.clip(cxy / math.sqrt(cxx * cyy), -0.9, 0.9))
    theta0 = np.array([0.5 * math.log(cxx), 0.5 * math.log(cyy), math.atanh(r0)])

    def objective(theta):
        logs = _shape_log(theta, m, exponent)
        return total * math.log(np.exp(logs).sum()) - np.sum(z * logs)

    res = minimize(objective, theta0, method="Nelder-Mead",
                   options={"xatol": rtol, "fatol": rtol * max(1.0, total),
                            "maxiter": maxiter, "maxfev": 2 * maxiter})
    if not res.success:
        raise ConvergenceError(
            f"{kind} fit did not converge: {res.message}",
            {"nit": int(res.nit), "nfev": int(res.nfev), "theta": res.x.tolist(),
             "objective": float(res.fun)},
        )
    shape = np.exp(_shape_log(res.x, m, exponent))
    amp = total / shape.sum()
    cov = _unpack_cov(res.x)
    params = {
        "sigma_x": math.sqrt(cov[0, 0]),
        "sigma_y": math.sqrt(cov[1, 1]),
        "corr": math.tanh(res.x[2]),
        "amplitude": float(amp),
        "exponent": exponent,
        "loglik": poisson_loglik(z, amp * shape),
        "nit": int(res.nit),
    }
    return PsfModel(kind, ImageGrid(shape), params)


def _reflect_offsets(u, v, beta):
    c, s = math.cos(2 * beta), math.sin(2 * beta)
    return c * u + s * v, s * u - c * v


def _bilinear(img, fi, fj):
    """Bilinear samples at fractional indices plus a validity mask."""
    n0, n1 = img.shape
    tol = 1e-9
    valid = (fi >= -tol) & (fi <= n0 - 1 + tol) & (fj >= -tol) & (fj <= n1 - 1 + tol)
    fi = np.clip(fi, 0, n0 - 1)
    fj = np.clip(fj, 0, n1 - 1)
    i0 = np.minimum(np.floor(fi).astype(int), n0 - 2) if n0 > 1 else np.zeros_like(fi, int)
    j0 = np.minimum(np.floor(fj).astype(int), n1 - 2) if n1 > 1 else np.zeros_like(fj, int)
    ti, tj = fi - i0, fj - j0
    i1 = np.minimum(i0 + 1, n0 - 1)
    j1 = np.minimum(j0 + 1, n1 - 1)
    out = ((1 - ti) * (1 - tj) * img[i0, j0] + ti * (1 - tj) * img[i1, j0]
           + (1 - ti) * tj * img[i0, j1] + ti * tj * img[i1, j1])
    return out, valid


def _grid_aligned(beta):
    b = beta % math.pi
    for target in (0.0, math.pi / 2, math.pi):
        if abs(b - target) < 1e-9:
            return target % math.pi
    return None


def symmetrize(image, beta1: float, return_counts: bool = False):
    """Average over the reflections at ``beta1`` and ``beta1 + pi/2`` and rotation by pi.

    Group images are resampled at pixel centres about the window centre by
    bilinear interpolation, or by exact index flips when the axis is aligned
    with the grid. Pre-images outside the support are left out of that
    pixel's average.
    """
    z = _as_array(image)
    aligned = _grid_aligned(beta1)
    if aligned is not None:
        flip_y, flip_x = z[:, ::-1], z[::-1, :]
        rot = z[::-1, ::-1]
        # paired sums keep a symmetric input bit-exact
        out = ((z + flip_y) + (flip_x + rot)) / 4.0
        counts = np.full(z.shape, 4, dtype=int)
    else:
        u = _offsets(z.shape[0])[:, None] * np.ones((1, z.shape[1]))
        v = np.ones((z.shape[0], 1)) * _offsets(z.shape[1])[None, :]
        cu, cv = (z.shape[0] - 1) / 2.0, (z.shape[1] - 1) / 2.0
        ru, rv = _reflect_offsets(u, v, beta1)
        acc = z.copy()
        counts = np.ones(z.shape, dtype=int)
        # tau_(beta + pi/2) is the rotation by pi composed with tau_beta
        for pu, pv in ((ru, rv), (-ru, -rv), (-u, -v)):
            vals, ok = _bilinear(z, pu + cu, pv + cv)
            acc += np.where(ok, vals, 0.0)
            counts += ok
        out = acc / counts
    result = image.with_values(out) if isinstance(image, ImageGrid) else ImageGrid(out)
    return (result, counts) if return_counts else result


def richardson_lucy_iter(data, psf, max_iter: int = 500) -> Iterator[tuple[int, np.ndarray, float]]:
    """Yield ``(k, iterate, loglik)`` for ``k = 0..max_iter``.

    Starts from a constant image with the data's total mass. ``loglik`` is the
    Poisson log-likelihood (no ``log Z!`` term) of ``k * iterate``.
    """
    kernel = _as_array(psf.kernel if isinstance(psf, PsfModel) else psf)
    if not kernel.sum() > 0:
        raise DataError("PSF kernel has nonpositive sum")
    z = _as_array(data)
    if np.any(z < 0):
        raise DataError("data must be nonnegative")
    conv = Convolver(kernel)
    gamma = np.full(z.shape, z.sum() / z.size)
    pos = z > 0
    for k in range(max_iter + 1):
        fwd = np.maximum(conv.forward(gamma), RL_FLOOR)
        ll = float(np.sum(z[pos] * np.log(fwd[pos])) - fwd.sum())
        yield k, gamma, ll
        if k == max_iter:
            break
        gamma = gamma * conv.adjoint(z / fwd)
        # FFT round-off can leave tiny negatives where the true value is 0
        np.maximum(gamma, 0.0, out=gamma)


def richardson_lucy(data, psf, max_iter: int = 500,
                    callback: Optional[Callable[[int, np.ndarray, float], None]] = None):
    """Run Richardson-Lucy; return all iterates, or stream them to ``callback``."""
    iterates = []
    for k, gamma, ll in richardson_lucy_iter(data, psf, max_iter):
        if callback is not None:
            callback(k, gamma, ll)
        else:
            iterates.append(ImageGrid(gamma))
    return iterates if callback is None else None


def distance(a, b, metric: str = "L1") -> float:
    d = _as_array(a) - _as_array(b)
    if metric == "L1":
        return float(np.abs(d).sum())
    if metric == "L2":
        return float((d * d).sum())
    raise DataError(f"unknown metric {metric!r}")


def optimal_iterate_distance(iterates, truth, metric: str = "L1") -> tuple[int, float]:
    """Index and value of the smallest pixel-sum distance between any iterate and ``truth``."""
    best_k, best = -1, math.inf
    for k, it in enumerate(iterates):
        d = distance(it, truth, metric)
        if d < best:
            best_k, best = k, d
    if best_k < 0:
        raise DataError("no iterates given")
    return best_k, best


class DistanceTracker:
    """Streaming minimum of L1 and L2 distances to a fixed truth image."""

    def __init__(self, truth, metrics=("L1", "L2")):
        self.truth = _as_array(truth)
        self.best = {m: (-1, math.inf) for m in metrics}
        self.loglik = []

    def __call__(self, k, gamma, ll):
        self.loglik.append(ll)
        for m, (_, d0) in self.best.items():
            d = distance(gamma, self.truth, m)
            if d < d0:
                self.best[m] = (k, d)


def cell_phantom(size: int = 128, pixel_size: float = 8200.0 / 128) -> ImageGrid:
    """Cell-like test object: dim body, bright membrane ring and three blobs.

    Intensities are relative (ring 1.0); callers rescale to a photon budget.
    Geometry is fixed in nanometres so other pixel sizes sample the same object.
    """
    u = _offsets(size) * pixel_size
    x, y = np.meshgrid(u, u, indexing="ij")

    def ellipse(cx, cy, ax, ay, angle=0.0):
        c, s = math.cos(angle), math.sin(angle)
        xr = (x - cx) * c + (y - cy) * s
        yr = -(x - cx) * s + (y - cy) * c
        return (xr / ax) ** 2 + (yr / ay) ** 2

    body_r = ellipse(150.0, -100.0, 2900.0, 2500.0, 0.3)
    img = np.where(body_r <= 1.0, 0.25, 0.0)
    ring = (body_r <= 1.0) & (body_r >= 0.88)
    img = np.where(ring, 1.0, img)
    for cx, cy, r, val in ((-900.0, 600.0, 420.0, 0.8),
                           (800.0, 400.0, 300.0, 0.6),
                           (200.0, -1100.0, 520.0, 0.5)):
        img = np.where(ellipse(cx, cy, r, r) <= 1.0, val, img)
    return ImageGrid(img)
