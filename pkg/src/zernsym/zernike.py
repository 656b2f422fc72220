"""Zernike polynomials on the unit disc and moment estimation from pixel grids.

Moments follow the convention

    A_pq(f) = integral over D of f(x, y) * conj(V_pq(x, y)),

with ``V_pq = R_pq(rho) exp(i q theta)`` and ``||V_pq||^2 = pi / (p + 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .grid import ImageGrid

PIXEL_INTEGRATED = "pixel_integrated"
MIDPOINT = "midpoint"
QUADRATURE = "quadrature"
SCHEMES = (PIXEL_INTEGRATED, MIDPOINT)

# per-pixel tensor Gauss-Legendre order for the pixel-integrated weights
PIXEL_GAUSS_ORDER = 4


class ZernikeIndex(NamedTuple):
    p: int
    q: int


def is_admissible(p: int, q: int) -> bool:
    return p >= 0 and abs(q) <= p and (p - abs(q)) % 2 == 0


def _check_index(p, q):
    if not is_admissible(p, q):
        raise DataError(f"({p}, {q}) is not an admissible Zernike index")


def admissible_indices(n_max: int) -> list[ZernikeIndex]:
    """All admissible ``(p, q)`` with ``p <= n_max``, ordered by p then q."""
    if n_max < 0:
        raise DataError(f"n_max must be nonnegative, got {n_max}")
    return [ZernikeIndex(p, q) for p in range(n_max + 1) for q in range(-p, p + 1, 2)]


def norm_sq(p: int) -> float:
    """Squared L2 norm ``n_p = pi / (p + 1)`` of every ``V_pq``."""
    return math.pi / (p + 1)


@lru_cache(maxsize=None)
def radial_coefficients(p: int, q: int) -> tuple[tuple[int, int], ...]:
    """Exact integer coefficients of ``R_pq`` as ``(power, coefficient)`` pairs."""
    _check_index(p, q)
    aq = abs(q)
    terms = []
    for l in range((p - aq) // 2 + 1):
        num = (-1) ** l * math.factorial(p - l)
        den = (
            math.factorial(l)
            * math.factorial((p + aq) // 2 - l)
            * math.factorial((p - aq) // 2 - l)
        )
        # the ratio is always an integer
        terms.append((p - 2 * l, num // den))
    return tuple(terms)


def _radial_eval(p, q, rho):
    # Horner in rho^2 from the highest power down; lowest power is |q|
    coeffs = radial_coefficients(p, q)
    r2 = rho * rho
    acc = np.zeros_like(rho)
    for _, c in coeffs:
        acc = acc * r2 + c
    return acc * rho ** abs(q)


def radial_poly(p: int, q: int, rho):
    """Radial polynomial ``R_pq(rho)``; accepts scalars or arrays."""
    _check_index(p, q)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 1 + 1e-12):
        raise DataError("rho must lie in [0, 1]")
    out = _radial_eval(p, q, rho)
    return out if out.ndim else float(out)


def zernike_basis(p: int, q: int, x, y) -> np.ndarray:
    """Vectorised ``V_pq(x, y)``.

    No domain check: outside the disc this is the polynomial continuation,
    which the pixel-integrated weights need for boundary pixels. ``theta`` is
    taken as 0 at the origin.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho = np.sqrt(x * x + y * y)
    theta = np.arctan2(y, x)
    return _radial_eval(p, q, rho) * np.exp(1j * q * theta)


def zernike_value(idx, x: float, y: float) -> complex:
    p, q = idx
    _check_index(p, q)
    if x * x + y * y > 1.0:
        raise DataError(f"point ({x}, {y}) lies outside the unit disc")
    return complex(zernike_basis(p, q, x, y))


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Complex moments for every admissible index up to ``n_max``.

    ``values[k]`` belongs to ``indices[k]`` where ``indices`` is
    ``admissible_indices(n_max)``.
    """

    n_max: int
    values: np.ndarray
    delta: float = 0.0
    scheme: str = MIDPOINT
    indices: tuple = field(init=False, repr=False)

    def __post_init__(self):
        idx = tuple(admissible_indices(self.n_max))
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (len(idx),):
            raise DataError(
                f"expected {len(idx)} moments for n_max={self.n_max}, got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_dict(cls, n_max: int, moments: dict, **kw) -> "MomentSet":
        """Build from a partial ``{(p, q): value}`` mapping; missing entries are 0."""
        vals = np.zeros(len(admissible_indices(n_max)), dtype=complex)
        pos = _positions(n_max)
        for key, v in moments.items():
            p, q = key
            _check_index(p, q)
            if p > n_max:
                raise DataError(f"index {key} exceeds n_max={n_max}")
            vals[pos[(p, q)]] = v
        return cls(n_max, vals, **kw)

    def __getitem__(self, key) -> complex:
        return complex(self.values[_positions(self.n_max)[tuple(key)]])

    def __len__(self):
        return len(self.indices)

    def as_dict(self) -> dict:
        return {k: complex(v) for k, v in zip(self.indices, self.values)}

    def with_values(self, values) -> "MomentSet":
        return MomentSet(self.n_max, values, self.delta, self.scheme)

    def truncate(self, n_max: int) -> "MomentSet":
        if n_max > self.n_max:
            raise DataError("cannot extend a moment set")
        k = len(admissible_indices(n_max))
        return MomentSet(n_max, self.values[:k].copy(), self.delta, self.scheme)

    @property
    def p_array(self) -> np.ndarray:
        return _index_arrays(self.n_max)[0]

    @property
    def q_array(self) -> np.ndarray:
        return _index_arrays(self.n_max)[1]


@lru_cache(maxsize=64)
def _positions(n_max):
    return {k: i for i, k in enumerate(admissible_indices(n_max))}


@lru_cache(maxsize=64)
def _index_arrays(n_max):
    idx = admissible_indices(n_max)
    p = np.array([k.p for k in idx])
    q = np.array([k.q for k in idx])
    p.setflags(write=False)
    q.setflags(write=False)
    return p, q


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise DataError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


@lru_cache(maxsize=8)
def _conj_basis_rows(m: int, n_max: int, scheme: str) -> np.ndarray:
    """Weights ``w_pq`` for all ``q >= 0`` indices, restricted to masked pixels.

    Rows follow ``[k for k in admissible_indices(n_max) if k.q >= 0]``.
    """
    g = ImageGrid.zeros(m)
    x, y = g.coords
    mask = g.mask
    xs, ys = x[mask], y[mask]
    d = g.delta
    nonneg = [k for k in admissible_indices(n_max) if k.q >= 0]
    out = np.empty((len(nonneg), xs.size), dtype=complex)
    if scheme == MIDPOINT:
        for r, (p, q) in enumerate(nonneg):
            out[r] = d * d * np.conj(zernike_basis(p, q, xs, ys))
    else:
        nodes, wts = np.polynomial.legendre.leggauss(PIXEL_GAUSS_ORDER)
        # sub-points of boundary pixels may fall just outside the disc
        ox, oy = np.meshgrid(nodes * d / 2, nodes * d / 2, indexing="ij")
        ow = np.outer(wts, wts).ravel() * (d / 2) ** 2
        px = xs[:, None] + ox.ravel()[None, :]
        py = ys[:, None] + oy.ravel()[None, :]
        for r, (p, q) in enumerate(nonneg):
            out[r] = np.conj(zernike_basis(p, q, px, py)) @ ow
    out.setflags(write=False)
    return out


def quadrature_weights(grid: ImageGrid, idx, scheme: str = MIDPOINT) -> np.ndarray:
    """``m x m`` matrix of weights ``w_pq(x_i, y_j)``; zero outside the disc."""
    p, q = idx
    _check_index(p, q)
    _check_scheme(scheme)
    rows = _conj_basis_rows(grid.m, p, scheme)
    nonneg = [k for k in admissible_indices(p) if k.q >= 0]
    w = rows[nonneg.index((p, abs(q)))]
    if q < 0:
        w = np.conj(w)
    out = np.zeros((grid.m, grid.m), dtype=complex)
    out[grid.mask] = w
    return out


def estimate_moments(grid: ImageGrid, n_max: int, scheme: str = MIDPOINT) -> MomentSet:
    """Discretised moments ``sum_ij w_pq(x_i, y_j) Z_ij`` over pixels inside D.

    Only the ``q >= 0`` sums are computed; ``q < 0`` entries are their
    conjugates, which is exact for real data.
    """
    _check_scheme(scheme)
    if n_max < 0:
        raise DataError(f"n_max must be nonnegative, got {n_max}")
    rows = _conj_basis_rows(grid.m, n_max, scheme)
    z = grid.values[grid.mask]
    half = rows @ z
    return _expand_nonneg(half, n_max, grid.delta, scheme)


def _expand_nonneg(half, n_max, delta, scheme):
    pos = _positions(n_max)
    vals = np.empty(len(pos), dtype=complex)
    r = 0
    for p in range(n_max + 1):
        for q in range(p % 2, p + 1, 2):
            vals[pos[(p, q)]] = half[r]
            if q:
                vals[pos[(p, -q)]] = np.conj(half[r])
            r += 1
    return MomentSet(n_max, vals, delta, scheme)


def reconstruct(ms: MomentSet, grid: ImageGrid) -> np.ndarray:
    """Truncated series ``sum n_p^-1 A_pq V_pq`` at masked pixel centres."""
    x, y = grid.coords
    mask = grid.mask
    xs, ys = x[mask], y[mask]
    acc = np.zeros(xs.size, dtype=complex)
    for (p, q), a in zip(ms.indices, ms.values):
        if a != 0:
            acc += (a / norm_sq(p)) * zernike_basis(p, q, xs, ys)
    out = np.zeros((grid.m, grid.m))
    out[mask] = acc.real
    return out


def parseval_norm(ms: MomentSet) -> float:
    """``sum n_p^-1 |A_pq|^2``, the squared L2 norm of the truncated expansion."""
    if len(ms) == 0:
        return 0.0
    return float(np.sum(np.abs(ms.values) ** 2 * (ms.p_array + 1)) / math.pi)


def polar_rule(n_radial: int = 200, n_angular: int = 1024):
    """Nodes and weights for integrals over the disc in polar coordinates.

    Gauss-Legendre in rho (with the Jacobian folded into the weights) and the
    periodic trapezoid rule in theta.
    """
    t, w = np.polynomial.legendre.leggauss(n_radial)
    rho = (t + 1) / 2
    w_rho = w / 2 * rho
    theta = 2 * math.pi * np.arange(n_angular) / n_angular
    w_theta = 2 * math.pi / n_angular
    return rho, w_rho, theta, w_theta


def disc_integral(func, n_radial: int = 200, n_angular: int = 1024) -> float:
    """Integral of ``func(x, y)`` over the unit disc."""
    rho, w_rho, theta, w_theta = polar_rule(n_radial, n_angular)
    rr, tt = np.meshgrid(rho, theta, indexing="ij")
    vals = func(rr * np.cos(tt), rr * np.sin(tt))
    return float(w_rho @ vals.sum(axis=1) * w_theta)


def quadrature_moments(func, n_max: int, n_radial: int = 200, n_angular: int = 1024) -> MomentSet:
    """Moments of ``func(x, y)`` by polar quadrature, independent of any pixel grid.

    Uses ``A_pq = 2 pi int_0^1 c_q(rho) R_pq(rho) rho d rho`` where ``c_q`` is the
    angular Fourier coefficient, obtained from an FFT over theta.
    """
    rho, w_rho, theta, _ = polar_rule(n_radial, n_angular)
    if n_max >= n_angular // 2:
        raise DataError("n_angular too small for requested n_max")
    rr, tt = np.meshgrid(rho, theta, indexing="ij")
    vals = np.asarray(func(rr * np.cos(tt), rr * np.sin(tt)), dtype=float)
    # c_q(rho) = (1/2pi) int f e^{-iq theta} d theta
    c = np.fft.fft(vals, axis=1) / n_angular
    half = []
    for p in range(n_max + 1):
        for q in range(p % 2, p + 1, 2):
            half.append(2 * math.pi * np.sum(w_rho * c[:, q] * radial_poly(p, q, rho)))
    return _expand_nonneg(np.array(half), n_max, 0.0, QUADRATURE)

