"""Monte Carlo drivers: axis-estimate distributions, interval coverage, PSF benchmark.

Every replicate ``r`` draws from its own stream seeded with ``base_seed + r``,
so results do not depend on scheduling or on ``n_jobs``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import binomtest, gaussian_kde, norm

from . import psf as P
from .errors import DataError
from .grid import ImageGrid
from .imaging import (
    TRUE_AXIS,
    NoiseSpec,
    TargetSpec,
    add_noise,
    anscombe,
    eval_target,
    make_rng,
)
from .symmetry import (
    ContrastSpec,
    contrast,
    contrast_curvature,
    estimate_axis,
    minimize_contrast,
)
from .zernike import MIDPOINT, estimate_moments, quadrature_moments

BETA_DISTRIBUTION = "beta_distribution"
CI_COVERAGE = "ci_coverage"
PSF_BENCHMARK = "psf_benchmark"
KINDS = (BETA_DISTRIBUTION, CI_COVERAGE, PSF_BENCHMARK)


@dataclass
class ExperimentConfig:
    kind: str = BETA_DISTRIBUTION
    target: str = "f1"
    m: int = 51
    snr: float = 5.0
    sigma: float = 1.0
    n_max: int = 7
    replicates: int = 500
    alpha: float = 0.05
    base_seed: int = 0
    scheme: str = MIDPOINT
    metrics: list = field(default_factory=lambda: ["L1", "L2"])
    n_jobs: int = 1
    # PSF benchmark only
    bead: dict = field(default_factory=dict)
    phantom_size: int = 128
    phantom_peak: float = 400.0
    psf_n_max: int = 4
    psf_interval: list = field(default_factory=lambda: [math.pi / 4, 3 * math.pi / 4])
    rl_iters: int = 500
    noise: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown experiment kind {self.kind!r}")
        if self.replicates < 1:
            raise DataError("replicates must be at least 1")
        if self.kind != PSF_BENCHMARK and self.target not in ("f1", "f2", "f3"):
            raise DataError(f"target must be f1, f2 or f3, got {self.target!r}")
        if self.kind == CI_COVERAGE and self.target not in TRUE_AXIS:
            raise DataError("coverage needs a symmetric target")
        for name in self.metrics:
            if name not in ("L1", "L2"):
                raise DataError(f"unknown metric {name!r}")
        if not 0 < self.alpha < 1:
            raise DataError("alpha must lie in (0, 1)")
        P.BeadSpec(**self.bead)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _map(func, items, n_jobs):
    if n_jobs == 1:
        return [func(i) for i in items]
    with ProcessPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as ex:
        return list(ex.map(func, items))


def wrap_about(beta, center):
    """Representative of ``beta`` modulo pi in ``(center - pi/2, center + pi/2]``."""
    d = (np.asarray(beta) - center + math.pi / 2) % math.pi - math.pi / 2
    return center + d


def _scaled_target(config):
    spec = TargetSpec(config.target)
    clean = eval_target(spec, ImageGrid.zeros(config.m))
    scale = config.snr * config.sigma / float(clean.values.max())
    return spec, clean.with_values(clean.values * scale), scale


def reference_axis(config, n_max=None) -> float:
    """True axis for symmetric targets, else the minimiser of the exact truncated contrast."""
    if config.target in TRUE_AXIS:
        return TRUE_AXIS[config.target]
    n = config.n_max if n_max is None else n_max
    ms = quadrature_moments(TargetSpec(config.target), n)
    return minimize_contrast(ms, ContrastSpec(n))


def asymptotic_sd(config) -> float:
    """``sqrt(8 sigma^2 delta^2 / M''_N)`` with the curvature from exact moments."""
    spec, _, scale = _scaled_target(config)
    ms = quadrature_moments(spec, config.n_max)
    beta_star = reference_axis(config)
    curv = contrast_curvature(ms, beta_star, plug_in=True) * scale ** 2
    delta = 2.0 / config.m
    return math.sqrt(8 * config.sigma ** 2 * delta ** 2 / curv)


def _axis_replicate(r, config, clean):
    noisy = add_noise(clean, NoiseSpec("gaussian", config.sigma, config.base_seed + r))
    est = estimate_axis(noisy, ContrastSpec(config.n_max), config.alpha, config.scheme)
    return est


@dataclass
class BetaDistributionResult:
    config: dict
    beta_star: float
    samples: list
    mean: float
    sd: float
    asymptotic_sd: Optional[float]
    estimates: list

    def to_dict(self) -> dict:
        return asdict(self)


def run_beta_distribution(config: ExperimentConfig) -> BetaDistributionResult:
    _, clean, _ = _scaled_target(config)
    beta_star = reference_axis(config)
    ests = _map(partial(_axis_replicate, config=config, clean=clean),
                range(config.replicates), config.n_jobs)
    samples = [float(b) for b in wrap_about([e.beta_hat for e in ests], beta_star)]
    arr = np.array(samples)
    asd = asymptotic_sd(config) if config.target in TRUE_AXIS else None
    return BetaDistributionResult(
        config=config.to_dict(),
        beta_star=beta_star,
        samples=samples,
        mean=float(arr.mean()),
        sd=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        asymptotic_sd=asd,
        estimates=[e.to_dict() for e in ests],
    )


@dataclass
class CoverageResult:
    config: dict
    beta_star: float
    coverage: float
    covered: list
    mean_halfwidth: float

    def to_dict(self) -> dict:
        return asdict(self)


def run_ci_coverage(config: ExperimentConfig) -> CoverageResult:
    """Fraction of replicates whose interval contains the true axis (modulo pi)."""
    _, clean, _ = _scaled_target(config)
    beta_star = TRUE_AXIS[config.target]
    ests = _map(partial(_axis_replicate, config=config, clean=clean),
                range(config.replicates), config.n_jobs)
    covered = []
    for e in ests:
        dev = float(wrap_about(e.beta_hat, beta_star)) - beta_star
        covered.append(bool(abs(dev) <= e.halfwidth))
    return CoverageResult(
        config=config.to_dict(),
        beta_star=beta_star,
        coverage=float(np.mean(covered)),
        covered=covered,
        mean_halfwidth=float(np.mean([e.halfwidth for e in ests])),
    )


@dataclass
class PsfBenchmarkReport:
    config: dict
    methods: list
    records: list
    mean: dict
    ordering: dict
    sign_tests: dict

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark_setup(config: ExperimentConfig):
    """True PSF, ground-truth phantom and its blurred intensity."""
    bead = P.BeadSpec(**config.bead)
    true = P.true_psf(bead)
    phantom = P.cell_phantom(config.phantom_size, bead.pixel_size)
    conv = P.Convolver(true.kernel)
    blurred = conv.forward(phantom.values)
    scale = config.phantom_peak / float(blurred.max())
    truth = phantom.values * scale
    intensity = np.clip(blurred * scale, 0.0, None)
    return bead, true, truth, intensity


def estimate_psfs(bead_image: ImageGrid, config: ExperimentConfig) -> tuple[dict, float]:
    """The four PSF estimates from one bead image, plus the axis used for symmetrising."""
    models = {
        P.GAUSSIAN_MLE: P.fit_parametric_psf(bead_image, P.GAUSSIAN_MLE),
        P.POWER_GAUSSIAN_MLE: P.fit_parametric_psf(bead_image, P.POWER_GAUSSIAN_MLE),
        P.RAW: P.PsfModel(P.RAW, bead_image),
    }
    spec = ContrastSpec(config.psf_n_max, tuple(config.psf_interval))
    est = estimate_axis(anscombe(bead_image), spec, config.alpha)
    models[P.SYMMETRIZED] = P.PsfModel(P.SYMMETRIZED, P.symmetrize(bead_image, est.beta_hat))
    return {k: models[k] for k in P.METHODS}, est.beta_hat


def _psf_replicate(r, config):
    bead, true, truth, intensity = benchmark_setup(config)
    rng = make_rng(config.base_seed + r)
    bead_img = P.simulate_bead_image(bead, true, rng, noise=config.noise)
    data = rng.poisson(intensity).astype(float) if config.noise else intensity
    models, beta = estimate_psfs(bead_img, config)
    out = []
    for name, model in models.items():
        tracker = P.DistanceTracker(truth, tuple(config.metrics))
        masses, lows = [], []

        def cb(k, gamma, ll):
            tracker(k, gamma, ll)
            masses.append(float(gamma.sum()))
            lows.append(float(gamma.min()))

        P.richardson_lucy(data, model, config.rl_iters, callback=cb)
        ll = np.array(tracker.loglik)
        rec = {"replicate": r, "method": name, "beta_hat": beta}
        for metric, (k, d) in tracker.best.items():
            rec[metric] = d
            rec[f"best_k_{metric}"] = k
        rec["loglik_min_increment"] = float(np.min(np.diff(ll))) if ll.size > 1 else 0.0
        rec["loglik_final"] = float(ll[-1])
        rec["iterate_min"] = min(lows)
        rec["mass_drift"] = float(np.max(np.abs(np.array(masses) - masses[0])) / masses[0])
        out.append(rec)
    return out


def paired_sign_test(a, b) -> float:
    """Two-sided sign-test p-value for ``a < b`` pairs versus ``a > b`` (ties dropped)."""
    a, b = np.asarray(a), np.asarray(b)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5).pvalue)


def run_psf_benchmark(config: ExperimentConfig) -> PsfBenchmarkReport:
    recs = _map(partial(_psf_replicate, config=config), range(config.replicates), config.n_jobs)
    records = [row for rep in recs for row in rep]
    mean, ordering, tests = {}, {}, {}
    for metric in config.metrics:
        by = {m: np.array([r[metric] for r in records if r["method"] == m]) for m in P.METHODS}
        mean[metric] = {m: float(v.mean()) for m, v in by.items()}
        ordering[metric] = sorted(P.METHODS, key=lambda m: mean[metric][m])
        tests[metric] = {
            f"{a}<{b}": paired_sign_test(by[a], by[b])
            for i, a in enumerate(P.METHODS) for b in P.METHODS[i + 1:]
        }
        tests[metric].update({
            f"{b}<{a}": tests[metric][f"{a}<{b}"]
            for i, a in enumerate(P.METHODS) for b in P.METHODS[i + 1:]
        })
    return PsfBenchmarkReport(config.to_dict(), list(P.METHODS), records, mean, ordering, tests)


def run_experiment(config: ExperimentConfig):
    if config.kind == BETA_DISTRIBUTION:
        return run_beta_distribution(config)
    if config.kind == CI_COVERAGE:
        return run_ci_coverage(config)
    return run_psf_benchmark(config)


# output writers -----------------------------------------------------------

def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def write_json(result, path):
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_outputs(result, config: ExperimentConfig, out_dir) -> list[Path]:
    """JSON report plus plot-ready CSV tables; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    write_json(result, written[0])
    if isinstance(result, BetaDistributionResult):
        p = out / "beta_samples.csv"
        write_csv(p, ["replicate", "beta_hat"], enumerate(result.samples))
        written.append(p)
        written.append(_write_density(result, out / "beta_density.csv"))
        written.append(_write_contrast_curves(config, out / "contrast_curve.csv"))
    elif isinstance(result, CoverageResult):
        p = out / "coverage.csv"
        write_csv(p, ["replicate", "covered"], enumerate(int(c) for c in result.covered))
        written.append(p)
    else:
        p = out / "distances.csv"
        keys = ["replicate", "method", "beta_hat", *config.metrics,
                *[f"best_k_{m}" for m in config.metrics]]
        write_csv(p, keys, ([r[k] for k in keys] for r in result.records))
        written.append(p)
    return written


def _write_density(result, path, n_points=256):
    x = np.asarray(result.samples)
    sd = result.sd if result.sd > 0 else 1e-6
    grid = np.linspace(result.beta_star - 5 * sd, result.beta_star + 5 * sd, n_points)
    kde = gaussian_kde(x)(grid) if x.size > 1 and np.ptp(x) > 0 else np.zeros_like(grid)
    asd = result.asymptotic_sd
    limit = norm.pdf(grid, result.beta_star, asd) if asd else np.full_like(grid, np.nan)
    write_csv(path, ["beta", "empirical_density", "asymptotic_density"], zip(grid, kde, limit))
    return path


def _write_contrast_curves(config, path, n_points=1024):
    """Exact truncated contrast and the first replicate's empirical contrast."""
    spec, clean, scale = _scaled_target(config)
    exact = quadrature_moments(spec, config.n_max)
    noisy = add_noise(clean, NoiseSpec("gaussian", config.sigma, config.base_seed))
    emp = estimate_moments(noisy, config.n_max, config.scheme)
    betas = math.pi * np.arange(n_points) / n_points
    write_csv(path, ["beta", "exact_contrast", "empirical_contrast"],
              zip(betas, contrast(exact, betas) * scale ** 2, contrast(emp, betas)))
    return path


def seed_from_env(config: ExperimentConfig) -> ExperimentConfig:
    """Apply the ``SEED`` environment override to ``base_seed``."""
    raw = os.environ.get("SEED")
    if raw is None:
        return config
    try:
        config.base_seed = int(raw)
    except ValueError as exc:
        raise DataError(f"SEED must be an integer, got {raw!r}") from exc
    return config

