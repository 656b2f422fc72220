"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Options may also come from ``--config file.json``; explicit flags win over
file values, which win over built-in defaults. Unknown config keys are rejected.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import experiments as E
from . import psf as P
from .errors import DataError, NumericalError, ZernsymError
from .grid import ImageGrid
from .imaging import NoiseSpec, TargetSpec, add_noise, anscombe, eval_target, snr_scale
from .io import read_image, write_image
from .symmetry import ContrastSpec, contrast_curve, estimate_axis
from .zernike import SCHEMES, estimate_moments

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

DEFAULTS = {
    "estimate-axis": {
        "n_max": 7, "interval": "0:pi", "alpha": 0.05, "scheme": "midpoint",
        "anscombe": False, "one_sided": False, "plug_in_curvature": False,
        "output": None, "contrast_csv": None,
    },
    "symmetrize": {
        "beta": None, "auto": False, "n_max": 4, "interval": "0.7853981633974483:2.356194490192345",
        "anscombe": False, "scheme": "midpoint",
    },
    "deconvolve": {"iters": 500, "truth": None, "metrics": None},
    "simulate": {"m": 51, "snr": 5.0, "sigma": 1.0, "seed": 0, "noise": "gaussian"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_interval(text: str) -> tuple[float, float]:
    """``a:b`` in radians; ``pi`` and ``pi/k`` style fractions are accepted."""
    def num(s):
        s = s.strip().lower()
        if "pi" in s:
            head, _, tail = s.partition("pi")
            factor = float(head.rstrip("*")) if head.strip("*") else 1.0
            div = float(tail.lstrip("/")) if tail.strip("/") else 1.0
            return factor * math.pi / div
        return float(s)

    try:
        a, b = text.split(":")
        return num(a), num(b)
    except ValueError as exc:
        raise UsageError(f"bad interval {text!r}; expected a:b") from exc


def _merge(args, command):
    """Fill unset options from the config file, then from defaults."""
    opts = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load config {args.config}: {exc}") from exc
        unknown = sorted(set(file_opts) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        opts.update(file_opts)
    for key in opts:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    return opts


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_estimate_axis(args) -> int:
    o = _merge(args, "estimate-axis")
    grid = read_image(args.input)
    if o["scheme"] not in SCHEMES:
        raise UsageError(f"unknown scheme {o['scheme']!r}")
    data = anscombe(grid) if o["anscombe"] else grid
    spec = ContrastSpec(int(o["n_max"]), parse_interval(o["interval"]))
    est = estimate_axis(data, spec, float(o["alpha"]), o["scheme"],
                        plug_in_curvature=bool(o["plug_in_curvature"]),
                        two_sided=not o["one_sided"])
    report = est.to_dict()
    report["input"] = str(args.input)
    report["anscombe"] = bool(o["anscombe"])
    _dump(report, o["output"])
    if o["contrast_csv"]:
        ms = estimate_moments(data, spec.n_max, o["scheme"])
        betas, vals = contrast_curve(ms, 1024)
        E.write_csv(o["contrast_csv"], ["beta", "contrast"], zip(betas, vals))
    return 0


def _roughness(values):
    """Difference-based noise variance over the whole square."""
    dx = np.diff(values, axis=0)[:, :-1]
    dy = np.diff(values, axis=1)[:-1, :]
    return float(np.mean(dx * dx + dy * dy) / 4.0)


def cmd_symmetrize(args) -> int:
    o = _merge(args, "symmetrize")
    grid = read_image(args.input)
    if o["auto"] == (o["beta"] is not None):
        raise UsageError("give exactly one of --beta or --auto")
    if o["auto"]:
        data = anscombe(grid) if o["anscombe"] else grid
        spec = ContrastSpec(int(o["n_max"]), parse_interval(o["interval"]))
        beta = estimate_axis(data, spec, scheme=o["scheme"]).beta_hat
    else:
        beta = float(o["beta"])
        if not 0 <= beta < math.pi:
            raise UsageError("--beta must lie in [0, pi)")
    out = P.symmetrize(grid, beta)
    write_image(args.output, out)
    print(
        f"beta={beta!r} noise_var_in={_roughness(grid.values)!r} "
        f"noise_var_out={_roughness(out.values)!r}",
        file=sys.stderr,
    )
    return 0


def cmd_deconvolve(args) -> int:
    o = _merge(args, "deconvolve")
    data = read_image(args.data)
    kernel = read_image(args.psf)
    model = P.PsfModel(P.RAW, kernel)
    truth = read_image(o["truth"]) if o["truth"] else None
    if truth is not None and truth.values.shape != data.values.shape:
        raise DataError("truth and data differ in shape")
    iters = int(o["iters"])
    if iters < 1:
        raise UsageError("--iters must be at least 1")
    report = {"iters": iters}
    if truth is None:
        last = P.richardson_lucy(data, model, iters)[-1]
        write_image(args.output, last)
    else:
        tracker = P.DistanceTracker(truth)
        best = {"k": -1, "d": math.inf, "img": None}

        def cb(k, gamma, ll):
            tracker(k, gamma, ll)
            if tracker.best["L1"][0] == k:
                best.update(k=k, img=gamma.copy())

        P.richardson_lucy(data, model, iters, callback=cb)
        write_image(args.output, ImageGrid(best["img"]))
        report.update({
            "best_k_L1": tracker.best["L1"][0], "L1": tracker.best["L1"][1],
            "best_k_L2": tracker.best["L2"][0], "L2": tracker.best["L2"][1],
            "written_iterate": best["k"],
        })
    _dump(report, o["metrics"])
    return 0


def _resolve_config(name):
    path = Path(name)
    if path.is_file():
        return path
    bundled = resources.files("zernsym") / "configs" / (name if name.endswith(".json") else name + ".json")
    if bundled.is_file():
        return bundled
    raise DataError(f"no config file {name!r} (and no bundled config of that name)")


def cmd_experiment(args) -> int:
    path = _resolve_config(args.config_file)
    config = E.ExperimentConfig.from_dict(json.loads(path.read_text()))
    config = E.seed_from_env(config)
    if args.replicates is not None:
        config.replicates = args.replicates
    if args.n_jobs is not None:
        config.n_jobs = args.n_jobs
    if args.base_seed is not None:
        config.base_seed = args.base_seed
    config.__post_init__()
    result = E.run_experiment(config)
    out = args.out or Path(path.name).stem + "_out"
    for p in E.write_outputs(result, config, out):
        print(p)
    return 0


def cmd_simulate(args) -> int:
    o = _merge(args, "simulate")
    if args.target == "bead":
        bead = P.BeadSpec()
        img = P.simulate_bead_image(bead, P.true_psf(bead), int(o["seed"]),
                                    noise=o["noise"] != "none")
    else:
        clean = eval_target(TargetSpec(args.target), ImageGrid.zeros(int(o["m"])))
        img = snr_scale(clean, float(o["snr"]), float(o["sigma"]))
        if o["noise"] == "gaussian":
            img = add_noise(img, NoiseSpec("gaussian", float(o["sigma"]), int(o["seed"])))
        elif o["noise"] == "poisson":
            raise UsageError("Poisson noise needs a nonnegative target; use 'bead'")
    write_image(args.output, img)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="zernsym", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate-axis", help="estimate the reflection axis of an image")
    p.add_argument("input")
    p.add_argument("--config")
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--interval", help="search range a:b in radians, e.g. 0.7853:2.3562")
    p.add_argument("--alpha", type=float)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--anscombe", action="store_const", const=True)
    p.add_argument("--one-sided", dest="one_sided", action="store_const", const=True,
                   help="use the 1-alpha quantile instead of 1-alpha/2")
    p.add_argument("--plug-in-curvature", dest="plug_in_curvature", action="store_const", const=True)
    p.add_argument("--output", "-o")
    p.add_argument("--contrast-csv", dest="contrast_csv")
    p.set_defaults(func=cmd_estimate_axis)

    p = sub.add_parser("symmetrize", help="average an image over its two reflection axes")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--beta", type=float)
    p.add_argument("--auto", action="store_const", const=True)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--interval")
    p.add_argument("--anscombe", action="store_const", const=True)
    p.add_argument("--scheme", choices=SCHEMES)
    p.set_defaults(func=cmd_symmetrize)

    p = sub.add_parser("deconvolve", help="Richardson-Lucy deconvolution")
    p.add_argument("data")
    p.add_argument("psf")
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--iters", type=int)
    p.add_argument("--truth")
    p.add_argument("--metrics", help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_deconvolve)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment from a JSON config")
    p.add_argument("config_file", help="path or bundled name (fig5_f1_snr5, table1, ...)")
    p.add_argument("--out")
    p.add_argument("--replicates", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("simulate", help="write a synthetic test image")
    p.add_argument("target", choices=("f1", "f2", "f3", "bead"))
    p.add_argument("output")
    p.add_argument("--config")
    p.add_argument("--m", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", choices=("gaussian", "poisson", "none"))
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"zernsym: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"zernsym: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ZernsymError) as exc:
        print(f"zernsym: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
