"""Command-line front end: ``ncbc {phantom,correct,evaluate,compare}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NcbcError
from .image_io import (
    atomic_write,
    config_to_dict,
    load_config,
    load_image,
    load_rois,
    save_image,
    save_rois,
)
from .inference import NcbcConfig, lowpass_baseline, ncbc_reconstruct
from .lattice import LatticeDims
from .metrics import MetricsReport, Roi, image_metrics
from .phantom import (
    BiasParams,
    NoiseParams,
    ProstateCard,
    default_noise_sigma,
    make_synthetic_phantom,
)

logger = logging.getLogger("ncbc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METHODS = ("ncbc", "lowpass", "none")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _announce(command: str, doc: dict):
    # every run echoes its effective settings for reproducibility
    print(json.dumps({"command": command, **doc}, sort_keys=True))


def _parse_pair(text: str, sep: str, kind=float):
    parts = text.split(sep)
    if len(parts) != 2:
        raise UsageError(f"expected two values separated by {sep!r}, got {text!r}")
    try:
        return kind(parts[0]), kind(parts[1])
    except ValueError:
        raise UsageError(f"could not parse {text!r}") from None


def _float_image(path) -> np.ndarray:
    return np.asarray(load_image(path), dtype=float)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("result contains non-finite values")


def default_kernel_sigma(shape) -> float:
    return max(shape) / 3.0


# ---------------------------------------------------------------- phantom


def cmd_phantom(args) -> int:
    if args.testcard:
        w, h = _parse_pair(args.testcard.lower(), "x", int)
        dims = LatticeDims(width=w, height=h)
        clean = ProstateCard().render(dims)
    else:
        clean = _float_image(args.clean)
        dims = LatticeDims.of(clean)
    bias_kwargs = {"gain_min": args.gain_min, "gain_max": args.gain_max}
    if args.bias_center:
        bias_kwargs["center"] = _parse_pair(args.bias_center, ",")
    if args.bias_sigma is not None:
        bias_kwargs["sigma"] = args.bias_sigma
    bp = BiasParams.coil_below(dims, **bias_kwargs)
    sigma = default_noise_sigma(clean) if args.noise_sigma is None else args.noise_sigma
    noise = NoiseParams(sigma=sigma, seed=args.seed)
    observed, truth, bias = make_synthetic_phantom(clean, bp, noise)

    out = Path(args.out_dir)
    save_image(observed, out / "observed.raw")
    save_image(truth, out / "truth.raw")
    save_image(bias, out / "bias.raw")
    if args.testcard:
        rois = [Roi(name, *box) for name, box in ProstateCard().rois(dims).items()]
        save_rois(rois, out / "rois.json")
    provenance = {
        "source": f"testcard:{dims.width}x{dims.height}" if args.testcard else str(args.clean),
        "bias": {"center": list(bp.center), "sigma": bp.sigma, "gain_min": bp.gain_min, "gain_max": bp.gain_max},
        "noise": {"sigma": noise.sigma, "seed": noise.seed},
        "seed": args.seed,
    }
    atomic_write(out / "provenance.json", _dump(provenance))
    _announce("phantom", provenance)
    return EXIT_OK


# ---------------------------------------------------------------- correct


def _load_cfg(args) -> NcbcConfig:
    cfg = load_config(args.config) if args.config else NcbcConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _run_method(method: str, v: np.ndarray, cfg: NcbcConfig, kernel_sigma):
    if method == "ncbc":
        res = ncbc_reconstruct(v, cfg)
        _check_finite(res.latent, res.bias)
        return res.latent, res.bias, res.diagnostics.to_dict()
    if method == "lowpass":
        ks = kernel_sigma or default_kernel_sigma(v.shape)
        res = lowpass_baseline(v, ks)
        _check_finite(res.latent, res.bias)
        return res.latent, res.bias, {**res.diagnostics.to_dict(), "kernel_sigma": ks}
    return v.copy(), np.ones_like(v), {}


def cmd_correct(args) -> int:
    v = _float_image(args.input)
    cfg = _load_cfg(args)
    latent, bias, diag = _run_method(args.method, v, cfg, args.kernel_sigma)
    save_image(latent, args.out_image)
    save_image(bias, args.out_bias)
    doc = {"method": args.method, "seed": cfg.seed, "config": config_to_dict(cfg), "diagnostics": diag}
    if args.diagnostics:
        atomic_write(args.diagnostics, _dump(doc))
    _announce("correct", {"method": args.method, "seed": cfg.seed, "config": config_to_dict(cfg)})
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def _roi_map(path, dims) -> dict[str, Roi]:
    return {r.name: r for r in load_rois(path, dims)}


def cmd_evaluate(args) -> int:
    img = _float_image(args.image)
    dims = LatticeDims.of(img)
    truth = _float_image(args.truth) if args.truth else None
    rois = _roi_map(args.rois, dims)
    class_rois = _roi_map(args.class_rois, dims) if args.class_rois else None
    undefined = {}
    values = image_metrics(img, rois, truth=truth, class_rois=class_rois, undefined=undefined)
    report = MetricsReport(meta={"image": str(args.image), "truth": args.truth and str(args.truth)})
    if undefined:
        report.meta["undefined"] = undefined
    report.add("evaluated", Path(args.image).stem, values)
    atomic_write(args.report, report.to_json() + "\n")
    _announce("evaluate", {"image": str(args.image), "metrics": sorted(values)})
    return EXIT_OK


# ---------------------------------------------------------------- compare


def _case_names(paths: list[Path]) -> list[str]:
    if len(paths) == 1:
        return [paths[0].stem]
    root = Path(os.path.commonpath([str(p.parent) for p in paths]))
    names = []
    for p in paths:
        rel = p.relative_to(root).with_suffix("")
        names.append(rel.as_posix())
    return names


def _worker_count() -> int:
    raw = os.environ.get("NCBC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"NCBC_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"NCBC_THREADS must be >= 0, got {n}")
    return n or (os.cpu_count() or 1)


def _compare_case(path: Path, methods, cfg, kernel_sigma, rois):
    v = _float_image(path)
    dims = LatticeDims.of(v)
    for roi in rois.values():
        if not roi.fits(dims.shape):
            raise NcbcError(f"roi {roi.name!r} exceeds image {path}")
    truth_path = path.with_name("truth.raw")
    truth = _float_image(truth_path) if truth_path != path and truth_path.exists() else None
    out, undefined = {}, {}
    # the uncorrected image is always scored: it is the paired-test reference
    for method in dict.fromkeys(("none", *methods)):
        latent = _run_method(method, v, cfg, kernel_sigma)[0]
        skipped = {}
        out[method] = image_metrics(latent, rois, truth=truth, undefined=skipped)
        if skipped:
            undefined[method] = skipped
    return out, undefined


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if not methods or bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
    paths = sorted(Path(p) for p in glob.glob(args.inputs, recursive=True))
    if not paths:
        raise NcbcError(f"no inputs match {args.inputs!r}")
    cfg = _load_cfg(args)
    rois = {r.name: r for r in load_rois(args.rois)}
    names = _case_names(paths)
    workers = _worker_count()

    def job(path):
        # floating-point error state is per thread
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            return _compare_case(path, methods, cfg, args.kernel_sigma, rois)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(job, paths))

    report = MetricsReport()
    reference = MetricsReport()
    undefined = {}
    for name, (res, skipped) in sorted(zip(names, results), key=lambda item: item[0]):
        for method in methods:
            report.add(method, name, res[method])
            if method in skipped:
                undefined.setdefault(method, {})[name] = skipped[method]
        reference.add("none", name, res["none"])
    if len(paths) >= 2:
        for method in methods:
            if method != "none":
                reference.images[method] = report.images[method]
        reference.compute_p_values("none")
        report.p_values = reference.p_values
    report.meta = {
        "methods": methods,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "kernel_sigma": args.kernel_sigma,
        "cases": sorted(names),
    }
    if undefined:
        report.meta["undefined"] = undefined
    atomic_write(args.report, report.to_json() + "\n")
    _announce("compare", {"methods": methods, "seed": cfg.seed, "cases": len(paths)})
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ncbc", description="Joint bias-field correction and denoising.")
    parser.add_argument("--version", action="version", version=f"ncbc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic corrupted/ground-truth pair")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--clean", type=Path, help="clean input image")
    src.add_argument("--testcard", metavar="WxH", help="procedural test card size")
    p.add_argument("--bias-center", metavar="X,Y")
    p.add_argument("--bias-sigma", type=float)
    p.add_argument("--gain-min", type=float, default=0.3)
    p.add_argument("--gain-max", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, help="default: 5%% of the clean maximum")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("correct", help="correct one image")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=("ncbc", "lowpass"), default="ncbc")
    p.add_argument("--kernel-sigma", type=float, help="lowpass width (default: max side / 3)")
    p.add_argument("--out-image", type=Path, required=True)
    p.add_argument("--out-bias", type=Path, required=True)
    p.add_argument("--diagnostics", type=Path)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("evaluate", help="score one image")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--truth", type=Path)
    p.add_argument("--rois", type=Path, required=True)
    p.add_argument("--class-rois", type=Path)
    p.add_argument("--report", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="score several methods over many cases")
    p.add_argument("--inputs", required=True, metavar="GLOB")
    p.add_argument("--methods", default="ncbc,lowpass,none")
    p.add_argument("--rois", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel-sigma", type=float)
    p.add_argument("--report", type=Path, required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ncbc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            return args.func(args)
    except UsageError as exc:
        print(f"ncbc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"ncbc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NcbcError, OSError) as exc:
        print(f"ncbc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
