"""Command-line pipeline: simulate, beamform, metrics, profile, compare.

Every failure path exits nonzero and prints a single machine-parsable
line ``ERROR <code> <slug>: <message>`` to stderr.  Exit codes:

* 0 success
* 2 usage or configuration problem
* 3 filesystem problem (unreadable input, unwritable output)
* 4 file format problem or data/config mismatch
* 5 solver failure or non-convergence (partial outputs are still written
  where the contract says so)
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings

import numpy as np

from . import io as formats
from .acquisition import RawDataCube, analytic_signal, compensate_delays
from .adaptive import (
    SolverWarning,
    bs_capon_beamform,
    iaa_beamform,
    multibeam_capon_beamform,
    mv_beamform,
)
from .classic import RfImage, das_beamform
from .config import METHOD_NAMES, ExperimentConfig, load_config
from .errors import ConfigError, FormatError
from .geometry import centered_steering_matrix, decimation_matrix
from .imaging import envelope, log_compress
from .inverse import SolveConfig, inverse_beamform
from .metrics import cnr, region_mask, resolution_gain, snr
from .phantom import simulate_raw

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of printing usage and exiting."""

    def error(self, message):
        raise _UsageError(message)


def _fail(code: int, slug: str, message) -> int:
    print(f"ERROR {code} {slug}: {message}", file=sys.stderr)
    return code


def _build_parser() -> _Parser:
    parser = _Parser(prog="usbeam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a raw channel-data cube")
    p.add_argument("--config", required=True, help="config file or preset name")
    p.add_argument("--out", required=True, help="output cube path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--phantom-out", default=None, help="also write the scatterer list")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("beamform", help="beamform a cube with one method")
    p.add_argument("cube", help="raw cube path")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, choices=METHOD_NAMES,
                   help="override the config's method")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--bmode", default=None, help="also write a B-mode PGM here")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("metrics", help="score beamformed images")
    p.add_argument("images", nargs="+", help="image paths to score")
    p.add_argument("--regions", default=None, help="regions file (target/background)")
    p.add_argument("--reference", default=None,
                   help="reference image for resolution gain (default: the "
                        "delay-and-sum input, if present)")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("profile", help="export a lateral amplitude profile")
    p.add_argument("image", help="image path")
    p.add_argument("--depth", type=float, required=True, help="depth in meters")
    p.add_argument("--average", type=int, default=1,
                   help="number of depth rows to average (default 1)")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("compare", help="run several methods and tabulate results")
    p.add_argument("cube", nargs="?", default=None,
                   help="raw cube path (default: simulate from the config)")
    p.add_argument("--config", required=True)
    p.add_argument("--methods", default="das,mv,bp,ls",
                   help="comma-separated method list (default das,mv,bp,ls)")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--images-dir", default=None, help="also save per-method images here")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def _load_matching_cube(path, cfg: ExperimentConfig) -> RawDataCube:
    cube = formats.load_cube(path)
    geom, scan = cfg.geometry, cfg.scan
    want = (
        geom.num_elements,
        scan.num_samples(geom.sampling_frequency, geom.sound_speed),
        scan.num_emissions,
    )
    if cube.data.shape != want:
        raise FormatError(
            f"cube shape {cube.data.shape} does not match config {want}"
        )
    if cube.fs != geom.sampling_frequency:
        raise FormatError(
            f"cube sampling rate {cube.fs} does not match config "
            f"{geom.sampling_frequency}"
        )
    return cube


def _run_method(
    cube: RawDataCube,
    cfg: ExperimentConfig,
    method: str,
    threads: int | None,
) -> tuple[RfImage, float, list[str]]:
    """Analytic conversion -> delay compensation -> one beamformer, timed.

    Returns the image, the wall time of that pipeline, and any solver
    warnings raised along the way.
    """
    geom, scan = cfg.geometry, cfg.scan
    params = cfg.params_for(method)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SolverWarning)
        start = time.perf_counter()
        analytic = analytic_signal(cube)
        focused = compensate_delays(analytic, geom, scan, threads=threads)
        if method == "das":
            img = das_beamform(focused, geom, scan, apodization=params["apodization"])
        elif method == "mv":
            img = mv_beamform(focused, geom, scan, threads=threads, **params)
        elif method == "bs_capon":
            img = bs_capon_beamform(focused, geom, scan, threads=threads, **params)
        elif method == "multibeam_capon":
            img = multibeam_capon_beamform(focused, geom, scan, **params)
        elif method == "iaa":
            img = iaa_beamform(focused, geom, scan, **params)
        else:
            img = _run_inverse(focused, cfg, method, params)
        elapsed = time.perf_counter() - start
    notes = [str(w.message) for w in caught if issubclass(w.category, SolverWarning)]
    return img, elapsed, notes


def _run_inverse(focused: RawDataCube, cfg, method: str, params: dict) -> RfImage:
    geom, scan = cfg.geometry, cfg.scan
    k = scan.num_emissions
    dec = int(params["decimation"])
    if dec < 1 or k % dec != 0:
        raise ConfigError(
            f"decimation {dec} must evenly divide the {k} emissions"
        )
    angles = scan.beam_angles(params["reference_depth"])
    # unit-norm columns so reg_lambda means the same thing at every aperture size
    a = centered_steering_matrix(angles, geom) / np.sqrt(geom.num_elements)
    d = decimation_matrix(k, k // dec)
    observation = das_beamform(
        focused, geom, scan, apodization=params["observation_apodization"]
    )
    if method == "ls":
        solve = SolveConfig(prior="ls", reg_lambda=params["reg_lambda"])
    else:
        solve = SolveConfig(
            prior="bp",
            reg_lambda=params["reg_lambda"],
            max_iters=int(params["max_iters"]),
            tol=float(params["tol"]),
        )
    return inverse_beamform(observation, a, d, solve)


def _save_image_outputs(img: RfImage, cfg: ExperimentConfig, out, bmode_path) -> None:
    formats.save_image(img, out)
    if bmode_path:
        bmode = log_compress(envelope(img), dynamic_range=cfg.dynamic_range)
        formats.save_bmode_pgm(bmode, bmode_path)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    if args.seed is not None:
        # Reseed both the scatterer layout (for seeded phantoms) and the noise.
        cfg = ExperimentConfig(
            geometry=cfg.geometry, scan=cfg.scan, phantom_spec=cfg.phantom_spec,
            simulate=cfg.simulate, method=cfg.method,
            method_params=cfg.method_params, regions=cfg.regions, seed=seed,
            dynamic_range=cfg.dynamic_range, preset=cfg.preset,
        )
    phantom = cfg.build_phantom()
    cube = simulate_raw(
        phantom,
        cfg.geometry,
        cfg.pulse(),
        cfg.scan,
        noise_snr_db=cfg.simulate.get("noise_snr_db"),
        seed=seed,
        tx_beam_sigma=cfg.tx_beam_sigma(),
        threads=args.threads,
    )
    formats.save_cube(cube, args.out)
    if args.phantom_out:
        formats.save_phantom(phantom, args.phantom_out)
    m, n, k = cube.data.shape
    print(f"wrote {args.out}: M={m} N={n} K={k}")
    return 0


def cmd_beamform(args) -> int:
    cfg = load_config(args.config)
    method = args.method or cfg.method
    if method is None:
        raise ConfigError("no method given (use --method or set it in the config)")
    cube = _load_matching_cube(args.cube, cfg)
    img, elapsed, notes = _run_method(cube, cfg, method, args.threads)
    _save_image_outputs(img, cfg, args.out, args.bmode)
    print(f"wrote {args.out}: method={method} wall_time_s={elapsed:.6f}")
    if notes:
        return _fail(5, "solver", "; ".join(notes))
    return 0


def _check_regions(regions, images) -> tuple:
    """Resolve target/background regions and verify they do not overlap."""
    if regions is None:
        return None, None
    try:
        target = regions["target"]
        background = regions["background"]
    except KeyError as exc:
        raise ConfigError(f"regions file needs a {exc.args[0]!r} region") from None
    probe = images[0]
    if np.any(region_mask(probe, target) & region_mask(probe, background)):
        raise ConfigError("target and background regions overlap")
    return target, background


def _metric_rows(images, envs, target, background, reference_env):
    rows = []
    for img, env in zip(images, envs):
        row = {"method": img.provenance.get("method", "unknown")}
        if target is not None:
            row["cnr"] = cnr(env, target, background)
            row["snr"] = snr(env, background)
        if reference_env is not None:
            row["rg"] = resolution_gain(reference_env, env)
        rows.append(row)
    return rows


def cmd_metrics(args) -> int:
    images = [formats.load_image(p) for p in args.images]
    envs = [envelope(im) if im.kind == "rf" else im for im in images]
    regions = formats.load_regions(args.regions) if args.regions else None
    target, background = _check_regions(regions, envs)

    if args.reference is not None:
        ref = formats.load_image(args.reference)
        reference_env = envelope(ref) if ref.kind == "rf" else ref
    else:
        das_inputs = [
            env for im, env in zip(images, envs)
            if im.provenance.get("method") == "das"
        ]
        if not das_inputs:
            raise ConfigError(
                "resolution gain needs --reference (or a delay-and-sum image "
                "among the inputs)"
            )
        reference_env = das_inputs[0]

    rows = _metric_rows(images, envs, target, background, reference_env)
    _emit_csv(rows, args.out, include_time=False)
    return 0


def _emit_csv(rows, out, include_time: bool) -> None:
    if out is None:
        sys.stdout.write(formats.metrics_csv_text(rows, include_time=include_time))
    else:
        formats.write_metrics_csv(rows, out, include_time=include_time)


def cmd_profile(args) -> int:
    img = formats.load_image(args.image)
    env = envelope(img) if img.kind == "rf" else img
    depths = env.depths
    if not depths[0] <= args.depth <= depths[-1]:
        raise ConfigError(
            f"depth {args.depth} outside image range "
            f"[{depths[0]:.6f}, {depths[-1]:.6f}]"
        )
    if args.average < 1:
        raise ConfigError("--average must be at least 1")
    idx = int(np.argmin(np.abs(depths - args.depth)))
    half = (args.average - 1) // 2
    lo = max(0, idx - half)
    hi = min(env.data.shape[1], lo + args.average)
    lo = max(0, hi - args.average)
    band = np.asarray(env.data[:, lo:hi], dtype=float).mean(axis=1)
    peak = band.max()
    if peak <= 0:
        raise ValueError("profile band is identically zero")
    amplitude_db = 20.0 * np.log10(np.maximum(band, peak * 1e-12) / peak)
    if env.scan_kind == "sector":
        lateral = depths[idx] * np.sin(env.scanline_positions)
    else:
        lateral = env.scanline_positions
    if args.out is None:
        sys.stdout.write(formats.profile_csv_text(lateral, amplitude_db))
    else:
        formats.write_profile_csv(lateral, amplitude_db, args.out)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHOD_NAMES:
            raise ConfigError(f"unknown method {m!r} in --methods")
    if not methods:
        raise ConfigError("--methods must name at least one method")
    # Delay-and-sum anchors the resolution-gain column, so it always runs first.
    methods = ["das"] + [m for m in methods if m != "das"]

    if args.cube is not None:
        cube = _load_matching_cube(args.cube, cfg)
    else:
        phantom = cfg.build_phantom()
        cube = simulate_raw(
            phantom, cfg.geometry, cfg.pulse(), cfg.scan,
            noise_snr_db=cfg.simulate.get("noise_snr_db"),
            seed=seed, tx_beam_sigma=cfg.tx_beam_sigma(), threads=args.threads,
        )

    target = background = None
    if cfg.regions and "target" in cfg.regions and "background" in cfg.regions:
        target = cfg.regions["target"]
        background = cfg.regions["background"]

    if args.images_dir:
        os.makedirs(args.images_dir, exist_ok=True)
    rows = []
    reference_env = None
    all_notes: list[str] = []
    for method in methods:
        img, elapsed, notes = _run_method(cube, cfg, method, args.threads)
        all_notes.extend(notes)
        env = envelope(img)
        if reference_env is None:
            reference_env = env
            if target is not None:
                _check_regions({"target": target, "background": background}, [env])
        row = {"method": method, "wall_time_s": elapsed,
               "rg": resolution_gain(reference_env, env)}
        if target is not None:
            row["cnr"] = cnr(env, target, background)
            row["snr"] = snr(env, background)
        rows.append(row)
        if args.images_dir:
            base = os.path.join(args.images_dir, method)
            formats.save_image(img, base + ".usim")
            bmode = log_compress(env, dynamic_range=cfg.dynamic_range)
            formats.save_bmode_pgm(bmode, base + ".pgm")
    _emit_csv(rows, args.out, include_time=True)
    if all_notes:
        return _fail(5, "solver", "; ".join(all_notes))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(2, "usage", exc)
    try:
        return args.func(args)
    except _UsageError as exc:
        return _fail(2, "usage", exc)
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except FormatError as exc:
        return _fail(4, "format", exc)
    except np.linalg.LinAlgError as exc:
        return _fail(5, "solver", exc)
    except ValueError as exc:
        return _fail(4, "mismatch", exc)
    except OSError as exc:
        return _fail(3, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
