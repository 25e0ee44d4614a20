"""Command-line entry point: ``supercam <subcommand> ...``.

Exit status is 0 on success, 1 on a validation error and 2 when a sweep
finished but some corpus entries failed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import io
from .core import run_supercam
from .harness import PIPELINES, SweepConfig, parse_budget, render_outputs, run_sweep, synth_corpus
from .metrics import depth_metrics, evaluate
from .snic import run_snic_restricted
from .spad import (CubeLayout, SensorConfig, SPADSensor, load_photon_cube, recover_intensity,
                   write_photon_cube)

log = logging.getLogger("supercam")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2

DEFAULTS = {
    "budget": ["68k"], "pipeline": list(PIPELINES), "seed": [0], "frames": 256, "ppp": 2.0,
    "mode": "spad", "blur": "on", "out": "out", "workers": 1, "compactness": 10.0,
    "n": 20, "exposure_scale": 1.0, "min_regions": 5, "max_regions": 30, "noise": 0.02,
}


def _add_common(p):
    p.add_argument("--config", help="TOML file supplying any of these flags")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, action="append", help="random seed (repeatable)")


def _add_sensor(p):
    p.add_argument("--frames", type=int, help="binary frames per exposure (default 256)")
    p.add_argument("--ppp", type=float, help="mean photons per pixel (default 2.0)")
    p.add_argument("--mode", choices=("spad", "direct"), help="seed measurement mode (default spad)")


def _add_budget(p):
    p.add_argument("--budget", action="append", help='memory budget, e.g. "68k" (repeatable)')
    p.add_argument("--blur", choices=("on", "off"), help="apply the grid-derived Gaussian blur")


def build_parser():
    parser = argparse.ArgumentParser(prog="supercam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a SPAD capture, or recover an SPC1 cube")
    p.add_argument("image", nargs="?", help="source image (omit with --cube)")
    p.add_argument("--cube", help="ingest this SPC1 photon cube instead of simulating")
    p.add_argument("--exposure-scale", type=float, dest="exposure_scale",
                   help="exposure scale used to recover an ingested cube (default 1.0)")
    _add_common(p)
    _add_sensor(p)

    p = sub.add_parser("supercam", help="run SuperCam on one image")
    p.add_argument("image")
    _add_common(p)
    _add_sensor(p)
    _add_budget(p)

    p = sub.add_parser("snic", help="run memory-restricted SNIC on one image")
    p.add_argument("image")
    p.add_argument("--compactness", type=float)
    _add_common(p)
    _add_budget(p)

    p = sub.add_parser("eval", help="score a label map against ground truth")
    p.add_argument("--labels", help="predicted label map")
    p.add_argument("--gt", help="ground-truth label map")
    p.add_argument("--depth-pred", dest="depth_pred", help="predicted depth (.npy)")
    p.add_argument("--depth-gt", dest="depth_gt", help="ground-truth depth (.npy, 0 = invalid)")
    p.add_argument("--zero-is-void", dest="zero_is_void", action="store_true")
    _add_common(p)

    p = sub.add_parser("sweep", help="budget sweep over a corpus")
    p.add_argument("--corpus")
    p.add_argument("--pipeline", action="append", choices=PIPELINES)
    p.add_argument("--workers", type=int)
    p.add_argument("--compactness", type=float)
    p.add_argument("--timing", action="store_true", help="record wall time (makes the CSV non-reproducible)")
    p.add_argument("--zero-is-void", dest="zero_is_void", action="store_true")
    _add_common(p)
    _add_sensor(p)
    _add_budget(p)

    p = sub.add_parser("synth", help="generate a synthetic piecewise-constant corpus")
    p.add_argument("--n", type=int)
    p.add_argument("--min-regions", dest="min_regions", type=int)
    p.add_argument("--max-regions", dest="max_regions", type=int)
    p.add_argument("--noise", type=float, help="texture noise standard deviation")
    p.add_argument("--width", type=int, default=321)
    p.add_argument("--height", type=int, default=481)
    _add_common(p)

    p = sub.add_parser("render", help="write qualitative panels for one image")
    p.add_argument("image")
    p.add_argument("--pipeline", action="append", choices=PIPELINES)
    p.add_argument("--compactness", type=float)
    _add_common(p)
    _add_sensor(p)
    _add_budget(p)
    return parser


def _merge_config(args):
    """Fill unset flags from ``--config`` and then from DEFAULTS."""
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
        for key, value in cfg.items():
            key = key.replace("-", "_")
            if key in ("budget", "pipeline", "seed") and not isinstance(value, list):
                value = [value]
            if getattr(args, key, None) in (None, False):
                setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _sensor(args):
    if args.mode == "direct":
        return None
    return SensorConfig(frames=args.frames, mean_photons_per_pixel=args.ppp)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.cube:
        cube = load_photon_cube(args.cube, CubeLayout())
        phi = recover_intensity(cube, args.exposure_scale, SensorConfig(frames=max(cube.frame_count, 2),
                                                                       mean_photons_per_pixel=1.0))
        peak = phi.max()
        io.save_image(out / "recovered.png", phi / peak if peak > 0 else phi)
        np.save(out / "recovered.npy", phi)
        print(f"ingested {cube.width}x{cube.height}x{cube.frame_count} cube -> {out / 'recovered.png'}")
        return EXIT_OK
    if not args.image:
        raise ValueError("simulate needs an image or --cube")
    image = io.load_image(args.image)
    sensor = SPADSensor(frames=args.frames, mean_photons_per_pixel=args.ppp, random_state=args.seed[0])
    sensor.fit(image)
    cubes = sensor.capture(image)
    for k, cube in enumerate(cubes):
        name = "cube.spc" if len(cubes) == 1 else f"cube_c{k}.spc"
        write_photon_cube(out / name, cube)
    rec = np.stack([recover_intensity(cb, sensor.exposure_scale_, sensor.config_) for cb in cubes], axis=-1)
    io.save_image(out / "recovered.png", rec[:, :, 0] if len(cubes) == 1 else rec)
    _write_json(out / "exposure.json", {"exposure_scale": sensor.exposure_scale_, "frames": args.frames,
                                        "mean_photons_per_pixel": args.ppp, "seed": args.seed[0]})
    print(f"wrote {len(cubes)} cube(s) to {out}")
    return EXIT_OK


def cmd_supercam(args):
    image = io.load_image(args.image)
    out = Path(args.out)
    for budget in (parse_budget(b) for b in args.budget):
        res = run_supercam(image, budget, sensor=_sensor(args), seed=args.seed[0], blur=args.blur == "on")
        d = out / f"supercam_{budget}"
        d.mkdir(parents=True, exist_ok=True)
        render_outputs(res, d, prefix="supercam")
        io.save_labels(d / "labels.pgm", res.labels)
        res.superpixels.save(d / "superpixels.sps")
        _write_json(d / "report.json", res.report.to_dict())
        print(f"{budget} B: {res.report.realized_units} superpixels, footprint {res.report.footprint_bytes} B")
    return EXIT_OK


def cmd_snic(args):
    image = io.load_image(args.image)
    out = Path(args.out)
    for budget in (parse_budget(b) for b in args.budget):
        res = run_snic_restricted(image, budget, with_blur=args.blur == "on", compactness=args.compactness)
        d = out / f"{res.report.pipeline}_{budget}"
        d.mkdir(parents=True, exist_ok=True)
        render_outputs(res, d, prefix=res.report.pipeline)
        io.save_labels(d / "labels.pgm", res.labels)
        _write_json(d / "report.json", res.report.to_dict())
        print(f"{budget} B: K={res.report.realized_units} on {res.split.scaled_width}x{res.split.scaled_height}, "
              f"footprint {res.report.footprint_bytes} B")
    return EXIT_OK


def cmd_eval(args):
    report = {}
    if args.labels or args.gt:
        if not (args.labels and args.gt):
            raise ValueError("eval needs both --labels and --gt")
        gt = io.load_labels(args.gt, zero_is_void=args.zero_is_void)
        pred = io.load_labels(args.labels, shape=gt.shape)
        report.update(evaluate(pred, gt).to_dict())
    if args.depth_pred or args.depth_gt:
        if not (args.depth_pred and args.depth_gt):
            raise ValueError("eval needs both --depth-pred and --depth-gt")
        report["abs_rel"], report["delta1"] = depth_metrics(np.load(args.depth_pred), np.load(args.depth_gt))
    if not report:
        raise ValueError("nothing to evaluate")
    print(json.dumps({k: v for k, v in report.items() if v is not None}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args):
    if not args.corpus:
        raise ValueError("sweep needs --corpus")
    config = SweepConfig(
        budgets=args.budget, corpus=args.corpus, pipelines=tuple(args.pipeline), seeds=tuple(args.seed),
        out_dir=args.out, mode=args.mode, frames=args.frames, mean_photons_per_pixel=args.ppp,
        compactness=args.compactness, workers=args.workers, record_timing=bool(args.timing),
        zero_is_void=bool(args.zero_is_void),
    )
    result = run_sweep(config)
    print(f"{len(result.rows)} rows -> {result.csv_path}")
    if result.failures:
        print(f"{len(result.failures)} rows failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_synth(args):
    pairs = synth_corpus(args.n, args.seed[0], args.out, width=args.width, height=args.height,
                         min_regions=args.min_regions, max_regions=args.max_regions, texture_noise=args.noise)
    print(f"wrote {len(pairs)} image/label pairs to {args.out}")
    return EXIT_OK


def cmd_render(args):
    image = io.load_image(args.image)
    out = Path(args.out)
    written = []
    for budget in (parse_budget(b) for b in args.budget):
        for name in args.pipeline:
            if name == "supercam":
                res = run_supercam(image, budget, sensor=_sensor(args), seed=args.seed[0],
                                   blur=args.blur == "on")
            else:
                res = run_snic_restricted(image, budget, with_blur=name == "snic_blur",
                                          compactness=args.compactness)
            written += render_outputs(res, out, prefix=f"{name}_{budget}")
    for path in written:
        print(path)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "supercam": cmd_supercam, "snic": cmd_snic, "eval": cmd_eval,
    "sweep": cmd_sweep, "synth": cmd_synth, "render": cmd_render,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
