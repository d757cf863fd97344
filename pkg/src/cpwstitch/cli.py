"""Command-line entry point: ``cpwstitch stitch|eval|features``.

Exit status 0 on success, 2 on usage or input errors, 3 when a pipeline stage fails.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .energy import EnergyWeights
from .features import CorrespondenceError, detect_correspondences, load_correspondences, save_correspondences
from .imaging import RasterImage, load_image, save_image
from .metrics import MetricConfig, MetricError, evaluate
from .pipeline import StitchConfig, StitchError, stitch

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STAGE = 3

log = logging.getLogger("cpwstitch")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing

def _mesh_arg(text: str):
    parts = text.lower().replace("x", ",").split(",")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or ROWSxCOLS, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected N or ROWSxCOLS with positive sizes, got {text!r}")
    return tuple(vals)


def _weights_arg(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be numbers, got {text!r}") from None
    if len(vals) != 6:
        raise argparse.ArgumentTypeError("expected six weights: alpha,beta,gamma,delta,eta,lambda")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpwstitch", description="Two-image stitching with mesh refinement.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat JSON file of configuration fields")
        p.add_argument("--seed", type=int, help="random seed for RANSAC (default 42)")

    p = sub.add_parser("stitch", help="stitch a source image onto a target image")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True, help="panorama image path")
    p.add_argument("--report", type=Path, help="JSON report path")
    p.add_argument("--correspondences", type=Path, help="JSON correspondences; skips built-in detection")
    p.add_argument("--warped-out", type=Path, help="also write the mesh-warped source on the canvas")
    p.add_argument("--mask-out", type=Path, help="also write the warped-source validity mask")
    p.add_argument("--mesh", type=_mesh_arg, help="mesh size as N or ROWSxCOLS")
    p.add_argument("--levels", type=int, help="pyramid levels")
    p.add_argument("--window", type=int, help="metric window size (odd)")
    p.add_argument("--weights", type=_weights_arg, help="alpha,beta,gamma,delta,eta,lambda")
    common(p)

    p = sub.add_parser("eval", help="alignment quality of two same-size images")
    p.add_argument("first", type=Path)
    p.add_argument("second", type=Path)
    p.add_argument("--mask-first", type=Path, help="validity mask for the first image")
    p.add_argument("--mask-second", type=Path, help="validity mask for the second image")
    p.add_argument("--window", type=int, help="window size (odd, >= 3)")
    p.add_argument("--report", type=Path, help="also write the JSON result here")
    common(p)

    p = sub.add_parser("features", help="detect and match point and line features")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True, help="correspondence JSON path")
    p.add_argument("--visualize", type=Path, help="side-by-side image with matches drawn")
    common(p)
    return parser


def resolve_config(args) -> StitchConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = StitchConfig()
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        try:
            cfg = StitchConfig.from_flat(doc, cfg)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{args.config}: {exc}") from None

    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "mesh", None) is not None:
        flags["mesh_rows"], flags["mesh_cols"] = args.mesh
    if getattr(args, "levels", None) is not None:
        flags["levels"] = args.levels
    if getattr(args, "window", None) is not None:
        flags["window"] = args.window
    if getattr(args, "weights", None) is not None:
        flags.update(zip(("alpha", "beta", "gamma", "delta", "eta", "lam"), args.weights))
    try:
        cfg = StitchConfig.from_flat(flags, cfg)
        MetricConfig(window=cfg.window)
        EnergyWeights(**dataclasses.asdict(cfg.weights))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


# --------------------------------------------------------------------------
# helpers

def _read_image(path: Path) -> RasterImage:
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return load_image(path)
    except Exception as exc:  # Pillow raises several unrelated types
        raise UsageError(f"cannot read image {path}: {exc}") from None


def _read_mask(path: Path | None, shape):
    if path is None:
        return None
    m = _read_image(path).luminance().data > 0.5
    if m.shape != tuple(shape):
        raise UsageError(f"mask {path} is {m.shape[1]}x{m.shape[0]}, image is {shape[1]}x{shape[0]}")
    return m


def _check_writable(*paths):
    for p in paths:
        if p is None:
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise UsageError(f"output directory does not exist: {parent}")


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_text(path: Path, text: str) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# commands

def cmd_stitch(args) -> int:
    cfg = resolve_config(args)
    _check_writable(args.out, args.report, args.warped_out, args.mask_out)
    img1 = _read_image(args.source)
    img2 = _read_image(args.target)
    corr = None
    if args.correspondences is not None:
        if not args.correspondences.is_file():
            raise UsageError(f"no such file: {args.correspondences}")
        try:
            corr = load_correspondences(args.correspondences, cfg.detector.min_line_length)
        except CorrespondenceError as exc:
            raise UsageError(str(exc)) from None

    report = stitch(img1, img2, corr, cfg)

    outputs = {"panorama": str(args.out)}
    save_image(report.panorama, args.out)
    if args.warped_out is not None:
        save_image(RasterImage(np.clip(report.warped_source, 0, 1)), args.warped_out)
        outputs["warped_source"] = str(args.warped_out)
    if args.mask_out is not None:
        save_image(RasterImage(report.warped_mask.astype(np.float64)), args.mask_out)
        outputs["warped_mask"] = str(args.mask_out)
    doc = report.to_dict(outputs)
    doc["config"] = _config_doc(cfg)
    if args.report is not None:
        _write_text(args.report, _dump(doc))
    print(f"rmse_ncc {report.rmse_ncc:.4f} (global only {report.rmse_ncc_global:.4f})")
    return EXIT_OK


def _config_doc(cfg: StitchConfig) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.to_flat().items()}


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _check_writable(args.report)
    a = _read_image(args.first)
    b = _read_image(args.second)
    if (a.height, a.width) != (b.height, b.width):
        raise UsageError(f"image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    ma = _read_mask(args.mask_first, (a.height, a.width))
    mb = _read_mask(args.mask_second, (b.height, b.width))
    try:
        res = evaluate(a, ma, b, mb, MetricConfig(window=cfg.window))
    except MetricError as exc:
        raise StitchError("OVERLAP", str(exc)) from None
    text = _dump(res.to_dict())
    sys.stdout.write(text)
    if args.report is not None:
        _write_text(args.report, text)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = resolve_config(args)
    _check_writable(args.out, args.visualize)
    img1 = _read_image(args.source)
    img2 = _read_image(args.target)
    corr = detect_correspondences(img1, img2, cfg.detector)
    save_correspondences(corr, args.out)
    if args.visualize is not None:
        draw_matches(img1, img2, corr).save(args.visualize)
    print(f"{len(corr.points)} point matches, {len(corr.matched_lines)} line matches, "
          f"{len(corr.unmatched_lines)} unmatched lines")
    return EXIT_OK


def draw_matches(img1: RasterImage, img2: RasterImage, corr):
    """Side-by-side RGB picture: points in green, matched lines in red, unmatched in blue."""
    from PIL import Image, ImageDraw

    def rgb(img):
        d = img.data if img.channels == 3 else np.repeat(img.data[:, :, None], 3, axis=2)
        return (np.clip(d, 0, 1) * 255 + 0.5).astype(np.uint8)

    h = max(img1.height, img2.height)
    canvas = np.zeros((h, img1.width + img2.width, 3), dtype=np.uint8)
    canvas[:img1.height, :img1.width] = rgb(img1)
    canvas[:img2.height, img1.width:] = rgb(img2)
    pic = Image.fromarray(canvas)
    draw = ImageDraw.Draw(pic)
    dx = img1.width
    for m in corr.points:
        (x, y), (u, v) = m.p, m.p_prime
        draw.line([(x, y), (u + dx, v)], fill=(0, 200, 0))
        draw.ellipse([x - 2, y - 2, x + 2, y + 2], outline=(0, 255, 0))
        draw.ellipse([u + dx - 2, v - 2, u + dx + 2, v + 2], outline=(0, 255, 0))
    for m in corr.matched_lines:
        draw.line([tuple(m.seg.p_s), tuple(m.seg.p_e)], fill=(255, 0, 0), width=2)
        if m.dst is not None:
            draw.line([(m.dst.p_s[0] + dx, m.dst.p_s[1]), (m.dst.p_e[0] + dx, m.dst.p_e[1])],
                      fill=(255, 0, 0), width=2)
    for seg in corr.unmatched_lines:
        draw.line([tuple(seg.p_s), tuple(seg.p_e)], fill=(60, 60, 255), width=1)
    return pic


COMMANDS = {"stitch": cmd_stitch, "eval": cmd_eval, "features": cmd_features}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cpwstitch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StitchError as exc:
        print(f"cpwstitch {args.command}: stage failure {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
