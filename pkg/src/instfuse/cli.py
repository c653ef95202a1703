"""Command-line entry point: ``infer``, ``synth``, ``eval`` and ``check``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .components import icc_messages, component_aggregates, connected_components
from .core import NUM_GLOBAL, SIZE_CLASSES, InferenceConfig, PixelGrid, default_config
from .io import BundleError, LabelMapError, read_bundle, read_label_map, write_bundle, write_label_map, write_marginals
from .lattice import gaussian_filter
from .meanfield import InferenceError, iterate, map_labels, prepare
from .metrics import MetricsError, evaluate_dataset
from .oracle import CheckResult, OracleReport, exact_gaussian_filter, exact_run, naive_icc
from .pipeline import DEFAULT_SIZES, PatchGridSpec, post_process
from .synth import SceneError, random_instance, random_scene, synth_patches

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_INFER = 0, 1, 2, 3

# flag name -> InferenceConfig field
_CONFIG_FLAGS = {
    "w_smo": float,
    "w_cnn_large": float,
    "w_cnn_medium": float,
    "w_cnn_small": float,
    "w_icc": float,
    "theta1": float,
    "theta2": float,
    "theta_cnn": float,
    "t_max": int,
    "iterations": int,
    "fg_threshold": float,
    "connectivity": int,
    "min_region_area": int,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    defaults = default_config()
    for name, kind in _CONFIG_FLAGS.items():
        attr = "T" if name == "t_max" else name
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=getattr(defaults, attr))


def _config_from(args) -> InferenceConfig:
    known = {f.name for f in fields(InferenceConfig)}
    kw = {("T" if k == "t_max" else k): getattr(args, k) for k in _CONFIG_FLAGS}
    return InferenceConfig(**{k: v for k, v in kw.items() if k in known})


def _err(msg: str) -> None:
    print(f"instfuse: {msg}", file=sys.stderr)


def cmd_infer(args) -> int:
    try:
        config = _config_from(args)
    except ValueError as e:
        _err(str(e))
        return EXIT_INPUT
    try:
        grid, patches = read_bundle(args.bundle)
    except BundleError as e:
        _err(str(e))
        return EXIT_INPUT
    try:
        state = iterate(prepare(patches, grid, config))
        labels = map_labels(state.belief)
        if not args.no_postprocess:
            labels = post_process(labels, config.min_region_area, config.connectivity)
    except (InferenceError, ValueError) as e:
        _err(f"inference failed: {e}")
        return EXIT_INFER
    write_label_map(args.output, labels)
    if args.marginals:
        write_marginals(args.marginals, state.belief)
    return EXIT_OK


def _parse_sizes(specs: list[str]) -> tuple[tuple[int, int, str], ...]:
    """``HxW`` strings, assigned to size classes from largest to smallest."""
    if len(specs) > len(SIZE_CLASSES):
        raise ValueError(f"at most {len(SIZE_CLASSES)} patch sizes")
    out = []
    for spec, cls in zip(specs, SIZE_CLASSES):
        try:
            h, w = (int(v) for v in spec.lower().split("x"))
        except ValueError:
            raise ValueError(f"patch size must look like HxW, got {spec!r}") from None
        out.append((h, w, cls))
    return tuple(out)


def cmd_synth(args) -> int:
    try:
        grid = PixelGrid(args.width, args.height)
        scene = random_scene(grid, args.k, args.noise, args.seed)
        sizes = _parse_sizes(args.patch_size) if args.patch_size else DEFAULT_SIZES
        patches = synth_patches(scene, PatchGridSpec(sizes, args.stride_fraction))
    except (SceneError, ValueError) as e:
        _err(str(e))
        return EXIT_INPUT
    out = Path(args.output)
    write_bundle(out, patches, grid)
    write_label_map(out / "gt.pgm", scene.gt)
    print(f"wrote {len(patches)} patches and gt.pgm to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        gt = read_label_map(args.gt)
        pred = read_label_map(args.pred)
        if gt.grid != pred.grid:
            raise MetricsError(f"dimension mismatch: {gt.grid.width}x{gt.grid.height} vs {pred.grid.width}x{pred.grid.height}")
        report = evaluate_dataset([(gt, pred)])
    except (LabelMapError, MetricsError, OSError) as e:
        _err(str(e))
        return EXIT_INPUT
    for k, v in report.as_dict().items():
        print(f"{k}: {v:.6f}")
    for f in report.flags:
        _err(f"note: {f}")
    return EXIT_OK


def filter_check(report: OracleReport, dim: int, points: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(points, dim))
    vals = rng.uniform(0.0, 1.0, size=(points, 11))
    return report.add(f"filter d={dim} n={points}", gaussian_filter(pts, vals), exact_gaussian_filter(pts, vals), 0.25, 0.10)


def icc_check(report: OracleReport, side: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(side, side)) < 0.45
    comps = connected_components(mask, 4)
    q = rng.dirichlet(np.ones(NUM_GLOBAL), side * side)
    fast = icc_messages(component_aggregates(q, comps), comps, 1.0)
    slow = naive_icc(q, comps.membership, 1.0)
    return report.add(f"icc {side}x{side} ({comps.count} components)", fast, slow, 1e-12, 1e-12, floor=1e-300)


def meanfield_check(report: OracleReport, seed: int, min_agree: float = 0.97) -> CheckResult:
    grid, patches, _ = random_instance(seed)
    config = default_config()
    fast = map_labels(iterate(prepare(patches, grid, config)).belief).labels
    slow = map_labels(exact_run(patches, grid, config)).labels
    miss = float(np.mean(fast != slow))
    r = CheckResult(f"meanfield MAP {grid.width}x{grid.height}, {len(patches)} patches (disagreement)", miss, miss, 1.0 - min_agree, None)
    report.checks.append(r)
    return r


def cmd_check(args) -> int:
    report = OracleReport()
    filter_check(report, args.dim, args.points, args.seed)
    icc_check(report, args.icc_side, args.seed)
    meanfield_check(report, args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instfuse", description="Fuse overlapping patch instance predictions into one label map.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run fusion on a patch bundle")
    p.add_argument("bundle", help="bundle directory or manifest file")
    p.add_argument("output", help="output label map (.pgm)")
    p.add_argument("--marginals", help="also dump height x width x 10 float32 marginals here")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--stride-fraction", type=float, default=0.5, help="unused by infer; accepted for symmetry with synth")
    p.add_argument("--seed", type=int, default=0, help="unused by infer; inference is deterministic")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="generate a rectangle scene bundle and its ground truth")
    p.add_argument("output", help="bundle directory")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("-k", "--k", type=int, default=4, help="number of rectangles")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride-fraction", type=float, default=0.5)
    p.add_argument("--patch-size", action="append", metavar="HxW", help="window size, repeat for medium and small")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a predicted label map against ground truth")
    p.add_argument("gt")
    p.add_argument("pred")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="compare fast paths against slow references")
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--points", type=int, default=500)
    p.add_argument("--icc-side", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
