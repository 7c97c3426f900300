"""Command line entry point: ``t4d <subcommand> ...``.

Exit codes: 0 success, 1 input or validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .align import align_rigid, align_sequence
from .losses import dynamic_chamfer, loss_cosine, loss_masked_mse, loss_mse, loss_velocity
from .mds import mds_project
from .mesh import (
    MeshError,
    TopologyError,
    list_frames,
    load_lips,
    load_mask,
    load_mesh,
    load_sequence,
    natural_key,
    save_lips,
    save_mask,
    save_mesh,
    save_sequence,
)
from .operators import (
    CACHE_ENV,
    DEFAULT_K,
    EigensolverError,
    cache_key,
    cached_operators,
    precompute_operators,
    save_operators,
)
from .plot import lip_chart_svg
from .primitives import synthetic_head
from .registered import RegisteredConventions, extract_trajectories, registered_metrics
from .remesh import DEFAULT_DOWN, DEFAULT_UP, remesh_random
from .report import MetricReport
from .synth import DEFAULT_RATE, synth_talking_sequence
from .unregistered import DEFAULT_SIGMA, unregistered_conventions, unregistered_metrics


class InputError(Exception):
    """Bad command line input; reported with exit code 1."""


# ---------------------------------------------------------------------------
# sequence discovery


def discover_sequences(root, pattern: str) -> dict[str, Path]:
    """Map sequence id -> directory.

    A directory holding mesh files is one sequence (id = its name); otherwise
    each subdirectory holding mesh files is a sequence.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"{root}: not a directory")
    if list_frames(root, pattern):
        return {root.name: root}
    subs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: natural_key(p.name))
    found = {p.name: p for p in subs if list_frames(p, pattern)}
    if not found:
        raise InputError(f"{root}: no mesh sequences found (pattern '{pattern}')")
    return found


def _pair_sequences(gt_root, pred_root, pattern):
    gt = discover_sequences(gt_root, pattern)
    pred = discover_sequences(pred_root, pattern)
    if len(gt) != len(pred):
        raise InputError(f"sequence count mismatch: {len(gt)} ground-truth vs {len(pred)} predicted")
    if len(gt) == 1:
        (gid, gp), (_, pp) = next(iter(gt.items())), next(iter(pred.items()))
        return [(gid, gp, pp)]
    missing = sorted(set(gt) ^ set(pred))
    if missing:
        raise InputError(f"sequences present on one side only: {', '.join(missing)}")
    return [(sid, gt[sid], pred[sid]) for sid in gt]


# ---------------------------------------------------------------------------
# evaluate


def _resolve(prior: dict, name: str, flag_value, default):
    if flag_value is not None:
        return flag_value
    if name in prior:
        return prior[name]
    return default


def _evaluate_one(args, sid, gdir, pdir, conv, masks, sigma, truncate):
    try:
        gt = load_sequence(gdir, args.pattern, args.fps, triangulate=args.triangulate)
        pred = load_sequence(pdir, args.pattern, args.fps, triangulate=args.triangulate)
        if len(gt) != len(pred):
            raise ValueError(f"frame count mismatch: {len(gt)} vs {len(pred)}")
        entry = {"sequence_id": sid, "mode": args.mode}
        if args.mode == "registered":
            mouth, upper, lips = masks
            metrics = registered_metrics(gt, pred, mouth, upper, lips, conv)
            if args.losses:
                metrics.update({
                    "mse": loss_mse(gt, pred),
                    "masked_mse": loss_masked_mse(gt, pred, mouth),
                    "dynamic_chamfer": dynamic_chamfer(gt, pred),
                })
                if len(gt) >= 2:
                    metrics["velocity"] = loss_velocity(gt, pred)
                    metrics["cosine"] = loss_cosine(gt, pred)
        else:
            metrics, per_frame = unregistered_metrics(gt, pred, sigma, truncate)
            entry["per_frame"] = per_frame
            if args.losses:
                metrics["dynamic_chamfer"] = dynamic_chamfer(gt, pred)
        entry["metrics"] = metrics
        return entry
    except (MeshError, TopologyError, ValueError) as exc:
        hint = ""
        if isinstance(exc, TopologyError) and args.mode == "registered":
            hint = " (try --mode unregistered)"
        raise InputError(f"sequence '{sid}': {exc}{hint}") from exc


def cmd_evaluate(args) -> int:
    prior = {}
    if args.conventions_from:
        prior = MetricReport.read_json(args.conventions_from).metadata.get("conventions", {})
    pairs = _pair_sequences(args.gt, args.pred, args.pattern)

    conv, masks, sigma, truncate = None, None, None, None
    meta = {"mode": args.mode, "tool_version": __version__, "seed": None,
            "inputs": {"gt": str(args.gt), "pred": str(args.pred), "pattern": args.pattern,
                       "fps": args.fps}}
    if args.mode == "registered":
        if not (args.mouth_mask and args.upper_mask and args.lips):
            raise InputError("registered mode needs --mouth-mask, --upper-mask and --lips")
        first = list_frames(pairs[0][1], args.pattern)[0]
        V = load_mesh(first, triangulate=args.triangulate).n_vertices
        mouth = load_mask(args.mouth_mask, V)
        upper = load_mask(args.upper_mask, V)
        lips = load_lips(args.lips, V)
        masks = (mouth, upper, lips)
        base = RegisteredConventions.from_dict(prior)
        conv = dataclasses.replace(
            base,
            lve_frames=_resolve(prior, "lve_frames", args.lve_frames, base.lve_frames),
            mve_frames=_resolve(prior, "mve_frames", args.mve_frames, base.mve_frames),
            dtw_band=_resolve(prior, "dtw_band", args.dtw_band, base.dtw_band),
        )
        meta["conventions"] = conv.to_dict()
        meta["masks"] = {
            "mouth": {"path": str(args.mouth_mask), "label": mouth.label, "size": len(mouth)},
            "upper_face": {"path": str(args.upper_mask), "label": upper.label, "size": len(upper)},
            "lips": {"path": str(args.lips), "upper": list(lips.upper), "lower": list(lips.lower)},
        }
    else:
        sigma = float(_resolve(prior, "sigma", args.sigma, DEFAULT_SIGMA))
        if sigma <= 0:
            raise InputError(f"--sigma must be positive, got {sigma}")
        if args.no_truncate:
            truncate = False
        elif "varifold_truncation" in prior:
            truncate = prior["varifold_truncation"] is not None
        else:
            truncate = True
        meta["conventions"] = unregistered_conventions(sigma, truncate)
    args.losses = bool(args.losses or prior.get("losses", False))
    meta["conventions"]["losses"] = args.losses

    def run(p):
        return _evaluate_one(args, *p, conv, masks, sigma, truncate)

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as ex:
            entries = list(ex.map(run, pairs))
    else:
        entries = [run(p) for p in pairs]

    report = MetricReport(entries, meta)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# other subcommands


def cmd_operators(args) -> int:
    mesh = load_mesh(args.mesh, triangulate=args.triangulate)
    k = min(args.k, mesh.n_vertices)
    if args.out:
        ops = precompute_operators(mesh, k, clamp_cot=args.clamp_cot)
        save_operators(args.out, ops, cache_key(mesh, k, args.clamp_cot))
        where = args.out
    elif os.environ.get(CACHE_ENV):
        ops = cached_operators(mesh, k, clamp_cot=args.clamp_cot)
        where = str(Path(os.environ[CACHE_ENV]) / f"{cache_key(mesh, k, args.clamp_cot)}.npz")
    else:
        raise InputError(f"pass --out or set {CACHE_ENV}")
    print(f"V={mesh.n_vertices} F={mesh.n_faces} k={k} "
          f"lambda_1={ops.eigenvalues[1] if k > 1 else 0.0:.6g} -> {where}")
    return 0


def cmd_align(args) -> int:
    reference = load_mesh(args.reference)
    src = Path(args.input)
    if src.is_dir():
        seq = load_sequence(src, args.pattern)
        aligned, tr = align_sequence(seq, reference, args.with_scale)
        save_sequence(args.out, aligned)
    else:
        aligned, tr = align_rigid(load_mesh(src), reference, args.with_scale)
        save_mesh(args.out, aligned)
    print(f"scale={tr.scale:.9g} residual={tr.residual:.9g}")
    return 0


def cmd_remesh(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(list_frames(src, args.pattern)):
            m = remesh_random(load_mesh(p), args.up, args.down, args.seed + i)
            save_mesh(out / p.with_suffix(".obj").name, m)
    else:
        m = remesh_random(load_mesh(src), args.up, args.down, args.seed)
        save_mesh(args.out, m)
    return 0


def cmd_synth(args) -> int:
    head = synthetic_head(args.nx, args.ny)
    seq = synth_talking_sequence(head.mesh, head.lips, args.frames, args.fps,
                                 args.amplitude, args.seed, args.rate)
    out = Path(args.out)
    save_sequence(out, seq)
    ann = Path(args.annotations) if args.annotations else out / "annotations"
    ann.mkdir(parents=True, exist_ok=True)
    save_mesh(ann / "neutral.obj", head.mesh)
    save_mask(ann / "mouth.json", head.mouth)
    save_mask(ann / "upper.json", head.upper_face)
    save_lips(ann / "lips.json", head.lips)
    print(f"{args.frames} frames, V={head.mesh.n_vertices} -> {out}; annotations in {ann}")
    return 0


def cmd_plot_lips(args) -> int:
    gt = load_sequence(args.gt, args.pattern, args.fps)
    pred = load_sequence(args.pred, args.pattern, args.fps)
    if len(gt) != len(pred):
        raise InputError(f"frame count mismatch: {len(gt)} vs {len(pred)}")
    if not (gt.is_homogeneous and pred.is_homogeneous) or not gt[0].same_topology(pred[0]):
        raise InputError("plot-lips needs registered sequences sharing one topology")
    lips = load_lips(args.lips, gt[0].n_vertices)
    tg, tp = extract_trajectories(gt, lips), extract_trajectories(pred, lips)
    labels = [f"upper {i}" for i in lips.upper] + [f"lower {i}" for i in lips.lower]
    svg = lip_chart_svg(tg.points, tp.points, args.fps, labels,
                        title="lip y-coordinate: ground truth (solid) vs prediction (dashed)")
    Path(args.out).write_text(svg, encoding="utf-8")
    return 0


def cmd_mds(args) -> int:
    try:
        d = np.loadtxt(args.input, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from exc
    coords = mds_project(d, args.dims)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in coords:
            w.writerow([f"{x:.12g}" for x in row])
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="t4d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evaluate", help="compare predicted and ground-truth sequences")
    e.add_argument("--mode", choices=["registered", "unregistered"], default="registered")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--pattern", default="*")
    e.add_argument("--fps", type=float, default=30.0)
    e.add_argument("--mouth-mask")
    e.add_argument("--upper-mask")
    e.add_argument("--lips")
    e.add_argument("--lve-frames", choices=["mean", "max"], default=None,
                   help="frame reduction after the per-frame max (default mean)")
    e.add_argument("--mve-frames", choices=["mean", "max"], default=None,
                   help="frame reduction after the per-frame mean (default max)")
    e.add_argument("--dtw-band", type=int, default=None)
    e.add_argument("--sigma", type=float, default=None,
                   help=f"varifold kernel scale (default {DEFAULT_SIGMA})")
    e.add_argument("--no-truncate", action="store_true",
                   help="exact varifold double sum instead of the 4-sigma cutoff")
    e.add_argument("--losses", action="store_true", help="also report training losses")
    e.add_argument("--conventions-from", help="reuse conventions from a previous report")
    e.add_argument("--triangulate", action="store_true")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out")
    e.add_argument("--csv", help="write the scaled table here")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("operators", help="precompute surface operators")
    o.add_argument("--mesh", required=True)
    o.add_argument("--k", type=int, default=DEFAULT_K)
    o.add_argument("--out")
    o.add_argument("--clamp-cot", action="store_true")
    o.add_argument("--triangulate", action="store_true")
    o.set_defaults(func=cmd_operators)

    a = sub.add_parser("align", help="rigidly align a mesh or sequence to a reference")
    a.add_argument("--input", required=True)
    a.add_argument("--reference", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--with-scale", action="store_true")
    a.add_argument("--pattern", default="*")
    a.set_defaults(func=cmd_align)

    r = sub.add_parser("remesh", help="random subdivision + decimation")
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--up", type=float, default=DEFAULT_UP)
    r.add_argument("--down", type=float, default=DEFAULT_DOWN)
    r.add_argument("--pattern", default="*")
    r.set_defaults(func=cmd_remesh)

    s = sub.add_parser("synth", help="write a synthetic talking sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--annotations")
    s.add_argument("--frames", type=int, default=120)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--amplitude", type=float, default=4.0)
    s.add_argument("--rate", type=float, default=DEFAULT_RATE)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--nx", type=int, default=29)
    s.add_argument("--ny", type=int, default=37)
    s.set_defaults(func=cmd_synth)

    pl = sub.add_parser("plot-lips", help="SVG chart of lip y-trajectories")
    pl.add_argument("--gt", required=True)
    pl.add_argument("--pred", required=True)
    pl.add_argument("--lips", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--fps", type=float, default=30.0)
    pl.add_argument("--pattern", default="*")
    pl.set_defaults(func=cmd_plot_lips)

    m = sub.add_parser("mds", help="classical MDS of a CSV distance matrix")
    m.add_argument("--input", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--dims", type=int, default=2)
    m.set_defaults(func=cmd_mds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EigensolverError as exc:
        print(f"t4d: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, MeshError, TopologyError, ValueError, OSError) as exc:
        print(f"t4d: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
