"""Command-line entry point: ``sebsfv <command> ...``.

Every command writes a JSON run manifest (argv, config, seeds, version,
stage timings, SHA-256 of every output file). ``sebsfv rerun --manifest M``
replays a manifest and checks that the outputs hash identically.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .admm import default_three_term_params, rpca_three_term
from .detect import detect_sequence
from .metrics import Box, contrast, entropy, match_and_score, pr_curve_and_ap
from .pipeline import PipelineConfig, render, run_pipeline
from .registration import register_sequence
from .synth import SceneSpec, generate_scene
from .videodata import (
    VideoMatrix,
    file_sha256,
    list_frame_names,
    load_frame_sequence,
    quantize_u8,
    save_frame_sequence,
)

log = logging.getLogger("sebsfv")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError("%s: error: %s" % (self.prog, message))


# -- helpers -----------------------------------------------------------------


def _write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def _read_boxes(path) -> list:
    out = []
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(Box.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError("%s line %d: bad box record (%s)" % (path, k, exc)) from None
    return out


def _u8_frames(video: VideoMatrix):
    return [np.where(f.valid, quantize_u8(f.pixels), 0).astype(np.uint8) for f in video.frames()]


def _files_under(path) -> list:
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file() and p.name != "manifest.json")
    return [path] if path.exists() else []


def _parse_rank(text):
    if text == "auto":
        return None
    try:
        r = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("rank must be a positive integer or 'auto'") from None
    if r < 1:
        raise argparse.ArgumentTypeError("rank must be >= 1")
    return r


def _parse_center(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("center must be 'x,y'") from None
    return x, y


# -- commands ----------------------------------------------------------------


def cmd_synth(args, run):
    spec = SceneSpec.from_json(Path(args.spec).read_text()) if args.spec else SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    run["config"] = spec.to_dict()
    run["seeds"] = {"scene": spec.seed}
    t0 = time.perf_counter()
    scene = generate_scene(spec)
    run["timings"]["synth"] = time.perf_counter() - t0
    out = Path(args.out)
    save_frame_sequence(out, scene.video)
    (out / "scene.json").write_text(spec.to_json())
    run["outputs"] += [out]
    if args.gt:
        run["outputs"].append(_write_jsonl(args.gt, [b.to_dict(with_score=False) for b in scene.boxes]))


def cmd_register(args, run):
    video = load_frame_sequence(args.input, with_masks=True)
    names = list_frame_names(args.input)
    run["config"] = {"chunk": args.chunk}
    t0 = time.perf_counter()
    reg, transforms, refs = register_sequence(video, args.chunk)
    run["timings"]["registration"] = time.perf_counter() - t0
    out = Path(args.out)
    save_frame_sequence(out, reg, names=names, write_masks=True)
    (out / "transforms.json").write_text(
        json.dumps({"references": refs, "transforms": [t.to_dict() for t in transforms]}, indent=1)
    )
    run["outputs"].append(out)


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        chunk=args.chunk,
        K=args.K,
        eta=args.eta,
        rank=args.rank,
        forgetting=args.forgetting,
        carry_state=args.carry_state,
        swap_roles=args.swap_roles,
        seed=args.seed,
    )


def cmd_enhance(args, run):
    cfg = _pipeline_config(args)
    run["config"] = cfg.to_dict()
    run["seeds"] = {"pipeline": cfg.seed}
    video = load_frame_sequence(args.input, with_masks=True)
    names = list_frame_names(args.input)
    res = run_pipeline(video, cfg, register=args.register)
    run["timings"].update(res.timings.to_dict())
    run["ranks"] = res.ranks
    out = Path(args.out)
    save_frame_sequence(out, res.enhanced, names=names)
    run["outputs"].append(out)
    if args.diag:
        run["outputs"].append(_write_jsonl(args.diag, res.diagnostics))


def cmd_baseline(args, run):
    video = load_frame_sequence(args.input, with_masks=True)
    names = list_frame_names(args.input)
    dxi, dgamma = default_three_term_params(video.data.shape)
    xi = dxi if args.xi is None else args.xi
    gamma = 100.0 * xi if args.gamma is None else args.gamma
    run["config"] = {"method": args.method, "xi": xi, "gamma": gamma}
    X = np.where(video.mask, video.data, 0.0)
    t0 = time.perf_counter()
    B, S, N, rep = rpca_three_term(X, xi, gamma)
    run["timings"]["admm"] = time.perf_counter() - t0
    run["admm"] = {"iterations": rep.iterations, "converged": rep.converged, "primal_residual": rep.primal_residual}
    enhanced = VideoMatrix(render(S, video.mask), video.mask, video.height, video.width)
    out = Path(args.out)
    save_frame_sequence(out, enhanced, names=names)
    run["outputs"].append(out)


def cmd_detect(args, run):
    run["config"] = {"polarity": args.polarity, "q": args.q}
    video = load_frame_sequence(args.input, with_masks=True)
    t0 = time.perf_counter()
    boxes = detect_sequence(_u8_frames(video), args.polarity, args.q)
    run["timings"]["detect"] = time.perf_counter() - t0
    run["outputs"].append(_write_jsonl(args.out, [b.to_dict() for b in boxes]))


def cmd_eval(args, run):
    run["config"] = {"iou": args.iou}
    dets = _read_boxes(args.det)
    gts = _read_boxes(args.gt)
    res, p, r, f1 = match_and_score(dets, gts, args.iou)
    points, ap = pr_curve_and_ap(dets, gts, args.iou)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_tp", "n_fp", "n_fn", "n_g", "precision", "recall", "f1", "ap"])
        w.writerow([res.n_tp, res.n_fp, res.n_fn, res.n_g, "%.6f" % p, "%.6f" % r, "%.6f" % f1, "%.6f" % ap])
    run["outputs"].append(out)
    if args.pr:
        with open(args.pr, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            for thr, pp, rr in points:
                w.writerow(["%.6f" % thr, "%.6f" % pp, "%.6f" % rr])
        run["outputs"].append(Path(args.pr))
    print("precision=%.4f recall=%.4f f1=%.4f ap=%.4f" % (p, r, f1, ap))


def cmd_metrics(args, run):
    run["config"] = {"center": args.center, "window": args.window}
    video = load_frame_sequence(args.input, with_masks=True)
    names = list_frame_names(args.input)
    rows = []
    for name, img, f in zip(names, _u8_frames(video), video.frames()):
        rows.append([name, "%.6f" % entropy(img, f.valid), "%.6f" % contrast(img, args.center, args.window, f.valid)])
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["frame", "entropy", "contrast"])
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    if args.out:
        run["outputs"].append(Path(args.out))


def cmd_rerun(args, run):
    manifest = json.loads(Path(args.manifest).read_text())
    argv = manifest["argv"]
    recorded = manifest["outputs"]
    with tempfile.TemporaryDirectory() as tmp:
        new_manifest = Path(tmp) / "manifest.json"
        code = main(list(argv) + ["--manifest", str(new_manifest)])
        if code != EXIT_OK:
            raise RuntimeError("replayed command failed with exit code %d" % code)
        fresh = json.loads(new_manifest.read_text())["outputs"]
    same = fresh == recorded
    run["config"] = {"replayed": argv, "identical": same}
    print("outputs identical" if same else "outputs differ")
    if not same:
        raise RuntimeError("rerun produced different output hashes")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sebsfv", description="Streaming ViSAR shadow enhancement toolkit.")
    p.add_argument("--version", action="version", version="%(prog)s " + __version__)
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK threads (default: $SEBSFV_THREADS)")
    common.add_argument("--manifest", default=None, help="where to write the run manifest JSON")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    s.add_argument("--spec", help="scene spec JSON (default scene if omitted)")
    s.add_argument("--out", required=True, help="output frame directory")
    s.add_argument("--gt", help="ground-truth boxes JSON lines")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("register", parents=[common], help="rigidly align frames per chunk")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chunk", type=int, default=100)
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("enhance", parents=[common], help="run the streaming enhancement pipeline")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chunk", type=int, default=100)
    s.add_argument("--K", type=int, default=5)
    s.add_argument("--eta", type=float, default=0.98)
    s.add_argument("--rank", type=_parse_rank, default=None, help="integer or 'auto' (default)")
    s.add_argument("--forgetting", type=float, default=0.98)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--diag", help="per-frame diagnostics JSON lines")
    s.add_argument("--register", action="store_true", help="register frames before enhancement")
    s.add_argument("--carry-state", action="store_true", help="keep subspace and mixture across chunks")
    s.add_argument("--swap-roles", action="store_true", help="render the L1 term instead of the nuclear-norm term")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("baseline", parents=[common], help="three-term low-rank + sparse + noise baseline")
    s.add_argument("--method", choices=["lrsd", "sbn3dsd"], required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--xi", type=float, default=None)
    s.add_argument("--gamma", type=float, default=None)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("detect", parents=[common], help="Tsallis threshold + connected-component detector")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="detections JSON lines")
    s.add_argument("--polarity", choices=["dark", "bright"], default="bright")
    s.add_argument("--q", type=float, default=0.8)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", parents=[common], help="precision / recall / F1 / AP of detections")
    s.add_argument("--det", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--out", required=True, help="report CSV")
    s.add_argument("--pr", help="PR curve CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("metrics", parents=[common], help="per-frame entropy and contrast CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--center", type=_parse_center, default=None, help="x,y of the contrast window")
    s.add_argument("--window", type=int, default=60)
    s.add_argument("--out", help="CSV path (stdout if omitted)")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("rerun", help="replay a manifest and compare output hashes")
    s.add_argument("--manifest", required=True, help="manifest written by an earlier run")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_rerun)
    return p


def _default_manifest(args):
    if args.manifest:
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if out is None:
        return None
    out = Path(out)
    return out / "manifest.json" if out.suffix == "" else out.with_name(out.stem + ".manifest.json")


def _thread_count(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SEBSFV_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError("SEBSFV_THREADS must be an integer, got %r" % env) from None
    return None


def _strip_manifest_flag(argv):
    out = []
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--manifest":
            skip = True
            continue
        if a.startswith("--manifest="):
            continue
        out.append(a)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            raise UsageError("sebsfv: error: a command is required")
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("sebsfv: error: a command is required")
        threads = _thread_count(args)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = {"outputs": [], "timings": {}, "config": {}, "seeds": {}}
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                args.func(args, run)
        else:
            args.func(args, run)
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print("sebsfv %s: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_RUNTIME
    path = _default_manifest(args)
    if path is not None and args.command != "rerun":
        hashes = {}
        for o in run["outputs"]:
            for f in _files_under(o):
                hashes[str(f)] = file_sha256(f)
        manifest = {
            "argv": _strip_manifest_flag(argv),
            "command": args.command,
            "config": run["config"],
            "seeds": run["seeds"],
            "version": __version__,
            "threads": threads,
            "timings": run["timings"],
            "outputs": hashes,
        }
        for k in ("ranks", "admm"):
            if k in run:
                manifest[k] = run[k]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
