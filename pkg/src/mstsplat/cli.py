"""Command-line entry point: ``mstsplat {init,render,augment,fit,eval,bench}``.

Exit codes: 0 success, 1 usage, 2 invalid input, 3 runtime failure. Errors are
reported as one JSON object per line on stderr.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _unit_interval(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"omega must lie in [0, 1], got {v}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _emit(obj, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, sort_keys=True) + "\n")


def image_hash(frame):
    return hashlib.sha256(np.ascontiguousarray(frame.color).tobytes()
                          + np.ascontiguousarray(frame.alpha).tobytes()).hexdigest()


# -- helpers -------------------------------------------------------------------

def _load_points(path):
    if path.endswith(".npy"):
        pts = np.load(path)
    else:
        pts = np.loadtxt(path, ndmin=2)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValidationError(f"{path}: expected an (N, 3) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts[:, :3])):
        raise ValidationError(f"{path}: non-finite coordinates")
    return pts[:, :3]


def _offsets_for(scene, path, frame):
    from .scene import PoseOffsets, load_offsets
    with open(path + ".json") as f:
        ids = json.load(f)["surfel_ids"]
    table = load_offsets(path)
    if frame not in table:
        raise ValidationError(f"{path}: no offsets for frame {frame}")
    pos = {int(i): k for k, i in enumerate(ids)}
    missing = [int(i) for i in scene.ids if int(i) not in pos]
    if missing:
        raise ValidationError(f"{path}: no offsets for surfel ids {missing[:5]}")
    perm = np.array([pos[int(i)] for i in scene.ids], dtype=np.int64)
    o = table[frame]
    return PoseOffsets(dx=o.dx[perm], dr=o.dr[perm], ds=o.ds[perm], dc=o.dc[perm])


def _pose(scene, pose_path, offsets_path, frame):
    from .scene import SkeletonPose, load_pose
    offsets = _offsets_for(scene, offsets_path, frame) if offsets_path else None
    if pose_path:
        return load_pose(pose_path, offsets)
    if offsets is not None:
        return SkeletonPose.identity(scene.joint_count, offsets)
    return None


def _read_target(path):
    """PNG -> colour composited over black plus its alpha (ones if the file has none)."""
    from .io import read_png
    img = read_png(path)
    if img.shape[2] == 4:
        a = img[..., 3]
        return img[..., :3] * a[..., None], a
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img, np.ones(img.shape[:2])


# -- subcommands ---------------------------------------------------------------

def cmd_init(args):
    from .scene import save_scene
    from .synth import init_scene_from_points
    pts = _load_points(args.points)
    if len(pts) < args.k + 1:
        raise ValidationError(f"need at least k + 1 = {args.k + 1} points, got {len(pts)}")
    scene = init_scene_from_points(pts, surfel_scale=args.scale, k=args.k, color=tuple(args.color),
                                   metadata={"source": os.path.basename(args.points)})
    save_scene(scene, args.out)
    _emit({"command": "init", "surfels": len(scene), "out": args.out,
           "degenerate_frames": scene.metadata["degenerate_frames"],
           "fallback_up_frames": scene.metadata["fallback_up_frames"]})


def cmd_render(args):
    from .camera import load_camera
    from .io import save_raw, straight_rgba, write_png
    from .raster import RenderSettings, render, render_brute
    from .scene import load_scene
    scene = load_scene(args.scene)
    camera = load_camera(args.camera)
    pose = _pose(scene, args.pose, args.offsets, args.frame)
    settings = RenderSettings(force_omega=args.force_omega, thread_count=args.threads,
                              tile_size=args.tile_size)
    t0 = time.perf_counter()
    if args.brute:
        frame = render_brute(scene, camera, pose, settings)
    else:
        frame = render(scene, camera, pose, settings, backend=args.backend)
    elapsed = time.perf_counter() - t0
    write_png(args.out, straight_rgba(frame))
    if args.raw:
        save_raw(args.raw, {"color": frame.color, "alpha": frame.alpha, "depth": frame.depth,
                            "normal": frame.normal})
    _emit({"command": "render", "out": args.out, "ms": round(elapsed * 1e3, 3), "hash": image_hash(frame),
           "brute": bool(args.brute)})


def cmd_augment(args):
    from .augment import AugmentSpec, augment_image, augment_intrinsics, run_manifest
    from .camera import load_camera, save_camera
    from .io import read_png, write_png
    spec = AugmentSpec(args.scale, args.filter)
    modes = [m for m in (args.image, args.camera, args.manifest) if m]
    if len(modes) != 1:
        raise UsageError("augment: give exactly one of --image, --camera, --manifest")
    if args.manifest:
        out_dir = args.out_dir or args.out
        if not out_dir:
            raise UsageError("augment --manifest needs --out-dir")
        path = run_manifest(args.manifest, spec, out_dir)
        _emit({"command": "augment", "manifest": path, "s": spec.s})
        return
    if not args.out:
        raise UsageError("augment: --out is required")
    if args.image:
        write_png(args.out, augment_image(read_png(args.image), spec))
    else:
        save_camera(augment_intrinsics(load_camera(args.camera), spec), args.out)
    _emit({"command": "augment", "out": args.out, "s": spec.s, "filter": spec.filter})


def _load_dataset(path):
    from .camera import load_camera
    from .optim import Sample
    from .scene import load_pose
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: expected a non-empty JSON list of {{image, camera}} entries")
    data = []
    for k, e in enumerate(entries):
        if "image" not in e or "camera" not in e:
            raise ValidationError(f"{path}: entry {k} lacks 'image' or 'camera'")
        cam = load_camera(os.path.join(base, e["camera"]))
        img, _ = _read_target(os.path.join(base, e["image"]))
        if img.shape[:2] != (cam.height, cam.width):
            raise ValidationError(f"{path}: entry {k} image size does not match its camera")
        pose = load_pose(os.path.join(base, e["pose"])) if e.get("pose") else None
        data.append(Sample(cam, img, pose, int(e.get("frame", 0))))
    return data


def cmd_fit(args):
    from .optim import FitConfig, fit, load_config
    from .scene import load_scene, save_offsets, save_scene
    cfg = load_config(args.config) if args.config else FitConfig()
    over = {}
    if args.steps is not None:
        over["total_steps"] = args.steps
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["thread_count"] = args.threads
    if over:
        cfg = FitConfig.from_dict({**cfg.to_dict(), **over})
    scene = load_scene(args.scene)
    data = _load_dataset(args.data)
    t0 = time.perf_counter()
    res = fit(scene, data, cfg, log_path=args.log)
    save_scene(res.scene, args.out)
    if args.offsets_out:
        frames = sorted(res.offsets)
        save_offsets(frames, res.scene.ids, [res.offsets[f] for f in frames], args.offsets_out)
    _emit({"command": "fit", "out": args.out, "steps": cfg.total_steps, "final_loss": res.final_loss,
           "seconds": round(time.perf_counter() - t0, 3)})


def cmd_eval(args):
    from .metrics import aggregate, evaluate
    pairs = []
    if args.manifest:
        base = os.path.dirname(os.path.abspath(args.manifest))
        with open(args.manifest) as f:
            for e in json.load(f):
                pairs.append((os.path.join(base, e["pred"]), os.path.join(base, e["gt"])))
    elif args.pred and args.gt:
        pairs.append((args.pred, args.gt))
    else:
        raise UsageError("eval: give --pred and --gt, or --manifest")
    reports = []
    for p, g in pairs:
        pred, _ = _read_target(p)
        gt, gt_alpha = _read_target(g)
        if pred.shape != gt.shape:
            raise ValidationError(f"{p} and {g} differ in size")
        mask = gt_alpha > 0 if not args.no_mask else None
        if mask is not None and not mask.any():
            raise ValidationError(f"{g}: ground-truth alpha is empty")
        rep = evaluate(pred, gt, mask, name=os.path.basename(p))
        reports.append(rep)
        _emit(rep.to_dict())
    agg = aggregate(reports)
    if args.table:
        print(f"{'images':>8} {'psnr':>10} {'ssim':>8} {'ms_ssim':>8}")
        ps = agg["psnr"] if isinstance(agg["psnr"], str) else f"{agg['psnr']:.3f}"
        print(f"{agg['count']:>8} {ps:>10} {agg['ssim']:>8.4f} {agg['ms_ssim']:>8.4f}")
    else:
        _emit({"aggregate": agg})


def cmd_bench(args):
    from .camera import load_camera
    from .raster import RenderSettings, render, set_backend
    from .scene import load_scene
    from .synth import bench_scene, orbit_cameras
    if args.backend:
        set_backend(args.backend)
    scene = load_scene(args.scene) if args.scene else bench_scene(args.surfels, args.seed)
    camera = load_camera(args.camera) if args.camera else orbit_cameras(1, args.distance, args.size)[0]
    rows = []
    for th in args.threads:
        settings = RenderSettings(thread_count=th)
        frame = render(scene, camera, settings=settings)  # warm-up
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            frame = render(scene, camera, settings=settings)
            times.append(time.perf_counter() - t0)
        best = min(times)
        row = {"threads": th, "ms_per_frame": round(1e3 * best, 3),
               "ms_median": round(1e3 * float(np.median(times)), 3), "fps": round(1.0 / best, 3),
               "hash": image_hash(frame), "surfels": len(scene),
               "size": [camera.width, camera.height], "cpu_count": os.cpu_count()}
        rows.append(row)
        _emit(row)
    hashes = {r["hash"] for r in rows}
    _emit({"summary": True, "identical_hashes": len(hashes) == 1,
           "speedup": {str(r["threads"]): round(rows[0]["ms_per_frame"] / r["ms_per_frame"], 3) for r in rows}})


# -- parser --------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mstsplat", description="Textured-surfel rendering, fitting and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="build a scene from a point set")
    s.add_argument("--points", required=True, help=".npy or whitespace-separated text, one xyz per row")
    s.add_argument("--out", required=True, help="output scene file")
    s.add_argument("--k", type=_positive_int, default=3, help="neighbours used for frame estimation")
    s.add_argument("--scale", type=_positive_float, default=None,
                   help="surfel half-extent (default: median nearest-neighbour distance)")
    s.add_argument("--color", type=float, nargs=3, default=(0.5, 0.5, 0.5), help="initial base colour")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("render", help="render a scene to PNG")
    s.add_argument("--scene", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--pose", help="JSON list of per-joint 3x4 transforms")
    s.add_argument("--offsets", help="offset blob (with .json sidecar)")
    s.add_argument("--frame", type=int, default=0, help="frame index into --offsets")
    s.add_argument("--out", required=True, help="output PNG (straight RGBA)")
    s.add_argument("--raw", help="also dump float32 colour/alpha/depth/normal buffers here")
    s.add_argument("--force-omega", type=_unit_interval, default=None, help="pin the LOD weight in [0, 1]")
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--tile-size", type=_positive_int, default=16)
    s.add_argument("--brute", action="store_true", help="use the unculled reference renderer")
    s.add_argument("--backend", choices=("compiled", "python"), default=None)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("augment", help="camera-distance augmentation of images or cameras")
    s.add_argument("--image")
    s.add_argument("--camera")
    s.add_argument("--manifest", help="JSON list of {image, camera} pairs")
    s.add_argument("--scale", type=_positive_float, required=True, help="zoom factor s in [0.25, 2]")
    s.add_argument("--filter", choices=("nearest", "bilinear"), default="bilinear")
    s.add_argument("--out")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("fit", help="fit a scene to posed images")
    s.add_argument("--scene", required=True, help="initial scene")
    s.add_argument("--data", required=True, help="JSON list of {image, camera[, pose, frame]}")
    s.add_argument("--config", help="FitConfig JSON")
    s.add_argument("--steps", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive_int)
    s.add_argument("--out", required=True)
    s.add_argument("--offsets-out", help="write learned per-frame offsets here")
    s.add_argument("--log", help="line-delimited JSON training log")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", help="PSNR / SSIM / MS-SSIM between images")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--manifest", help="JSON list of {pred, gt}")
    s.add_argument("--no-mask", action="store_true", help="score every pixel, not just gt alpha > 0")
    s.add_argument("--table", action="store_true", help="print the aggregate as a table")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time renders across thread counts")
    s.add_argument("--scene", help="scene file (default: synthetic sphere)")
    s.add_argument("--camera")
    s.add_argument("--surfels", type=_positive_int, default=20000)
    s.add_argument("--size", type=_positive_int, default=512)
    s.add_argument("--distance", type=_positive_float, default=3.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=_positive_int, nargs="+", default=[1, 4, 8])
    s.add_argument("--repeats", type=_positive_int, default=5)
    s.add_argument("--backend", choices=("compiled", "python"), default=None)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    from .scene import SceneError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return EXIT_OK
    except UsageError as e:
        code, kind = EXIT_USAGE, "usage"
        msg = str(e)
    except (ValidationError, SceneError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        code, kind = EXIT_VALIDATION, "validation"
        msg = str(e)
    except Exception as e:  # noqa: BLE001
        code, kind = EXIT_RUNTIME, "runtime"
        msg = f"{type(e).__name__}: {e}"
    _emit({"error": kind, "message": msg, "exit_code": code}, sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
