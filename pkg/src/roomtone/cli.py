"""``roomtone`` command line: bake, render, probes, bench, validate.

Every failure prints one line starting with ``roomtone: error:`` to stderr.
Usage errors exit with status 2, everything else with status 1.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

from . import __version__
from .bake import THREADS_ENV, BakeConfig, bake, load_baked, save_baked
from .engine import RenderConfig
from .materials import BAND_CENTERS
from .offline import bench, render_trajectory
from .scene import load_scene, validate_scene
from .trajectory import parse_trajectory
from .wavio import WavSpec, write_wav

PROG = "roomtone"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{PROG}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _render_config(args):
    return RenderConfig(sample_rate=float(args.fs), block_size=args.block)


def _load_baked_arg(path, scene):
    if path in ("-", "none"):
        return None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = load_baked(path, scene)
    for w in caught:
        print(f"{PROG}: warning: {w.message}", file=sys.stderr)
    return data


def _format_rt60(p):
    return " ".join(f"{v:6.3f}" for v in p.rt60)


def cmd_bake(args):
    scene = load_scene(args.scene)
    if args.spacing is not None:
        cfg = BakeConfig(probe_spacing=args.spacing, rays_per_probe=args.rays, rng_seed=args.seed)
    else:
        cfg = BakeConfig(probe_count=args.probes if args.probes is not None else 1,
                         rays_per_probe=args.rays, rng_seed=args.seed)
    data = bake(scene, cfg, threads=args.threads)
    save_baked(data, args.out)
    bands = " ".join(f"{int(c):>6}" for c in BAND_CENTERS)
    print(f"{'id':>4} {'x':>7} {'y':>7} {'z':>7}  {bands}   (RT60 in s per band, Hz)")
    for p in data.probes:
        x, y, z = p.position
        print(f"{p.id:>4} {x:7.2f} {y:7.2f} {z:7.2f}  {_format_rt60(p)}")
    print(f"wrote {len(data.probes)} probes to {args.out}")
    return 0


def cmd_render(args):
    scene = load_scene(args.scene)
    baked = _load_baked_arg(args.baked, scene)
    traj = parse_trajectory(args.trajectory)
    cfg = _render_config(args)
    out = render_trajectory(scene, baked, traj, cfg)
    write_wav(args.out, out, WavSpec(int(cfg.sample_rate), 2, "float32"))
    print(f"wrote {out.shape[0]} frames ({out.shape[0] / cfg.sample_rate:.3f} s) to {args.out}")
    return 0


def cmd_probes(args):
    data = _load_baked_arg(args.baked, None)
    print(f"{'id':>4} {'x':>7} {'y':>7} {'z':>7}  {'rt60 per band [s]':<41}  box min -> box max")
    for p in data.probes:
        x, y, z = p.position
        lo = ",".join(f"{v:.2f}" for v in p.box_min)
        hi = ",".join(f"{v:.2f}" for v in p.box_max)
        print(f"{p.id:>4} {x:7.2f} {y:7.2f} {z:7.2f}  {_format_rt60(p):<41}  ({lo}) -> ({hi})")
    return 0


def cmd_bench(args):
    scene = load_scene(args.scene)
    baked = _load_baked_arg(args.baked, scene)
    report = bench(scene, baked, args.sources, args.seconds, args.seed, _render_config(args))
    print(report.format())
    return 0


def cmd_validate(args):
    scene = load_scene(args.scene, strict=False)
    issues = validate_scene(scene)
    n_tri = sum(len(o.mesh) for o in scene.objects)
    print(f"{args.scene}: {len(scene.objects)} objects, {n_tri} triangles, "
          f"{len(scene.sources)} sources")
    for issue in issues:
        print(f"  {issue}")
    errors = sum(i.severity == "error" for i in issues)
    if errors:
        print(f"{errors} error(s), {len(issues) - errors} warning(s)")
        return 1
    print(f"ok ({len(issues)} warning(s))" if issues else "ok")
    return 0


def _add_render_flags(p):
    p.add_argument("--fs", type=_positive_int, default=44100, help="session sample rate (Hz)")
    p.add_argument("--block", type=_positive_int, default=1024, help="block size (samples)")


def build_parser():
    parser = _Parser(prog=PROG, description="Probe-baked reverb and binaural room rendering.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bake", help="bake reverb probes for a scene")
    p.add_argument("scene")
    p.add_argument("out", help="baked data file to write")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--probes", type=_positive_int, help="number of probes (default 1)")
    g.add_argument("--spacing", type=_positive_float, help="probe grid spacing in meters")
    p.add_argument("--rays", type=_positive_int, default=10_000, help="rays per probe")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("render", help="render a trajectory to a stereo WAV")
    p.add_argument("scene")
    p.add_argument("baked", help="baked data file, or '-' for direct sound only")
    p.add_argument("trajectory")
    p.add_argument("out", help="output WAV (32-bit float)")
    _add_render_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("probes", help="list the probes in a baked file")
    p.add_argument("baked")
    p.set_defaults(func=cmd_probes)

    p = sub.add_parser("bench", help="measure the real-time factor")
    p.add_argument("scene")
    p.add_argument("baked", help="baked data file, or '-' for direct sound only")
    p.add_argument("--sources", type=_nonneg_int, default=4)
    p.add_argument("--seconds", type=_positive_float, default=10.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    _add_render_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="lint a scene file")
    p.add_argument("scene")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            int(os.environ[THREADS_ENV])
        except ValueError:
            print(f"{PROG}: error: {THREADS_ENV} must be an integer", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print(f"{PROG}: error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
