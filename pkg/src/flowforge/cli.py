"""Command-line interface.

Exit status: 0 on success, 1 for user errors (bad arguments, unreadable or
malformed files, invalid configuration), 2 for internal invariant
violations (including a failed ``gradcheck``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, io
from .config import EngineConfig, load_config
from .correlation import non_prior_init
from .errors import FlowForgeError
from .generation import encode_source, generate
from .losses import SeededExtractor, sample_transform, total_loss
from .pipeline import Engine, stage
from .prior import FileProvider
from .refinement import run_refinement
from .viz import visualize_flow

THREADS_ENV = "FLOWFORGE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_engine_args(p, images=True):
    p.add_argument("--config", type=Path, help="engine config JSON")
    if images:
        p.add_argument("--source", type=Path, required=True, help="source image (PNG/PPM)")
        p.add_argument("--driving", type=Path, required=True, help="driving image (PNG/PPM)")
    p.add_argument("--source-kp", type=Path, help="source keypoint JSON (selects the file prior)")
    p.add_argument("--driving-kp", type=Path, help="driving keypoint JSON")
    p.add_argument("--mask", type=Path, help="composition mask raster for the file prior")
    p.add_argument("--occlusion", type=Path, help="occlusion-logit raster for the file prior")


def build_parser():
    parser = _Parser(prog="flowforge", description="Keypoint-prior face animation engine with non-prior motion refinement.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prior-flow", help="coarse prior flow F_0 at quarter resolution")
    _add_engine_args(p)
    p.add_argument("-o", "--output", type=Path, required=True, help="flow file (.flo)")
    p.add_argument("--occlusion-out", type=Path, help="write occlusion logits raster here")

    p = sub.add_parser("corr-volume", help="structure correlation volume dump")
    _add_engine_args(p)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("init-nonprior", help="soft-argmax flow from a volume dump")
    p.add_argument("volume", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("refine", help="per-iteration refined flows and occlusions")
    _add_engine_args(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--non-prior", action="store_true", help="initialize from the volume instead of the prior")

    p = sub.add_parser("generate", help="decode a source image through given flows")
    p.add_argument("--config", type=Path)
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--flows", type=Path, nargs="+", required=True, help="one flow file per schedule level")
    p.add_argument("--occlusions", type=Path, nargs="+", help="occlusion rasters (post-sigmoid); default 1")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("animate", help="animate a source image with driving frames")
    _add_engine_args(p, images=False)
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--driving", type=Path, nargs="+", required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--non-prior", action="store_true")
    p.add_argument("--save-flows", action="store_true", help="also write every refined flow")

    p = sub.add_parser("loss", help="perceptual + equivariance loss report")
    p.add_argument("--config", type=Path)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--generated", type=Path, required=True)
    p.add_argument("--seed", type=int, help="transform seed (default: config seeds.transform)")
    p.add_argument("-o", "--output", type=Path, help="JSON report (default stdout)")

    p = sub.add_parser("viz-flow", help="colorwheel rendering of a flow file")
    p.add_argument("flow", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of analytic derivatives")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args):
    return load_config(args.config) if args.config else EngineConfig()


def _engine(args, config):
    provider = None
    if args.source_kp or args.driving_kp:
        if not (args.source_kp and args.driving_kp):
            raise UsageError("--source-kp and --driving-kp must be given together")
        provider = FileProvider.from_files(args.source_kp, args.driving_kp, args.mask, args.occlusion)
    return Engine(config, provider=provider)


def _frame(args):
    engine = _engine(args, _config(args))
    ctx = engine.prepare_source(io.read_image(args.source))
    driving = io.read_image(args.driving)
    if getattr(args, "non_prior", False):
        return engine.non_prior_frame(ctx, driving)
    return engine.frame(ctx, driving)


def cmd_prior_flow(args):
    engine = _engine(args, _config(args))
    from .prior import prior_motion

    with stage("prior"):
        _, _, prior = prior_motion(engine.provider, io.read_image(args.source), io.read_image(args.driving))
    io.write_flow(prior.flow, args.output)
    if args.occlusion_out:
        io.write_raster(prior.occlusion_logits, args.occlusion_out)


def cmd_corr_volume(args):
    io.write_volume(_frame(args).volume, args.output)


def cmd_init_nonprior(args):
    io.write_flow(non_prior_init(io.read_volume(args.volume)), args.output)


def cmd_refine(args):
    result = _frame(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, (flow, occ) in enumerate(result.flows_occlusions, start=1):
        io.write_flow(flow, args.out_dir / f"flow_{i}.flo")
        io.write_raster(occ, args.out_dir / f"occlusion_{i}.bin")


def cmd_generate(args):
    config = _config(args)
    engine = Engine(config)
    source = io.read_image(args.source)
    with stage("encoder"):
        pyramid = encode_source(engine.image_encoder, source, config.iterations)
    flows = [io.read_flow(p) for p in args.flows]
    if args.occlusions:
        if len(args.occlusions) != len(flows):
            raise UsageError("--occlusions must match --flows in count")
        occs = [io.read_raster(p)[..., 0] for p in args.occlusions]
    else:
        occs = [np.ones(f.shape[:2]) for f in flows]
    with stage("generation"):
        image = generate(pyramid, list(zip(flows, occs)), engine.decoder, source.shape[:2])
    io.write_image(image, args.output)


def cmd_animate(args):
    engine = _engine(args, _config(args))
    source = io.read_image(args.source)
    frames = [io.read_image(p) for p in args.driving]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.non_prior:
        ctx = engine.prepare_source(source)
        results = [engine.non_prior_frame(ctx, d) for d in frames]
    else:
        results = engine.animate_sequence(source, frames)
    for j, res in enumerate(results):
        io.write_image(res.image, args.out_dir / f"frame_{j:04d}.png")
        if args.save_flows:
            for i, (flow, _) in enumerate(res.flows_occlusions, start=1):
                io.write_flow(flow, args.out_dir / f"frame_{j:04d}_flow_{i}.flo")


def cmd_loss(args):
    config = _config(args)
    target = io.read_image(args.target)
    generated = io.read_image(args.generated)
    engine = Engine(config)
    seed = config.seeds.transform if args.seed is None else args.seed
    with stage("loss"):
        report = total_loss(target, generated, engine.provider, SeededExtractor(config.seeds.extractor), sample_transform, seed)
    text = json.dumps(report.as_dict(), indent=2)
    if args.output:
        args.output.write_text(text + "\n")
    else:
        print(text)


def cmd_viz_flow(args):
    io.write_image(visualize_flow(io.read_flow(args.flow)), args.output)


def cmd_gradcheck(args):
    reports = gradcheck.run_all(args.cases, args.seed)
    for r in reports:
        print(r.line())
    return 0 if all(r.passed for r in reports) else 2


COMMANDS = {
    "prior-flow": cmd_prior_flow,
    "corr-volume": cmd_corr_volume,
    "init-nonprior": cmd_init_nonprior,
    "refine": cmd_refine,
    "generate": cmd_generate,
    "animate": cmd_animate,
    "loss": cmd_loss,
    "viz-flow": cmd_viz_flow,
    "gradcheck": cmd_gradcheck,
}


def _thread_limit():
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return n if n > 0 else None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        limit = _thread_limit()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if limit is None:
            return COMMANDS[args.command](args) or 0
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(f"flowforge {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FlowForgeError, OSError) as exc:
        where = getattr(exc, "stage", None)
        frame = getattr(exc, "frame", None)
        ctx = ", ".join(x for x in (f"frame {frame}" if frame is not None else None, where) if x)
        prefix = f"flowforge {args.command}" + (f" [{ctx}]" if ctx else "")
        print(f"{prefix}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"flowforge {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
