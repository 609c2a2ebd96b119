"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Metrics are printed as ``key=value`` lines; diagnostics go to stderr as a
single ``error=<kind> message=<text>`` line.
"""

from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys

import numpy as np

SUBCOMMANDS = ("gen-scene", "train", "render", "deform", "boolean", "blend", "retrain",
               "compose", "eval")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(**kv) -> None:
    for k, v in kv.items():
        if isinstance(v, (float, np.floating)):
            v = repr(round(float(v), 6))
        elif isinstance(v, np.integer):
            v = int(v)
        print(f"{k}={v}")


# ---------------------------------------------------------------------------
# shared helpers


def _dtype(args):
    return np.float64 if args.precision == "float64" else np.float32


def _render_opts(args):
    from .rendering import RenderOptions
    from .sampling import SamplerParams

    bg = (0.0, 0.0, 0.0) if args.background == "black" else (1.0, 1.0, 1.0)
    return RenderOptions(args.mode, SamplerParams(args.cone_angle, args.base_step), bg)


def _model_config(args):
    from .model import ModelConfig

    return ModelConfig(args.log2_size, args.levels, args.features, args.sh_degree, args.max_res)


def _write_image(path, img) -> None:
    from .rendering import write_png, write_ppm

    if path.lower().endswith(".png"):
        write_png(path, img)
    else:
        write_ppm(path, img)


def _read_image(path):
    from .rendering import Image, read_ppm

    if path.lower().endswith(".png"):
        from PIL import Image as PILImage

        return Image(np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64) / 255.0)
    return read_ppm(path)


def _camera(args):
    from .rendering import load_cameras

    cams = load_cameras(args.camera)
    if not 0 <= args.index < len(cams):
        raise ValueError(f"{args.camera}: no camera with index {args.index}")
    return cams[args.index]


def _scene(name):
    from .scenes import fluff_ball, homogeneous_sphere

    if name == "toy":
        return fluff_ball()
    if name == "sphere":
        return homogeneous_sphere()
    raise ValueError(f"unknown scene {name!r}")


def _load_views(directory):
    from .rendering import load_cameras, read_ppm

    cams = load_cameras(os.path.join(directory, "cameras.txt"))
    return [(c, read_ppm(os.path.join(directory, f"frame_{i:04d}.ppm"))) for i, c in enumerate(cams)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scene(args) -> int:
    from .geometry import save_mesh
    from .rendering import save_cameras, write_ppm
    from .scenes import oracle_render, toy_cameras

    scene = _scene(args.scene)
    train_cams, test_cams = toy_cameras(args.views, args.size, args.heldout)
    for sub, cams in (("train", train_cams), ("test", test_cams)):
        d = os.path.join(args.out, sub)
        os.makedirs(d, exist_ok=True)
        save_cameras(os.path.join(d, "cameras.txt"), cams)
        for i, cam in enumerate(cams):
            write_ppm(os.path.join(d, f"frame_{i:04d}.ppm"), oracle_render(scene, cam, args.quality))
    save_mesh(os.path.join(args.out, "mesh.tet"), scene.mesh)
    _emit(train_views=len(train_cams), test_views=len(test_cams), tets=scene.mesh.n_tets)
    return EXIT_OK


def cmd_train(args) -> int:
    from .geometry import load_mesh
    from .model import ImpostorModel, save_model
    from .training import TrainConfig, evaluate_psnr, train

    if args.data:
        mesh = load_mesh(os.path.join(args.data, "mesh.tet"))
    else:
        mesh = _scene(args.scene or "toy").mesh
    model = ImpostorModel.from_config(mesh, _model_config(args), seed=args.seed, dtype=_dtype(args))
    out = {"tets": mesh.n_tets, "steps": args.steps}
    if args.steps > 0:
        opts = _render_opts(args)
        if args.data:
            views = _load_views(os.path.join(args.data, "train"))
            test_dir = os.path.join(args.data, "test")
            test = _load_views(test_dir) if os.path.isdir(test_dir) else []
        else:
            from .scenes import toy_dataset

            scene = _scene(args.scene or "toy")
            _, views, test = toy_dataset(args.views, args.size, args.heldout, scene=scene)
        cfg = TrainConfig(batch_size=args.batch, steps=args.steps, lr_table=args.lr_table,
                          lr_decoder=args.lr_decoder, seed=args.seed, threads=args.threads)
        model, losses = train(model, views, cfg, opts)
        out.update(loss_first=float(losses[0]), loss_last=float(losses[-1]),
                   train_psnr=evaluate_psnr(model, views, opts))
        if test:
            out["test_psnr"] = evaluate_psnr(model, test, opts)
    save_model(args.out, model)
    out["model"] = args.out
    _emit(**out)
    return EXIT_OK


def cmd_render(args) -> int:
    from .editing import load_script
    from .model import load_model
    from .rendering import render_image

    model = load_model(args.model, dtype=_dtype(args))
    opts = _render_opts(args)
    cam = _camera(args)
    if args.script:
        img = load_script(args.script, model, args.eps).render(cam, opts)
    else:
        img = render_image(model, cam, opts, threads=args.threads)
    _write_image(args.out, img)
    _emit(out=args.out, width=img.width, height=img.height)
    return EXIT_OK


def cmd_deform(args) -> int:
    from .editing import deform
    from .geometry import load_frames
    from .model import load_model, save_model

    model = load_model(args.model, dtype=_dtype(args))
    frames = load_frames(args.frames)
    k = args.frame if args.frame is not None else len(frames) - 1
    if not -len(frames) <= k < len(frames):
        raise ValueError(f"{args.frames}: no frame {k}")
    moved = deform(model, frames[k])
    save_model(args.out, moved)
    _emit(model=args.out, frame=k % len(frames), vertices=moved.mesh.n_vertices)
    return EXIT_OK


def _field_from_args(args, model):
    from .editing import DensityLeaf, boolean_combine, load_field, parse_leaf

    if args.field:
        region = load_field(args.field, model, args.eps)
    else:
        region = parse_leaf(shlex.split(args.leaf), model, args.eps)
    return boolean_combine(DensityLeaf(model, args.eps), region, args.op)


def cmd_boolean(args) -> int:
    from .editing import render_boolean_image
    from .model import load_model

    model = load_model(args.model, dtype=_dtype(args))
    fld = _field_from_args(args, model)
    img = render_boolean_image(model, fld, _camera(args), _render_opts(args))
    _write_image(args.out, img)
    _emit(out=args.out, op=args.op)
    return EXIT_OK


def cmd_blend(args) -> int:
    from .editing import Complement, blend_image, load_field
    from .model import load_model

    model = load_model(args.model, dtype=_dtype(args))
    partner = load_model(args.partner, dtype=_dtype(args))
    region = load_field(args.mask, partner, args.eps)
    img = blend_image(model, partner, Complement(region), region, _camera(args), _render_opts(args))
    _write_image(args.out, img)
    _emit(out=args.out)
    return EXIT_OK


def cmd_retrain(args) -> int:
    from .geometry import load_mesh
    from .model import load_model, save_model
    from .training import RetrainRegion, Stage1Config, Stage2Config, retrain_local

    old = load_model(args.model, dtype=_dtype(args))
    new_mesh = load_mesh(args.mesh)
    region = RetrainRegion.match(old.mesh, new_mesh)
    hist: dict = {}
    new = retrain_local(old, new_mesh, region,
                        Stage1Config(args.stage1_steps, args.stage1_points, seed=args.seed),
                        Stage2Config(args.stage2_steps, args.batch, seed=args.seed + 1),
                        _render_opts(args), hist)
    save_model(args.out, new)
    out = {"changed": len(region.changed), "model": args.out}
    if hist["stage1"]:
        out["stage1_loss"] = float(hist["stage1"][-1])
    if hist["stage2"]:
        out["stage2_loss"] = float(hist["stage2"][-1])
    _emit(**out)
    return EXIT_OK


def _parse_instance(spec: str, dtype):
    from .editing import Instance
    from .model import load_model

    parts = shlex.split(spec)
    if len(parts) not in (1, 4, 5):
        raise UsageError(f"--instance expects 'model.nimp [tx ty tz [scale]]', got {spec!r}")
    nums = [float(x) for x in parts[1:]]
    m = np.eye(4)
    if nums:
        m[:3, :3] *= nums[3] if len(nums) == 4 else 1.0
        m[:3, 3] = nums[:3]
    return Instance(load_model(parts[0], dtype=dtype), m)


def cmd_compose(args) -> int:
    from .editing import CompositeScene, compose
    from .rendering import RenderOptions

    scene = CompositeScene([_parse_instance(s, _dtype(args)) for s in args.instance])
    base = _render_opts(args)
    img = compose(scene, _camera(args), RenderOptions("decode_first", base.sampler, base.background))
    _write_image(args.out, img)
    _emit(out=args.out, instances=len(scene.instances))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .rendering import psnr

    _emit(psnr=psnr(_read_image(args.a), _read_image(args.b)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    g.add_argument("--precision", choices=("float32", "float64"), default="float32",
                   help="storage precision of tables and decoders (default float32)")
    g.add_argument("--threads", type=int, default=1,
                   help="worker threads; 1 is the deterministic reference mode (default 1)")
    g.add_argument("--config", metavar="FILE",
                   help="text file of 'flag value' lines mirroring command-line flags")
    g.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return p


def _render_flags(p, mode="decode_first") -> None:
    g = p.add_argument_group("rendering")
    g.add_argument("--mode", choices=("decode_first", "early_integration"), default=mode,
                   help=f"render mode (default {mode})")
    g.add_argument("--base-step", type=float, default=0.05,
                   help="first barycentric step per crossing (default 0.05)")
    g.add_argument("--cone-angle", type=float, default=0.01,
                   help="step growth per unit of travelled alpha (default 0.01)")
    g.add_argument("--background", choices=("white", "black"), default="white",
                   help="background colour (default white)")


def _camera_flags(p) -> None:
    p.add_argument("--camera", required=True, metavar="FILE", help="camera file, one 'cam ...' line per view")
    p.add_argument("--index", type=int, default=0, help="which camera line to use (default 0)")
    p.add_argument("--out", required=True, metavar="IMAGE", help="output image (.ppm or .png)")


def _model_flags(p) -> None:
    from .scenes import TOY_MODEL

    g = p.add_argument_group("model")
    g.add_argument("--log2-size", type=int, default=TOY_MODEL.log2_size,
                   help=f"log2 of the total hash-table rows (default {TOY_MODEL.log2_size})")
    g.add_argument("--levels", type=int, default=TOY_MODEL.levels,
                   help=f"resolution levels (default {TOY_MODEL.levels})")
    g.add_argument("--features", type=int, default=TOY_MODEL.features,
                   help=f"features per level (default {TOY_MODEL.features})")
    g.add_argument("--sh-degree", type=int, default=TOY_MODEL.sh_degree,
                   help=f"spherical-harmonic degree of the direction input (default {TOY_MODEL.sh_degree})")
    g.add_argument("--max-res", type=int, default=TOY_MODEL.max_res,
                   help=f"finest grid resolution (default {TOY_MODEL.max_res})")


def build_parser() -> argparse.ArgumentParser:
    from .editing import DEFAULT_EPS, OP_ALIASES
    from .scenes import TOY_RENDER_MODE, TOY_TRAIN

    common = _common()
    parser = _Parser(prog="tetfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-scene", parents=[common], help="render an analytic scene into a dataset directory")
    p.add_argument("--scene", choices=("toy", "sphere"), default="toy", help="analytic scene (default toy)")
    p.add_argument("--out", required=True, metavar="DIR", help="output dataset directory")
    p.add_argument("--views", type=int, default=8, help="training views (default 8)")
    p.add_argument("--heldout", type=int, default=4, help="held-out views (default 4)")
    p.add_argument("--size", type=int, default=64, help="image side in pixels (default 64)")
    p.add_argument("--quality", type=int, default=512, help="quadrature steps per ray (default 512)")

    p = sub.add_parser("train", parents=[common], help="fit a model to posed images")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scene", choices=("toy", "sphere"),
                     help="train on a generated analytic scene (default toy)")
    src.add_argument("--data", metavar="DIR", help="dataset directory written by gen-scene")
    p.add_argument("--out", default="model.nimp", help="checkpoint path (default model.nimp)")
    p.add_argument("--steps", type=int, default=TOY_TRAIN.steps,
                   help=f"optimizer steps; 0 writes an untrained checkpoint (default {TOY_TRAIN.steps})")
    p.add_argument("--batch", type=int, default=TOY_TRAIN.batch_size,
                   help=f"rays per step (default {TOY_TRAIN.batch_size})")
    p.add_argument("--lr-table", type=float, default=TOY_TRAIN.lr_table,
                   help=f"hash-table learning rate (default {TOY_TRAIN.lr_table})")
    p.add_argument("--lr-decoder", type=float, default=TOY_TRAIN.lr_decoder,
                   help=f"decoder learning rate (default {TOY_TRAIN.lr_decoder})")
    p.add_argument("--views", type=int, default=8, help="training views of a generated scene (default 8)")
    p.add_argument("--heldout", type=int, default=4, help="held-out views of a generated scene (default 4)")
    p.add_argument("--size", type=int, default=64, help="image side of a generated scene (default 64)")
    _model_flags(p)
    _render_flags(p, TOY_RENDER_MODE)

    p = sub.add_parser("render", parents=[common], help="render a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint (.nimp)")
    p.add_argument("--script", metavar="FILE", help="edit script applied before rendering")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help=f"density threshold of boolean leaves (default {DEFAULT_EPS})")
    _camera_flags(p)
    _render_flags(p, TOY_RENDER_MODE)

    p = sub.add_parser("deform", parents=[common], help="move proxy vertices, keep the field")
    p.add_argument("--model", required=True, help="checkpoint (.nimp)")
    p.add_argument("--frames", required=True, metavar="FILE", help="vertex frames file")
    p.add_argument("--frame", type=int, help="frame index (default: last frame)")
    p.add_argument("--out", required=True, help="output checkpoint")

    ops = sorted(OP_ALIASES)
    p = sub.add_parser("boolean", parents=[common], help="render a model under a boolean field")
    p.add_argument("--model", required=True, help="checkpoint (.nimp)")
    p.add_argument("--op", choices=ops, default="difference", help="operation between model and region")
    region = p.add_mutually_exclusive_group(required=True)
    region.add_argument("--leaf", help="region leaf, e.g. 'sphere 0.2 0.1 0.1 0.15'")
    region.add_argument("--field", metavar="FILE", help="region description file")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help=f"density threshold of the model leaf (default {DEFAULT_EPS})")
    _camera_flags(p)
    _render_flags(p)

    p = sub.add_parser("blend", parents=[common], help="blend two models inside a region")
    p.add_argument("--model", required=True, help="base checkpoint, shown outside the region")
    p.add_argument("--partner", required=True, help="checkpoint shown inside the region")
    p.add_argument("--mask", required=True, metavar="FILE", help="region description file")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS,
                   help=f"density threshold of density leaves (default {DEFAULT_EPS})")
    _camera_flags(p)
    _render_flags(p)

    p = sub.add_parser("retrain", parents=[common], help="transfer a model onto a re-meshed proxy")
    p.add_argument("--model", required=True, help="checkpoint on the old proxy")
    p.add_argument("--mesh", required=True, help="new proxy mesh (.tet)")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--stage1-steps", type=int, default=500, help="feature-matching steps (default 500)")
    p.add_argument("--stage1-points", type=int, default=1 << 14,
                   help="points per feature-matching step (default 16384)")
    p.add_argument("--stage2-steps", type=int, default=300, help="render-matching steps (default 300)")
    p.add_argument("--batch", type=int, default=512, help="rays per render-matching step (default 512)")
    _render_flags(p, TOY_RENDER_MODE)

    p = sub.add_parser("compose", parents=[common], help="render several placed models together")
    p.add_argument("--instance", action="append", required=True,
                   help="'model.nimp [tx ty tz [scale]]'; repeat for more instances")
    _camera_flags(p)
    _render_flags(p)

    p = sub.add_parser("eval", parents=[common], help="PSNR between two images")
    p.add_argument("--a", required=True, help="first image (.ppm or .png)")
    p.add_argument("--b", required=True, help="second image (.ppm or .png)")
    return parser


def _config_args(path) -> list[str]:
    """``flag value`` lines (or bare ``flag`` for switches) -> argv tokens."""
    out: list[str] = []
    with open(path) as fh:
        for line in fh:
            tokens = shlex.split(line, comments=True)
            if tokens:
                out += ["--" + tokens[0].lstrip("-")] + tokens[1:]
    return out


def _with_config(argv: list[str]) -> list[str]:
    """Config-file flags go right after the subcommand so explicit flags win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise UsageError("--config needs a file")
    extra = _config_args(argv[i + 1])
    cmd = next((k for k, a in enumerate(argv) if a in SUBCOMMANDS), None)
    if cmd is None:
        raise UsageError("missing subcommand")
    return argv[:cmd + 1] + extra + argv[cmd + 1:]


HANDLERS = {
    "gen-scene": cmd_gen_scene, "train": cmd_train, "render": cmd_render, "deform": cmd_deform,
    "boolean": cmd_boolean, "blend": cmd_blend, "retrain": cmd_retrain, "compose": cmd_compose,
    "eval": cmd_eval,
}


def _fail(kind: str, exc) -> None:
    msg = " ".join(str(exc).split())
    print(f"error={kind} message={msg}", file=sys.stderr)


def run(argv=None) -> int:
    from .geometry import MeshError
    from .model import CheckpointError

    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        args = parser.parse_args(_with_config(argv))
        if args.command is None:
            raise UsageError("missing subcommand; choose one of " + ", ".join(SUBCOMMANDS))
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except OSError as exc:
        _fail("data", exc)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            return HANDLERS[args.command](args)
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except FloatingPointError as exc:
        _fail("numeric", exc)
        return EXIT_NUMERIC
    except (OSError, MeshError, CheckpointError, ValueError, KeyError) as exc:
        _fail("data", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
