"""Command-line entry point: ``pcdiff <command> ...``.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure, 4 I/O error.
Every command prints one ``wrote <path>`` line per file it writes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class UsageError(Exception):
    pass


def _wrote(path):
    print(f"wrote {path}")


def _load_config(args, fallback=None):
    from pcdiff.config import ExperimentConfig
    path = getattr(args, "config", None) or fallback
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _candidate_seeds(seed: int, k: int) -> list[int]:
    import numpy as np
    return [int(np.random.SeedSequence([seed, i]).generate_state(1)[0]) for i in range(k)]


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from pcdiff.data import write_dataset
    cfg = _load_config(args)
    path = write_dataset(cfg.data, cfg.seed, args.out)
    with open(path) as fh:
        for e in json.load(fh):
            for key in ("cloud", "image", "mask", "camera"):
                _wrote(os.path.join(args.out, e[key]))
    _wrote(path)


def cmd_train(args):
    from pcdiff.data import load_manifest
    from pcdiff.io import atomic_write
    from pcdiff.training import load_state, new_state, train
    cfg = _load_config(args)
    if args.steps is not None:
        cfg.train.total_steps = args.steps
    records = load_manifest(args.manifest, split="train")
    if args.resume and os.path.exists(args.out):
        state = load_state(args.out, cfg.train, cfg.model_config())
    else:
        state = new_state(cfg.model_config(), cfg.train)
    loss_csv = args.loss_csv or args.out + ".loss.csv"
    log = None
    if args.verbose:
        log = lambda s, loss, lr: print(f"step {s} loss {loss:.5f} lr {lr:.3g}", file=sys.stderr)  # noqa: E731
    train(records, cfg.train, cfg.schedule.build(), cfg.conditioner(), state,
          steps=args.stop_at, loss_csv=loss_csv, checkpoint=args.out, log=log)
    atomic_write(args.out + ".config.json", cfg.to_json())
    for p in (args.out, args.out + ".opt.npz", loss_csv, args.out + ".config.json"):
        _wrote(p)


def _checkpoint_config(args):
    sidecar = args.checkpoint + ".config.json"
    return _load_config(args, sidecar if os.path.exists(sidecar) else None)


def _load_net(path, cfg):
    from pcdiff.denoiser import PointVoxelNet, load_checkpoint
    mcfg, params = load_checkpoint(path, cfg.model_config())
    return PointVoxelNet(mcfg, params)


def cmd_sample(args):
    from pcdiff import io
    from pcdiff.filtering import silhouette
    from pcdiff.geometry import CameraView, PointCloud
    from pcdiff.training import sample
    cfg = _checkpoint_config(args)
    net = _load_net(args.checkpoint, cfg)
    image, mask = io.ppm_read(args.image), io.pgm_read(args.mask)
    with open(args.camera) as fh:
        camera = CameraView.from_json(fh.read())
    k = args.k if args.k is not None else cfg.filter.k
    if k < 1:
        raise UsageError("--k must be >= 1")
    seed = args.seed if args.seed is not None else cfg.seed
    seeds = _candidate_seeds(seed, k)
    res = sample(net, image, mask, camera, args.points or cfg.data.points, seeds,
                 cfg.schedule.build(), cfg.conditioner())
    os.makedirs(args.out, exist_ok=True)
    files = []
    for i, cloud in enumerate(res.clouds):
        ply = os.path.join(args.out, f"cand_{i:03d}.ply")
        sil = os.path.join(args.out, f"sil_{i:03d}.pgm")
        io.ply_write(ply, PointCloud(cloud))
        io.pgm_write(sil, silhouette(cloud, camera, cfg.filter.radius_ndc))
        files += [ply, sil]
    meta = {"seeds": seeds, "camera": camera.to_dict(), "mode": cfg.conditioning.mode,
            "radius_ndc": cfg.filter.radius_ndc, "condition_calls": res.condition_calls,
            "clouds": [f"cand_{i:03d}.ply" for i in range(k)],
            "silhouettes": [f"sil_{i:03d}.pgm" for i in range(k)]}
    meta_path = os.path.join(args.out, "candidates.json")
    io.atomic_write(meta_path, json.dumps(meta, indent=1) + "\n")
    for p in files + [meta_path]:
        _wrote(p)


def cmd_filter(args):
    from pcdiff import io
    from pcdiff.filtering import CandidateSet, filter_report
    if args.strategy == "fm" and not args.mask:
        raise UsageError("--strategy fm requires --mask")
    if args.strategy == "oracle" and not args.gt:
        raise UsageError("--strategy oracle requires --gt")
    with open(os.path.join(args.candidates, "candidates.json")) as fh:
        meta = json.load(fh)
    clouds = [io.ply_read(os.path.join(args.candidates, f)).positions for f in meta["clouds"]]
    sils = [io.pgm_read(os.path.join(args.candidates, f)) for f in meta["silhouettes"]]
    cands = CandidateSet(clouds, sils, meta.get("seeds", []))
    if args.strategy == "fa" and len(cands) < 2:
        raise UsageError("--strategy fa needs at least two candidates")
    mask = io.pgm_read(args.mask) if args.mask else None
    gt = io.ply_read(args.gt).positions if args.gt else None
    report = filter_report(cands, args.strategy, mask=mask, gt=gt, tau=args.tau)
    report["selected_cloud"] = meta["clouds"][report["selected"]]
    out = args.out or os.path.join(args.candidates, f"filter_{args.strategy}.json")
    io.atomic_write(out, json.dumps(report, indent=1) + "\n")
    print(f"selected {report['selected']}")
    _wrote(out)


def cmd_eval(args):
    from pcdiff import io
    from pcdiff.data import load_manifest
    from pcdiff.evaluation import evaluate_checkpoint, evaluate_predictions
    records = load_manifest(args.manifest, split=args.split)
    if args.limit:
        records = records[:args.limit]
    if not records:
        raise UsageError(f"no records in split {args.split!r}")
    if os.path.isdir(args.checkpoint):
        report = evaluate_predictions(records, args.checkpoint, args.tau)
    else:
        cfg = _checkpoint_config(args)
        if args.k is not None:
            cfg.filter.k = args.k
        if args.strategy:
            cfg.filter.strategy = args.strategy
        net = _load_net(args.checkpoint, cfg)
        report = evaluate_checkpoint(records, net, cfg, args.tau)
    out = args.out or "eval_report.json"
    io.atomic_write(out, json.dumps(report, indent=1) + "\n")
    print(f"mean F-score@{args.tau}: {report['mean']['f']:.4f} over {len(report['records'])} records")
    _wrote(out)


def cmd_render_turntable(args):
    import numpy as np
    from pcdiff import io
    from pcdiff.data import shade
    from pcdiff.geometry import CameraView
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    cloud = io.ply_read(args.ply)
    with open(args.camera) as fh:
        template = CameraView.from_json(fh.read())
    os.makedirs(args.out, exist_ok=True)
    for i, cam in enumerate(turntable_cameras(template, args.frames)):
        image, _ = shade(cloud, cam, args.radius)
        path = os.path.join(args.out, f"frame_{i:04d}.ppm")
        io.ppm_write(path, np.clip(image, 0, 1))
        _wrote(path)


def turntable_cameras(template, frames: int):
    """Template camera orbited about the world z axis through the origin."""
    import numpy as np
    from pcdiff.geometry import CameraView
    out = []
    for i in range(frames):
        th = 2 * np.pi * i / frames
        c, s = np.cos(th), np.sin(th)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        out.append(CameraView(template.rotation @ rz.T, template.translation, template.fx, template.fy,
                              template.cx, template.cy, template.width, template.height))
    return out


# ---------------------------------------------------------------- parser

def _version_string():
    from pcdiff import __version__
    from pcdiff.config import ExperimentConfig
    return f"pcdiff {__version__} config {ExperimentConfig().digest()}"


class _Version(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, help="print version and default-config hash")

    def __call__(self, parser, namespace, values, option_string=None):
        print(_version_string())
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcdiff", description="Projection-conditioned point cloud diffusion.")
    p.add_argument("--version", action=_Version)
    p.add_argument("--threads", type=int, default=None, help="cap numeric worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="experiment config JSON")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("gen-data", help="generate the toy dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the denoiser")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--steps", type=int, help="override train.total_steps")
    sp.add_argument("--stop-at", type=int, help="stop early at this step (resume later)")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--loss-csv")
    sp.add_argument("--verbose", "-v", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="draw K candidate reconstructions")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--points", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("filter", help="select one candidate")
    sp.add_argument("candidates", help="directory written by 'sample'")
    sp.add_argument("--strategy", choices=["fm", "fa", "oracle"], required=True)
    sp.add_argument("--mask")
    sp.add_argument("--gt")
    sp.add_argument("--tau", type=float, default=0.01)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("eval", help="F-scores over a manifest split")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True, help="checkpoint file or directory of <id>.ply")
    sp.add_argument("--tau", type=float, default=0.01)
    sp.add_argument("--split", default="eval")
    sp.add_argument("--k", type=int)
    sp.add_argument("--strategy", choices=["fm", "fa", "oracle", "none"])
    sp.add_argument("--limit", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render-turntable", help="render PPM frames orbiting a cloud")
    sp.add_argument("--ply", required=True)
    sp.add_argument("--camera", required=True, help="template camera JSON (frame 0)")
    sp.add_argument("--frames", type=int, default=36)
    sp.add_argument("--radius", type=float, default=0.015)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render_turntable)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from pcdiff.config import ConfigError
    from pcdiff.io import FormatError
    from pcdiff.training import NumericalError
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pcdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"pcdiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"pcdiff: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"pcdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
