"""Command-line surface and the experiment/ablation runner.

Exit codes are a stable scripting contract: 0 success, 2 usage error,
3 data error, 4 missing artifact. Every run directory receives the
resolved config, the git-describe string and the seed.
"""

import argparse
import json
import os
import subprocess
import sys

import numpy as np

from . import container, data
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .codec import MaskClip, VideoClip
from .config import (ConfigError, echo_config, load_config, model_config,
                     resolve_seed, train_config)
from .container import ContainerError
from .diffusion import two_stage_train
from .metrics import region_report, write_report_csv
from .model import VideoInpainter
from .scheduler import inpaint_clip, run_long_inpaint

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING = 4


class MissingArtifactError(FileNotFoundError):
    pass


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _provenance(out_dir, resolved, seed):
    os.makedirs(out_dir, exist_ok=True)
    echo_config(resolved, os.path.join(out_dir, "config.txt"))
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": seed, "git": _git_describe()}, fh, sort_keys=True)
        fh.write("\n")


def _require(path, what):
    if not path or not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _load_model(path):
    _require(path, "checkpoint")
    model, stage, extra = load_checkpoint(path)
    return model, stage, extra


# -- commands ----------------------------------------------------------------------


def cmd_generate_data(args):
    resolved = load_config(args.config)
    seed = resolve_seed(args.spec_seed)
    _provenance(args.out, resolved, seed)
    frames = resolved["pipeline.frames"]
    size = resolved["pipeline.size"]
    fps = resolved["pipeline.fps"]
    rng = np.random.default_rng(seed)
    colors = args.colors.split(",") if args.colors else None
    entries = []
    for i in range(args.count):
        spec = data.random_scene(rng, frames, size, size, colors=colors)
        video, mask, caption = data.generate_synthetic(spec, frames, size, size,
                                                       seed=int(rng.integers(2**31)))
        video.fps = fps
        cpath = os.path.join(args.out, f"clip_{i:04d}.vpcl")
        mpath = os.path.join(args.out, f"mask_{i:04d}.vpcl")
        container.save_video(cpath, video)
        container.save_mask(mpath, mask, fps=fps)
        entries.append(data.ManifestEntry(cpath, mpath, caption, fps, "generated"))
    data.write_manifest(os.path.join(args.out, "manifest.tsv"), entries)
    print(f"wrote {len(entries)} clips to {args.out}")
    return EXIT_OK


def cmd_curate(args):
    resolved = load_config(args.config)
    _provenance(args.out, resolved, resolve_seed(None))
    entries = data.read_manifest(_require(args.manifest, "manifest"))
    cfg = data.CurationConfig(
        transition_threshold=resolved["pipeline.transition_threshold"])

    def loader(entry):
        return container.load_video(entry.clip_path), container.load_mask(entry.mask_path)

    def writer(entry, video, mask, suffix):
        base = os.path.splitext(os.path.basename(entry.clip_path))[0]
        cpath = os.path.join(args.out, f"{base}_s{suffix}.vpcl")
        mpath = os.path.join(args.out, f"{base}_s{suffix}_mask.vpcl")
        container.save_video(cpath, video)
        container.save_mask(mpath, mask, fps=entry.fps)
        return cpath, mpath

    kept, drops = data.curate(entries, cfg, args.out, loader, writer)
    data.write_manifest(os.path.join(args.out, "manifest.tsv"), kept)
    with open(os.path.join(args.out, "drops.tsv"), "w", encoding="utf-8") as fh:
        for entry, stage, why in drops:
            fh.write(f"{entry.clip_path}\t{stage}\t{why}\n")
    print(f"kept {len(kept)}, dropped {len(drops)}")
    return EXIT_OK


def _load_dataset(manifest_path):
    dataset = []
    for entry in data.read_manifest(manifest_path):
        video = container.load_video(entry.clip_path)
        mask = container.load_mask(entry.mask_path)
        dataset.append((video, mask, entry.caption_id))
    return dataset


def cmd_train(args):
    resolved = load_config(args.config)
    seed = resolve_seed(args.seed)
    _provenance(args.out, resolved, seed)
    dataset = _load_dataset(_require(args.manifest, "manifest"))
    tcfg = train_config(resolved, seed=seed)
    if args.steps is not None:
        tcfg.stage1_steps = args.steps
        tcfg.stage2_steps = max(1, args.steps // 10)

    if args.stage in ("1", "both"):
        model = VideoInpainter(model_config(resolved, seed=seed))
    else:
        model, stage, _ = _load_model(args.resume)
        if stage < 1:
            raise MissingArtifactError("stage 2 requires a stage-1 checkpoint (--resume)")

    loss_rows = []

    def log(step, stage, loss):
        loss_rows.append(f"{step},{stage},{loss:.6f}")

    stages = {"1": (1,), "2": (2,), "both": (1, 2)}[args.stage]
    two_stage_train(model, dataset, tcfg, stages=stages, log=log)
    for stage in stages:
        save_checkpoint(os.path.join(args.out, f"checkpoint_stage{stage}.vpck"),
                        model, stage=stage)
    with open(os.path.join(args.out, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,stage,loss\n")
        fh.write("\n".join(loss_rows) + ("\n" if loss_rows else ""))
    print(f"trained stages {stages}; checkpoints in {args.out}")
    return EXIT_OK


def cmd_inpaint(args, caption_override=None):
    model, _, _ = _load_model(args.checkpoint)
    video = container.load_video(_require(args.video, "video"))
    mask = container.load_mask(_require(args.mask, "mask"))
    seed = resolve_seed(args.seed)
    caption = caption_override if caption_override is not None else args.caption_id
    result, _ = inpaint_clip(model, video, mask, caption, steps=args.steps,
                             seed=seed, blend_known_region=args.blend)
    container.save_video(args.out, result)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_edit(args):
    return cmd_inpaint(args, caption_override=args.target_caption_id)


def cmd_long_inpaint(args):
    model, _, _ = _load_model(args.checkpoint)
    video = container.load_video(_require(args.video, "video"))
    mask = container.load_mask(_require(args.mask, "mask"))
    seed = resolve_seed(args.seed)
    trace = {}

    debug_sink = None
    if args.debug_dir:
        os.makedirs(args.debug_dir, exist_ok=True)

        def debug_sink(k, clip):
            container.save_video(os.path.join(args.debug_dir, f"clip_{k:03d}.vpcl"), clip)

    result = run_long_inpaint(model, video, mask, args.caption_id,
                              clip_len=args.clip_len, overlap=args.overlap,
                              steps=args.steps, seed=seed,
                              resample_on=not args.no_resample,
                              trace=trace, debug_sink=debug_sink)
    container.save_video(args.out, result)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            json.dump(trace, fh, sort_keys=True)
            fh.write("\n")
    print(f"wrote {args.out} ({len(trace.get('clips', []))} clips)")
    return EXIT_OK


def cmd_eval(args):
    gen = container.load_video(_require(args.gen, "generated video"))
    ref = container.load_video(_require(args.ref, "reference video"))
    mask = container.load_mask(_require(args.mask, "mask"))
    reports = [region_report(gen.frames, ref.frames, mask.frames, region)
               for region in args.regions.split(",")]
    write_report_csv(args.out, reports)
    print(f"wrote {args.out}")
    return EXIT_OK


ABLATION_VARIANTS = {
    "standard": [
        ("depth_1", {"model.context_depth": 1}),
        ("depth_2", {}),
        ("depth_4", {"model.context_depth": 4}),
        ("no_select", {"model.use_select": False}),
        ("t2v", {"model.mode": "t2v"}),
    ],
    "long": [
        ("resample", {"long.resample": True}),
        ("no_resample", {"long.resample": False}),
    ],
}


def cmd_ablate(args):
    resolved = load_config(args.config)
    seed = resolve_seed(args.seed)
    _provenance(args.out, resolved, seed)
    suites = ["standard", "long"] if args.suite == "all" else [args.suite]

    frames = resolved["pipeline.frames"]
    size = resolved["pipeline.size"]
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(args.clips):
        spec = data.random_scene(rng, frames, size, size, colors=["red", "blue"])
        video, mask, caption = data.generate_synthetic(spec, frames, size, size,
                                                       seed=int(rng.integers(2**31)))
        corpus.append((video, mask, caption))
    eval_rng = np.random.default_rng(seed + 1)
    eval_spec = data.random_scene(eval_rng, frames, size, size, colors=["red", "blue"])
    eval_video, eval_mask, eval_caption = data.generate_synthetic(
        eval_spec, frames, size, size, seed=int(eval_rng.integers(2**31)))

    rows = []
    for suite in suites:
        for name, overrides in ABLATION_VARIANTS[suite]:
            variant_resolved = load_config(args.config, overrides=overrides)
            model = VideoInpainter(model_config(variant_resolved, seed=seed))
            tcfg = train_config(variant_resolved, seed=seed)
            tcfg.stage1_steps = args.train_steps
            tcfg.stage2_steps = max(1, args.train_steps // 10) if suite == "long" else 0
            stages = (1, 2) if suite == "long" else (1,)
            two_stage_train(model, corpus, tcfg, stages=stages)
            if suite == "long":
                long_frames = np.concatenate([eval_video.frames] * 3, axis=0)
                long_masks = np.concatenate([eval_mask.frames] * 3, axis=0)
                result = run_long_inpaint(
                    model, VideoClip(long_frames, fps=eval_video.fps), MaskClip(long_masks),
                    eval_caption, clip_len=variant_resolved["long.clip_len"],
                    overlap=variant_resolved["long.overlap"], steps=args.steps, seed=seed,
                    resample_on=variant_resolved["long.resample"])
                rep = region_report(result.frames, long_frames, long_masks, "masked")
            else:
                result, _ = inpaint_clip(model, eval_video, eval_mask, eval_caption,
                                         steps=args.steps, seed=seed)
                rep = region_report(result.frames, eval_video.frames, eval_mask.frames, "masked")
            rows.append((f"{suite}:{name}", rep))

    out_path = os.path.join(args.out, "ablation.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("variant,region,psnr_db,ssim,mse,mae,pixel_count,lpips,clip_sim,clip_sim_m,fvid\n")
        for name, rep in rows:
            fh.write(name + "," + ",".join(rep.row()) + "\n")
    print(f"wrote {out_path} ({len(rows)} variants)")
    return EXIT_OK


def cmd_export_ppm(args):
    clip = container.load_video(_require(args.container, "container"))
    paths = container.export_ppm_sequence(clip, args.out)
    print(f"wrote {len(paths)} frames to {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="vidfill",
                                     description="dual-branch video inpainting, desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="emit synthetic clips, masks and a manifest")
    p.add_argument("--spec-seed", type=int, default=None)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--colors", default=None, help="comma-separated palette subset")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("curate", help="run the curation pipeline over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--stage", choices=["1", "2", "both"], default="both")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="override stage-1 steps")
    p.add_argument("--resume", default=None, help="stage-1 checkpoint for --stage 2")
    p.set_defaults(func=cmd_train)

    def sampling_args(p, caption_flag="--caption-id"):
        p.add_argument("--video", required=True)
        p.add_argument("--mask", required=True)
        p.add_argument(caption_flag, type=int, required=True,
                       dest=caption_flag.strip("-").replace("-", "_"))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--steps", type=int, default=20)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("inpaint", help="single-clip inpainting")
    sampling_args(p)
    p.add_argument("--blend", action="store_true", help="latent blending of the known region")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("edit", help="inpainting with a substituted caption")
    sampling_args(p, caption_flag="--target-caption-id")
    p.add_argument("--blend", action="store_true")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("long-inpaint", help="any-length windowed inpainting")
    sampling_args(p)
    p.add_argument("--clip-len", type=int, default=8)
    p.add_argument("--overlap", type=int, default=2)
    p.add_argument("--no-resample", action="store_true")
    p.add_argument("--debug-dir", default=None, help="write per-clip containers here")
    p.add_argument("--trace-out", default=None, help="write a JSON trace here")
    p.set_defaults(func=cmd_long_inpaint)

    p = sub.add_parser("eval", help="masked-region-preservation metrics")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--regions", default="unmasked")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    p.add_argument("--suite", choices=["standard", "long", "all"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--train-steps", type=int, default=50)
    p.add_argument("--steps", type=int, default=10, help="sampler steps")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-ppm", help="dump a video container as PPM frames")
    p.add_argument("--container", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_ppm)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ContainerError, CheckpointError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
