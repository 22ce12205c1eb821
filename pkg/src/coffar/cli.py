"""Command line interface.

Subcommands: synth (synthetic gallery), genpairs (pair manifests),
train, eval. Exit codes: 0 on success, 2 for usage and configuration
problems, 1 for runtime failures. The COFFAR_LOG environment variable
(error, warn, info, debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from coffar import metrics, model as model_mod, pairs, train as train_mod
from coffar.errors import (
    CheckpointError,
    CoffarError,
    ConfigError,
    GalleryError,
    GenerationError,
    KernelError,
    ManifestError,
    MetricError,
    ShapeError,
    ValueCheckError,
)

_log = logging.getLogger("coffar.cli")

# Errors that mean the user handed us something unusable, as opposed to
# the run failing midway.
_USAGE_ERRORS = (
    ConfigError,
    GalleryError,
    GenerationError,
    ManifestError,
    CheckpointError,
    MetricError,
    ValueCheckError,
    ShapeError,
    KernelError,
    ValueError,
)

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    name = os.environ.get("COFFAR_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _echo_config(out_dir: Path, name: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w") as fh:
        json.dump(resolved, fh, indent=1)
        fh.write("\n")


def cmd_synth(args) -> int:
    gallery = pairs.synth_gallery(args.ids, args.imgs, args.noise, args.seed)
    out = Path(args.out)
    pairs.write_gallery(gallery, out)
    _echo_config(out, "synth_config.json", {
        "ids": args.ids, "imgs": args.imgs, "noise": args.noise, "seed": args.seed,
    })
    print(f"wrote gallery: {args.ids} identities x {args.imgs} images at {out}")
    return 0


def cmd_genpairs(args) -> int:
    gallery = pairs.load_gallery(args.gallery)
    if args.mode == "symmetric":
        if args.count is not None:
            raise ConfigError("--count applies only to --mode exhaustive")
        seed = args.seed
        pair_list, stats = pairs.generate_symmetric(
            gallery, seed, dedupe_different=args.dedupe
        )
    else:
        if args.count is None or args.count < 1:
            raise ConfigError("exhaustive mode requires --count >= 1")
        stream = pairs.exhaustive_stream(gallery, args.seed)
        pair_list = [next(stream) for _ in range(args.count)]
        n_same = sum(1 for p in pair_list if p.label is pairs.PairLabel.SAME)
        stats = pairs.dataset_stats(gallery, n_same, len(pair_list) - n_same)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pairs.write_pair_manifest(pair_list, out, inline=args.inline)
    _echo_config(out.parent, out.name + ".config.json", {
        "gallery": str(args.gallery), "mode": args.mode, "seed": args.seed,
        "count": args.count, "dedupe": args.dedupe, "inline": args.inline,
    })
    print(f"same={stats.n_same} diff={stats.n_different}")
    if stats.images_per_identity is not None:
        print(
            f"N_s={stats.capacity_same} N_d={stats.capacity_cross_one} "
            f"N_a={stats.capacity_cross_all}"
        )
    print(f"wrote {len(pair_list)} pairs to {out}")
    return 0


def _load_run_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(data) - {"seed", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


def _resolve_train_config(args) -> tuple[int, model_mod.ModelConfig,
                                         train_mod.TrainConfig]:
    """Merge config file and flags. Flags win; seeds not given
    explicitly are split off the global seed."""
    file_cfg = _load_run_config(args.config)
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))

    model_section = dict(file_cfg.get("model", {}))
    if "seed" not in model_section:
        model_section["seed"] = pairs.derive_seed(seed, "model-init")
    model_config = model_mod.ModelConfig.from_dict(model_section)

    train_section = dict(file_cfg.get("train", {}))
    if args.lr is not None:
        train_section["learning_rate"] = args.lr
    if args.batch_size is not None:
        train_section["batch_size"] = args.batch_size
    if args.epochs is not None:
        train_section["epochs"] = args.epochs
        train_section["total_steps"] = None
    if args.steps is not None:
        train_section["total_steps"] = args.steps
        train_section["epochs"] = None
    if args.checkpoint_every is not None:
        train_section["checkpoint_every"] = args.checkpoint_every
    if "seed" not in train_section:
        train_section["seed"] = pairs.derive_seed(seed, "train-order")
    train_config = train_mod.TrainConfig.from_dict(train_section)
    return seed, model_config, train_config


def cmd_train(args) -> int:
    seed, model_config, train_config = _resolve_train_config(args)
    out = Path(args.out)

    gallery = pairs.load_gallery(args.gallery) if args.gallery else None
    resume_state = None
    if args.resume:
        model, _meta = model_mod.load_checkpoint(args.resume)
        if model.config != model_config:
            raise ConfigError(
                "checkpoint architecture differs from the resolved model config"
            )
        resume_state = train_mod.read_sidecar(args.resume)
    else:
        model = model_mod.init_model(model_config)

    if args.pairs:
        if train_config.epochs is None:
            raise ConfigError("training from --pairs runs in epoch mode; set epochs")
        data = pairs.read_pair_manifest(args.pairs, gallery=gallery)
    else:
        if train_config.total_steps is None:
            raise ConfigError("training from --stream needs total_steps")
        if gallery is None:
            raise ConfigError("--stream needs --gallery")
        if resume_state is not None:
            if resume_state.get("stream_state") is None:
                raise CheckpointError("checkpoint sidecar lacks a stream state")
            data = pairs.PairStream.from_state(
                gallery, resume_state["stream_state"]
            )
        else:
            data = pairs.exhaustive_stream(
                gallery, pairs.derive_seed(seed, "generation")
            )

    resolved = {
        "seed": seed,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
    }
    _echo_config(out, "resolved_config.json", resolved)

    model, history = train_mod.train(
        model, data, train_config, out_dir=out, resume=resume_state
    )
    history.write_jsonl(out / "history.jsonl", append=args.resume is not None)
    final_loss = history.records[-1].loss if history.records else float("nan")
    print(
        f"trained {len(history.records)} steps, final loss {final_loss:.6f}, "
        f"checkpoint at {out / 'checkpoint_final.coffar.json'}"
    )
    return 0


def cmd_eval(args) -> int:
    model, _meta = model_mod.load_checkpoint(args.checkpoint)
    gallery = pairs.load_gallery(args.gallery) if args.gallery else None
    pair_list = pairs.read_pair_manifest(args.pairs, gallery=gallery)
    if not pair_list:
        raise ManifestError(f"{args.pairs} holds no pairs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = metrics.score_pairs(model, pair_list)
    report = metrics.write_metrics_report(scores, out / "metrics.json")
    with open(out / "roc.tsv", "w") as fh:
        fh.write("threshold\ttar\tfar\n")
        for p in report["roc"]:
            fh.write(f"{p['threshold']!r}\t{p['tar']!r}\t{p['far']!r}\n")
    for k in range(min(args.heatmaps, len(pair_list))):
        metrics.write_heatmap_pgm(model, pair_list[k].image,
                                  out / f"heatmap_{k:03d}.pgm")
    if args.features:
        metrics.dump_features(model, pair_list, out / "features.tsv")
    _echo_config(out, "eval_config.json", {
        "checkpoint": str(args.checkpoint),
        "gallery": None if args.gallery is None else str(args.gallery),
        "pairs": str(args.pairs), "threshold": args.threshold,
        "heatmaps": args.heatmaps, "features": args.features,
    })
    acc = metrics.accuracy(scores, args.threshold)
    print(f"pairs={len(pair_list)} accuracy@{args.threshold}={acc:.4f} "
          f"auc={report['auc']:.4f}")
    for t in metrics.REPORT_FAR_TARGETS:
        print(f"tar@far={t}: {report['tar_at_far'][str(t)]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coffar",
        description="Low-resolution face verification on concatenated pairs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic PGM gallery")
    p.add_argument("--ids", type=int, required=True, help="number of identities")
    p.add_argument("--imgs", type=int, required=True, help="images per identity")
    p.add_argument("--noise", type=float, default=0.05,
                   help="uniform noise half-width in [0, 0.5]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="gallery directory to create")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("genpairs", help="generate a pair manifest")
    p.add_argument("--gallery", required=True)
    p.add_argument("--mode", choices=("symmetric", "exhaustive"),
                   default="symmetric")
    p.add_argument("--count", type=int, default=None,
                   help="draw count (exhaustive mode only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedupe", action="store_true",
                   help="reject duplicate different pairs (symmetric mode)")
    p.add_argument("--inline", action="store_true",
                   help="embed pixel data in the manifest")
    p.add_argument("--out", required=True, help="manifest file to write")
    p.set_defaults(func=cmd_genpairs)

    p = sub.add_parser("train", help="train a verifier")
    p.add_argument("--gallery", default=None)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pairs", default=None, help="pair manifest (epoch mode)")
    src.add_argument("--stream", action="store_true",
                     help="draw pairs endlessly from the gallery (step mode)")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score pairs and report metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery", default=None)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)
    p.add_argument("--heatmaps", type=int, default=0,
                   help="write PGM heatmaps for the first N pairs")
    p.add_argument("--features", action="store_true",
                   help="dump penultimate-layer features as TSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CoffarError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
