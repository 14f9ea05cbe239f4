"""Command-line front end.

Subcommands cover the full artifact flow: synthesize scenes, train, export
pseudo labels, score them, audit gradients, and render overlays.  Bad flags
or paths exit 2 with usage; internal failures exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checks import TOLERANCE, gradient_suite
from .config import RunConfig, config_hash, load_config, save_config
from .data import SceneConfig, generate_scene, scene_point_labels, write_scene_dir
from .metrics import evaluate, metrics_dict, write_metrics
from .pipeline import (
    SCENE_SEED_STRIDE,
    generate_pseudo,
    heldout_corpus,
    load_params,
    read_pseudo_dir,
    save_params,
    train,
    training_corpus,
    write_pseudo_dir,
)
from .viz import write_scene_svg


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return path


def _existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"no such directory: {value}")
    return path


def _corpus(cfg: RunConfig, split: str):
    return training_corpus(cfg) if split == "train" else heldout_corpus(cfg)


def _resolved_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = SceneConfig(
        height=args.size,
        width=args.size,
        n_classes=args.classes,
        scale_range=(args.scale_min, args.scale_max),
        aspect_range=(args.aspect_min, args.aspect_max),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed * SCENE_SEED_STRIDE + i
        scene = generate_scene(cfg, seed=seed)
        labels = scene_point_labels(scene, np.random.default_rng(seed + 51))
        write_scene_dir(out / f"scene_{i:03d}", scene, labels)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(cfg, out_dir=str(out))
    save_config(cfg, out / "config.json")
    result = train(cfg, log_path=out / "loss_log.jsonl")
    save_params(out / "params.npz", result.mil, result.angle)
    held = heldout_corpus(cfg)
    pseudo = generate_pseudo(result.mil, result.angle, held, cfg)
    scores = evaluate(pseudo, [s.scene.objects for s in held])
    write_metrics(out / "metrics.json", scores, config_hash(cfg))
    print(f"trained {cfg.total_steps} steps; held-out mIoU {scores.miou:.4f}, AP50 {scores.ap50:.4f}")
    return 0


def cmd_pseudo(args) -> int:
    cfg = _resolved_config(args)
    mil, angle = load_params(args.params, cfg)
    corpus = _corpus(cfg, args.split)
    pseudo = generate_pseudo(mil, angle, corpus, cfg)
    write_pseudo_dir(args.out, pseudo)
    n = sum(len(p) for p in pseudo)
    print(f"wrote {n} pseudo boxes over {len(pseudo)} scenes to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved_config(args)
    pseudo = read_pseudo_dir(args.pseudo)
    corpus = _corpus(cfg, args.split)
    scores = evaluate(pseudo, [s.scene.objects for s in corpus])
    payload = metrics_dict(scores, config_hash(cfg))
    if args.out is not None:
        write_metrics(args.out, scores, config_hash(cfg))
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    worst = gradient_suite(points=args.points, seed=args.seed, sabotage=args.sabotage)
    failed = False
    for name, err in worst.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        failed = failed or err >= TOLERANCE
        print(f"{name}: {err:.3e} {status}")
    if failed:
        print("gradient audit failed", file=sys.stderr)
        return 1
    return 0


def cmd_viz(args) -> int:
    cfg = _resolved_config(args)
    corpus = _corpus(cfg, args.split)
    pseudo = read_pseudo_dir(args.pseudo) if args.pseudo is not None else None
    if pseudo is not None and len(pseudo) != len(corpus):
        raise ValueError(f"{len(pseudo)} pseudo scenes for {len(corpus)} corpus scenes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = min(len(corpus), args.limit) if args.limit else len(corpus)
    for i in range(count):
        sample = corpus[i]
        boxes = [p.box for p in pseudo[i]] if pseudo is not None else None
        write_scene_svg(out / f"scene_{i:03d}.svg", sample.scene, sample.labels, boxes)
    print(f"wrote {count} overlays to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointbox",
        description="Oriented pseudo-boxes from point labels on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic scenes to a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--scale-min", type=float, default=20.0)
    p.add_argument("--scale-max", type=float, default=90.0)
    p.add_argument("--aspect-min", type=float, default=1.0)
    p.add_argument("--aspect-max", type=float, default=3.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the staged loop from a config file")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pseudo", help="export pseudo boxes as DOTA files")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--params", type=_existing_file, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "heldout"), default="heldout")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("eval", help="score a pseudo-label directory")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--pseudo", type=_existing_dir, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", choices=("train", "heldout"), default="heldout")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="audit every loss against finite differences")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sabotage", action="store_true", help="include a known-broken gradient")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz", help="render SVG overlays of scenes and boxes")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--pseudo", type=_existing_dir, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "heldout"), default="heldout")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
