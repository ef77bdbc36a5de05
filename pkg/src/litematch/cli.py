"""Command-line interface: gen-data, train, match, evaluate."""

from __future__ import annotations

import os
import sys


def _configure_threads_early() -> None:
    """Pin BLAS thread counts before numpy loads (the --threads flag)."""
    argv = sys.argv
    value = None
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif tok.startswith("--threads="):
            value = tok.split("=", 1)[1]
    if value is not None:
        try:
            n = max(1, int(value))
        except ValueError:
            return  # argparse reports the error later
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


_configure_threads_early()

import argparse
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, model_from_checkpoint, run_config_from_meta
from .config import RunConfig, apply_overrides, load_config_file
from .dataset import (
    AlignedPair,
    build_triplets,
    enhanced_pair,
    identity_alignment,
    load_dataset,
    merge_manifests,
    synth_pair,
    write_dataset,
)
from .detector import detect_keypoints
from .errors import ConfigError, DatasetError
from .image import load_image, save_ppm
from .matching import annotate_matches, match_nn, score, write_matches
from .patch import required_margin
from .pipeline import (
    compute_descriptors,
    detect_for_matching,
    enhance,
    evaluate_pair,
    evaluation_table,
)
from .training import select_records, train


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config field (repeatable)",
    )


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        cfg = load_config_file(args.config, cfg)
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if args.pairs is not None:
        cfg.pairs = args.pairs
    if args.triplets is not None:
        cfg.triplets = args.triplets
    out_dir = Path(args.out)
    if args.from_pairs is not None:
        src = Path(args.from_pairs)
        names = sorted(p.name[: -len("_vis.pgm")] for p in src.glob("*_vis.pgm"))
        if not names:
            raise DatasetError(f"no *_vis.pgm files in {src}")
        pairs = [
            AlignedPair(
                name=n,
                visible=load_image(src / f"{n}_vis.pgm"),
                nir=load_image(src / f"{n}_nir.pgm"),
            )
            for n in names
        ]
    else:
        pairs = [
            synth_pair(cfg.seed + i, size=cfg.synth_size, name=f"pair{i:04d}")
            for i in range(cfg.pairs)
        ]
    margin = required_margin(cfg.window, cfg.input_size)
    per_pair = [cfg.triplets // len(pairs)] * len(pairs)
    for i in range(cfg.triplets % len(pairs)):
        per_pair[i] += 1
    manifests = []
    for pair, count in zip(pairs, per_pair):
        vis_e = enhance(pair.visible, cfg)
        nir_e = enhance(pair.nir, cfg)
        keypoints = detect_keypoints(vis_e, cfg.max_keypoints, border_margin=margin)
        if len(keypoints) < 2:
            raise DatasetError(f"pair {pair.name}: not enough usable keypoints")
        _, manifest = build_triplets(
            pair,
            keypoints,
            count=count,
            seed=cfg.seed,
            window=cfg.window,
            out_size=cfg.input_size,
            kinds=cfg.transform_kinds(),
            visible_enhanced=vis_e,
            nir_enhanced=nir_e,
        )
        manifest.clahe_clip = cfg.clahe_clip
        manifest.clahe_grid = cfg.clahe_grid
        manifests.append(manifest)
    merged = merge_manifests(manifests, seed=cfg.seed)
    merged.clahe_clip = cfg.clahe_clip
    merged.clahe_grid = cfg.clahe_grid
    write_dataset(out_dir, pairs, merged)
    print(f"wrote {len(pairs)} pairs, {merged.count} triplet records to {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    log_path = args.log if args.log is not None else Path(args.out).with_suffix(".log.tsv")
    report = train(
        cfg,
        data_dir=args.data,
        out_checkpoint=args.out,
        subset=args.subset,
        resume=args.resume,
        log_path=log_path,
    )
    print(
        f"trained {report.steps} steps over {len(report.epochs)} epochs; "
        f"final mean loss {report.final_loss:.6f}; checkpoint at {args.out}"
    )
    return 0


def cmd_match(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    cfg = run_config_from_meta(ckpt.meta)
    if args.config is not None or args.set or args.seed is not None:
        cfg = _build_config(args)
    img_a = load_image(args.image_a)
    img_b = load_image(args.image_b)
    enh_a = enhance(img_a, cfg)
    enh_b = enhance(img_b, cfg)
    kps_a = detect_for_matching(enh_a, cfg)
    kps_b = detect_for_matching(enh_b, cfg)
    if not kps_a or not kps_b:
        raise DatasetError(
            f"no usable keypoints ({len(kps_a)} in {args.image_a}, {len(kps_b)} in {args.image_b})"
        )
    set_a = compute_descriptors(model, enh_a, kps_a, cfg)
    set_b = compute_descriptors(model, enh_b, kps_b, cfg)
    result = match_nn(set_a, set_b, threshold=cfg.threshold, mutual=cfg.mutual)
    line = f"matched {result.n_success} of {result.n_total_keypoints} keypoints"
    if args.gt_identity:
        precision, matching_score = score(result, set_a, set_b, identity_alignment, eps=cfg.eps)
        line += f"; precision {precision:.4f} matching_score {matching_score:.4f}"
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_matches(prefix.with_suffix(".matches.tsv"), result, set_a, set_b)
    composite = annotate_matches(
        AlignedPair(name=prefix.name, visible=img_a, nir=img_b),
        result,
        set_a,
        set_b,
        identity_alignment,
        eps=cfg.eps,
    )
    save_ppm(composite, prefix.with_suffix(".matches.ppm"))
    print(f"{line}; wall {time.perf_counter() - t0:.1f}s; outputs at {prefix}.matches.*")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    cfg = run_config_from_meta(ckpt.meta)
    if args.config is not None or args.set or args.seed is not None:
        cfg = _build_config(args)
    pairs, manifest = load_dataset(args.data)
    selected = select_records(manifest, cfg, args.subset)
    if not selected.pairs:
        raise DatasetError("no pairs selected for evaluation")
    rows = []
    for name in selected.pairs:
        summary, _, _, _ = evaluate_pair(model, pairs[name], cfg)
        rows.append(summary)
    table = evaluation_table(rows)
    print(table, end="")
    if args.out is not None:
        Path(args.out).write_text(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="litematch",
        description="Cross-modality keypoint matching with learned pyramid-transformer descriptors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic pairs and a triplet manifest")
    _add_shared(g)
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--synthetic", action="store_true", help="use the synthetic pair generator")
    g.add_argument("--from-pairs", default=None, help="directory of registered *_vis.pgm/*_nir.pgm")
    g.add_argument("--pairs", type=int, default=None, help="number of synthetic pairs")
    g.add_argument("--triplets", type=int, default=None, help="total triplet count")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the descriptor network on a dataset")
    _add_shared(t)
    t.add_argument("--data", required=True, help="dataset directory from gen-data")
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--log", type=Path, default=None, help="epoch log path (default <out>.log.tsv)")
    t.add_argument(
        "--subset",
        choices=("all", "train", "val"),
        default="all",
        help="which split of the manifest to train on",
    )
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("match", help="match two images with a trained checkpoint")
    _add_shared(m)
    m.add_argument("checkpoint")
    m.add_argument("image_a")
    m.add_argument("image_b")
    m.add_argument("out_prefix")
    m.add_argument(
        "--gt-identity",
        action="store_true",
        help="score matches assuming the images are registered",
    )
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("evaluate", help="report matching metrics over dataset pairs")
    _add_shared(e)
    e.add_argument("checkpoint")
    e.add_argument("--data", required=True, help="dataset directory from gen-data")
    e.add_argument(
        "--subset",
        choices=("all", "train", "val"),
        default="val",
        help="which pairs to evaluate",
    )
    e.add_argument("--out", default=None, help="also write the table to this path")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: "list[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
