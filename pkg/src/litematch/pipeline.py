"""End-to-end glue: images -> keypoints -> descriptors -> matches -> metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .dataset import AlignedPair, identity_alignment
from .detector import Keypoint, detect_keypoints
from .image import GrayImage, clahe
from .matching import DescriptorSet, MatchResult, match_nn, score
from .model import Model, forward
from .patch import extract_patch
from .tensor import Tensor


def enhance(img: GrayImage, cfg: RunConfig) -> GrayImage:
    return clahe(img, cfg.clahe_clip, cfg.clahe_grid)


def detect_for_matching(img: GrayImage, cfg: RunConfig) -> list[Keypoint]:
    # margin covers the plain extraction window plus sub-pixel overhang
    return detect_keypoints(img, cfg.max_keypoints, border_margin=cfg.window // 2 + 1)


def compute_descriptors(
    model: Model,
    img: GrayImage,
    keypoints: list[Keypoint],
    cfg: RunConfig,
    batch_size: int = 64,
) -> DescriptorSet:
    """Batched descriptor inference for a list of keypoints."""
    rows = []
    for lo in range(0, len(keypoints), batch_size):
        chunk = keypoints[lo : lo + batch_size]
        patches = np.stack(
            [extract_patch(img, kp, cfg.window, cfg.input_size).data for kp in chunk]
        )
        rows.append(forward(model, Tensor(patches)).data)
    descriptors = (
        np.concatenate(rows)
        if rows
        else np.zeros((0, model.config.descriptor_dim), dtype=np.float32)
    )
    return DescriptorSet(keypoints=list(keypoints), descriptors=descriptors)


@dataclass
class PairEvaluation:
    name: str
    n_keypoints_a: int
    n_keypoints_b: int
    n_matched: int
    n_correct: int
    precision: float
    matching_score: float


def evaluate_pair(model: Model, pair: AlignedPair, cfg: RunConfig) -> tuple[PairEvaluation, MatchResult, DescriptorSet, DescriptorSet]:
    """Match a registered pair against itself and score with identity truth."""
    vis = enhance(pair.visible, cfg)
    nir = enhance(pair.nir, cfg)
    kps_a = detect_for_matching(vis, cfg)
    kps_b = detect_for_matching(nir, cfg)
    set_a = compute_descriptors(model, vis, kps_a, cfg)
    set_b = compute_descriptors(model, nir, kps_b, cfg)
    result = match_nn(set_a, set_b, threshold=cfg.threshold, mutual=cfg.mutual)
    precision, matching_score = score(result, set_a, set_b, identity_alignment, eps=cfg.eps)
    summary = PairEvaluation(
        name=pair.name,
        n_keypoints_a=len(kps_a),
        n_keypoints_b=len(kps_b),
        n_matched=result.n_success,
        n_correct=result.n_correct or 0,
        precision=precision,
        matching_score=matching_score,
    )
    return summary, result, set_a, set_b


def evaluation_table(rows: list[PairEvaluation]) -> str:
    """Fixed-width text table with per-pair metrics and aggregate means."""
    header = f"{'pair':<16}{'kpsA':>6}{'kpsB':>6}{'match':>7}{'corr':>6}{'precision':>11}{'score':>9}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.name:<16}{r.n_keypoints_a:>6}{r.n_keypoints_b:>6}{r.n_matched:>7}"
            f"{r.n_correct:>6}{r.precision:>11.4f}{r.matching_score:>9.4f}"
        )
    if rows:
        mp = float(np.mean([r.precision for r in rows]))
        ms = float(np.mean([r.matching_score for r in rows]))
        lines.append(f"{'mean':<16}{'':>6}{'':>6}{'':>7}{'':>6}{mp:>11.4f}{ms:>9.4f}")
    return "\n".join(lines) + "\n"
