"""Difference-of-Gaussians keypoint detection over a scale-space pyramid.

Extrema of adjacent-scale Gaussian differences are refined to sub-pixel
position by a quadratic fit, then filtered by contrast and edge response.
Descriptors are out of scope; this supplies locations, scales, and
responses only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter


@dataclass(frozen=True)
class Keypoint:
    """Sub-pixel image location with detection scale and response magnitude."""

    x: float
    y: float
    scale: float
    response: float


NUM_OCTAVES = 4
SCALES_PER_OCTAVE = 3
BASE_SIGMA = 1.6
CONTRAST_THRESHOLD = 0.03
EDGE_RATIO = 10.0
DEFAULT_BORDER_MARGIN = 33  # window 64 -> half window + 1 for sub-pixel sampling


def _gaussian_levels(base: np.ndarray, sigma0: float, k: float, count: int) -> list[np.ndarray]:
    levels = [gaussian_filter(base, sigma0)]
    for i in range(1, count):
        step = sigma0 * np.sqrt(k ** (2 * i) - k ** (2 * (i - 1)))
        levels.append(gaussian_filter(levels[-1], step))
    return levels


def _refine(dogs: np.ndarray, level: int, y: int, x: int) -> "tuple[float, float, float, float] | None":
    """Iterated 3-d quadratic fit; returns (x, y, level, value) or None."""
    n_levels, h, w = dogs.shape
    for _ in range(3):
        d = dogs
        grad = 0.5 * np.array(
            [
                d[level, y, x + 1] - d[level, y, x - 1],
                d[level, y + 1, x] - d[level, y - 1, x],
                d[level + 1, y, x] - d[level - 1, y, x],
            ]
        )
        center = d[level, y, x]
        dxx = d[level, y, x + 1] + d[level, y, x - 1] - 2 * center
        dyy = d[level, y + 1, x] + d[level, y - 1, x] - 2 * center
        dss = d[level + 1, y, x] + d[level - 1, y, x] - 2 * center
        dxy = 0.25 * (
            d[level, y + 1, x + 1] - d[level, y + 1, x - 1]
            - d[level, y - 1, x + 1] + d[level, y - 1, x - 1]
        )
        dxs = 0.25 * (
            d[level + 1, y, x + 1] - d[level + 1, y, x - 1]
            - d[level - 1, y, x + 1] + d[level - 1, y, x - 1]
        )
        dys = 0.25 * (
            d[level + 1, y + 1, x] - d[level + 1, y - 1, x]
            - d[level - 1, y + 1, x] + d[level - 1, y - 1, x]
        )
        hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) <= 0.5):
            value = center + 0.5 * float(grad @ offset)
            # edge rejection on the spatial Hessian
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            if det <= 0 or tr * tr * EDGE_RATIO >= (EDGE_RATIO + 1) ** 2 * det:
                return None
            return (x + float(offset[0]), y + float(offset[1]), level + float(offset[2]), value)
        x += int(np.round(offset[0]))
        y += int(np.round(offset[1]))
        level += int(np.round(offset[2]))
        if not (1 <= level <= n_levels - 2 and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    return None


def detect_keypoints(
    img,
    max_points: int,
    border_margin: int = DEFAULT_BORDER_MARGIN,
    contrast_threshold: float = CONTRAST_THRESHOLD,
) -> list[Keypoint]:
    """Scale-space extrema sorted by descending response.

    Keypoints closer than ``border_margin`` pixels to any image border are
    discarded so downstream patch extraction never fails. Deterministic:
    ties in response are broken by (y, x, scale).
    """
    base = img.pixels.astype(np.float32) / 255.0
    k = 2.0 ** (1.0 / SCALES_PER_OCTAVE)
    found: list[Keypoint] = []
    octave_base = base
    for octave in range(NUM_OCTAVES):
        if min(octave_base.shape) < 16:
            break
        levels = _gaussian_levels(octave_base, BASE_SIGMA, k, SCALES_PER_OCTAVE + 3)
        dogs = np.stack([levels[i + 1] - levels[i] for i in range(SCALES_PER_OCTAVE + 2)]).astype(
            np.float64
        )
        prelim = 0.8 * contrast_threshold
        is_max = (dogs >= maximum_filter(dogs, size=3)) & (dogs > prelim)
        is_min = (dogs <= minimum_filter(dogs, size=3)) & (dogs < -prelim)
        cand = is_max | is_min
        cand[0] = cand[-1] = False
        cand[:, :2, :] = cand[:, -2:, :] = False
        cand[:, :, :2] = cand[:, :, -2:] = False
        factor = float(2 ** octave)
        for level, y, x in np.argwhere(cand):
            refined = _refine(dogs, int(level), int(y), int(x))
            if refined is None:
                continue
            rx, ry, rlevel, value = refined
            if abs(value) < contrast_threshold:
                continue
            found.append(
                Keypoint(
                    x=float(rx * factor),
                    y=float(ry * factor),
                    scale=float(BASE_SIGMA * (k ** rlevel) * factor),
                    response=float(abs(value)),
                )
            )
        # next octave: the level at twice the base blur, halved
        octave_base = levels[SCALES_PER_OCTAVE][::2, ::2]
    height, width = img.pixels.shape
    inside = [
        kp
        for kp in found
        if border_margin <= round(kp.x) <= width - border_margin
        and border_margin <= round(kp.y) <= height - border_margin
    ]
    inside.sort(key=lambda kp: (-kp.response, kp.y, kp.x, kp.scale))
    # patches use a fixed window regardless of scale, so keypoints landing on
    # the same pixel (e.g. the same blob found in two octaves) are redundant;
    # keep the strongest within a 2 px radius
    kept: list[Keypoint] = []
    for kp in inside:
        if all((kp.x - q.x) ** 2 + (kp.y - q.y) ** 2 > 4.0 for q in kept):
            kept.append(kp)
            if len(kept) == max_points:
                break
    return kept
