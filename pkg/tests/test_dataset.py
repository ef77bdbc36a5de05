"""Synthetic pairs, triplet construction, manifests, splits."""

import numpy as np
import pytest

from litematch.dataset import (
    AlignedPair,
    DatasetManifest,
    build_triplets,
    enhanced_pair,
    identity_alignment,
    load_dataset,
    materialize_triplet,
    merge_manifests,
    split,
    synth_pair,
    write_dataset,
)
from litematch.detector import detect_keypoints
from litematch.errors import DatasetError
from litematch.image import clahe
from litematch.patch import required_margin


def make_keypoints(pair, max_points=80):
    return detect_keypoints(
        clahe(pair.visible), max_points=max_points, border_margin=required_margin()
    )


def test_synth_pair_deterministic():
    a = synth_pair(5, size=256)
    b = synth_pair(5, size=256)
    assert np.array_equal(a.visible.pixels, b.visible.pixels)
    assert np.array_equal(a.nir.pixels, b.nir.pixels)
    c = synth_pair(6, size=256)
    assert not np.array_equal(a.visible.pixels, c.visible.pixels)


def test_synth_pair_modality_gap_and_keypoint_overlap():
    # generator self-check: intensities differ clearly while detected
    # keypoints still mostly coincide across the modality gap
    pair = synth_pair(0, size=512)
    mad = np.abs(
        pair.visible.pixels.astype(np.float64) - pair.nir.pixels.astype(np.float64)
    ).mean()
    assert mad > 10.0
    kv = detect_keypoints(clahe(pair.visible), max_points=300)
    kn = detect_keypoints(clahe(pair.nir), max_points=300)
    assert len(kv) >= 30 and len(kn) >= 30
    cv = np.array([[k.x, k.y] for k in kv])
    cn = np.array([[k.x, k.y] for k in kn])
    dists = np.sqrt(((cv[:, None, :] - cn[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    assert (dists <= 3.0).mean() >= 0.6


def test_synth_pair_identity_alignment():
    assert identity_alignment(12.5, 40.25) == (12.5, 40.25)


def test_synth_pair_rejects_small_size():
    with pytest.raises(DatasetError):
        synth_pair(0, size=128)


def test_build_triplets_deterministic_and_counted():
    pair = synth_pair(1, size=384)
    kps = make_keypoints(pair)
    t1, m1 = build_triplets(pair, kps, count=24, seed=9)
    t2, m2 = build_triplets(pair, kps, count=24, seed=9)
    assert m1.to_json() == m2.to_json()
    assert len(t1) == 24 and m1.count == 24
    assert sum(m1.transform_counts().values()) == 24
    for a, b in zip(t1, t2):
        assert np.array_equal(a.anchor.data, b.anchor.data)
        assert np.array_equal(a.positive.data, b.positive.data)
        assert np.array_equal(a.negative.data, b.negative.data)
    _, m3 = build_triplets(pair, kps, count=24, seed=10)
    assert m3.to_json() != m1.to_json()


def test_triplet_negative_distance_constraint():
    pair = synth_pair(2, size=384)
    kps = make_keypoints(pair)
    triplets, manifest = build_triplets(pair, kps, count=40, seed=3)
    for rec in manifest.records:
        d = np.hypot(rec.anchor_x - rec.negative_x, rec.anchor_y - rec.negative_y)
        assert d > manifest.window


def test_triplet_patch_shapes_and_range():
    pair = synth_pair(3, size=384)
    kps = make_keypoints(pair)
    triplets, _ = build_triplets(pair, kps, count=8, seed=1)
    for t in triplets:
        for patch in (t.anchor, t.positive, t.negative):
            assert patch.shape == (1, 128, 128)
            assert 0.0 <= patch.data.min() and patch.data.max() <= 1.0


def test_identity_only_transforms_on_identical_modalities():
    pair = synth_pair(4, size=384)
    same = AlignedPair(name="same", visible=pair.visible, nir=pair.visible)
    kps = make_keypoints(same)
    triplets, _ = build_triplets(same, kps, count=6, seed=2, kinds=("identity",))
    for t in triplets:
        assert np.array_equal(t.anchor.data, t.positive.data)


def test_manifest_regenerates_bit_exact(tmp_path):
    pair = synth_pair(5, size=384)
    kps = make_keypoints(pair)
    vis_e, nir_e = clahe(pair.visible), clahe(pair.nir)
    triplets, manifest = build_triplets(
        pair, kps, count=12, seed=4, visible_enhanced=vis_e, nir_enhanced=nir_e
    )
    write_dataset(tmp_path, [pair], manifest)
    pairs2, manifest2 = load_dataset(tmp_path)
    assert manifest2.to_json() == manifest.to_json()
    vis2, nir2 = enhanced_pair(pairs2["pair0005"], manifest2)
    assert np.array_equal(vis2.pixels, vis_e.pixels)
    for t, rec in zip(triplets, manifest2.records):
        again = materialize_triplet(rec, vis2, nir2, manifest2.window, manifest2.out_size)
        assert np.array_equal(t.anchor.data, again.anchor.data)
        assert np.array_equal(t.positive.data, again.positive.data)
        assert np.array_equal(t.negative.data, again.negative.data)


def test_build_triplets_requires_keypoints():
    pair = synth_pair(6, size=384)
    with pytest.raises(DatasetError):
        build_triplets(pair, [], count=4, seed=0)
    kps = make_keypoints(pair)[:1]
    with pytest.raises(DatasetError):
        build_triplets(pair, kps, count=4, seed=0)


def test_split_by_pair_grouping():
    manifests = []
    pairs = []
    for seed in range(10):
        pair = synth_pair(seed, size=384)
        pairs.append(pair)
        kps = make_keypoints(pair, max_points=40)
        _, m = build_triplets(pair, kps, count=6, seed=seed)
        manifests.append(m)
    merged = merge_manifests(manifests, seed=123)
    train, val = split(merged, ratio=0.8)
    assert len(train.pairs) == 8 and len(val.pairs) == 2
    assert set(train.pairs).isdisjoint(val.pairs)
    assert sorted(train.pairs + val.pairs) == sorted(merged.pairs)
    assert train.count + val.count == merged.count
    assert all(r.pair in set(train.pairs) for r in train.records)
    # deterministic: same manifest seed gives the same split
    train2, val2 = split(merged, ratio=0.8)
    assert train2.pairs == train.pairs and val2.pairs == val.pairs


def test_split_rejects_degenerate():
    pair = synth_pair(0, size=384)
    kps = make_keypoints(pair, max_points=40)
    _, m = build_triplets(pair, kps, count=4, seed=0)
    with pytest.raises(DatasetError):
        split(m, ratio=0.5)  # one pair cannot be split
    with pytest.raises(DatasetError):
        split(m, ratio=1.5)
