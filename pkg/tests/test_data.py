import json

import numpy as np
import pytest

from slic.clustering import finch
from slic.core import DataError, DomainError, UsageError, cosine_distance, rng_stream
from slic.data import (
    AugConfig,
    ClipRef,
    Dataset,
    SynthConfig,
    augment,
    generate_synthetic,
    load_dataset,
    read_features,
    save_dataset,
    split_train_test,
    write_features,
)
from slic.metrics import nmi


def test_degenerate_spreads_collapse_to_prototype():
    ds = generate_synthetic(SynthConfig(num_classes=3, videos_per_class=4, video_spread=0,
                                        clip_drift=0, view_noise=0, num_views=1))
    for c in range(3):
        block = ds.features[ds.labels == c]
        assert np.all(block == block[0, 0, 0])


def test_generator_deterministic():
    cfg = SynthConfig(num_classes=3, videos_per_class=5, seed=11)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a == b
    assert a.features.tobytes() == b.features.tobytes()
    assert generate_synthetic(SynthConfig(num_classes=3, videos_per_class=5, seed=12)) != a


def test_generated_structure():
    ds = generate_synthetic(SynthConfig(num_classes=4, videos_per_class=6, seed=3))
    assert ds.features.shape == (24, 4, 2, 64)
    assert ds.views == ("primary", "secondary")
    np.testing.assert_array_equal(ds.labels, np.repeat(np.arange(4), 6))


@pytest.mark.parametrize("seed", range(5))
def test_two_separated_classes_give_pure_finch(seed):
    small = generate_synthetic(SynthConfig(num_classes=2, videos_per_class=3, class_separation=10,
                                           video_spread=0.5, num_views=1, seed=seed))
    assert nmi(finch(small.features[:, 2, 0]).partitions[0], small.labels) == 1.0
    # larger blobs may split into several first-level clusters, but none mixes classes
    big = generate_synthetic(SynthConfig(num_classes=2, videos_per_class=15, class_separation=10,
                                         video_spread=0.5, num_views=1, seed=seed))
    p1 = finch(big.features[:, 2, 0]).partitions[0]
    for c in range(p1.num_clusters):
        assert np.unique(big.labels[p1.members(c)]).size == 1


def test_distance_ordering_invariant():
    ds = generate_synthetic(SynthConfig(num_classes=5, videos_per_class=10, class_separation=3,
                                        video_spread=1, clip_drift=0.3, seed=4))
    rng = np.random.default_rng(0)
    prim = ds.features[:, :, 0]
    within_video, within_class, cross_class = [], [], []
    for _ in range(300):
        v = rng.integers(ds.num_videos)
        t1, t2 = rng.choice(4, 2, replace=False)
        within_video.append(cosine_distance(prim[v, t1], prim[v, t2]))
        same = np.flatnonzero(ds.labels == ds.labels[v])
        w = rng.choice(same[same != v])
        within_class.append(cosine_distance(prim[v, t1], prim[w, t2]))
        x = rng.choice(np.flatnonzero(ds.labels != ds.labels[v]))
        cross_class.append(cosine_distance(prim[v, t1], prim[x, t2]))
    assert np.mean(within_video) < np.mean(within_class) < np.mean(cross_class)


def test_synth_config_validation():
    with pytest.raises(UsageError):
        generate_synthetic(SynthConfig(num_classes=1))
    with pytest.raises(UsageError):
        generate_synthetic(SynthConfig(clips_per_video=1))
    with pytest.raises(UsageError):
        generate_synthetic(SynthConfig(video_spread=-1))


def test_dataset_invariants():
    with pytest.raises(DomainError, match="video 1, clip 0"):
        f = np.ones((2, 2, 1, 3))
        f[1, 0, 0] = 0
        Dataset(f)
    with pytest.raises(UsageError):
        Dataset(np.ones((2, 1, 1, 3)))
    ds = Dataset(np.ones((2, 2, 1, 3)), labels=[0, 1])
    assert ds.without_labels().labels is None
    assert ds.clip(ClipRef(1, 1)).shape == (3,)


def test_augment_identity_and_reproducible():
    x = np.arange(1.0, 6.0)
    np.testing.assert_array_equal(augment(x, AugConfig(0, 0), rng_stream(0, "augment")), x)
    cfg = AugConfig(0.2, 0.1)
    np.testing.assert_array_equal(augment(x, cfg, rng_stream(3, "augment")),
                                  augment(x, cfg, rng_stream(3, "augment")))


def test_augment_unbiased_monte_carlo():
    x = np.array([1.0, -2.0, 0.5, 3.0])
    cfg = AugConfig(noise_sigma=0.05, scale_jitter=0.1)
    rng = rng_stream(5, "augment")
    draws = np.stack([augment(x, cfg, rng) for _ in range(10**4)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - x) <= 3 * se)


def test_augment_zero_norm_raises():
    with pytest.raises(DomainError):
        augment(np.zeros(3), AugConfig(0, 0), rng_stream(0))


def test_round_trip(tmp_path):
    ds = generate_synthetic(SynthConfig(num_classes=3, videos_per_class=4, seed=9))
    path = save_dataset(ds, tmp_path / "d")
    back = load_dataset(path)
    np.testing.assert_array_equal(back.features, ds.features.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.views == ds.views and back.seed == 9
    m = json.loads(open(path).read())
    assert m["dtype"] == "f32le" and m["format_version"] == 1
    raw = open(tmp_path / "d" / "features.bin", "rb").read()
    assert raw[:8] == b"SLICFEAT" and raw[8:16] == b"\x01\0\0\0\0\0\0\0"
    assert len(raw) == 16 + 4 * ds.features.size
    first = np.frombuffer(raw[16:20], "<f4")[0]
    assert first == np.float32(ds.features[0, 0, 0, 0])


def test_truncated_file_reports_offset(tmp_path):
    ds = generate_synthetic(SynthConfig(num_classes=2, videos_per_class=2, seed=0))
    path = save_dataset(ds, tmp_path)
    feat = tmp_path / "features.bin"
    raw = feat.read_bytes()
    feat.write_bytes(raw[:-10])
    with pytest.raises(DataError, match=f"byte offset {len(raw) - 10}"):
        load_dataset(path)


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "f.bin"
    write_features(p, np.ones((2, 2)))
    raw = bytearray(p.read_bytes())
    raw[0:1] = b"X"
    p.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        read_features(p, (2, 2))
    write_features(p, np.ones((2, 2)))
    raw = bytearray(p.read_bytes())
    raw[8] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        read_features(p, (2, 2))


def test_zero_row_on_disk_reports_offset(tmp_path):
    ds = Dataset(np.ones((2, 2, 1, 3)))
    path = save_dataset(ds, tmp_path)
    raw = bytearray((tmp_path / "features.bin").read_bytes())
    raw[16 + 12 * 2 : 16 + 12 * 3] = bytes(12)  # row 2 = video 1, clip 0
    (tmp_path / "features.bin").write_bytes(bytes(raw))
    with pytest.raises(DataError, match="row 2 at byte offset 40"):
        load_dataset(path)


def test_manifest_without_labels(tmp_path):
    ds = generate_synthetic(SynthConfig(num_classes=2, videos_per_class=3)).without_labels()
    path = save_dataset(ds, tmp_path)
    assert "labels" not in json.loads(open(path).read())
    back = load_dataset(path)
    assert back.labels is None
    with pytest.raises(UsageError):
        split_train_test(back)


def test_split_is_stratified_and_disjoint():
    ds = generate_synthetic(SynthConfig(num_classes=10, videos_per_class=20, num_views=1))
    tr, te = split_train_test(ds, 0.2, seed=0)
    assert tr.num_videos == 160 and te.num_videos == 40
    assert np.all(np.bincount(te.labels) == 4)
    rows = {r.tobytes() for r in tr.features[:, 0, 0]}
    assert not any(r.tobytes() in rows for r in te.features[:, 0, 0])
