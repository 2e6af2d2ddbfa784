"""Video-feature datasets: model, synthetic generator, augmentation and I/O.

A dataset holds ``V`` videos, each with ``T`` clips, each clip seen through
one or two views (``"primary"`` and optionally ``"secondary"``).  Features are
stored as a float64 array of shape ``(V, T, n_views, D)``.

On disk a dataset is a ``manifest.json`` plus a binary feature file::

    bytes 0..7   b"SLICFEAT"
    bytes 8..11  u32 version (1)
    bytes 12..15 u32 reserved (0)
    then V*T*n_views*D little-endian float32 in [video][clip][view][dim] order
"""

import json
import os
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .core import DataError, DomainError, UsageError, rng_stream

MIN_NORM = 1e-9
FEAT_MAGIC = b"SLICFEAT"
FEAT_VERSION = 1
HEADER_SIZE = 16
VIEW_NAMES = ("primary", "secondary")


class ClipRef(NamedTuple):
    video: int
    clip: int
    view: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    views: tuple = ("primary",)
    labels: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 4:
            raise UsageError(f"features must have shape (V, T, views, D), got {f.shape}")
        if f.shape[2] != len(self.views):
            raise UsageError(f"{f.shape[2]} feature views but {len(self.views)} view names")
        if f.shape[1] < 2:
            raise UsageError("need at least 2 clips per video")
        if not np.all(np.isfinite(f)):
            raise DomainError("features contain non-finite values")
        norms = np.linalg.norm(f, axis=-1)
        if np.any(norms <= MIN_NORM):
            v, t, w = np.argwhere(norms <= MIN_NORM)[0]
            raise DomainError(f"zero-norm feature at video {v}, clip {t}, view {w}")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "views", tuple(self.views))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (f.shape[0],):
                raise UsageError(f"expected {f.shape[0]} labels, got shape {lab.shape}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def num_videos(self):
        return self.features.shape[0]

    @property
    def clips_per_video(self):
        return self.features.shape[1]

    @property
    def num_views(self):
        return self.features.shape[2]

    @property
    def raw_dim(self):
        return self.features.shape[3]

    def clip(self, ref):
        return self.features[ref.video, ref.clip, ref.view]

    def without_labels(self):
        return replace(self, labels=None)

    def subset(self, videos):
        videos = np.asarray(videos, dtype=np.int64)
        labels = None if self.labels is None else self.labels[videos]
        return Dataset(self.features[videos], self.views, labels, self.seed)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.views == other.views
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and same_labels
        )


@dataclass
class SynthConfig:
    num_classes: int = 10
    videos_per_class: int = 20
    clips_per_video: int = 4
    raw_dim: int = 64
    class_separation: float = 3.0
    video_spread: float = 1.0
    clip_drift: float = 0.3
    view_noise: float = 0.3
    num_views: int = 2
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise UsageError("num_classes must be >= 2")
        if self.videos_per_class < 1 or self.raw_dim < 1:
            raise UsageError("videos_per_class and raw_dim must be >= 1")
        if self.clips_per_video < 2:
            raise UsageError("clips_per_video must be >= 2")
        if self.num_views not in (1, 2):
            raise UsageError("num_views must be 1 or 2")
        for name in ("class_separation", "video_spread", "clip_drift", "view_noise"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")


@dataclass
class AugConfig:
    noise_sigma: float = 0.1
    scale_jitter: float = 0.1

    def validate(self):
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be >= 0")
        if not 0 <= self.scale_jitter < 1:
            raise UsageError("scale_jitter must lie in [0, 1)")


def random_orthogonal(dim, rng):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    # sign fix makes the draw Haar-distributed and deterministic
    return q * np.sign(np.diag(r))


def generate_synthetic(cfg):
    """Sample a labelled dataset from a class/video/clip Gaussian hierarchy.

    Class prototypes are N(0, class_separation^2 I); each video centre adds
    N(0, video_spread^2 I); each clip adds N(0, clip_drift^2 I).  The
    secondary view is a fixed random rotation of the primary clip plus
    N(0, view_noise^2 I), so both views share the class geometry.
    Videos are ordered class by class.
    """
    cfg.validate()
    rng = rng_stream(cfg.seed, "data-gen")
    C, n, T, D = cfg.num_classes, cfg.videos_per_class, cfg.clips_per_video, cfg.raw_dim
    protos = cfg.class_separation * rng.standard_normal((C, D))
    labels = np.repeat(np.arange(C), n)
    centers = protos[labels] + cfg.video_spread * rng.standard_normal((C * n, D))
    primary = centers[:, None, :] + cfg.clip_drift * rng.standard_normal((C * n, T, D))
    views = [primary]
    if cfg.num_views == 2:
        rot = random_orthogonal(D, rng)
        views.append(primary @ rot.T + cfg.view_noise * rng.standard_normal((C * n, T, D)))
    feats = np.stack(views, axis=2)
    return Dataset(feats, VIEW_NAMES[: cfg.num_views], labels, cfg.seed)


def augment(clip, cfg, rng):
    """Feature-space augmentation: per-dim scale jitter, then additive noise."""
    clip = np.asarray(clip, dtype=np.float64)
    scale = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter, clip.shape)
    scaled = clip * scale
    for _ in range(2):
        out = scaled + cfg.noise_sigma * rng.standard_normal(clip.shape)
        if np.linalg.norm(out) > MIN_NORM:
            return out
    raise DomainError("augmented clip has zero norm after resampling noise")


def split_train_test(ds, test_fraction=0.2, seed=0):
    """Stratified split by label; needs a labelled dataset."""
    if ds.labels is None:
        raise UsageError("stratified split needs labels")
    rng = rng_stream(seed, "eval")
    train, test = [], []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))


def write_features(path, array):
    """Write any float array as a SLICFEAT file (header + f32le payload)."""
    payload = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", FEAT_VERSION, 0))
        fh.write(payload.tobytes())


def read_features(path, shape):
    """Read a SLICFEAT file and check it holds exactly ``prod(shape)`` floats."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise DataError(f"{path}: truncated header at byte offset {len(raw)}")
    if raw[:8] != FEAT_MAGIC:
        raise DataError(f"{path}: bad magic at byte offset 0")
    version, _reserved = struct.unpack("<II", raw[8:16])
    if version != FEAT_VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte offset 8")
    expected = HEADER_SIZE + 4 * int(np.prod(shape))
    if len(raw) != expected:
        where = min(len(raw), expected)
        raise DataError(
            f"{path}: size mismatch at byte offset {where}: "
            f"expected {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    return data.reshape(shape)


def save_dataset(ds, directory, features_file="features.bin"):
    """Write ``manifest.json`` and the feature file into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_features(os.path.join(directory, features_file), ds.features)
    manifest = {
        "format_version": 1,
        "num_videos": ds.num_videos,
        "clips_per_video": ds.clips_per_video,
        "views": list(ds.views),
        "raw_dim": ds.raw_dim,
        "dtype": "f32le",
        "features_file": features_file,
    }
    if ds.labels is not None:
        manifest["labels"] = [int(x) for x in ds.labels]
    if ds.seed is not None:
        manifest["seed"] = int(ds.seed)
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(manifest_path):
    try:
        with open(manifest_path) as fh:
            m = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{manifest_path}: cannot read manifest: {exc}") from exc
    if m.get("format_version") != 1:
        raise DataError(f"{manifest_path}: unsupported format_version {m.get('format_version')}")
    if m.get("dtype") != "f32le":
        raise DataError(f"{manifest_path}: unsupported dtype {m.get('dtype')}")
    try:
        V, T, D = int(m["num_videos"]), int(m["clips_per_video"]), int(m["raw_dim"])
        views = tuple(m["views"])
        feat_name = m["features_file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{manifest_path}: missing or bad field {exc}") from exc
    feat_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), feat_name)
    shape = (V, T, len(views), D)
    feats = read_features(feat_path, shape)
    bad_finite = ~np.isfinite(feats)
    norms = np.linalg.norm(np.where(bad_finite, 0.0, feats), axis=-1)
    bad_rows = bad_finite.any(axis=-1) | (norms <= MIN_NORM)
    if bad_rows.any():
        row = int(np.flatnonzero(bad_rows.ravel())[0])
        offset = HEADER_SIZE + 4 * D * row
        raise DataError(f"{feat_path}: NaN or zero-norm row {row} at byte offset {offset}")
    labels = m.get("labels")
    return Dataset(feats, views, None if labels is None else np.asarray(labels), m.get("seed"))
