"""Triplet construction from cluster pseudo-labels.

Positives come from the anchor's own video with probability ``p_alpha`` and
otherwise from another video of the same cluster; with probability
``1 - p_beta`` the positive is swapped to the secondary view.  Negatives are
mined inside the mini-batch: any different-cluster item no farther from the
anchor than ``d(anchor, positive) + m1`` qualifies (semi-hard).  Temporal
negatives for the temporal loss are other clips of the anchor's video or of
a same-cluster video.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import UsageError, cosine_distance, cosine_distances_to
from .data import ClipRef, augment


@dataclass
class SamplingConfig:
    p_alpha: float = 0.2
    p_beta: float = 0.75
    m1: float = 0.2
    m2: float = 0.04

    def validate(self, num_views=None):
        if not (0 <= self.p_alpha <= 1 and 0 <= self.p_beta <= 1):
            raise UsageError("p_alpha and p_beta must lie in [0, 1]")
        if not (self.m1 > 0 and self.m2 > 0):
            raise UsageError("margins must be positive")
        if not self.m2 < self.m1:
            raise UsageError("m2 must be smaller than m1")
        if num_views is not None and num_views < 2 and self.p_beta < 1:
            raise UsageError("p_beta < 1 needs a dataset with a secondary view")


class ClusterIndex:
    """Member lists per cluster for a partition over videos."""

    def __init__(self, partition):
        self.partition = partition
        self.labels = partition.assignment
        order = np.argsort(self.labels, kind="stable")
        counts = np.bincount(self.labels, minlength=partition.num_clusters)
        self._members = np.split(order, np.cumsum(counts)[:-1])

    def members_of(self, video):
        return self._members[self.labels[video]]

    def label(self, video):
        return int(self.labels[video])


def _index(labels):
    return labels if isinstance(labels, ClusterIndex) else ClusterIndex(labels)


@dataclass
class Positive:
    ref: ClipRef
    same_instance: bool
    flow_view: bool
    augment: bool = True


class NegativeChoice(NamedTuple):
    index: Optional[int]
    fallback: bool
    d_ap: float
    d_an: float


def _other_clip(clip, T, rng):
    c = int(rng.integers(T - 1))
    return c + 1 if c >= clip else c


def _other_member(members, video, rng):
    k = int(rng.integers(members.size - 1))
    pos = int(np.searchsorted(members, video))
    return int(members[k + 1 if k >= pos else k])


def sample_positive(anchor, ds, labels, cfg, rng):
    """Draw the positive for ``anchor`` (its ref and provenance flags).

    Both Bernoulli draws are always consumed so the random stream advances
    identically whatever the branch.
    """
    idx = _index(labels)
    members = idx.members_of(anchor.video)
    T = ds.clips_per_video
    same = bool(rng.random() < cfg.p_alpha) or members.size < 2
    if same:
        video, clip = anchor.video, _other_clip(anchor.clip, T, rng)
    else:
        video = _other_member(members, anchor.video, rng)
        clip = int(rng.integers(T))
    keep_primary = bool(rng.random() < cfg.p_beta)
    if not keep_primary and ds.num_views < 2:
        raise UsageError("secondary view requested but dataset has one view")
    view = 0 if keep_primary else 1
    return Positive(ClipRef(video, clip, view), same_instance=same, flow_view=not keep_primary)


def sample_temporal_negative(anchor, ds, labels, rng):
    idx = _index(labels)
    members = idx.members_of(anchor.video)
    own_video = bool(rng.random() < 0.5) or members.size < 2
    if own_video:
        return ClipRef(anchor.video, _other_clip(anchor.clip, ds.clips_per_video, rng), 0)
    video = _other_member(members, anchor.video, rng)
    return ClipRef(video, int(rng.integers(ds.clips_per_video)), 0)


def mine_semi_hard_negative(anchor_emb, pos_emb, batch_embs, batch_labels, anchor_label, m1, rng):
    """Pick a semi-hard negative among different-label batch items.

    Eligible: label differs and ``d(a, n) <= d(a, p) + m1``; one is drawn
    uniformly.  With none eligible the closest different-label item is
    returned with ``fallback=True``; with no different-label item at all the
    index is ``None``.
    """
    batch_labels = np.asarray(batch_labels)
    d_ap = cosine_distance(anchor_emb, pos_emb)
    other = np.flatnonzero(batch_labels != anchor_label)
    if other.size == 0:
        return NegativeChoice(None, False, d_ap, float("nan"))
    d_an = cosine_distances_to(anchor_emb, np.asarray(batch_embs)[other])
    eligible = np.flatnonzero(d_an <= d_ap + m1)
    if eligible.size:
        k = int(eligible[rng.integers(eligible.size)])
        return NegativeChoice(int(other[k]), False, d_ap, float(d_an[k]))
    k = int(np.argmin(d_an))
    return NegativeChoice(int(other[k]), True, d_ap, float(d_an[k]))


def sample_random_negative(anchor_pos, batch_videos, rng):
    """Any batch item from a different video (pure instance discrimination)."""
    other = np.flatnonzero(np.asarray(batch_videos) != batch_videos[anchor_pos])
    if other.size == 0:
        return None
    return int(other[rng.integers(other.size)])


@dataclass
class TripletBatch:
    """One mini-batch of anchors with their sampled partners.

    The ``x_*`` arrays hold the raw (already augmented where applicable)
    input vectors, one row per anchor.  ``negatives`` is filled in after
    mining against live embeddings.
    """

    anchors: list
    positives: list
    temporal_negatives: list
    anchor_labels: np.ndarray
    x_anchor: np.ndarray
    x_positive: np.ndarray
    x_aug_anchor: np.ndarray
    x_temporal_negative: np.ndarray
    negatives: list = field(default_factory=list)
    negative_fallback: list = field(default_factory=list)

    def __len__(self):
        return len(self.anchors)


def epoch_batches(num_videos, batch_size, rng):
    """Shuffle all videos and cut into batches; a trailing batch of one is dropped."""
    if not 1 <= batch_size <= num_videos:
        raise UsageError(f"batch_size must be in [1, {num_videos}], got {batch_size}")
    perm = rng.permutation(num_videos)
    batches = [perm[i : i + batch_size] for i in range(0, num_videos, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        batches.pop()
    return batches


def build_batch(ds, labels, cfg, rng, aug_cfg, aug_rng, videos=None, batch_size=None):
    """Sample anchors, positives and temporal negatives for one step.

    ``videos`` fixes the anchor videos (the trainer passes one slice of an
    epoch shuffle); otherwise ``batch_size`` videos are drawn without
    replacement.
    """
    idx = _index(labels)
    if videos is None:
        if batch_size is None or not 1 <= batch_size <= ds.num_videos:
            raise UsageError(f"batch_size must be in [1, {ds.num_videos}]")
        videos = rng.choice(ds.num_videos, size=batch_size, replace=False)
    anchors, positives, tnegs = [], [], []
    for v in videos:
        a = ClipRef(int(v), int(rng.integers(ds.clips_per_video)), 0)
        anchors.append(a)
        positives.append(sample_positive(a, ds, idx, cfg, rng))
        tnegs.append(sample_temporal_negative(a, ds, idx, rng))
    x_anchor = np.stack([ds.clip(a) for a in anchors])
    x_pos = np.empty_like(x_anchor)
    x_aug = np.empty_like(x_anchor)
    for i, (a, p) in enumerate(zip(anchors, positives)):
        x_pos[i] = augment(ds.clip(p.ref), aug_cfg, aug_rng)
        x_aug[i] = augment(ds.clip(a), aug_cfg, aug_rng)
    x_tneg = np.stack([ds.clip(t) for t in tnegs])
    labels_arr = np.array([idx.label(a.video) for a in anchors], dtype=np.int64)
    return TripletBatch(anchors, positives, tnegs, labels_arr, x_anchor, x_pos, x_aug, x_tneg)
