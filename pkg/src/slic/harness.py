"""Training loop, retrieval evaluation and ablation presets.

``train`` alternates between clustering the current embeddings (every
``cluster_interval`` epochs, starting at epoch 0) and triplet updates that
use the resulting pseudo-labels.  Ground-truth labels, when a dataset
carries them, are split off before training and only ever reach the
metrics functions.
"""

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import clustering
from .clustering import Partition
from .core import NumericalError, UsageError, rng_stream
from .data import AugConfig
from .metrics import (
    EpochDiagnostics,
    RetrievalReport,
    TripletRecord,
    false_sampling_rates,
    nmi,
    recall_at_k,
)
from .model import (
    EncoderArch,
    LossConfig,
    LossLayout,
    OptState,
    backward,
    forward,
    init_encoder,
    objective,
    sgd_step,
)
from .sampling import (
    ClusterIndex,
    SamplingConfig,
    build_batch,
    epoch_batches,
    mine_semi_hard_negative,
    sample_random_negative,
)

CSV_HEADER = ["epoch", "mean_loss", "nmi", "num_clusters", "fp_rate", "fn_rate", "recall1", "recall5"]
CLUSTER_METHODS = ("finch_p1", "finch_p2", "kmeans", "spherical_kmeans")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    cluster_interval: int = 5
    clustering: str = "finch_p1"
    n_clusters: int = None
    p_alpha: float = 0.2
    p_beta: float = 0.75
    m1: float = 0.2
    m2: float = 0.04
    lam: float = 1.0
    loss_kind: str = "triplet"
    infonce_temperature: float = 0.1
    lr: float = 0.1
    momentum: float = 0.5
    label_mode: str = "pseudo"
    embedding_tap: str = "head"
    iterative_clustering: bool = True
    aug_noise: float = 0.1
    aug_jitter: float = 0.1
    backbone_dims: tuple = (256, 128)
    head_hidden: int = 64
    embed_dim: int = 32
    eval_every: int = None
    eval_clips: int = 10
    eval_seed: int = 0
    seed: int = 0

    @property
    def sampling(self):
        return SamplingConfig(self.p_alpha, self.p_beta, self.m1, self.m2)

    @property
    def loss(self):
        return LossConfig(self.m1, self.m2, self.lam, self.loss_kind, self.infonce_temperature)

    @property
    def aug(self):
        return AugConfig(self.aug_noise, self.aug_jitter)

    def arch(self, input_dim):
        return EncoderArch(input_dim, self.backbone_dims, self.head_hidden, self.embed_dim)

    def validate(self, ds=None):
        if self.epochs < 1 or self.cluster_interval < 1 or self.batch_size < 2:
            raise UsageError("epochs >= 1, cluster_interval >= 1 and batch_size >= 2 required")
        if self.clustering not in CLUSTER_METHODS:
            raise UsageError(f"unknown clustering method {self.clustering!r}")
        if self.clustering in ("kmeans", "spherical_kmeans") and not self.n_clusters:
            raise UsageError(f"{self.clustering} needs n_clusters")
        if self.label_mode not in ("pseudo", "oracle"):
            raise UsageError(f"unknown label_mode {self.label_mode!r}")
        if self.embedding_tap not in ("head", "backbone"):
            raise UsageError(f"unknown embedding_tap {self.embedding_tap!r}")
        self.sampling.validate(None if ds is None else ds.num_views)
        self.loss.validate()
        self.aug.validate()
        if ds is not None:
            if self.batch_size > ds.num_videos:
                raise UsageError(f"batch_size {self.batch_size} exceeds {ds.num_videos} videos")
            if self.label_mode == "oracle" and ds.labels is None:
                raise UsageError("oracle label mode needs a labelled dataset")
            if self.n_clusters and not 2 <= self.n_clusters <= ds.num_videos:
                raise UsageError(f"n_clusters must lie in [2, {ds.num_videos}]")

    def to_dict(self):
        d = asdict(self)
        d["backbone_dims"] = list(self.backbone_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "backbone_dims" in d:
            d["backbone_dims"] = tuple(d["backbone_dims"])
        return cls(**d)


@dataclass
class MetricsLog:
    epochs: list = field(default_factory=list)
    clustering_epochs: list = field(default_factory=list)
    triplets: dict = field(default_factory=dict)  # epoch -> [TripletRecord]
    final: RetrievalReport = None

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e in self.epochs:
            w.writerow([_fmt(getattr(e, name)) for name in CSV_HEADER])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def embed(enc, x, tap="head"):
    z, tape = forward(enc, x)
    return z if tap == "head" else tape.backbone


def compute_all_embeddings(enc, ds, policy="center", tap="head", clips=None, rng=None):
    """One embedding per video.

    ``center``: clip ``T // 2``.  ``uniform_avg``: mean embedding over
    ``clips`` evenly spaced clips (clamped to ``T`` with a warning).
    ``random``: one clip per video drawn from ``rng``.  Primary view only,
    never augmented.
    """
    T = ds.clips_per_video
    prim = ds.features[:, :, 0, :]
    if policy == "center":
        return embed(enc, prim[:, T // 2], tap)
    if policy == "uniform_avg":
        m = T if clips is None else int(clips)
        if m > T:
            warnings.warn(f"uniform_avg asked for {m} clips but videos have {T}; using {T}")
            m = T
        if m < 1:
            raise UsageError("uniform_avg needs at least one clip")
        idx = np.round(np.linspace(0, T - 1, m)).astype(int)
        per_clip = embed(enc, prim[:, idx].reshape(-1, ds.raw_dim), tap)
        return per_clip.reshape(ds.num_videos, m, -1).mean(axis=1)
    if policy == "random":
        if rng is None:
            raise UsageError("random clip policy needs an rng")
        pick = rng.integers(T, size=ds.num_videos)
        return embed(enc, prim[np.arange(ds.num_videos), pick], tap)
    raise UsageError(f"unknown clip policy {policy!r}")


def evaluate_retrieval(enc, train_ds, test_ds, tap="head", clips=10, seed=0, ks=(1, 5, 10, 20)):
    """Test videos query the training set.

    Queries average ``clips`` evenly spaced clips; each gallery video is
    represented by one random clip drawn from a fixed evaluation stream.
    """
    if train_ds.labels is None or test_ds.labels is None:
        raise UsageError("retrieval evaluation needs labelled train and test sets")
    if train_ds.raw_dim != test_ds.raw_dim:
        raise UsageError("train and test raw_dim differ")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = compute_all_embeddings(enc, test_ds, "uniform_avg", tap, min(clips, test_ds.clips_per_video))
    g = compute_all_embeddings(enc, train_ds, "random", tap, rng=rng_stream(seed, "eval"))
    return recall_at_k(q, test_ds.labels, g, train_ds.labels, ks)


def run_clustering(emb, cfg, rng):
    """Returns ``(partition, hierarchy_or_None)`` for the configured method."""
    if cfg.clustering in ("finch_p1", "finch_p2"):
        h = clustering.finch(emb)
        want = 0 if cfg.clustering == "finch_p1" else 1
        if want >= len(h):
            warnings.warn("FINCH produced a single partition; using it for finch_p2")
            want = len(h) - 1
        return clustering.pseudo_labels(h, want), h
    if cfg.clustering == "kmeans":
        return clustering.kmeans(emb, cfg.n_clusters, rng), None
    return clustering.spherical_kmeans(emb, cfg.n_clusters, rng), None


def _layout(B, negatives, infonce_negs):
    rows = np.arange(B)
    return LossLayout(
        anchor=rows,
        positive=rows + B,
        aug=rows + 2 * B,
        temporal_neg=rows + 3 * B,
        negative=np.array([-1 if n is None else n for n in negatives], dtype=np.int64),
        infonce_negs=infonce_negs,
    )


def train(ds, cfg, eval_ds=None):
    """Run the full schedule; returns ``(encoder, MetricsLog)``.

    ``eval_ds`` (labelled) enables recall@k in the per-epoch diagnostics and
    the final retrieval report.
    """
    cfg.validate(ds)
    gt = ds.labels
    data = ds.without_labels()
    V = data.num_videos

    enc = init_encoder(cfg.arch(data.raw_dim), rng_stream(cfg.seed, "init"))
    opt = OptState(cfg.lr, cfg.momentum)
    samp_rng = rng_stream(cfg.seed, "sampling")
    aug_rng = rng_stream(cfg.seed, "augment")
    clus_rng = rng_stream(cfg.seed, "cluster")
    samp_cfg, loss_cfg, aug_cfg = cfg.sampling, cfg.loss, cfg.aug
    can_eval = eval_ds is not None and gt is not None and eval_ds.labels is not None
    eval_every = cfg.eval_every or cfg.cluster_interval

    log = MetricsLog()
    index = None
    state = {"nmi": math.nan, "num_clusters": 0, "recall1": math.nan, "recall5": math.nan}
    step = 0
    for epoch in range(cfg.epochs):
        if epoch % cfg.cluster_interval == 0:
            z = compute_all_embeddings(enc, data, "center", "head")
            part, _ = run_clustering(z, cfg, clus_rng)
            log.clustering_epochs.append(epoch)
            state["num_clusters"] = part.num_clusters
            if gt is not None:
                state["nmi"] = nmi(part, gt)
            if cfg.label_mode == "oracle":
                part = Partition.from_labels(gt)
            elif not cfg.iterative_clustering:
                part = Partition.from_labels(np.arange(V))
            index = ClusterIndex(part)
        if can_eval and epoch % eval_every == 0:
            rep = evaluate_retrieval(enc, ds, eval_ds, cfg.embedding_tap, cfg.eval_clips, cfg.eval_seed, (1, 5))
            state["recall1"], state["recall5"] = rep[1], rep[5]

        records, losses = [], []
        for videos in epoch_batches(V, cfg.batch_size, samp_rng):
            batch = build_batch(data, index, samp_cfg, samp_rng, aug_cfg, aug_rng, videos=videos)
            B = len(batch)
            x = np.vstack([batch.x_anchor, batch.x_positive, batch.x_aug_anchor, batch.x_temporal_negative])
            z, tape = forward(enc, x)
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"non-finite embedding at step {step}")
            anchor_videos = np.array([a.video for a in batch.anchors])
            negatives, infonce_negs = [], []
            for i in range(B):
                if not cfg.iterative_clustering:
                    j = sample_random_negative(i, anchor_videos, samp_rng)
                    choice = None
                else:
                    choice = mine_semi_hard_negative(
                        z[i], z[B + i], z[:B], batch.anchor_labels, batch.anchor_labels[i],
                        samp_cfg.m1, samp_rng,
                    )
                    j = choice.index
                negatives.append(j)
                if cfg.iterative_clustering:
                    infonce_negs.append(np.flatnonzero(batch.anchor_labels != batch.anchor_labels[i]))
                else:
                    infonce_negs.append(np.flatnonzero(anchor_videos != anchor_videos[i]))
                pos = batch.positives[i]
                records.append(
                    TripletRecord(
                        anchor=batch.anchors[i].video,
                        positive=pos.ref.video,
                        same_instance=pos.same_instance,
                        negative=-1 if j is None else int(anchor_videos[j]),
                        temporal_negative=batch.temporal_negatives[i].video,
                        fallback=bool(choice and choice.fallback),
                        d_ap=math.nan if choice is None else choice.d_ap,
                        d_an=math.nan if choice is None else choice.d_an,
                    )
                )
            batch.negatives = negatives
            batch.negative_fallback = [r.fallback for r in records[-B:]]
            res = objective(z, _layout(B, negatives, infonce_negs), loss_cfg)
            if not math.isfinite(res.loss):
                raise NumericalError(f"NaN loss at step {step}")
            sgd_step(enc, backward(enc, tape, res.grad), opt)
            losses.append(res.loss)
            step += 1

        log.triplets[epoch] = records
        if gt is not None:
            rates = false_sampling_rates(records, gt)
            fp, fn = rates.fp_rate, rates.fn_rate
        else:
            fp = fn = math.nan
        log.epochs.append(
            EpochDiagnostics(
                epoch, float(np.mean(losses)), state["nmi"], state["num_clusters"],
                fp, fn, state["recall1"], state["recall5"],
            )
        )
    if can_eval:
        log.final = evaluate_retrieval(enc, ds, eval_ds, cfg.embedding_tap, cfg.eval_clips, cfg.eval_seed)
    return enc, log


# -- ablations ------------------------------------------------------------------

COMPONENT_CELLS = {
    # ablation rows: iterative clustering / multi-view / temporal loss
    "ic_off": dict(iterative_clustering=False, p_alpha=1.0),
    "mv_off_tl_off": dict(p_beta=1.0, lam=0.0),
    "tl_off": dict(lam=0.0),
    "mv_off": dict(p_beta=1.0),
    "all_on": dict(),
}


def ablation_cells(preset, kmeans_ks=(3, 20), intervals=(1, 2, 5, 10),
                   p_alphas=(0.0, 0.2, 0.5, 0.7), p_betas=(0.25, 0.5, 0.75)):
    """Named config overrides for one preset."""
    if preset == "components":
        return dict(COMPONENT_CELLS)
    if preset == "clustering":
        cells = {}
        for k in intervals:
            cells[f"finch_p1_k{k}"] = dict(clustering="finch_p1", cluster_interval=k)
            cells[f"finch_p2_k{k}"] = dict(clustering="finch_p2", cluster_interval=k)
            for K in kmeans_ks:
                cells[f"kmeans{K}_k{k}"] = dict(clustering="kmeans", n_clusters=K, cluster_interval=k)
                cells[f"spherical{K}_k{k}"] = dict(
                    clustering="spherical_kmeans", n_clusters=K, cluster_interval=k
                )
        return cells
    if preset == "positives":
        return {
            f"pa{pa:g}_pb{pb:g}": dict(p_alpha=pa, p_beta=pb) for pa in p_alphas for pb in p_betas
        }
    raise UsageError(f"unknown ablation preset {preset!r}")


@dataclass
class AblationCell:
    name: str
    config: TrainConfig
    log: MetricsLog


def run_ablation(preset, train_ds, test_ds, base_cfg, **grid):
    """Train and evaluate every cell of ``preset`` with the base config's seed."""
    out = {}
    for name, overrides in ablation_cells(preset, **grid).items():
        cfg = replace(base_cfg, **overrides)
        _, log = train(train_ds, cfg, eval_ds=test_ds)
        out[name] = AblationCell(name, cfg, log)
    return out


def ablation_csv(preset, cells):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["preset", "cell", "recall1", "recall5", "recall10", "recall20",
                "final_nmi", "final_num_clusters", "final_fp_rate", "final_fn_rate"])
    for name, cell in cells.items():
        last = cell.log.epochs[-1]
        rep = cell.log.final.recall if cell.log.final else {}
        w.writerow([preset, name] + [_fmt(rep.get(k, math.nan)) for k in (1, 5, 10, 20)]
                   + [_fmt(last.nmi), _fmt(last.num_clusters), _fmt(last.fp_rate), _fmt(last.fn_rate)])
    return buf.getvalue()


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
