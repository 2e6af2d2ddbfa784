"""Evaluation-only measurements: NMI, recall@k and false sampling rates.

Nothing in this module is reachable from the training path except through
the harness's logging, which hands ground-truth labels only to these
functions.
"""

from dataclasses import dataclass

import numpy as np

from .core import UsageError, pairwise_cosine_distances

DEFAULT_KS = (1, 5, 10, 20)


def _labels(x):
    return np.asarray(getattr(x, "assignment", x))


def nmi(a, b):
    """Normalized mutual information ``I(a, b) / sqrt(H(a) H(b))`` (natural log).

    When either side has zero entropy the value is 1.0 if both assignments
    describe the same partition and 0.0 otherwise.
    """
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise UsageError(f"label arrays must be 1-D and equal length, got {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ai, bi = ai.ravel(), bi.ravel()
    n = a.size
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    # sorted sums make the value bit-identical under swapping and relabelling
    h_a = -np.sort(pa * np.log(pa)).sum()
    h_b = -np.sort(pb * np.log(pb)).sum()
    if h_a <= 0 or h_b <= 0:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    pij = table / n
    nz = pij > 0
    mi = np.sort(pij[nz] * np.log(pij[nz] / np.outer(pa, pb)[nz])).sum()
    return float(min(max(mi / np.sqrt(h_a * h_b), 0.0), 1.0))


@dataclass
class RetrievalReport:
    recall: dict

    def __getitem__(self, k):
        return self.recall[k]

    def to_dict(self):
        return {f"recall@{k}": v for k, v in sorted(self.recall.items())}


def recall_at_k(query_embs, query_labels, gallery_embs, gallery_labels, ks=DEFAULT_KS):
    """Fraction of queries with a same-label item among their k nearest gallery items.

    Gallery ranking uses cosine distance; ties resolve to the smaller gallery
    index (stable sort).
    """
    if query_labels is None or gallery_labels is None:
        raise UsageError("recall@k needs labels for queries and gallery")
    q_lab = np.asarray(query_labels)
    g_lab = np.asarray(gallery_labels)
    dist = pairwise_cosine_distances(query_embs, gallery_embs)
    if dist.shape != (q_lab.size, g_lab.size):
        raise UsageError("label counts do not match embedding rows")
    kmax = min(max(ks), g_lab.size)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kmax]
    hit = g_lab[order] == q_lab[:, None]
    first_hit = np.where(hit.any(axis=1), hit.argmax(axis=1), kmax)
    return RetrievalReport({k: float(np.mean(first_hit < min(k, kmax))) for k in ks})


@dataclass
class TripletRecord:
    """What the trainer logs for one anchor (video ids only)."""

    anchor: int
    positive: int
    same_instance: bool
    negative: int = -1  # -1: no instance negative this step
    temporal_negative: int = -1
    fallback: bool = False
    d_ap: float = float("nan")
    d_an: float = float("nan")


@dataclass
class SamplingRates:
    fp_rate: float
    fn_rate: float
    fp_defined: bool = True
    fn_defined: bool = True


def false_sampling_rates(records, gt_labels):
    """False-positive and false-negative sampling rates against ground truth.

    fp: share of cross-instance positives whose true class differs from the
    anchor's.  fn: share of negatives (instance negatives, plus temporal
    negatives taken from another video) whose true class equals the
    anchor's.  An empty denominator gives 0.0 with the ``*_defined`` flag
    cleared.
    """
    gt = np.asarray(gt_labels)
    fp_num = fp_den = fn_num = fn_den = 0
    for r in records:
        same_cls = gt[r.anchor]
        if not r.same_instance:
            fp_den += 1
            fp_num += gt[r.positive] != same_cls
        if r.negative >= 0:
            fn_den += 1
            fn_num += gt[r.negative] == same_cls
        if r.temporal_negative >= 0 and r.temporal_negative != r.anchor:
            fn_den += 1
            fn_num += gt[r.temporal_negative] == same_cls
    return SamplingRates(
        fp_num / fp_den if fp_den else 0.0,
        fn_num / fn_den if fn_den else 0.0,
        fp_den > 0,
        fn_den > 0,
    )


@dataclass
class EpochDiagnostics:
    epoch: int
    mean_loss: float
    nmi: float
    num_clusters: int
    fp_rate: float
    fn_rate: float
    recall1: float
    recall5: float
