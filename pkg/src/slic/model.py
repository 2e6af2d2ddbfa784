"""MLP encoder with a projection head, triplet/InfoNCE losses and SGD.

The encoder is ``input -> backbone (Linear+ReLU)* -> Linear -> ReLU -> Linear``.
Gradients are hand-derived; ``forward`` returns a tape that ``backward``
consumes.  Everything is float64 and row-major (one sample per row).
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DataError, DomainError, NumericalError, UsageError, cosine_distance

CKPT_MAGIC = b"SLICCKPT"
CKPT_VERSION = 1


@dataclass
class EncoderArch:
    input_dim: int
    backbone_dims: tuple = (256, 128)
    head_hidden: int = 64
    embed_dim: int = 32

    def __post_init__(self):
        self.backbone_dims = tuple(int(d) for d in self.backbone_dims)
        dims = (self.input_dim, *self.backbone_dims, self.head_hidden, self.embed_dim)
        if not self.backbone_dims or min(dims) < 1:
            raise UsageError(f"all encoder dims must be >= 1 (got {dims})")

    @property
    def layer_dims(self):
        return [self.input_dim, *self.backbone_dims, self.head_hidden, self.embed_dim]


@dataclass
class Encoder:
    arch: EncoderArch
    weights: list
    biases: list

    @property
    def num_backbone(self):
        return len(self.arch.backbone_dims)

    def parameters(self):
        """Parameters in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return Encoder(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_encoder(arch, rng):
    """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases."""
    dims = arch.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Encoder(arch, weights, biases)


@dataclass
class Tape:
    activations: list  # input to each layer, then the final output
    preacts: list
    num_backbone: int
    squeeze: bool = False

    @property
    def output(self):
        out = self.activations[-1]
        return out[0] if self.squeeze else out

    @property
    def backbone(self):
        """Backbone features (input to the projection head)."""
        out = self.activations[self.num_backbone]
        return out[0] if self.squeeze else out


def forward(enc, x):
    """Embed ``x`` (one vector or a matrix of rows); returns ``(embedding, tape)``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != enc.arch.input_dim:
        raise UsageError(f"expected input dim {enc.arch.input_dim}, got shape {x.shape}")
    acts, pre = [h], []
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    tape = Tape(acts, pre, enc.num_backbone, squeeze)
    return tape.output, tape


def backward(enc, tape, grad_out):
    """Parameter gradients given dLoss/dOutput; returns a list like ``parameters()``."""
    if tape is None:
        raise UsageError("backward needs the tape from forward")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.activations[-1].shape:
        raise UsageError(f"gradient shape {g.shape} does not match output {tape.activations[-1].shape}")
    grads = [None] * (2 * len(enc.weights))
    last = len(enc.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (tape.preacts[i] > 0.0)
        grads[2 * i] = tape.activations[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ enc.weights[i].T
    return grads


@dataclass
class OptState:
    lr: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 0.0
    buffers: list = field(default_factory=list)


def sgd_step(enc, grads, opt):
    """Heavy-ball SGD, in place: ``buf = momentum*buf + g; p -= lr*buf``."""
    params = enc.parameters()
    if not opt.buffers:
        opt.buffers = [np.zeros_like(p) for p in params]
    for p, g, buf in zip(params, grads, opt.buffers):
        if opt.weight_decay:
            g = g + opt.weight_decay * p
        buf *= opt.momentum
        buf += g
        p -= opt.lr * buf
    return enc, opt


# -- losses on single vectors -------------------------------------------------


def triplet_loss(a, p, n, m):
    return max(0.0, cosine_distance(a, p) - cosine_distance(a, n) + m)


def temporal_loss(x, aug_x, x_tempneg, m2):
    return triplet_loss(x, aug_x, x_tempneg, m2)


def total_loss(triplet_losses, temporal_losses, lam=1.0):
    """Batch objective: mean instance loss + lam * mean temporal loss.

    ``None`` entries (no negative found) are dropped from their own mean.
    """
    trip = [v for v in triplet_losses if v is not None]
    temp = [v for v in temporal_losses if v is not None]
    out = float(np.mean(trip)) if trip else 0.0
    if temp:
        out += lam * float(np.mean(temp))
    return out


def infonce_loss(anchor, positive, negatives, temperature=0.1):
    if not temperature > 0:
        raise UsageError("temperature must be positive")
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.shape[0] < 1:
        raise UsageError("InfoNCE needs at least one negative")
    logits = np.array(
        [1.0 - cosine_distance(anchor, positive)]
        + [1.0 - cosine_distance(anchor, n) for n in negatives]
    ) / temperature
    top = logits.max()
    return float(top + np.log(np.exp(logits - top).sum()) - logits[0])


# -- batched objective with gradients w.r.t. embeddings -----------------------


def _cos_sim_grad(u, v):
    """Cosine similarity of paired rows and its gradients w.r.t. both."""
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    if not (np.all(nu > 0) and np.all(nv > 0)):
        raise DomainError("zero-norm embedding in loss")
    inv = 1.0 / (nu * nv)
    s = np.einsum("ij,ij->i", u, v) * inv
    du = v * inv[:, None] - u * (s / nu**2)[:, None]
    dv = u * inv[:, None] - v * (s / nv**2)[:, None]
    return s, du, dv


def _hinge_triplet(z, a, p, n, margin, grad, weight):
    """Adds ``weight * sum(hinge)`` gradients into ``grad``; returns per-item losses."""
    s_ap, ga1, gp = _cos_sim_grad(z[a], z[p])
    s_an, ga2, gn = _cos_sim_grad(z[a], z[n])
    # d = 1 - s, so loss = s_an - s_ap + margin
    raw = s_an - s_ap + margin
    active = (raw > 0.0).astype(np.float64)[:, None] * weight
    np.add.at(grad, a, active * (ga2 - ga1))
    np.add.at(grad, p, -active * gp)
    np.add.at(grad, n, active * gn)
    return np.maximum(raw, 0.0)


def _infonce_rows(z, a, p, neg_lists, tau, grad, weight):
    losses = np.empty(len(a))
    for k, (ai, pi, negs) in enumerate(zip(a, p, neg_lists)):
        others = np.r_[pi, negs]
        s, ga, go = _cos_sim_grad(np.repeat(z[ai][None, :], others.size, axis=0), z[others])
        logits = s / tau
        top = logits.max()
        e = np.exp(logits - top)
        prob = e / e.sum()
        losses[k] = top + np.log(e.sum()) - logits[0]
        coef = prob.copy()
        coef[0] -= 1.0
        coef *= weight / tau
        grad[ai] += coef @ ga
        np.add.at(grad, others, coef[:, None] * go)
    return losses


@dataclass
class LossConfig:
    m1: float = 0.2
    m2: float = 0.04
    lam: float = 1.0
    loss_kind: str = "triplet"
    infonce_temperature: float = 0.1

    def validate(self):
        if self.lam < 0:
            raise UsageError("lambda must be >= 0")
        if not self.infonce_temperature > 0:
            raise UsageError("temperature must be positive")
        if self.loss_kind not in ("triplet", "infonce"):
            raise UsageError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class LossLayout:
    """Row indices into a stacked embedding matrix.

    Item ``i`` uses anchor row ``anchor[i]``, positive ``positive[i]``, the
    augmented anchor ``aug[i]`` and temporal negative ``temporal_neg[i]``.
    ``negative[i]`` is the instance negative row (-1 when none was found);
    for InfoNCE ``infonce_negs[i]`` lists all negative rows instead.
    """

    anchor: np.ndarray
    positive: np.ndarray
    aug: np.ndarray
    temporal_neg: np.ndarray
    negative: np.ndarray = None
    infonce_negs: list = None


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    instance_losses: np.ndarray
    temporal_losses: np.ndarray


def objective(z, layout, cfg):
    """Total batch loss and its gradient w.r.t. the stacked embeddings ``z``."""
    z = np.asarray(z, dtype=np.float64)
    grad = np.zeros_like(z)
    a = np.asarray(layout.anchor)
    nan = np.full(a.size, np.nan)

    if cfg.loss_kind == "triplet":
        neg = np.asarray(layout.negative)
        ok = neg >= 0
        inst = nan.copy()
        if ok.any():
            w = 1.0 / ok.sum()
            inst[ok] = _hinge_triplet(z, a[ok], np.asarray(layout.positive)[ok], neg[ok], cfg.m1, grad, w)
    else:
        negs = layout.infonce_negs
        ok = np.array([len(n) > 0 for n in negs], dtype=bool)
        inst = nan.copy()
        if ok.any():
            w = 1.0 / ok.sum()
            sel = np.flatnonzero(ok)
            inst[ok] = _infonce_rows(
                z, a[sel], np.asarray(layout.positive)[sel],
                [np.asarray(negs[i], dtype=np.int64) for i in sel],
                cfg.infonce_temperature, grad, w,
            )

    tneg = np.asarray(layout.temporal_neg)
    tok = tneg >= 0
    temp = nan.copy()
    if tok.any():
        w = cfg.lam / tok.sum()
        temp[tok] = _hinge_triplet(z, a[tok], np.asarray(layout.aug)[tok], tneg[tok], cfg.m2, grad, w)

    loss = (np.nanmean(inst) if ok.any() else 0.0) + (
        cfg.lam * np.nanmean(temp) if tok.any() else 0.0
    )
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    return LossResult(float(loss), grad, inst, temp)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, enc, seed=None, epoch=None):
    """Magic, u32 version, u32 header length, JSON header, f64le parameter blob."""
    header = {
        "arch": {**asdict(enc.arch), "backbone_dims": list(enc.arch.backbone_dims)},
        "seed": seed,
        "epoch": epoch,
        "shapes": [list(p.shape) for p in enc.parameters()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
        for p in enc.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(encoder, header)``; validates magic, version and shapes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic at byte offset 0)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt header: {exc}") from exc
    arch = EncoderArch(**header["arch"])
    expected = [
        shape
        for a, b in zip(arch.layer_dims[:-1], arch.layer_dims[1:])
        for shape in ([a, b], [b])
    ]
    if header.get("shapes") != expected:
        raise DataError(f"{path}: parameter shapes do not match architecture")
    offset = 16 + hlen
    params = []
    for shape in expected:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise DataError(f"{path}: truncated parameter blob at byte offset {len(raw)}")
        params.append(np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes at byte offset {offset}")
    return Encoder(arch, params[0::2], params[1::2]), header
