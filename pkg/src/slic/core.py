"""Vector primitives, cosine geometry and seeded random streams.

Everything here works on float64 numpy arrays. Rows of a matrix are samples.
"""

import numpy as np

EPS_NORM = 1e-12

# Named sub-streams of one master seed. Adding a consumer means adding a
# name here; existing streams never shift.
STREAMS = {
    "data-gen": 0,
    "init": 1,
    "sampling": 2,
    "augment": 3,
    "eval": 4,
    "cluster": 5,
}


class SlicError(Exception):
    """Base class for package errors."""


class UsageError(SlicError, ValueError):
    """Bad arguments or configuration."""


class DomainError(SlicError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. zero norm)."""


class DataError(SlicError):
    """Malformed or corrupt data on disk."""


class NumericalError(SlicError, ArithmeticError):
    """Non-finite values appeared during computation."""


def rng_stream(seed, stream=0):
    """Return a counter-based generator for ``(seed, stream)``.

    ``stream`` is either an integer id or one of the names in ``STREAMS``.
    Philox is counter based, so equal ``(seed, stream)`` pairs give identical
    draws on every platform, and distinct stream ids are independent.
    """
    stream_id = STREAMS[stream] if isinstance(stream, str) else int(stream)
    if seed < 0 or stream_id < 0:
        raise UsageError("seed and stream id must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_id,))
    return np.random.Generator(np.random.Philox(ss))


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise UsageError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} contains non-finite entries")
    return m


def l2_normalize(v):
    """Scale ``v`` to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not n > EPS_NORM:
        raise DomainError(f"cannot normalize vector with norm {n:g}")
    return v / n


def normalize_rows(m, name="matrix"):
    """Row-wise L2 normalization; raises on the first zero-norm row."""
    m = as_matrix(m, name)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise DomainError(f"{name} row {int(bad[0])} has zero norm")
    return m / norms[:, None]


def cosine_distance(u, v):
    """``1 - cos(u, v)``, clamped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise UsageError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if not (nu > 0 and nv > 0):
        raise DomainError("cosine distance undefined for zero-norm vector")
    d = 1.0 - float(np.dot(u, v)) / (nu * nv)
    return min(max(d, 0.0), 2.0)


def pairwise_cosine_distances(a, b, block=1024):
    """Matrix of cosine distances between rows of ``a`` and rows of ``b``.

    Rows are normalized once, then normalized dot products are taken one
    row-block at a time so peak memory stays at ``block * len(b)``.
    """
    a = normalize_rows(a, "A")
    b = normalize_rows(b, "B")
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], block):
        stop = min(start + block, a.shape[0])
        np.subtract(1.0, a[start:stop] @ b.T, out=out[start:stop])
    np.clip(out, 0.0, 2.0, out=out)
    return out


def cosine_distances_to(u, m):
    """Cosine distance from vector ``u`` to every row of ``m``, clamped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    nu = np.linalg.norm(u)
    nm = np.linalg.norm(m, axis=1)
    if not (nu > 0 and np.all(nm > 0)):
        raise DomainError("cosine distance undefined for zero-norm vector")
    return np.clip(1.0 - (m @ u) / (nm * nu), 0.0, 2.0)
