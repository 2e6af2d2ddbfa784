"""First-neighbour (FINCH) hierarchical clustering and K-means baselines.

FINCH links every sample to its nearest neighbour under cosine distance.
Two samples end up in the same cluster when one is the other's first
neighbour or when they share a first neighbour; clusters are the connected
components of that graph.  Repeating the procedure on cluster means gives a
short hierarchy of ever coarser partitions with no parameters to tune.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, UsageError, as_matrix, normalize_rows

MEAN_NORM_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster assignment with ids compacted to ``0..num_clusters-1``."""

    assignment: np.ndarray
    num_clusters: int

    @classmethod
    def from_labels(cls, labels):
        """Compact arbitrary labels; ids follow order of first appearance."""
        labels = np.asarray(labels)
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        remap = np.empty_like(order)
        remap[order] = np.arange(order.size)
        assignment = remap[inverse.ravel()].astype(np.int64)
        assignment.setflags(write=False)
        return cls(assignment, int(order.size))

    def __len__(self):
        return self.assignment.size

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.num_clusters == other.num_clusters and np.array_equal(
            self.assignment, other.assignment
        )

    def members(self, cluster):
        return np.flatnonzero(self.assignment == cluster)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.num_clusters)


@dataclass
class PartitionHierarchy:
    partitions: list = field(default_factory=list)

    def __len__(self):
        return len(self.partitions)

    def __getitem__(self, i):
        return self.partitions[i]


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def roots(self):
        return np.array([self.find(i) for i in range(len(self.parent))])


def _screen_margin(dim):
    # Worst-case float32 error of a unit-vector dot product: input rounding
    # plus a length-``dim`` accumulation, doubled for the two compared values
    # and doubled again for slack.
    return 4.0 * (dim + 2) * 2.0**-24


def _slab_reduce(sims, sub, axis):
    """Max over consecutive ``sub``-long runs along ``axis`` (2-D input)."""
    length = sims.shape[axis]
    if length % sub:
        return np.maximum.reduceat(sims, np.arange(0, length, sub), axis=axis)
    if axis == 1:
        return sims.reshape(sims.shape[0], -1, sub).max(axis=2)
    return sims.reshape(-1, sub, sims.shape[1]).max(axis=1)


def first_neighbors(emb, block=1024, sub=128):
    """Index of each row's nearest other row under cosine distance.

    Ties go to the smallest index.

    Two passes.  The O(N^2) scan runs in float32 over the upper block
    triangle only and records, for every row, the maximum similarity inside
    each ``sub``-wide column slab.  Any slab whose maximum lies within the
    float32 error margin of the row's overall maximum may hold the true
    neighbour; only those slabs are rescored in float64, where the decision
    is made.  Usually that is one slab per row.
    """
    x = normalize_rows(emb, "embeddings")
    n, dim = x.shape
    if n < 2:
        raise UsageError("first_neighbors needs at least 2 rows")
    block = max(sub, block // sub * sub)
    x32 = x.astype(np.float32)
    slab_starts = np.arange(0, n, sub)
    slab_max = np.empty((n, slab_starts.size), dtype=np.float32)

    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        si = slice(i0 // sub, -(-i1 // sub))
        for j0 in range(i0, n, block):
            j1 = min(j0 + block, n)
            sj = slice(j0 // sub, -(-j1 // sub))
            sims = x32[i0:i1] @ x32[j0:j1].T
            if j0 == i0:
                np.fill_diagonal(sims, -np.inf)
            slab_max[i0:i1, sj] = _slab_reduce(sims, sub, axis=1)
            if j0 != i0:
                slab_max[j0:j1, si] = _slab_reduce(sims, sub, axis=0).T

    margin = np.float32(_screen_margin(dim))
    best32 = slab_max.max(axis=1)
    rows, slabs = np.nonzero(slab_max >= (best32 - margin)[:, None])

    out_rows, out_cols, out_vals = [], [], []
    order = np.argsort(slabs, kind="stable")
    rows, slabs = rows[order], slabs[order]
    bounds = np.flatnonzero(np.r_[True, slabs[1:] != slabs[:-1], True])
    for a, b in zip(bounds[:-1], bounds[1:]):
        c0 = int(slab_starts[slabs[a]])
        c1 = min(c0 + sub, n)
        r = rows[a:b]
        sims = x[r] @ x[c0:c1].T
        own = (r >= c0) & (r < c1)
        sims[np.flatnonzero(own), r[own] - c0] = -np.inf
        j = np.argmax(sims, axis=1)
        out_rows.append(r)
        out_cols.append(j + c0)
        out_vals.append(sims[np.arange(r.size), j])

    rows = np.concatenate(out_rows)
    cols = np.concatenate(out_cols)
    vals = np.concatenate(out_vals)
    order = np.lexsort((cols, -vals, rows))
    rows, cols = rows[order], cols[order]
    first = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    kappa = np.empty(n, dtype=np.int64)
    kappa[rows[first]] = cols[first]
    return kappa


def link_components(kappa):
    """Connected components of the first-neighbour adjacency graph.

    An edge joins ``i`` and ``j`` when ``j = kappa[i]``, ``i = kappa[j]`` or
    ``kappa[i] = kappa[j]``.  Unioning each ``i`` with ``kappa[i]`` already
    covers all three rules: a shared first neighbour is reached through it.
    """
    kappa = np.asarray(kappa, dtype=np.int64)
    n = kappa.size
    if n < 2 or kappa.min() < 0 or kappa.max() >= n or np.any(kappa == np.arange(n)):
        raise UsageError("invalid first-neighbour array")
    uf = UnionFind(n)
    for i, j in enumerate(kappa.tolist()):
        uf.union(i, j)
    return Partition.from_labels(uf.roots())


def cluster_means(emb, part):
    sums = np.zeros((part.num_clusters, emb.shape[1]))
    np.add.at(sums, part.assignment, emb)
    means = sums / part.sizes()[:, None]
    norms = np.linalg.norm(means, axis=1)
    bad = np.flatnonzero(norms <= MEAN_NORM_FLOOR)
    if bad.size:
        raise DomainError(f"cluster {int(bad[0])} has a mean vector of norm {norms[bad[0]]:g}")
    return means


def finch(emb):
    """Full FINCH hierarchy, finest partition first.

    Each level after the first clusters the means (over original rows) of
    the previous level's clusters.  Stops at a single cluster or when a
    level fails to merge anything.
    """
    x = as_matrix(emb, "embeddings")
    if x.shape[0] < 2:
        raise UsageError("finch needs at least 2 rows")
    current = link_components(first_neighbors(x))
    parts = [current]
    while current.num_clusters > 1:
        means = cluster_means(x, current)
        merged = link_components(first_neighbors(means))
        if merged.num_clusters == current.num_clusters:
            break
        current = Partition.from_labels(merged.assignment[current.assignment])
        parts.append(current)
    return PartitionHierarchy(parts)


def pseudo_labels(hierarchy, partition_index=0):
    if not 0 <= partition_index < len(hierarchy):
        raise UsageError(
            f"partition index {partition_index} out of range for "
            f"hierarchy of {len(hierarchy)} partitions"
        )
    return hierarchy[partition_index]


def _sq_dists(x, x_sq, c, block=4096):
    out = np.empty((x.shape[0], c.shape[0]))
    c_sq = np.einsum("ij,ij->i", c, c)
    for start in range(0, x.shape[0], block):
        stop = min(start + block, x.shape[0])
        d = x_sq[start:stop, None] - 2.0 * (x[start:stop] @ c.T) + c_sq[None, :]
        out[start:stop] = np.maximum(d, 0.0)
    return out


def _kmeanspp(x, x_sq, k, rng, spherical):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))

    def dist_to(i):
        if spherical:
            return np.maximum(1.0 - x @ x[i], 0.0)
        return np.maximum(x_sq - 2.0 * (x @ x[i]) + x_sq[i], 0.0)

    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = dist_to(first)
    closest[first] = 0.0
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centre
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        np.minimum(closest, dist_to(idx), out=closest)
        closest[idx] = 0.0
    return centers


@dataclass
class KMeansResult:
    partition: Partition
    centroids: np.ndarray
    inertia_history: list
    n_iter: int


def kmeans_fit(emb, k, rng, max_iter=100, tol=1e-6, spherical=False):
    """Lloyd iterations from a k-means++ start.

    ``spherical`` normalizes the data and centroids and assigns by largest
    dot product; inertia is then ``sum(1 - cos)``.  A cluster that empties
    is re-seeded with the point currently farthest from its own centroid.
    Stops once the relative Frobenius shift of the centroids drops below
    ``tol``.
    """
    x = as_matrix(emb, "embeddings")
    n = x.shape[0]
    if not 2 <= k <= n:
        raise UsageError(f"K must satisfy 2 <= K <= N={n}, got {k}")
    if spherical:
        x = normalize_rows(x)
    x_sq = np.einsum("ij,ij->i", x, x)
    centers = _kmeanspp(x, x_sq, k, rng, spherical)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        if spherical:
            d = 1.0 - x @ centers.T
        else:
            d = _sq_dists(x, x_sq, centers)
        labels = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), labels]
        history.append(float(point_cost.sum()))

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            cost = point_cost.copy()
            for c in empty:
                far = int(np.argmax(cost))
                cost[far] = -np.inf
                counts[labels[far]] -= 1
                sums[labels[far]] -= x[far]
                labels[far] = c
                counts[c] = 1
                sums[c] = x[far]
        new = sums / counts[:, None]
        if spherical:
            new = normalize_rows(new, "centroids")
        shift = np.linalg.norm(new - centers) / max(np.linalg.norm(centers), 1e-300)
        centers = new
        if shift < tol:
            break
    if spherical:
        d = 1.0 - x @ centers.T
    else:
        d = _sq_dists(x, x_sq, centers)
    labels = np.argmin(d, axis=1)
    return KMeansResult(Partition.from_labels(labels), centers, history, it)


def kmeans(emb, k, rng, max_iter=100, tol=1e-6):
    return kmeans_fit(emb, k, rng, max_iter, tol).partition


def spherical_kmeans(emb, k, rng, max_iter=100, tol=1e-6):
    return kmeans_fit(emb, k, rng, max_iter, tol, spherical=True).partition
