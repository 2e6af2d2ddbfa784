"""
First-neighbour clustering on synthetic video features
=======================================================

Builds a small labelled dataset, runs the parameter-free hierarchy and
compares every level with K-means at the same number of clusters.
"""

import time

import numpy as np

from slic.clustering import finch, kmeans
from slic.core import rng_stream
from slic.data import SynthConfig, generate_synthetic
from slic.metrics import nmi

# 10 classes, 20 videos each; we cluster the centre clip of every video
ds = generate_synthetic(SynthConfig(num_classes=10, videos_per_class=20, seed=0))
x = ds.features[:, ds.clips_per_video // 2, 0]
print("features:", x.shape)

t0 = time.perf_counter()
h = finch(x)
print(f"hierarchy built in {time.perf_counter() - t0:.3f}s")

# Every level is a union of whole clusters of the level below, so the
# counts shrink and purity can only drop as we go up.
for level, part in enumerate(h.partitions):
    purity = np.mean([np.bincount(ds.labels[part.members(c)]).max() / part.sizes()[c]
                      for c in range(part.num_clusters)])
    km = kmeans(x, part.num_clusters, rng_stream(0, "cluster")) if part.num_clusters > 1 else None
    km_nmi = nmi(km, ds.labels) if km is not None else float("nan")
    print(f"level {level}: {part.num_clusters:4d} clusters  NMI {nmi(part, ds.labels):.3f}"
          f"  mean purity {purity:.3f}  K-means NMI {km_nmi:.3f}")

# The first level over-clusters: several small clusters per class, almost
# all of them pure. That is the partition used for pseudo-labels.
p1 = h.partitions[0]
print("cluster sizes at level 0:", np.sort(p1.sizes())[::-1].tolist())
