"""
Switching training components off
=================================

Runs the ``components`` ablation preset on one seed: instance
discrimination only (no clustering), and the full method with the
multi-view positive and the temporal loss removed one at a time.
"""

from slic.data import SynthConfig, generate_synthetic, split_train_test
from slic.harness import TrainConfig, ablation_csv, run_ablation

ds = generate_synthetic(SynthConfig(class_separation=1.0, video_spread=1.0, seed=0))
train_ds, test_ds = split_train_test(ds, 0.2, seed=0)

cells = run_ablation("components", train_ds, test_ds, TrainConfig(seed=0))
for name, cell in cells.items():
    last = cell.log.epochs[-1]
    print(f"{name:14s} R@1 {cell.log.final[1]:.3f}  R@5 {cell.log.final[5]:.3f}"
          f"  clusters {last.num_clusters:3d}  fp {last.fp_rate:.3f}")

# the same table as the CLI writes it
print(ablation_csv("components", cells))
