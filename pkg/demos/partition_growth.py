"""Watch the input-space partition rearrange itself during training.

Every hard-selection network chops its input space into convex regions
on which it is affine.  Training moves the region boundaries toward the
data: the number of regions the training set occupies grows, and points
sharing a region (VQ distance 0) end up semantically alike.
"""

import numpy as np

from masonet import (
    TrainConfig,
    grid_scan,
    layer_codes_batch,
    make_mlp,
    nearest_neighbors,
    region_stats,
    train,
)
from masonet.cli import generate_toy_dataset

X, y = generate_toy_dataset(seed=0)
keep = np.random.default_rng(1).permutation(X.shape[0])[:4000]  # subset for speed
X, y = X[keep], y[keep]

net = make_mlp([2, 45, 3, 4], seed=3)
depth = len(net.layers)

before = region_stats(net, X, depth)
table, _, _ = grid_scan(net, [(-2, 2), (-2, 2)], 101, depth)
print(f"initialization: {before['nonempty_count']} regions hold the data, "
      f"{len(table.entries)} distinct over the [-2,2]^2 grid")

trained, hist = train(net, (X, y), TrainConfig(learning_rate=0.01, epochs=30,
                                               batch_size=128, seed=3))
after = region_stats(trained, X, depth)
table2, _, _ = grid_scan(trained, [(-2, 2), (-2, 2)], 101, depth)
print(f"after training: {after['nonempty_count']} regions hold the data, "
      f"{len(table2.entries)} on the grid; accuracy {hist[-1]['accuracy']:.3f}")
print(f"largest regions by occupancy: {after['histogram'][:8]} ...")

# neighbors in code space: fraction of units whose piece choice differs
q = 17
idx = nearest_neighbors(trained, depth, q, X, 5)
codes = layer_codes_batch(trained, X, depth)
print(f"\nquery point {np.round(X[q], 3)} (class {y[q]})")
for i in idx:
    d = float(np.mean(codes[i] != codes[q]))
    print(f"  neighbor {i:5d}: vq distance {d:.3f}, class {y[i]}, x {np.round(X[i], 3)}")
same = [y[i] for i in idx]
print(f"neighbors sharing the query's class: {sum(c == y[q] for c in same)}/5")
