"""Adaptive patching: edge-guided quadtrees instead of fixed-grid tokens.

A fixed 16x16 patch grid on a 1024^2 slice produces 4096 tokens; an
edge-driven quadtree with a budget of 256 leaves covers the same slice
with 16x fewer tokens while keeping fine patches where the structure is.
The tree also replaces a decoder: masks come back through the same leaves.
"""

import numpy as np

from tomofuse.patching import build_tree, canny, depatch, patchify
from tomofuse.segmentation import ThresholdSegmenter

rng = np.random.default_rng(5)

# a synthetic 1024^2 slice: smooth background plus a few dense inclusions
n = 1024
img = np.full((n, n), 9000.0)
yy, xx = np.ogrid[0:n, 0:n]
for _ in range(12):
    cx, cy = rng.integers(100, n - 100, size=2)
    r = rng.integers(30, 90)
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 52000.0
img = img.astype(np.uint16)

edges = canny(img.astype(float), low_ratio=0.1, high_ratio=0.2, sigma=1.5)
print(f"edge pixels: {int(edges.sum())} of {n * n}")

budget, p = 256, 16
tree = build_tree(edges, budget)
sizes = np.array([leaf.region.size for leaf in tree.leaves])
print(f"tree: {tree.n_leaves} leaves (budget {budget}), "
      f"sizes {sizes.min()} .. {sizes.max()}")
fixed_grid_tokens = (n // p) ** 2
print(f"tokens: {tree.n_leaves} adaptive vs {fixed_grid_tokens} fixed-grid "
      f"({fixed_grid_tokens / tree.n_leaves:.0f}x reduction)")

seq = patchify(img, tree, p, kind="image")
seg = ThresholdSegmenter(t1=16000, t2=40000, t3=60000)
mask = depatch(seg(seq), tree)

truth = seg.label_values(img)
agreement = (mask == truth).mean()
print(f"depatched mask agrees with dense thresholding on "
      f"{agreement:.2%} of pixels (coarse leaves cover flat regions)")
