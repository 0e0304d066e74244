"""How shifted-window attention tiles a feature map and masks the seams.

Run:  python demos/02_windowed_attention.py
"""

import numpy as np

from glassdepth.attention import (AttentionParams, WindowGrid, attention_mask,
                                  cyclic_shift, multi_head_attention,
                                  region_labels, window_partition)
from glassdepth.tensor import Tensor

# A 12x12 map with window 4: sixteen tokens per window, nine windows.
grid = WindowGrid(12, 12, window=4, shift=2)
print("windows:", grid.n_windows, " tokens each:", grid.tokens_per_window)

# After rolling the map by (-shift, -shift), tokens from up to four
# different pre-shift regions meet inside the windows along the far edges.
# The region labels show which pixels may attend to each other:
labels = region_labels(grid)
print("pre-shift region labels:")
print(labels)

# The additive mask blocks cross-region pairs with -1e9 before the softmax;
# interior windows stay fully connected, seam windows pay the cost.
mask = attention_mask(grid)
blocked = (mask < 0).sum(axis=(1, 2))
print("blocked pairs per window:", blocked)

# Attention weights stay row-stochastic under the mask, and essentially no
# probability mass crosses a region boundary:
rng = np.random.default_rng(0)
params = AttentionParams.create(channels=16, heads=4, window=4, rng=rng)
x = rng.standard_normal((12, 12, 16)).astype(np.float32)
shifted = cyclic_shift(Tensor(x), grid.shift)
windows = window_partition(shifted, grid.window)
capture = {}
multi_head_attention(windows, params, mask=mask, capture=capture)
probs = capture["probs"]
print("row sums - 1 :", np.abs(probs.sum(-1) - 1).max())
cross = probs[np.broadcast_to((mask < 0)[:, None], probs.shape)]
print("cross-region mass:", cross.sum())
