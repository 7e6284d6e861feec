# coding: utf-8

# # Channel normalization and augmentation
#
# Per-channel mean and standard deviation are accumulated over the training crops.
# Every patch is then normalized with them before it reaches the classifier.

import numpy as np

from wsi_patterns import AugmentSpec, augment, dataset_channel_stats, normalize

rng = np.random.default_rng(0)
crops = [rng.integers(120, 230, size=(256, 256, 3), dtype=np.uint8) for _ in range(4)]
stats = dataset_channel_stats(crops, dataset_id="demo")
print("mean", np.round(stats.mean, 4))
print("std ", np.round(stats.std, 4))

normed = normalize(crops[0], stats)
print("normalized patch mean per channel", np.round(normed.reshape(-1, 3).mean(axis=0), 3))

# Augmentation applies color jitter, a right-angle rotation and random flips.
# Every random choice is keyed on (seed, draw index), so the same draw index
# always gives the same patch, whatever order the patches are processed in.

spec = AugmentSpec(seed=42)
a = augment(crops[0], spec, draw_index=7)
b = augment(crops[0], spec, draw_index=7)
c = augment(crops[0], spec, draw_index=8)
print("same draw reproduces:", np.array_equal(a, b))
print("next draw differs:   ", not np.array_equal(a, c))
