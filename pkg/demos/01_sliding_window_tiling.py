# coding: utf-8

# # Sliding-window tiling
#
# A slide is cut into square windows. The default window is 224 px, and
# neighbouring windows overlap by one fifth of a window, which gives a stride of 179 px.
# When the stride does not land exactly on the right or bottom edge, one extra window
# is pulled back so it ends flush with the edge. No pixel is left uncovered.

from wsi_patterns import TilerConfig, expected_patch_count, tile_region

cfg = TilerConfig()
print("window", cfg.window, "stride", cfg.stride)

# A 1000 px wide strip: five regular windows, then one clamped window at x = 776.

grid = tile_region(1000, 224, cfg)
print([g.x for g in grid])

# The patch count has a closed form, so large slides can be budgeted before any
# pixel is read.

for w, h in ((224, 224), (403, 224), (40_000, 30_000)):
    print(f"{w}x{h}: {expected_patch_count(w, h, cfg)} patches")

# Training crops are tiled with a stride chosen per class so each class yields
# roughly the same number of patches. A small class gets a dense stride and a
# large class a sparse one.

from wsi_patterns import balanced_stride

small_class = [(300, 260), (250, 240)]
large_class = [(3000, 2000), (2500, 2200), (1800, 1600)]
for name, crops in (("small", small_class), ("large", large_class)):
    print(name, "stride", balanced_stride(crops, 224, target_count=200))
