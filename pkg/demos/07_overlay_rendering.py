# coding: utf-8

# # Dot overlay
#
# Each retained cancerous prediction becomes a filled dot at its patch centre,
# in the pattern's color, drawn on a downscaled copy of the slide. A legend strip
# goes underneath.

import tempfile
from pathlib import Path

from wsi_patterns import OracleConfig, Palette, SyntheticOracle, SyntheticSpec, TilerConfig, generate_slide, infer_slide, render_overlay

spec = SyntheticSpec(1400, 900, (
    (0, 0, 900, 900, "acinar"),
    (900, 0, 500, 500, "micropapillary"),
    (900, 500, 500, 400, "solid"),
    (300, 300, 200, 200, "benign"),
), seed=5)
slide = generate_slide(spec)
result = infer_slide(slide.image, SyntheticOracle(OracleConfig()), tiler=TilerConfig())
print(result.label, "from", len(result.retained), "patches")

overlay = render_overlay(slide.image, result.retained, Palette(), scale=0.5)
out = Path(tempfile.mkdtemp()) / "overlay.png"
overlay.save(out)
print("wrote", out, overlay.size)
