# coding: utf-8

# # Classifier gateway
#
# The pipeline only needs one probability vector per patch. Two handles provide it:
#
# * a synthetic oracle that snaps pixels to a fixed palette and reports the
#   majority class, optionally with seeded low-confidence mistakes;
# * an external worker process speaking newline-delimited JSON, which is how a
#   trained network is plugged in.

import sys

import numpy as np

from wsi_patterns import ExternalWorker, HistologicPattern, OracleConfig, SyntheticOracle, classify_batch
from wsi_patterns.gateway import DEFAULT_CLASS_COLORS

patches = [np.full((32, 32, 3), DEFAULT_CLASS_COLORS[p], dtype=np.uint8) for p in HistologicPattern]

oracle = SyntheticOracle(OracleConfig(confidence=0.9))
for p, vec in zip(HistologicPattern, classify_batch(oracle, patches, range(6))):
    print(f"{p.key:15s} -> top {vec.argmax().key:15s} p = {max(vec.p):.2f}")

# With noise, a seeded fraction of patches gets a wrong class at a confidence no
# higher than 0.3. These are the predictions that per-class thresholds later remove.

noisy = SyntheticOracle(OracleConfig(noise_rate=0.5, low_conf_max=0.3, seed=3))
vecs = classify_batch(noisy, patches * 4, range(24))
print("confidences under noise:", sorted({round(max(v.p), 2) for v in vecs})[:5], "...")

# The reference worker serves the same oracle over stdin/stdout. Any model
# server that follows this line protocol can replace it.

with ExternalWorker([sys.executable, "-m", "wsi_patterns.oracle_worker"], batch_size=4) as worker:
    print("worker:", [v.argmax().key for v in classify_batch(worker, patches)])
