"""Uniform access to a patch classifier.

Two kinds of classifier sit behind :func:`classify_batch`:

* :class:`SyntheticOracle`, an in-process test double that reads a patch's
  dominant flat color and answers with a configurable confidence, optionally
  corrupting a fraction of answers with low-confidence wrong classes.
* :class:`ExternalWorker`, a subprocess that speaks newline-delimited JSON on
  stdin/stdout. Each request line is ``{"id", "side", "png_b64"}`` and each
  response line is ``{"id", "probs"}`` with six probabilities in canonical
  class order. Responses are matched to requests by id.

Every vector returned to callers is validated here, whatever its source.
"""

from __future__ import annotations

import base64
import io
import itertools
import json
import logging
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image

from .core import (
    N_CLASSES,
    HistologicPattern,
    InvalidProbabilities,
    ProbabilityVector,
    WsiPatternsError,
    parse_pattern,
)

log = logging.getLogger(__name__)

# flat colors painted by the synthetic slide generator and read back by the oracle
DEFAULT_CLASS_COLORS = {
    HistologicPattern.LEPIDIC: (60, 170, 90),
    HistologicPattern.ACINAR: (50, 90, 200),
    HistologicPattern.PAPILLARY: (240, 150, 30),
    HistologicPattern.MICROPAPILLARY: (200, 30, 40),
    HistologicPattern.SOLID: (120, 50, 160),
    HistologicPattern.BENIGN: (235, 228, 235),
}


class WorkerFailed(WsiPatternsError, RuntimeError):
    pass


class ProtocolViolation(WsiPatternsError, RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    color_map: Mapping = field(default_factory=lambda: dict(DEFAULT_CLASS_COLORS))
    noise_rate: float = 0.0
    confidence: float = 0.9
    low_conf_max: float = 0.3
    seed: int = 0

    def __post_init__(self):
        cmap = {parse_pattern(k): tuple(int(c) for c in v) for k, v in dict(self.color_map).items()}
        if not cmap:
            raise ValueError("color map is empty")
        object.__setattr__(self, "color_map", cmap)
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError(f"noise_rate {self.noise_rate} outside [0, 1]")
        if not 1 / 6 < self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside (1/6, 1]")
        if not 1 / 6 < self.low_conf_max <= 1.0:
            raise ValueError(f"low_conf_max {self.low_conf_max} outside (1/6, 1]")

    def to_json(self) -> dict:
        return {
            "kind": "oracle",
            "color_map": {p.key: list(c) for p, c in sorted(self.color_map.items())},
            "noise_rate": self.noise_rate,
            "confidence": self.confidence,
            "low_conf_max": self.low_conf_max,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "OracleConfig":
        kwargs = {k: data[k] for k in ("noise_rate", "confidence", "low_conf_max", "seed") if k in data}
        if "color_map" in data:
            kwargs["color_map"] = data["color_map"]
        return cls(**kwargs)

    @property
    def palette(self):
        classes = sorted(self.color_map)
        return np.array(classes, dtype=np.int64), np.array([self.color_map[c] for c in classes], dtype=np.int64)


def dominant_classes(patches: Sequence[np.ndarray], config: OracleConfig) -> np.ndarray:
    """Majority class of each patch after snapping every pixel to its nearest palette color.

    Ties go to the lower canonical index.
    """
    if len(patches) == 0:
        return np.zeros(0, dtype=np.int64)
    classes, colors = config.palette
    # |px - c|^2 ranks like |c|^2 - 2 px.c; exact in float64 for 8-bit values
    weights = -2.0 * colors.T.astype(np.float64)
    bias = (colors.astype(np.float64) ** 2).sum(axis=1)

    def nearest(px):
        return classes[np.argmin(px.reshape(-1, 3).astype(np.float64) @ weights + bias, axis=1)]

    arrays = [np.asarray(p)[..., :3] for p in patches]
    if len({a.shape for a in arrays}) == 1:
        labels = nearest(np.stack(arrays)).reshape(len(arrays), -1)
        offsets = labels + N_CLASSES * np.arange(len(arrays))[:, None]
        counts = np.bincount(offsets.ravel(), minlength=N_CLASSES * len(arrays)).reshape(len(arrays), N_CLASSES)
        return np.argmax(counts, axis=1).astype(np.int64)
    return np.array([np.argmax(np.bincount(nearest(a), minlength=N_CLASSES)) for a in arrays], dtype=np.int64)


def _oracle_vector(true_class: int, config: OracleConfig, draw_index: int) -> ProbabilityVector:
    if config.noise_rate > 0.0:
        rng = np.random.default_rng([int(config.seed) & (2**64 - 1), int(draw_index) & (2**64 - 1)])
        if rng.random() < config.noise_rate:
            wrong = [k for k in range(N_CLASSES) if k != true_class]
            target = wrong[int(rng.integers(len(wrong)))]
            lo, hi = 1 / 6, config.low_conf_max
            # uniform on (lo, hi]
            conf = hi - rng.random() * (hi - lo)
            if conf <= lo:
                conf = hi
            rest = (1.0 - conf) / (N_CLASSES - 1)
            return ProbabilityVector(tuple(conf if k == target else rest for k in range(N_CLASSES)))
    c = config.confidence
    rest = (1.0 - c) / (N_CLASSES - 1)
    return ProbabilityVector(tuple(c if k == true_class else rest for k in range(N_CLASSES)))


def oracle_classify(patch: np.ndarray, config: OracleConfig, draw_index: int) -> ProbabilityVector:
    """Answer for one patch; deterministic in (seed, draw_index, patch)."""
    true_class = int(dominant_classes([patch], config)[0])
    return _oracle_vector(true_class, config, draw_index)


class SyntheticOracle:
    kind = "oracle"

    def __init__(self, config: OracleConfig = OracleConfig()):
        self.config = config

    def classify(self, patches, draw_indices) -> list:
        truth = dominant_classes(patches, self.config)
        return [_oracle_vector(int(t), self.config, d) for t, d in zip(truth, draw_indices)]

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def encode_png(patch: np.ndarray) -> str:
    arr = np.asarray(patch)
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr[..., :3])).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as img:
        return np.asarray(img.convert("RGB"))


def validate_probs(raw, expected_len: int = N_CLASSES) -> ProbabilityVector:
    """Accept a worker vector, re-normalizing a sum error of at most 1e-6."""
    if not isinstance(raw, (list, tuple)) or len(raw) != expected_len:
        n = len(raw) if isinstance(raw, (list, tuple)) else type(raw).__name__
        raise ProtocolViolation(f"expected {expected_len} probabilities, got {n}")
    try:
        return ProbabilityVector.renormalized(raw)
    except (InvalidProbabilities, TypeError, ValueError) as err:
        raise ProtocolViolation(str(err)) from None


class ExternalWorker:
    """Client for a classifier subprocess speaking newline-delimited JSON."""

    kind = "worker"

    def __init__(self, command: Sequence[str], batch_size: int = 64, timeout: float = 60.0, env=None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not command:
            raise ValueError("worker command is empty")
        self.command = list(command)
        self.batch_size = int(batch_size)
        self.timeout = float(timeout)
        self.env = env
        self._proc = None
        self._lines: Optional[queue.Queue] = None
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
                env=self.env,
            )
        except OSError as err:
            raise WorkerFailed(f"could not start worker {self.command!r}: {err}") from None
        self._lines = queue.Queue()
        threading.Thread(target=self._pump_stdout, args=(self._proc.stdout, self._lines), daemon=True).start()
        threading.Thread(target=self._pump_stderr, args=(self._proc.stderr,), daemon=True).start()

    @staticmethod
    def _pump_stdout(stream, lines):
        for line in stream:
            lines.put(line)
        lines.put(None)

    @staticmethod
    def _pump_stderr(stream):
        for line in stream:
            log.warning("worker stderr: %s", line.rstrip("\n"))

    def classify(self, patches, draw_indices=None) -> list:
        with self._lock:
            if self._proc is None:
                self._start()
            out = []
            for start in range(0, len(patches), self.batch_size):
                out.extend(self._round_trip(patches[start:start + self.batch_size]))
            return out

    def _round_trip(self, patches) -> list:
        ids = [next(self._ids) for _ in patches]
        try:
            for rid, patch in zip(ids, patches):
                side = int(np.asarray(patch).shape[0])
                msg = {"id": rid, "side": side, "png_b64": encode_png(patch)}
                self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as err:
            raise WorkerFailed(f"worker closed its input: {err} (exit code {self._proc.poll()})") from None

        pending = set(ids)
        results = {}
        deadline = time.monotonic() + self.timeout
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise WorkerFailed(f"worker timed out after {self.timeout}s with {len(pending)} replies outstanding")
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                continue
            if line is None:
                code = self._proc.wait()
                raise WorkerFailed(f"worker exited with code {code} before answering {len(pending)} requests")
            try:
                reply = json.loads(line)
                rid = reply["id"]
                probs = reply["probs"]
            except (ValueError, KeyError, TypeError):
                raise WorkerFailed(f"malformed worker line: {line.rstrip()!r}") from None
            if rid not in pending:
                raise ProtocolViolation(f"worker answered unknown or duplicate id {rid!r}")
            results[rid] = validate_probs(probs)
            pending.discard(rid)
        return [results[rid] for rid in ids]

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def classify_batch(handle, patches: Sequence[np.ndarray], draw_indices: Optional[Sequence[int]] = None) -> list:
    """One validated :class:`ProbabilityVector` per patch, in input order."""
    if len(patches) == 0:
        return []
    sides = {np.asarray(p).shape[:2] for p in patches}
    if len(sides) != 1 or any(h != w for h, w in sides):
        raise ValueError(f"patches must be square and equally sized, got shapes {sorted(sides)}")
    if draw_indices is None:
        draw_indices = range(len(patches))
    vectors = handle.classify(patches, list(draw_indices))
    if len(vectors) != len(patches):
        raise ProtocolViolation(f"classifier returned {len(vectors)} vectors for {len(patches)} patches")
    out = []
    for v in vectors:
        out.append(validate_probs(list(v.p) if isinstance(v, ProbabilityVector) else v))
    return out


def handle_from_config(data: Optional[dict]):
    """Build a classifier from its JSON config (``{"kind": "oracle" | "worker", ...}``)."""
    data = dict(data or {"kind": "oracle"})
    kind = data.pop("kind", "oracle")
    if kind == "oracle":
        return SyntheticOracle(OracleConfig.from_json(data))
    if kind == "worker":
        command = data.get("command")
        if isinstance(command, str):
            command = command.split()
        return ExternalWorker(command, int(data.get("batch_size", 64)), float(data.get("timeout", 60.0)))
    raise ValueError(f"unknown classifier kind {kind!r}")
