"""Synthetic heterogeneous-node datasets, STSD file I/O, splitting and windowing."""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ArgumentError, DataFormatError, DataLengthError

logger = logging.getLogger(__name__)

STSD_MAGIC = b"STSD"
STSD_VERSION = 1
_HEADER = struct.Struct("<4sHIII")

PathLike = Union[str, Path]


@dataclass
class GraphSignalDataset:
    frames: np.ndarray  # (T, N, D) float64
    edges: list
    frame_interval_steps: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ArgumentError(f"frames must be (T, N, D), got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ArgumentError("frames contain NaN or infinite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.frames.shape[1]

    @property
    def num_features(self) -> int:
        return self.frames.shape[2]


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

_SHAPES = ("sine", "plateau", "skewed", "spiky")


def regime_waveform(theta: np.ndarray, shape: str) -> np.ndarray:
    """Periodic waveform with roughly unit amplitude for one regime shape."""
    if shape == "sine":
        return np.sin(theta)
    if shape == "plateau":
        return np.tanh(3.0 * np.sin(theta)) / np.tanh(3.0)
    if shape == "skewed":
        # fast rise, slow decay
        return (np.sin(theta) + 0.45 * np.sin(2 * theta) + 0.15 * np.sin(3 * theta)) / 1.25
    if shape == "spiky":
        return 2.0 * np.abs(np.sin(0.5 * theta)) ** 3 - 0.8
    raise ArgumentError(f"unknown waveform shape {shape!r}")


@dataclass
class RegimeSpec:
    period: float
    phase: float
    amplitude: float
    level: float
    shape: str

    def signal(self, t: np.ndarray, phase_offset: float = 0.0, gain: float = 1.0) -> np.ndarray:
        theta = 2 * np.pi * t / self.period + self.phase + phase_offset
        return self.level + gain * self.amplitude * regime_waveform(theta, self.shape)


def make_regimes(num_regimes: int, rng: np.random.Generator) -> list:
    periods = rng.permutation(np.linspace(24.0, 96.0, num_regimes))
    regimes = []
    for g in range(num_regimes):
        regimes.append(RegimeSpec(
            period=float(periods[g]),
            phase=float(rng.uniform(0, 2 * np.pi)),
            amplitude=float(rng.uniform(0.7, 1.5)),
            level=float(rng.uniform(4.0, 6.0)),
            shape=_SHAPES[g % len(_SHAPES)],
        ))
    return regimes


def generate_synthetic(num_nodes: int = 20, num_frames: int = 4000, num_regimes: int = 4,
                       noise_std: float = 0.1, seed: int = 7, phase_jitter: float = 0.6,
                       gain_jitter: float = 0.25, extra_edges: int = 1) -> GraphSignalDataset:
    """Univariate graph signal whose nodes follow distinct periodic regimes.

    Nodes are dealt to regimes round-robin.  Each node also gets a private
    phase offset (uniform in ``±phase_jitter`` radians) and amplitude gain,
    so same-regime nodes are similar but not identical.  Edges form a ring
    inside every regime plus ``extra_edges`` random chords per node.
    Values are rounded to float32 so a save/load round trip is exact.
    """
    if num_regimes < 2 or num_nodes < num_regimes:
        raise ArgumentError(f"need nodes >= regimes >= 2, got nodes={num_nodes}, regimes={num_regimes}")
    if num_frames < 200:
        raise ArgumentError(f"need at least 200 frames, got {num_frames}")
    if noise_std < 0:
        raise ArgumentError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    regimes = make_regimes(num_regimes, rng)
    assignment = np.arange(num_nodes) % num_regimes
    offsets = rng.uniform(-phase_jitter, phase_jitter, size=num_nodes) if phase_jitter > 0 else np.zeros(num_nodes)
    gains = 1.0 + rng.uniform(-gain_jitter, gain_jitter, size=num_nodes) if gain_jitter > 0 else np.ones(num_nodes)
    t = np.arange(num_frames, dtype=np.float64)
    frames = np.empty((num_frames, num_nodes, 1))
    for i in range(num_nodes):
        frames[:, i, 0] = regimes[assignment[i]].signal(t, offsets[i], gains[i])
    if noise_std > 0:
        frames += rng.normal(0.0, noise_std, size=frames.shape)
    frames = frames.astype(np.float32).astype(np.float64)

    edges = []
    for g in range(num_regimes):
        members = np.flatnonzero(assignment == g)
        m = len(members)
        for j in range(m if m > 2 else m - 1):
            a, b = int(members[j]), int(members[(j + 1) % m])
            edges.append((a, b, 1.0))
            edges.append((b, a, 1.0))
        for a in members:
            others = members[members != a]
            for b in rng.choice(others, size=min(extra_edges, len(others)), replace=False):
                edges.append((int(a), int(b), round(float(rng.uniform(0.3, 1.0)), 6)))

    spec = {
        "generator": "regime-periodic", "nodes": num_nodes, "frames": num_frames,
        "regimes": num_regimes, "noise": noise_std, "seed": seed,
        "phase_jitter": phase_jitter, "gain_jitter": gain_jitter, "extra_edges": extra_edges,
    }
    metadata = {"name": f"synthetic-n{num_nodes}-t{num_frames}-g{num_regimes}-s{seed}", "spec": spec,
                "assignment": assignment.tolist()}
    return GraphSignalDataset(frames, edges, 1, metadata)


# ---------------------------------------------------------------------------
# STSD files
# ---------------------------------------------------------------------------

def _sidecars(path: Path) -> tuple:
    stem = path.with_suffix("")
    return Path(f"{stem}.adj.txt"), Path(f"{stem}.meta.json")


def resolve_dataset_path(path: PathLike) -> Path:
    """A directory, or a path without a suffix, means ``<dir>/dataset.stsd``."""
    path = Path(path)
    if path.is_dir() or not path.suffix:
        return path / "dataset.stsd"
    return path


def save_dataset(ds: GraphSignalDataset, path: PathLike) -> Path:
    path = resolve_dataset_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t_len, n, d = ds.frames.shape
    payload = ds.frames.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(STSD_MAGIC, STSD_VERSION, t_len, n, d))
        fh.write(payload)
    adj_path, meta_path = _sidecars(path)
    with open(adj_path, "w") as fh:
        for src, dst, w in ds.edges:
            fh.write(f"{int(src)},{int(dst)},{float(w)!r}\n")
    meta = dict(ds.metadata)
    meta["frame_interval_steps"] = ds.frame_interval_steps
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path: PathLike) -> GraphSignalDataset:
    path = resolve_dataset_path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataLengthError(f"{path}: {len(raw)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, t_len, n, d = _HEADER.unpack_from(raw)
    if magic != STSD_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {STSD_MAGIC!r}")
    if version != STSD_VERSION:
        raise DataFormatError(f"{path}: unsupported STSD version {version}")
    expected = t_len * n * d * 4
    body = len(raw) - _HEADER.size
    if body != expected:
        raise DataLengthError(f"{path}: payload has {body} bytes, header implies {expected}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(t_len, n, d).astype(np.float64)

    adj_path, meta_path = _sidecars(path)
    edges = []
    if adj_path.exists():
        for lineno, line in enumerate(adj_path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                src, dst, w = line.split(",")
                edges.append((int(src), int(dst), float(w)))
            except ValueError as exc:
                raise DataFormatError(f"{adj_path}:{lineno}: expected 'src,dst,weight', got {line!r}") from exc
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    interval = int(meta.pop("frame_interval_steps", 1))
    return GraphSignalDataset(frames, edges, interval, meta)


# ---------------------------------------------------------------------------
# splitting, normalization, windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        ratios = (self.train, self.val, self.test)
        if min(ratios) <= 0:
            raise ArgumentError(f"split ratios must be positive, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ArgumentError(f"split ratios must sum to 1, got {sum(ratios)!r}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Parse ``"6:2:2"`` or ``"0.7,0.1,0.2"``."""
        parts = [float(p) for p in text.replace(",", ":").split(":")]
        if len(parts) != 3:
            raise ArgumentError(f"split needs three parts, got {text!r}")
        total = sum(parts)
        return cls(*(p / total for p in parts))


def chronological_split(num_frames: int, spec: SplitSpec) -> tuple:
    """Return ``(train, val, test)`` slices; train and val sizes are floored."""
    n_train = int(np.floor(num_frames * spec.train + 1e-9))
    n_val = int(np.floor(num_frames * spec.val + 1e-9))
    n_test = num_frames - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ArgumentError(f"split of {num_frames} frames leaves an empty partition ({n_train}/{n_val}/{n_test})")
    return slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, num_frames)


@dataclass
class ZScoreStats:
    mean: np.ndarray  # (D,)
    std: np.ndarray   # (D,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def zscore_fit(train_frames: np.ndarray) -> ZScoreStats:
    flat = np.asarray(train_frames, dtype=np.float64).reshape(-1, train_frames.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std == 0):
        warnings.warn("constant feature channel in training frames; clamping its std to 1", RuntimeWarning,
                      stacklevel=2)
        std = np.where(std == 0, 1.0, std)
    return ZScoreStats(mean, std)


def zscore_apply(stats: ZScoreStats, x: np.ndarray) -> np.ndarray:
    return stats.apply(x)


def zscore_invert(stats: ZScoreStats, z: np.ndarray) -> np.ndarray:
    return stats.invert(z)


@dataclass
class WindowSet:
    inputs: np.ndarray   # (W, s, N, D)
    targets: np.ndarray  # (W, h, N, D)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def s(self) -> int:
        return self.inputs.shape[1]

    @property
    def h(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.inputs[idx], self.targets[idx])


def make_windows(frames: np.ndarray, s: int = 12, h: int = 12) -> WindowSet:
    """All consecutive (history, future) pairs inside one partition."""
    frames = np.asarray(frames, dtype=np.float64)
    t_len = frames.shape[0]
    if s < 1 or h < 1:
        raise ArgumentError(f"window lengths must be positive, got s={s}, h={h}")
    if t_len < s + h:
        raise ArgumentError(f"partition of {t_len} frames is shorter than s+h = {s + h}")
    count = t_len - s - h + 1
    view = np.lib.stride_tricks.sliding_window_view(frames, s + h, axis=0)  # (W, N, D, s+h)
    view = np.moveaxis(view, -1, 1)[:count]
    return WindowSet(np.ascontiguousarray(view[:, :s]), np.ascontiguousarray(view[:, s:]))


@dataclass
class PreparedData:
    """Normalized windows for the three partitions plus the fitted statistics."""

    train: WindowSet
    val: WindowSet
    test: WindowSet
    stats: ZScoreStats
    num_nodes: int
    edges: list


def prepare(ds: GraphSignalDataset, split: SplitSpec, s: int = 12, h: int = 12) -> PreparedData:
    tr, va, te = chronological_split(ds.num_frames, split)
    stats = zscore_fit(ds.frames[tr])
    z = stats.apply(ds.frames)
    return PreparedData(make_windows(z[tr], s, h), make_windows(z[va], s, h), make_windows(z[te], s, h),
                        stats, ds.num_nodes, list(ds.edges))
