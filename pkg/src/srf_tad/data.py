"""Synthetic sequence generation, sliding windows, and dataset file I/O.

Sequences are white-noise feature maps in which each action instance
overwrites its span with a class-specific low-frequency sinusoid on a
class-specific channel group. Durations span roughly one to a dozen
post-stride locations, so detecting them exercises several receptive-field
scales. Generation is a pure function of the config: per-sequence
generators are seeded with config.seed XOR the sequence index.

On-disk formats
  features  binary .srft: magic "SRFT", u16 version, u32 channels, u32
            length, then row-major little-endian float32 payload (memory
            side is float64, quantized to float32 at generation time so
            round-trips are bit-exact)
  annotations  JSON list of {video_id, length_frames, fps, instances:
            [{start, end, label}]} with frames as the unit
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationError, FeatureFileError, PackingError
from .targets import ActionInstance
from .tensor import Tensor

FEATURE_MAGIC = b"SRFT"
FEATURE_VERSION = 1
DEFAULT_FPS = 25.0
MAX_PACKING_ATTEMPTS = 1000
WINDOW_RETENTION = 0.5  # clipped instances keeping less than this fraction are dropped


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 3
    n_sequences: int = 10
    seq_len_frames: int = 768
    feature_dim: int = 16
    duration_range: tuple[int, int] = (16, 192)
    instances_per_sequence: tuple[int, int] = (1, 4)
    noise_std: float = 0.1
    seed: int = 0
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        lo, hi = self.duration_range
        if lo < 2 or hi < lo:
            raise ValueError(f"duration_range must satisfy 2 <= min <= max, got {self.duration_range}")
        if hi > self.seq_len_frames:
            raise ValueError(f"max duration {hi} exceeds sequence length {self.seq_len_frames}")
        if self.feature_dim < self.n_classes:
            raise ValueError(f"feature_dim {self.feature_dim} must cover {self.n_classes} channel groups")
        ilo, ihi = self.instances_per_sequence
        if ilo < 0 or ihi < ilo:
            raise ValueError(f"bad instances_per_sequence {self.instances_per_sequence}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_range"] = list(self.duration_range)
        d["instances_per_sequence"] = list(self.instances_per_sequence)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "duration_range" in d:
            d["duration_range"] = tuple(d["duration_range"])
        if "instances_per_sequence" in d:
            d["instances_per_sequence"] = tuple(d["instances_per_sequence"])
        return cls(**d)


@dataclass
class AnnotatedSequence:
    video_id: str
    features: Tensor
    instances: list[ActionInstance]
    fps: float = DEFAULT_FPS

    @property
    def length(self) -> int:
        return self.features.shape[1]


def class_pattern(label: int, duration: int, feature_dim: int, n_classes: int) -> tuple[np.ndarray, slice]:
    """Deterministic per-class signature: a sinusoid phase-locked to the
    instance start, on the class's channel group. Returns (pattern rows,
    channel slice)."""
    group = feature_dim // n_classes
    chans = slice((label - 1) * group, label * group)
    period = 8.0 * (label + 1)
    t = np.arange(duration, dtype=np.float64)
    wave = np.sin(2.0 * np.pi * t / period)
    return np.broadcast_to(wave, (group, duration)).copy(), chans


def _place_instances(cfg: SynthConfig, rng: np.random.Generator) -> list[ActionInstance]:
    lo, hi = cfg.instances_per_sequence
    n_wanted = int(rng.integers(lo, hi + 1))
    placed: list[tuple[int, int]] = []
    labels: list[int] = []
    attempts = 0
    while len(placed) < n_wanted:
        if attempts >= MAX_PACKING_ATTEMPTS:
            raise PackingError(
                f"could not place {n_wanted} non-overlapping instances in "
                f"{cfg.seq_len_frames} frames after {MAX_PACKING_ATTEMPTS} attempts"
            )
        attempts += 1
        duration = int(rng.integers(cfg.duration_range[0], cfg.duration_range[1] + 1))
        start = int(rng.integers(0, cfg.seq_len_frames - duration + 1))
        end = start + duration
        if any(start < e and s < end for s, e in placed):
            continue
        placed.append((start, end))
        labels.append(int(rng.integers(1, cfg.n_classes + 1)))
    instances = [
        ActionInstance(float(s), float(e), lab)
        for (s, e), lab in sorted(zip(placed, labels), key=lambda p: p[0][0])
    ]
    return instances


def generate_sequence(cfg: SynthConfig, index: int) -> AnnotatedSequence:
    rng = np.random.default_rng(cfg.seed ^ index)
    instances = _place_instances(cfg, rng)
    features = rng.normal(0.0, cfg.noise_std, (cfg.feature_dim, cfg.seq_len_frames))
    for inst in instances:
        start, end = int(inst.start), int(inst.end)
        pattern, chans = class_pattern(inst.label, end - start, cfg.feature_dim, cfg.n_classes)
        span = pattern
        if cfg.noise_std > 0.0:
            span = pattern + rng.normal(0.0, cfg.noise_std, pattern.shape)
        features[chans, start:end] = span
    # quantize to the on-disk precision so save/load is an identity
    features = features.astype(np.float32).astype(np.float64)
    return AnnotatedSequence(f"seq_{index:05d}", Tensor(features), instances, cfg.fps)


def generate_dataset(cfg: SynthConfig) -> list[AnnotatedSequence]:
    """All sequences for a config; bit-reproducible from cfg alone."""
    return [generate_sequence(cfg, i) for i in range(cfg.n_sequences)]


@dataclass
class Window:
    offset: int
    features: np.ndarray
    instances: list[ActionInstance]


def sliding_windows(seq: AnnotatedSequence, window_len: int, window_stride: int) -> list[Window]:
    """Cut a sequence into fixed-length windows covering every frame.

    Offsets advance by the stride; a final window is pinned to the sequence
    end when the stride pattern would leave a tail uncovered. Instances are
    clipped to each window and dropped from it when less than half their
    duration survives the clip.
    """
    length = seq.length
    if window_len > length:
        raise ValueError(f"window length {window_len} exceeds sequence length {length}")
    if window_stride < 1:
        raise ValueError(f"window stride must be >= 1, got {window_stride}")
    offsets = list(range(0, length - window_len + 1, window_stride))
    if offsets[-1] != length - window_len:
        offsets.append(length - window_len)
    windows = []
    for off in offsets:
        clipped = []
        for inst in seq.instances:
            cs = max(inst.start, float(off))
            ce = min(inst.end, float(off + window_len))
            if ce - cs >= WINDOW_RETENTION * inst.duration:
                clipped.append(ActionInstance(cs - off, ce - off, inst.label))
        windows.append(Window(off, seq.features.data[:, off:off + window_len], clipped))
    return windows


# -- feature files ---------------------------------------------------------

def write_features(path: str | Path, values: Tensor | np.ndarray) -> None:
    data = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if data.ndim != 2:
        raise FeatureFileError(f"features must be 2-D (channels x length), got shape {data.shape}")
    channels, length = data.shape
    payload = data.astype("<f4").tobytes(order="C")
    header = FEATURE_MAGIC + struct.pack("<HII", FEATURE_VERSION, channels, length)
    Path(path).write_bytes(header + payload)


def read_features(path: str | Path) -> Tensor:
    raw = Path(path).read_bytes()
    head_len = len(FEATURE_MAGIC) + struct.calcsize("<HII")
    if len(raw) < head_len:
        raise FeatureFileError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {raw[:4]!r}")
    version, channels, length = struct.unpack("<HII", raw[4:head_len])
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    expected = channels * length * 4
    body = raw[head_len:]
    if len(body) != expected:
        raise FeatureFileError(f"{path}: payload has {len(body)} bytes, header promises {expected}")
    data = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(channels, length)
    return Tensor(data)


# -- annotation files --------------------------------------------------------

def write_annotations(path: str | Path, sequences: list[AnnotatedSequence]) -> None:
    records = [
        {
            "video_id": seq.video_id,
            "length_frames": seq.length,
            "fps": seq.fps,
            "instances": [
                {"start": inst.start, "end": inst.end, "label": inst.label}
                for inst in seq.instances
            ],
        }
        for seq in sequences
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


@dataclass
class VideoAnnotation:
    video_id: str
    length_frames: int
    fps: float
    instances: list[ActionInstance]


def read_annotations(path: str | Path) -> list[VideoAnnotation]:
    text = Path(path).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(records, list):
        raise AnnotationError(f"{path}: expected a JSON list of video records")
    out = []
    for rec in records:
        try:
            instances = [
                ActionInstance(float(i["start"]), float(i["end"]), int(i["label"]))
                for i in rec["instances"]
            ]
            out.append(VideoAnnotation(str(rec["video_id"]), int(rec["length_frames"]),
                                       float(rec.get("fps", DEFAULT_FPS)), instances))
        except (KeyError, TypeError) as exc:
            raise AnnotationError(f"{path}: record {rec.get('video_id', '?')}: missing field {exc}") from exc
        except ValueError as exc:
            raise AnnotationError(f"{path}: record {rec.get('video_id', '?')}: {exc}") from exc
    return out


# -- dataset directories -----------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(directory: str | Path, sequences: list[AnnotatedSequence], cfg: SynthConfig) -> None:
    directory = Path(directory)
    feat_dir = directory / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for seq in sequences:
        write_features(feat_dir / f"{seq.video_id}.srft", seq.features)
    write_annotations(directory / "annotations.json", sequences)
    files = sorted(
        p.relative_to(directory).as_posix()
        for p in [directory / "annotations.json", *feat_dir.iterdir()]
    )
    manifest = {
        "config": cfg.to_dict(),
        "n_sequences": len(sequences),
        "files": {rel: _sha256(directory / rel) for rel in files},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: str | Path) -> list[AnnotatedSequence]:
    directory = Path(directory)
    annotations = read_annotations(directory / "annotations.json")
    sequences = []
    for ann in annotations:
        features = read_features(directory / "features" / f"{ann.video_id}.srft")
        if features.shape[1] != ann.length_frames:
            raise FeatureFileError(
                f"{ann.video_id}: feature length {features.shape[1]} != annotated {ann.length_frames}"
            )
        sequences.append(AnnotatedSequence(ann.video_id, features, ann.instances, ann.fps))
    return sequences
