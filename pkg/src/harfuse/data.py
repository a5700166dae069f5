"""Labeled skeleton/IMU sequences: containers, JSONL I/O, resampling,
batching and a synthetic motion generator."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .rng import SplitMix64


class DataValidationError(ValueError):
    """A dataset, catalog or topology file violates its schema."""


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class LabelCatalog:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise DataValidationError(f"a catalog needs at least 2 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise DataValidationError(f"duplicate class names in {list(self.names)}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> dict:
        return {"classes": list(self.names)}

    @classmethod
    def from_json(cls, obj: dict) -> "LabelCatalog":
        if set(obj) != {"classes"} or not isinstance(obj["classes"], list):
            raise DataValidationError('catalog must be {"classes": [...]}')
        return cls(tuple(str(c) for c in obj["classes"]))


@dataclass(frozen=True)
class SkeletonTopology:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    pooling_map: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(self, "pooling_map", tuple(int(c) for c in self.pooling_map))
        J = self.joint_count
        if J < 1:
            raise DataValidationError(f"joint_count must be positive, got {J}")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < J and 0 <= j < J):
                raise DataValidationError(f"edge ({i}, {j}) out of range for {J} joints")
            if i == j:
                raise DataValidationError(f"self-edge on joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataValidationError(f"duplicate edge {key}")
            seen.add(key)
        if len(self.pooling_map) != J:
            raise DataValidationError(f"pooling_map has {len(self.pooling_map)} entries for {J} joints")
        clusters = set(self.pooling_map)
        n = self.pooled_count
        if J > 1 and n >= J:
            raise DataValidationError(f"pooling must reduce the graph: {n} clusters for {J} joints")
        if clusters != set(range(n)) or min(clusters) < 0:
            raise DataValidationError(f"pooling_map must cover every cluster in [0, {n})")

    @property
    def pooled_count(self) -> int:
        return max(self.pooling_map) + 1

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "edges": [list(e) for e in self.edges],
            "pooling_map": list(self.pooling_map),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonTopology":
        if set(obj) != {"joint_count", "edges", "pooling_map"}:
            raise DataValidationError(f"topology keys must be joint_count, edges, pooling_map; got {sorted(obj)}")
        return cls(int(obj["joint_count"]), tuple(tuple(e) for e in obj["edges"]), tuple(obj["pooling_map"]))


def default_topology() -> SkeletonTopology:
    """8-joint body: hip-chest spine, two 2-joint arms, two legs.

    Joints: 0 hip, 1 chest, 2/3 left shoulder/hand, 4/5 right
    shoulder/hand, 6/7 left/right knee.  Pooling collapses the pairs
    (0,1) (2,3) (4,5) (6,7) into torso, left arm, right arm, legs.
    """
    return SkeletonTopology(
        joint_count=8,
        edges=((0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (0, 6), (0, 7)),
        pooling_map=(0, 0, 1, 1, 2, 2, 3, 3),
    )


@dataclass
class SkeletonSequence:
    id: str
    sampling_rate_hz: float
    frames: np.ndarray  # (T, J, C)
    labels: np.ndarray  # (T,) int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 3:
            raise DataValidationError(f"{self.id}: frames must be T x J x C, got shape {self.frames.shape}")
        if self.labels.shape != (self.frames.shape[0],):
            raise DataValidationError(
                f"{self.id}: {self.labels.shape[0]} labels for {self.frames.shape[0]} frames"
            )
        if not self.sampling_rate_hz > 0 or not math.isfinite(self.sampling_rate_hz):
            raise DataValidationError(f"{self.id}: sampling rate must be positive, got {self.sampling_rate_hz}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1]

    @property
    def channels(self) -> int:
        return self.frames.shape[2]

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.id == other.id
            and self.sampling_rate_hz == other.sampling_rate_hz
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class DatasetSplit:
    train: list[SkeletonSequence]
    test: list[SkeletonSequence]
    seed: int = 0

    def __post_init__(self):
        overlap = {s.id for s in self.train} & {s.id for s in self.test}
        if overlap:
            raise DataValidationError(f"train and test share ids: {sorted(overlap)[:5]}")


# ---------------------------------------------------------------------------
# files


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sequence_from_obj(obj, catalog: LabelCatalog) -> SkeletonSequence:
    if not isinstance(obj, dict) or set(obj) != {"id", "sampling_rate_hz", "frames", "labels"}:
        got = sorted(obj) if isinstance(obj, dict) else type(obj).__name__
        raise DataValidationError(f"expected keys id, sampling_rate_hz, frames, labels; got {got}")
    rate = obj["sampling_rate_hz"]
    if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not rate > 0:
        raise DataValidationError(f"nonpositive sampling rate {rate!r}")
    frames = obj["frames"]
    if not isinstance(frames, list) or not frames:
        raise DataValidationError("frames must be a nonempty list")
    try:
        arr = np.array(frames, dtype=np.float64)
    except ValueError as exc:
        raise DataValidationError(f"ragged frame arrays: {exc}") from None
    if arr.ndim != 3:
        raise DataValidationError(f"ragged frame arrays: expected T x J x C nesting, got {arr.ndim} levels")
    if not np.all(np.isfinite(arr)):
        raise DataValidationError("frames contain non-finite numbers")
    labels = obj["labels"]
    if not isinstance(labels, list):
        raise DataValidationError("labels must be a list of class names")
    idx = []
    for name in labels:
        if name not in catalog.names:
            raise DataValidationError(f"unknown label {name!r}")
        idx.append(catalog.index(name))
    return SkeletonSequence(str(obj["id"]), float(rate), arr, np.array(idx, dtype=np.int64))


def load_jsonl(path, catalog: LabelCatalog) -> list[SkeletonSequence]:
    """Read sequences; any invalid line rejects the whole file."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                seq = _sequence_from_obj(json.loads(line), catalog)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            except DataValidationError as exc:
                raise DataValidationError(f"{path}: line {lineno}: {exc}") from None
            out.append(seq)
    return out


def sequence_to_obj(seq: SkeletonSequence, catalog: LabelCatalog) -> dict:
    return {
        "id": seq.id,
        "sampling_rate_hz": seq.sampling_rate_hz,
        "frames": seq.frames.tolist(),
        "labels": [catalog.names[i] for i in seq.labels],
    }


def write_jsonl(path, seqs: Sequence[SkeletonSequence], catalog: LabelCatalog) -> None:
    lines = [json.dumps(sequence_to_obj(s, catalog), separators=(",", ":")) for s in seqs]
    _atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def load_catalog(path) -> LabelCatalog:
    with open(path, encoding="utf-8") as fh:
        return LabelCatalog.from_json(json.load(fh))


def write_catalog(path, catalog: LabelCatalog) -> None:
    _atomic_write_text(Path(path), json.dumps(catalog.to_json(), indent=2) + "\n")


def load_topology(path) -> SkeletonTopology:
    with open(path, encoding="utf-8") as fh:
        return SkeletonTopology.from_json(json.load(fh))


def write_topology(path, topology: SkeletonTopology) -> None:
    _atomic_write_text(Path(path), json.dumps(topology.to_json(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# resampling and batching


def resample(seq: SkeletonSequence, target_hz: float) -> SkeletonSequence:
    """Linear re-gridding of coordinates; labels from the nearest source frame.

    The new grid has ``round(T * target / source)`` frames (at least 1)
    spread evenly over the original index range, so the first and last
    frames are kept.  Halves round up.
    """
    if not target_hz > 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == seq.sampling_rate_hz:
        return SkeletonSequence(seq.id, seq.sampling_rate_hz, seq.frames.copy(), seq.labels.copy())
    T = seq.T
    new_T = max(1, int(math.floor(T * target_hz / seq.sampling_rate_hz + 0.5)))
    if new_T == 1 or T == 1:
        pos = np.zeros(new_T)
    else:
        pos = np.arange(new_T) * ((T - 1) / (new_T - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, T - 1)
    hi = np.minimum(lo + 1, T - 1)
    frac = (pos - lo)[:, None, None]
    src = seq.frames.astype(np.float64)
    frames = src[lo] * (1.0 - frac) + src[hi] * frac
    nearest = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, T - 1)
    return SkeletonSequence(seq.id, float(target_hz), frames, seq.labels[nearest])


def iter_batches(
    seqs: Sequence[SkeletonSequence], batch_size: int, seed: int, epoch: int
) -> Iterator[list[SkeletonSequence]]:
    """Shuffled batches; order depends only on (seed, epoch).  Last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = SplitMix64.derive(seed, 0xBA7C, epoch).permutation(len(seqs))
    for start in range(0, len(order), batch_size):
        yield [seqs[i] for i in order[start:start + batch_size]]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic motion task.

    Class ``k`` oscillates at ``0.5 + 0.25 k`` Hz and every segment
    starts at a random phase.  Joint phase offsets are fixed per
    (class, joint); with ``class_phase=False`` they are shared by all
    classes, leaving the frequency as the only class cue (a harder task).
    """

    K: int = 5
    J: int = 8
    C: int = 3
    T: int = 100
    per_class_count: int = 40
    noise_std: float = 0.05
    seed: int = 0
    sampling_rate_hz: float = 10.0
    train_fraction: float = 0.8
    class_phase: bool = True

    def __post_init__(self):
        if self.K < 2:
            raise DataValidationError(f"K must be >= 2, got {self.K}")
        if self.per_class_count < 2:
            raise DataValidationError(f"per_class_count must be >= 2, got {self.per_class_count}")
        if self.J < 1 or self.C < 1:
            raise DataValidationError("J and C must be positive")
        if self.T < 4:
            raise DataValidationError(f"T must be >= 4 to hold class transitions, got {self.T}")
        if self.noise_std < 0 or not self.sampling_rate_hz > 0:
            raise DataValidationError("noise_std must be >= 0 and sampling_rate_hz > 0")
        if not 0 < self.train_fraction < 1:
            raise DataValidationError("train_fraction must lie in (0, 1)")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise DataValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def class_frequency(k: int) -> float:
    return 0.5 + 0.25 * k


def _segment_lengths(T: int, count: int, rng: SplitMix64) -> list[int]:
    weights = [0.5 + rng.random() for _ in range(count)]
    total = sum(weights)
    lengths = [max(1, int(T * w / total)) for w in weights]
    lengths[-1] = T - sum(lengths[:-1])
    return lengths


def generate_synthetic(
    spec: SyntheticSpec, topology: SkeletonTopology | None = None
) -> tuple[DatasetSplit, LabelCatalog]:
    """Deterministic multi-segment sinusoid dataset with a stratified split.

    Sequence ``n`` opens with class ``n mod K``; 1-3 further segments
    follow, each with a class different from its predecessor.  Per class,
    ``floor(train_fraction * per_class_count)`` sequences go to train.
    """
    if topology is not None and topology.joint_count != spec.J:
        raise DataValidationError(f"topology has {topology.joint_count} joints, spec J={spec.J}")
    catalog = LabelCatalog(tuple(f"class_{k}" for k in range(spec.K)))
    phase_rng = SplitMix64.derive(spec.seed, 0x5EED, 0)
    joint_phase = phase_rng.uniform(0.0, 2.0 * np.pi, (spec.K, spec.J))
    if not spec.class_phase:
        joint_phase[:] = joint_phase[0]
    channel_phase = np.pi * np.arange(spec.C) / spec.C
    t = np.arange(spec.T, dtype=np.float64) / spec.sampling_rate_hz

    total = spec.K * spec.per_class_count
    seqs = []
    for n in range(total):
        rng = SplitMix64.derive(spec.seed, 0x5E0, n)
        count = 2 + rng.integer(3)
        classes = [n % spec.K]
        for _ in range(count - 1):
            nxt = rng.integer(spec.K - 1)
            classes.append(nxt if nxt < classes[-1] else nxt + 1)
        lengths = _segment_lengths(spec.T, count, rng)
        frames = np.empty((spec.T, spec.J, spec.C), dtype=np.float64)
        labels = np.empty(spec.T, dtype=np.int64)
        start = 0
        for k, length in zip(classes, lengths):
            seg = slice(start, start + length)
            offset = rng.uniform(0.0, 2.0 * np.pi)
            angle = (
                2.0 * np.pi * class_frequency(k) * t[seg][:, None, None]
                + offset
                + joint_phase[k][None, :, None]
                + channel_phase[None, None, :]
            )
            frames[seg] = np.sin(angle)
            labels[seg] = k
            start += length
        if spec.noise_std > 0:
            frames += rng.normal(frames.shape, std=spec.noise_std)
        seqs.append(SkeletonSequence(f"syn{spec.seed}_{n:05d}", spec.sampling_rate_hz, frames, labels))

    n_train = int(spec.train_fraction * spec.per_class_count)
    train, test = [], []
    for n, seq in enumerate(seqs):
        (train if n // spec.K < n_train else test).append(seq)
    return DatasetSplit(train, test, spec.seed), catalog
