"""Audio ingestion: WAV files, cycle annotations, manifests, synthesis.

File conventions follow the respiratory-sound corpus layout: each recording
is a WAV plus a sibling .txt annotation with one breathing cycle per row
(start_s end_s crackle wheeze). Manifests are tab-separated with one cycle
per row: recording_id, cycle_index, label, split, path.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .rng import stream


class AudioIoError(Exception):
    """Base class for ingestion failures."""


class MalformedWavError(AudioIoError):
    """Not a parseable RIFF/WAVE container."""


class UnsupportedWavError(AudioIoError):
    """Valid container but a codec or bit depth outside PCM16 / float32."""


class EmptyWavError(AudioIoError):
    """A WAV whose data chunk holds zero samples."""


class AnnotationError(AudioIoError):
    """Bad cycle-annotation row."""


# --------------------------------------------------------------------------
# Core types
# --------------------------------------------------------------------------

class ClassLabel(IntEnum):
    NORMAL = 0
    CRACKLE = 1
    WHEEZE = 2
    BOTH = 3

    @classmethod
    def from_flags(cls, crackle: bool, wheeze: bool) -> "ClassLabel":
        return cls((1 if crackle else 0) + (2 if wheeze else 0))

    @property
    def crackle(self) -> bool:
        return bool(self.value & 1)

    @property
    def wheeze(self) -> bool:
        return bool(self.value & 2)


@dataclass
class AudioClip:
    samples: np.ndarray  # mono float64 in [-1, 1]
    sample_rate: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class CycleAnnotation:
    start_s: float
    end_s: float
    crackle: bool
    wheeze: bool

    @property
    def label(self) -> ClassLabel:
        return ClassLabel.from_flags(self.crackle, self.wheeze)


@dataclass
class LabeledCycle:
    clip: AudioClip
    label: ClassLabel
    recording_id: str
    cycle_index: int


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    cycle_index: int
    label: ClassLabel
    split: str  # "train" | "test"
    path: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        split_of: dict[str, str] = {}
        for e in self.entries:
            key = (e.recording_id, e.cycle_index)
            if key in seen:
                raise ValueError(f"duplicate manifest entry {key}")
            seen.add(key)
            if e.split not in ("train", "test"):
                raise ValueError(f"bad split {e.split!r} for {e.recording_id}")
            prev = split_of.setdefault(e.recording_id, e.split)
            if prev != e.split:
                raise ValueError(f"recording {e.recording_id} appears in both splits")

    def recordings(self) -> list[str]:
        out, seen = [], set()
        for e in self.entries:
            if e.recording_id not in seen:
                seen.add(e.recording_id)
                out.append(e.recording_id)
        return out

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def write(self, path: str | Path) -> None:
        path = Path(path)
        lines = []
        for e in self.entries:
            p = e.path
            try:
                p = os.path.relpath(p, path.parent)
            except ValueError:
                pass
            lines.append(f"{e.recording_id}\t{e.cycle_index}\t{int(e.label)}\t{e.split}\t{p}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{ln}: expected 5 tab-separated fields")
            rec, idx, label, split, p = parts
            if not os.path.isabs(p):
                p = str((path.parent / p).resolve())
            entries.append(ManifestEntry(rec, int(idx), ClassLabel(int(label)), split, p))
        return cls(entries)


# --------------------------------------------------------------------------
# WAV reading / writing
# --------------------------------------------------------------------------

def read_wav(path: str | Path) -> AudioClip:
    """Parse a RIFF/WAVE file: PCM 16-bit or IEEE float 32-bit, any channel
    count. Channels are averaged to mono; integer PCM is scaled by 1/32768."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: truncated chunk {cid!r}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise MalformedWavError(f"{path}: fmt chunk too short")
    audio_format, n_channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if n_channels < 1 or sample_rate < 1:
        raise MalformedWavError(f"{path}: bad channel count or sample rate")

    if audio_format == 1 and bits == 16:
        frame = 2 * n_channels
        if len(data) % frame:
            raise MalformedWavError(f"{path}: data size not a whole number of frames")
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        frame = 4 * n_channels
        if len(data) % frame:
            raise MalformedWavError(f"{path}: data size not a whole number of frames")
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
        if not np.isfinite(samples).all():
            raise MalformedWavError(f"{path}: non-finite float samples")
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise UnsupportedWavError(
            f"{path}: format {audio_format} / {bits}-bit unsupported (PCM16 or float32 only)")

    if samples.size == 0:
        raise EmptyWavError(f"{path}: zero samples")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(sample_rate))


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int,
              fmt: str = "pcm16") -> None:
    """Mono writer used by the synthesizer; clips to [-1, 1] first."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if fmt == "pcm16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = pcm.tobytes()
        audio_format, bits = 1, 16
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, 1, sample_rate, sample_rate * block, block, bits,
        b"data", len(payload))
    Path(path).write_bytes(header + payload)


# --------------------------------------------------------------------------
# Annotations and cycle slicing
# --------------------------------------------------------------------------

def parse_annotations(text: str) -> list[CycleAnnotation]:
    """One cycle per whitespace-separated row: start_s end_s crackle wheeze."""
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise AnnotationError(f"row {ln}: expected 4 fields, got {len(parts)}")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise AnnotationError(f"row {ln}: non-numeric time field") from exc
        if parts[2] not in ("0", "1") or parts[3] not in ("0", "1"):
            raise AnnotationError(f"row {ln}: flags must be 0 or 1")
        if start < 0:
            raise AnnotationError(f"row {ln}: negative start time")
        if end <= start:
            raise AnnotationError(f"row {ln}: end {end} <= start {start}")
        out.append(CycleAnnotation(start, end, parts[2] == "1", parts[3] == "1"))
    return out


def slice_cycles(clip: AudioClip, annotations: list[CycleAnnotation],
                 recording_id: str = "") -> tuple[list[LabeledCycle], int]:
    """Cut [floor(start*rate), floor(end*rate)) per annotation.

    Windows overrunning the clip are clamped to its end; windows entirely
    outside it are skipped. Returns (cycles, skipped_count).
    """
    rate = clip.sample_rate
    n = len(clip.samples)
    cycles, skipped = [], 0
    for i, ann in enumerate(annotations):
        start = int(np.floor(ann.start_s * rate))
        end = min(int(np.floor(ann.end_s * rate)), n)
        if start >= n or end <= start:
            skipped += 1
            continue
        cycles.append(LabeledCycle(
            clip=AudioClip(clip.samples[start:end].copy(), rate),
            label=ann.label, recording_id=recording_id, cycle_index=i))
    return cycles, skipped


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling; output sample i sits at input index
    i * source/target. Output length is round(len * target/source)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if clip.sample_rate == target_rate:
        return clip
    n = len(clip.samples)
    out_len = int(round(n * target_rate / clip.sample_rate))
    positions = np.arange(out_len) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n), clip.samples)
    return AudioClip(out, target_rate)


def fix_duration(cycle: LabeledCycle, seconds: float) -> LabeledCycle:
    """Center-crop longer cycles; repeat-pad (tile) shorter ones.

    Output length is round(seconds * rate) exactly.
    """
    if seconds <= 0:
        raise ValueError(f"seconds must be positive, got {seconds}")
    samples = cycle.clip.samples
    if len(samples) == 0:
        raise EmptyWavError(f"{cycle.recording_id}: zero-length cycle")
    rate = cycle.clip.sample_rate
    target = int(round(seconds * rate))
    n = len(samples)
    if n == target:
        return cycle
    if n > target:
        start = (n - target) // 2
        out = samples[start : start + target].copy()
    else:
        reps = -(-target // n)  # ceil
        out = np.tile(samples, reps)[:target]
    return LabeledCycle(AudioClip(out, rate), cycle.label, cycle.recording_id,
                        cycle.cycle_index)


def load_labeled_cycle(wav_path: str | Path, cycle_index: int, recording_id: str,
                       sample_rate: int, duration_s: float) -> LabeledCycle:
    """Full single-cycle preprocessing: read, slice, resample, fix duration.

    Annotations are the sibling .txt of the WAV path.
    """
    wav_path = Path(wav_path)
    clip = read_wav(wav_path)
    annotations = parse_annotations(wav_path.with_suffix(".txt").read_text(encoding="utf-8"))
    cycles, _ = slice_cycles(clip, annotations, recording_id)
    for c in cycles:
        if c.cycle_index == cycle_index:
            c = LabeledCycle(resample(c.clip, sample_rate), c.label,
                             c.recording_id, c.cycle_index)
            return fix_duration(c, duration_s)
    raise ValueError(f"{wav_path}: no cycle with index {cycle_index}")


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------

def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int,
                  split_assignment: dict[str, str] | None = None) -> DatasetManifest:
    """Assign train/test at recording level, seeded; an explicit assignment
    (e.g. an official split file) overrides the randomization entirely."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    recordings = sorted({e.recording_id for e in manifest.entries})
    if len(recordings) < 2:
        raise ValueError(f"need at least 2 recordings, got {len(recordings)}")

    if split_assignment is None:
        rng = stream(seed, "split")
        order = [recordings[i] for i in rng.permutation(len(recordings))]
        n_train = int(round(train_fraction * len(recordings)))
        n_train = min(max(n_train, 1), len(recordings) - 1)
        split_assignment = {r: ("train" if i < n_train else "test")
                            for i, r in enumerate(order)}
    else:
        missing = [r for r in recordings if r not in split_assignment]
        if missing:
            raise ValueError(f"split file misses recordings: {missing[:5]}")

    entries = [ManifestEntry(e.recording_id, e.cycle_index, e.label,
                             split_assignment[e.recording_id], e.path)
               for e in manifest.entries]
    return DatasetManifest(entries)


def read_split_file(path: str | Path) -> dict[str, str]:
    """Two whitespace-separated columns per line: recording_id, train|test."""
    out = {}
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise ValueError(f"{path}:{ln}: expected 'recording_id train|test'")
        out[parts[0]] = parts[1]
    return out


# --------------------------------------------------------------------------
# Directory scanning (real corpora)
# --------------------------------------------------------------------------

def scan_dataset_dir(data_dir: str | Path) -> tuple[list[tuple[str, Path]], list[str]]:
    """Pair WAVs with sibling .txt annotations; report orphans as warnings."""
    data_dir = Path(data_dir)
    wavs = {p.stem: p for p in sorted(data_dir.glob("*.wav"))}
    txts = {p.stem: p for p in sorted(data_dir.glob("*.txt"))}
    pairs = [(stem, wavs[stem]) for stem in sorted(wavs) if stem in txts]
    warnings = [f"orphan WAV without annotations: {wavs[s].name}"
                for s in sorted(set(wavs) - set(txts))]
    warnings += [f"orphan annotation without WAV: {txts[s].name}"
                 for s in sorted(set(txts) - set(wavs))]
    return pairs, warnings


def prepare_manifest(data_dir: str | Path, train_fraction: float = 0.6, seed: int = 0,
                     split_assignment: dict[str, str] | None = None,
                     ) -> tuple[DatasetManifest, list[str]]:
    """Scan a directory of WAV + annotation pairs into a split manifest."""
    pairs, warnings = scan_dataset_dir(data_dir)
    if not pairs:
        raise AudioIoError(f"{data_dir}: no WAV + annotation pairs found")
    entries = []
    for rec_id, wav_path in pairs:
        annotations = parse_annotations(wav_path.with_suffix(".txt").read_text(encoding="utf-8"))
        for i, ann in enumerate(annotations):
            entries.append(ManifestEntry(rec_id, i, ann.label, "train", str(wav_path)))
    manifest = DatasetManifest(entries)
    return split_dataset(manifest, train_fraction, seed, split_assignment), warnings


# --------------------------------------------------------------------------
# Synthetic desk-scale dataset
# --------------------------------------------------------------------------

def _band_limited_noise(rng: np.random.Generator, n: int, rate: int,
                        f_lo: float = 100.0, f_hi: float = 1800.0,
                        rms: float = 0.05) -> np.ndarray:
    white = rng.normal(size=n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    x = np.fft.irfft(spec, n)
    scale = rms / max(np.sqrt(np.mean(x * x)), 1e-12)
    return x * scale


def _add_impulses(rng: np.random.Generator, x: np.ndarray, rate: int) -> None:
    """Crackle stand-in: short exponential-decay wideband clicks."""
    n_imp = int(rng.integers(10, 20))
    width = max(int(0.004 * rate), 4)
    decay = np.exp(-np.arange(width) / (width / 4.0))
    for _ in range(n_imp):
        t0 = int(rng.integers(0, max(len(x) - width, 1)))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        x[t0 : t0 + width] += sign * rng.uniform(0.5, 0.8) * decay[: len(x) - t0]


def _add_tone(rng: np.random.Generator, x: np.ndarray, rate: int) -> None:
    """Wheeze stand-in: one sustained tone inside 200-800 Hz."""
    f0 = rng.uniform(250.0, 750.0)
    t = np.arange(len(x)) / rate
    x += 0.25 * np.sin(2.0 * np.pi * f0 * t + rng.uniform(0.0, 2.0 * np.pi))


def synth_dataset(n_per_class: int, seed: int, out_dir: str | Path,
                  train_fraction: float = 0.6, sample_rate: int = 4000,
                  ) -> DatasetManifest:
    """Write a deterministic four-class synthetic corpus and its manifest.

    Normal is band-limited noise; crackle adds impulse trains; wheeze adds a
    sustained 200-800 Hz tone; both adds both. One cycle per recording; the
    train/test split is stratified per class so every class keeps the same
    train fraction.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for label in ClassLabel:
        n_train = int(round(train_fraction * n_per_class))
        n_train = min(max(n_train, 1), max(n_per_class - 1, 1))
        order = stream(seed, "synth-split", int(label)).permutation(n_per_class)
        split_of = {int(order[i]): ("train" if i < n_train else "test")
                    for i in range(n_per_class)}
        for i in range(n_per_class):
            rng = stream(seed, "synth", int(label), i)
            duration = rng.uniform(2.0, 6.0)
            n = int(duration * sample_rate)
            x = _band_limited_noise(rng, n, sample_rate)
            if label.crackle:
                _add_impulses(rng, x, sample_rate)
            if label.wheeze:
                _add_tone(rng, x, sample_rate)
            x = np.clip(x, -0.99, 0.99)
            rec_id = f"syn_{label.name.lower()}_{i:03d}"
            wav_path = out_dir / f"{rec_id}.wav"
            write_wav(wav_path, x, sample_rate)
            end_s = len(x) / sample_rate
            wav_path.with_suffix(".txt").write_text(
                f"0.00\t{end_s:.6f}\t{int(label.crackle)}\t{int(label.wheeze)}\n",
                encoding="utf-8")
            entries.append(ManifestEntry(rec_id, 0, label,
                                         split_of[i] if n_per_class > 1 else "train",
                                         str(wav_path)))
    manifest = DatasetManifest(entries)
    manifest.write(out_dir / "manifest.tsv")
    return manifest
