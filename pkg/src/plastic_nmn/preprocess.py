"""Windowed-FFT feature extraction, dataset container IO, synthetic signals.

A recording is 20 montage channels sampled at 250 Hz.  It is cut into
1-second windows with 75% overlap; each window becomes one sample: a
20 x 24 matrix of log10 DFT-bin magnitudes (bins 1..24 at 1 Hz spacing,
DC excluded, rectangular window, magnitude floored at 1e-8).

Datasets live in a directory with a manifest.json and one raw little-
endian float32 blob per recording, either time series ([20, n_samples])
or extracted features ([n_windows, 20, 24]).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 250.0
N_CHANNELS = 20
N_BANDS = 24
WINDOW_SECONDS = 1.0
OVERLAP_FRACTION = 0.75
LOG_FLOOR = 1e-8

MONTAGE_CHANNELS = (
    "FP1-F7", "F7-T3", "T3-T5", "T5-O1",
    "FP2-F8", "F8-T4", "T4-T6", "T6-O2",
    "T3-C3", "C3-CZ", "CZ-C4", "C4-T4",
    "FP1-F3", "F3-C3", "C3-P3", "P3-O1",
    "FP2-F4", "F4-C4", "C4-P4", "P4-O2",
)

CLASS_NAMES = ("FNSZ", "GNSZ", "SPSZ", "CPSZ", "ABSZ", "TNSZ", "TCSZ")
N_CLASSES = len(CLASS_NAMES)

# relative per-class window prevalence used by the default generator;
# heavily skewed toward focal non-specific events like clinical corpora
CLASS_PREVALENCE = (292725, 137033, 6028, 132200, 3087, 4888, 22524)


class DataError(ValueError):
    """Malformed recording, sample, manifest, or dataset blob."""


@dataclass
class RawRecording:
    """One multi-channel recording with its label and provenance ids."""

    data: np.ndarray  # (20, n_samples)
    sample_rate: float
    label: int
    patient_id: str
    seizure_id: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != N_CHANNELS:
            raise DataError(f"recording must be ({N_CHANNELS}, n), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError("recording contains non-finite values")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not 0 <= self.label < N_CLASSES:
            raise DataError(f"label must be 0..{N_CLASSES - 1}, got {self.label}")


@dataclass
class Sample:
    """One preprocessed window: channels x bands features plus provenance."""

    features: np.ndarray  # (20, 24)
    label: int
    patient_id: str
    seizure_id: str
    window_index: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape != (N_CHANNELS, N_BANDS):
            raise DataError(
                f"sample features must be ({N_CHANNELS}, {N_BANDS}), got {self.features.shape}"
            )
        if not np.isfinite(self.features).all():
            raise DataError("sample contains non-finite values")

    @property
    def sample_id(self):
        return f"{self.patient_id}/{self.seizure_id}/{self.window_index}"


@dataclass
class ClassSpec:
    """Synthetic signature of one class: oscillations, topography, noise."""

    name: str
    center_freqs: list
    topography: np.ndarray  # (20,) channel weights
    amplitude: float = 1.0
    noise_level: float = 0.5

    def __post_init__(self):
        self.topography = np.asarray(self.topography, dtype=np.float64)
        if self.topography.shape != (N_CHANNELS,):
            raise DataError(f"topography must have {N_CHANNELS} weights")
        if not self.center_freqs:
            raise DataError(f"class {self.name}: no center frequencies")
        if max(self.center_freqs) >= N_BANDS + 1:
            raise DataError(
                f"class {self.name}: center frequencies must stay below "
                f"{N_BANDS + 1} Hz to fall inside the retained bands"
            )


# ---------------------------------------------------------------------------
# windowing and spectra


def window_geometry(n_samples, sample_rate=SAMPLE_RATE,
                    window_seconds=WINDOW_SECONDS, overlap_fraction=OVERLAP_FRACTION):
    """(window length, hop, count) in samples for a recording of n_samples."""
    win = int(round(window_seconds * sample_rate))
    hop = int(np.floor((1.0 - overlap_fraction) * window_seconds * sample_rate))
    if hop < 1:
        raise DataError(f"overlap {overlap_fraction} leaves an empty hop")
    if n_samples < win:
        raise DataError(f"recording of {n_samples} samples is shorter than one "
                        f"window of {win}")
    count = (n_samples - win) // hop + 1
    return win, hop, count


def window_signal(recording, window_seconds=WINDOW_SECONDS,
                  overlap_fraction=OVERLAP_FRACTION):
    """Cut a recording into overlapping per-window channel segments."""
    win, hop, count = window_geometry(
        recording.data.shape[1], recording.sample_rate, window_seconds, overlap_fraction
    )
    return [recording.data[:, i * hop: i * hop + win] for i in range(count)]


def _bands_from_segments(segments, f_max=N_BANDS):
    """log10 magnitude of DFT bins 1..f_max along the last axis."""
    spectrum = np.fft.rfft(segments, axis=-1)
    mags = np.abs(spectrum[..., 1: f_max + 1])
    return np.log10(mags + LOG_FLOOR)


def fft_bands(segment, fs=SAMPLE_RATE, f_max=N_BANDS):
    """Spectral feature vector of one 1-second channel segment."""
    segment = np.asarray(segment, dtype=np.float64)
    expected = int(round(fs * WINDOW_SECONDS))
    if segment.shape != (expected,):
        raise DataError(f"segment must have {expected} samples, got {segment.shape}")
    return _bands_from_segments(segment, f_max)


def preprocess(recording, window_seconds=WINDOW_SECONDS,
               overlap_fraction=OVERLAP_FRACTION):
    """All samples of one recording, labels and provenance inherited."""
    segments = np.stack(window_signal(recording, window_seconds, overlap_fraction))
    features = _bands_from_segments(segments)
    return [
        Sample(features[i], recording.label, recording.patient_id,
               recording.seizure_id, i)
        for i in range(features.shape[0])
    ]


# ---------------------------------------------------------------------------
# synthetic recordings


def default_class_specs(noise_level=0.5):
    """Well-separated signatures: distinct frequency pairs and topographies."""
    base_freqs = [(3.0, 7.0), (6.0, 14.0), (9.0, 18.0), (12.0, 4.0),
                  (15.0, 8.0), (18.0, 11.0), (21.0, 5.0)]
    specs = []
    channels = np.arange(N_CHANNELS)
    for idx, name in enumerate(CLASS_NAMES):
        center = 1.5 + 2.5 * idx
        topo = 0.35 + np.exp(-0.5 * ((channels - center) / 3.0) ** 2)
        specs.append(ClassSpec(name, list(base_freqs[idx]), topo,
                               amplitude=1.0, noise_level=noise_level))
    return specs


def hard_class_specs(noise_level=6.0):
    """Overlapping signatures: centers 1 Hz apart, shared flat topography."""
    topo = np.ones(N_CHANNELS)
    return [
        ClassSpec(name, [9.0 + idx], topo, amplitude=1.0, noise_level=noise_level)
        for idx, name in enumerate(CLASS_NAMES)
    ]


def prevalence_counts(total_windows=10_000, duration_seconds=10.0,
                      sample_rate=SAMPLE_RATE, weights=CLASS_PREVALENCE):
    """Per-class recording counts approximating the prevalence ratios."""
    n = int(round(duration_seconds * sample_rate))
    _, _, windows_each = window_geometry(n, sample_rate)
    total_recordings = total_windows / windows_each
    ratios = np.asarray(weights, dtype=np.float64)
    ratios = ratios / ratios.sum()
    return [max(1, int(round(r * total_recordings))) for r in ratios]


def synth_generate(specs, counts, seed, duration_seconds=10.0,
                   sample_rate=SAMPLE_RATE):
    """Deterministic labelled recordings: class oscillations plus white noise."""
    if not specs:
        raise DataError("no class specs given")
    if len(counts) != len(specs) or min(counts) < 1:
        raise DataError(f"need one positive count per class, got {counts}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_seconds * sample_rate))
    t = np.arange(n) / sample_rate
    recordings = []
    for label, (spec, count) in enumerate(zip(specs, counts)):
        for rec_idx in range(count):
            wave = np.zeros(n)
            for freq in spec.center_freqs:
                phase = rng.uniform(0.0, 2.0 * np.pi)
                wave += spec.amplitude * np.sin(2.0 * np.pi * freq * t + phase)
            data = spec.topography[:, None] * wave[None, :]
            if spec.noise_level > 0:
                data = data + spec.noise_level * rng.standard_normal((N_CHANNELS, n))
            recordings.append(RawRecording(
                data, sample_rate, label,
                patient_id=f"p{spec.name}_{rec_idx:04d}",
                seizure_id=f"s{spec.name}_{rec_idx:04d}",
            ))
    return recordings


# ---------------------------------------------------------------------------
# dataset directories (manifest.json + little-endian float32 blobs)


def _write_blob(path, array):
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def _read_blob(path, shape):
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise DataError(f"{os.path.basename(path)}: expected {expected} float32 "
                        f"values, found {data.size}")
    return data.astype(np.float64).reshape(shape)


def _load_manifest(directory, kind):
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {directory}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest.json is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("kind") != kind:
        raise DataError(f"manifest kind must be {kind!r}, got "
                        f"{manifest.get('kind')!r}")
    entries = manifest.get("entries")
    if not isinstance(entries, list) or not entries:
        raise DataError("manifest has no entries")
    required = {"id", "label", "patient_id", "seizure_id", "dtype", "shape", "file"}
    for entry in entries:
        missing = required - set(entry)
        if missing:
            raise DataError(f"manifest entry missing keys: {sorted(missing)}")
        if entry["dtype"] != "f32le":
            raise DataError(f"unsupported dtype {entry['dtype']!r}")
    return manifest


def write_recording_dataset(directory, recordings):
    """Store raw recordings under a manifest; returns the manifest dict."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    sample_rate = recordings[0].sample_rate if recordings else SAMPLE_RATE
    for idx, rec in enumerate(recordings):
        fname = f"rec{idx:05d}.f32"
        _write_blob(os.path.join(directory, fname), rec.data)
        entries.append({
            "id": f"rec{idx:05d}",
            "label": int(rec.label),
            "patient_id": rec.patient_id,
            "seizure_id": rec.seizure_id,
            "dtype": "f32le",
            "shape": list(rec.data.shape),
            "file": fname,
        })
    manifest = {"kind": "raw", "sample_rate": sample_rate, "entries": entries}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_recording_dataset(directory):
    manifest = _load_manifest(directory, "raw")
    rate = manifest.get("sample_rate", SAMPLE_RATE)
    recordings = []
    for entry in manifest["entries"]:
        shape = entry["shape"]
        if len(shape) != 2 or shape[0] != N_CHANNELS:
            raise DataError(f"raw entry {entry['id']}: bad shape {shape}")
        data = _read_blob(os.path.join(directory, entry["file"]), shape)
        recordings.append(RawRecording(data, rate, entry["label"],
                                       entry["patient_id"], entry["seizure_id"]))
    return recordings


def write_sample_dataset(directory, recordings_samples):
    """Store per-recording feature stacks; input is [(entry_info, samples)]."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for idx, (info, samples) in enumerate(recordings_samples):
        stack = np.stack([s.features for s in samples])
        fname = f"feat{idx:05d}.f32"
        _write_blob(os.path.join(directory, fname), stack)
        entries.append({
            "id": info.get("id", f"feat{idx:05d}"),
            "label": int(samples[0].label),
            "patient_id": samples[0].patient_id,
            "seizure_id": samples[0].seizure_id,
            "n_windows": len(samples),
            "dtype": "f32le",
            "shape": list(stack.shape),
            "file": fname,
        })
    manifest = {"kind": "features", "entries": entries}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_sample_dataset(directory):
    """All samples in manifest order; window order within each recording."""
    manifest = _load_manifest(directory, "features")
    samples = []
    for entry in manifest["entries"]:
        shape = entry["shape"]
        if len(shape) != 3 or shape[1:] != [N_CHANNELS, N_BANDS]:
            raise DataError(f"feature entry {entry['id']}: bad shape {shape}")
        if entry.get("n_windows") != shape[0]:
            raise DataError(f"feature entry {entry['id']}: n_windows disagrees "
                            f"with shape {shape}")
        stack = _read_blob(os.path.join(directory, entry["file"]), shape)
        for w in range(shape[0]):
            samples.append(Sample(stack[w], entry["label"], entry["patient_id"],
                                  entry["seizure_id"], w))
    return samples
