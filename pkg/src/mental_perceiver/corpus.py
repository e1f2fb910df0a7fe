"""Corpus records, segmentation, audio featurization and synthetic data.

The on-disk corpus is line-delimited JSON, one participant per line::

    {"participant_id": "p001", "label": 1, "split": "train", "duration_s": 83.2,
     "text_features": [[...768 floats...], ...],
     "audio_mel": [[...80 floats...], ...]}

``audio_mel`` may be replaced by ``audio_wav_path`` + ``sample_rate``; the
``featurize`` step turns those into mel frames.
"""

from __future__ import annotations

import json
import math
import os
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .numerics import Tensor, add, concat_rows, linear

SPLITS = ("train", "validation", "test")
SAMPLE_RATES = (8000, 16000, 44100, 48000)
WINDOW_S = 60.0
OVERLAP_S = 10.0
MIN_TAIL_S = 5.0
N_MELS = 80
LOG_FLOOR = math.log(1e-10)


@dataclass
class ParticipantRecord:
    participant_id: str
    label: int
    split: str
    duration_s: float
    text_features: np.ndarray | None = None
    audio_mel: np.ndarray | None = None
    audio_wav_path: str | None = None
    sample_rate: int | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"{self.participant_id}: label must be 0 or 1, got {self.label!r}")
        if not self.duration_s > 0:
            raise DataError(f"{self.participant_id}: duration must be positive")
        if self.split not in SPLITS:
            raise DataError(f"{self.participant_id}: unknown split {self.split!r}")
        for attr in ("text_features", "audio_mel"):
            val = getattr(self, attr)
            if val is None:
                continue
            val = np.asarray(val, dtype=np.float64)
            if val.ndim != 2 or val.shape[0] == 0:
                raise DataError(f"{self.participant_id}: {attr} must be a non-empty matrix")
            setattr(self, attr, val)

    def to_json(self):
        d = {"participant_id": self.participant_id, "label": self.label, "split": self.split,
             "duration_s": self.duration_s}
        if self.text_features is not None:
            d["text_features"] = self.text_features.tolist()
        if self.audio_mel is not None:
            d["audio_mel"] = self.audio_mel.tolist()
        if self.audio_wav_path is not None:
            d["audio_wav_path"] = self.audio_wav_path
            d["sample_rate"] = self.sample_rate
        return d

    @classmethod
    def from_json(cls, d):
        try:
            return cls(
                participant_id=str(d["participant_id"]),
                label=d["label"],
                split=str(d["split"]),
                duration_s=float(d["duration_s"]),
                text_features=d.get("text_features"),
                audio_mel=d.get("audio_mel"),
                audio_wav_path=d.get("audio_wav_path"),
                sample_rate=d.get("sample_rate"),
            )
        except KeyError as exc:
            raise DataError(f"corpus record missing key {exc.args[0]!r}") from None


def read_corpus(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            records.append(ParticipantRecord.from_json(obj))
    return records


def write_corpus(records, path):
    from .checkpoint import atomic_write

    lines = [json.dumps(r.to_json(), separators=(",", ":")) for r in records]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def split_records(records, split):
    out = sorted((r for r in records if r.split == split), key=lambda r: r.participant_id)
    if not out:
        raise DataError(f"split {split!r} is empty or missing")
    return out


# ---------------------------------------------------------------- segmentation

@dataclass
class LabeledSegment:
    participant_id: str
    start_s: float
    end_s: float
    label: int
    text: np.ndarray | None = None
    audio: np.ndarray | None = None

    @property
    def rows(self):
        return sum(0 if m is None else len(m) for m in (self.text, self.audio))


def window_bounds(duration, window=WINDOW_S, overlap=OVERLAP_S, min_tail=MIN_TAIL_S):
    """(start, end) pairs: starts every ``window - overlap`` seconds.

    A window cut short by the end of the recording is kept only if it lasts
    at least ``min_tail`` seconds; the first window is always kept.
    """
    if not duration > 0:
        raise DataError(f"duration must be positive, got {duration}")
    if not window > overlap >= 0:
        raise ConfigError(f"need window > overlap >= 0, got {window}, {overlap}")
    stride = window - overlap
    out = []
    i = 0
    while True:
        start = i * stride
        if start >= duration:
            break
        end = min(start + window, duration)
        if i == 0 or end - start >= min_tail:
            out.append((start, end))
        i += 1
    return out


def _slice_rows(mat, start, end, duration):
    if mat is None:
        return None
    n = len(mat)
    lo = min(int(math.floor(start / duration * n + 1e-9)), n - 1)
    hi = max(int(math.ceil(end / duration * n - 1e-9)), lo + 1)
    return mat[lo:min(hi, n)]


def segment(record: ParticipantRecord, window=WINDOW_S, overlap=OVERLAP_S,
            min_tail=MIN_TAIL_S):
    """Cut a participant into overlapping windows, slicing feature rows by time share."""
    if record.text_features is None and record.audio_mel is None:
        raise DataError(f"{record.participant_id}: no text or mel features (run featurize?)")
    d = record.duration_s
    return [LabeledSegment(record.participant_id, s, e, record.label,
                           _slice_rows(record.text_features, s, e, d),
                           _slice_rows(record.audio_mel, s, e, d))
            for s, e in window_bounds(d, window, overlap, min_tail)]


def segment_all(records, **kw):
    return [seg for r in records for seg in segment(r, **kw)]


def aggregate_participant(segment_probs):
    """Mean of per-segment disorder probabilities; class 1 iff mean >= 0.5."""
    p = [float(np.asarray(sp).reshape(-1)[-1]) for sp in segment_probs]
    if not p:
        raise DataError("no segment predictions to aggregate")
    mean = sum(p) / len(p)
    return (1 if mean >= 0.5 else 0), np.array([1.0 - mean, mean])


# ---------------------------------------------------------------- audio

def read_wav(path):
    """Mono 16-bit PCM WAV -> (float samples in [-1, 1), sample_rate)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise DataError(f"{path}: expected mono 16-bit PCM")
            sr = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, sr


def write_wav(path, samples, sample_rate):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_params(sample_rate):
    """(window length, hop, FFT size) in samples: 25 ms / 10 ms / next power of two."""
    win = int(round(0.025 * sample_rate))
    hop = int(round(0.010 * sample_rate))
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def mel_filterbank(sample_rate, n_fft, n_mels=N_MELS, fmin=0.0, fmax=8000.0):
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)."""
    fmax = min(fmax, sample_rate / 2.0)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(waveform, sample_rate, n_mels=N_MELS):
    """Log-magnitude mel frames, shape (1 + (samples - win) // hop, n_mels)."""
    if sample_rate not in SAMPLE_RATES:
        raise DataError(f"unsupported sample rate {sample_rate}; use one of {SAMPLE_RATES}")
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    win, hop, n_fft = frame_params(sample_rate)
    if len(x) < win:
        raise DataError(f"waveform has {len(x)} samples; need at least {win} for one frame")
    n_frames = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    frames = x[idx] * hann
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    energies = mag @ mel_filterbank(sample_rate, n_fft, n_mels).T
    return np.log(np.maximum(energies, 1e-10))


def featurize_record(record: ParticipantRecord, base_dir=".") -> ParticipantRecord:
    if record.audio_mel is not None or record.audio_wav_path is None:
        return record
    path = Path(record.audio_wav_path)
    if not path.is_absolute():
        path = Path(base_dir) / path
    samples, sr = read_wav(path)
    if record.sample_rate is not None and int(record.sample_rate) != sr:
        raise DataError(f"{record.participant_id}: sample_rate {record.sample_rate} "
                        f"disagrees with WAV header {sr}")
    return ParticipantRecord(record.participant_id, record.label, record.split,
                             record.duration_s, record.text_features,
                             mel_spectrogram(samples, sr))


def featurize_records(records, base_dir=".", threads=None):
    threads = threads or max_threads()
    if threads <= 1:
        return [featurize_record(r, base_dir) for r in records]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda r: featurize_record(r, base_dir), records))


def max_threads():
    try:
        return max(1, int(os.environ.get("MP_THREADS", "1")))
    except ValueError:
        raise ConfigError("MP_THREADS must be an integer") from None


# ---------------------------------------------------------------- fusion

_PE_CACHE: dict = {}


def sinusoidal_positions(rows, width):
    key = (rows, width)
    if key not in _PE_CACHE:
        pos = np.arange(rows)[:, None]
        i = np.arange(width)[None, :]
        angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
        _PE_CACHE[key] = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return _PE_CACHE[key]


def add_fusion_params(store, audio_width, d_x):
    store.add("fuse.audio_proj.w", (audio_width, d_x))
    store.add("fuse.audio_proj.b", (1, d_x), "zeros")
    store.add("fuse.tag_text", (1, d_x))
    store.add("fuse.tag_audio", (1, d_x))


def fuse_modalities(text, mel, P, d_x):
    """Stack text rows then projected mel rows into one M x d_x input.

    Each modality gets sinusoidal position features (restarting at 0) and
    its learned tag vector added to every row.
    """
    parts = []
    if text is not None:
        if text.cols != d_x:
            raise ConfigError(f"text features have width {text.cols}, model expects {d_x}")
        pe = Tensor(sinusoidal_positions(text.rows, d_x).astype(text.dtype))
        parts.append(add(add(text, pe), P["fuse.tag_text"]))
    if mel is not None:
        audio = linear(mel, P, "fuse.audio_proj")
        pe = Tensor(sinusoidal_positions(mel.rows, d_x).astype(mel.dtype))
        parts.append(add(add(audio, pe), P["fuse.tag_audio"]))
    if not parts:
        raise DataError("fuse_modalities needs at least one modality")
    return parts[0] if len(parts) == 1 else concat_rows(parts)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthSpec:
    n_normal: int = 100
    n_disorder: int = 100
    separation: float = 4.0
    text_width: int = 768
    audio_width: int = N_MELS
    min_duration_s: float = 30.0
    max_duration_s: float = 90.0
    text_rows_per_s: float = 0.5
    audio_rows_per_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_normal < 1 or self.n_disorder < 1:
            raise ConfigError("need at least one participant per class")
        if self.separation < 0:
            raise ConfigError("separation must be >= 0")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ConfigError("need 0 < min_duration_s <= max_duration_s")

    @classmethod
    def from_rate(cls, participants, positive_rate, **kw):
        n_pos = int(round(participants * positive_rate))
        return cls(n_normal=participants - n_pos, n_disorder=n_pos, **kw)


def _split_counts(n):
    n_val = int(round(0.1 * n))
    n_test = int(round(0.1 * n))
    return n - n_val - n_test, n_val, n_test


def _unit(rng, width):
    u = rng.standard_normal(width)
    return u / np.linalg.norm(u)


def generate_synthetic(spec: SynthSpec):
    """Gaussian class-conditional corpus with 8:1:1 per-class splits.

    Within-class std is 1; class means sit at -/+ separation/2 along a
    random unit direction (one direction per modality).
    """
    rng = np.random.default_rng(spec.seed)
    u_text = _unit(rng, spec.text_width)
    u_audio = _unit(rng, spec.audio_width)
    half = spec.separation / 2.0
    ids = rng.permutation(spec.n_normal + spec.n_disorder)
    records = []
    for label, n in ((0, spec.n_normal), (1, spec.n_disorder)):
        sign = 1.0 if label else -1.0
        n_train, n_val, _ = _split_counts(n)
        for i in range(n):
            split = "train" if i < n_train else "validation" if i < n_train + n_val else "test"
            dur = round(float(rng.uniform(spec.min_duration_s, spec.max_duration_s)), 1)
            t_rows = max(1, int(round(dur * spec.text_rows_per_s)))
            a_rows = max(1, int(round(dur * spec.audio_rows_per_s)))
            text = rng.standard_normal((t_rows, spec.text_width)) + sign * half * u_text
            audio = rng.standard_normal((a_rows, spec.audio_width)) + sign * half * u_audio
            records.append(ParticipantRecord(
                f"synth-{ids[len(records)]:05d}", label, split, dur,
                np.round(text, 5), np.round(audio, 5)))
    records.sort(key=lambda r: r.participant_id)
    return records
