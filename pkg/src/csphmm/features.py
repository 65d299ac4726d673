"""Speech front-end: pre-emphasis, framing, MFCC+delta observation vectors,
pitch/energy prosody, WAV ingestion, and the binary feature-file format.

All functions are pure: they never mutate their inputs and are safe to call
concurrently.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import InvalidInputError

# Dimensionality of one prosodic observation:
# f0 mean / std / slope, log-energy mean / std, duration, voiced fraction.
PROSODIC_DIM = 7

FEATURE_MAGIC = b"SHF1"

# Filterbank energies are clamped here before the log so silence stays finite.
LOG_MEL_FLOOR = 1e-10

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rectangular": np.ones,
}


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n <= 1:
        return 1
    return 1 << (n - 1).bit_length()


@dataclass
class AudioBuffer:
    """Mono audio with amplitudes normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError("audio must be a 1-D sample array")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def require_extractable(self) -> None:
        if self.samples.size == 0:
            raise InvalidInputError("empty audio buffer")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("audio contains non-finite samples")


@dataclass(frozen=True)
class FrameSpec:
    """Short-time analysis parameters. Times are in milliseconds."""

    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0
    preemphasis: float = 0.97
    window: str = "hamming"

    def __post_init__(self):
        if not 0.0 <= self.preemphasis < 1.0:
            raise InvalidInputError("preemphasis must lie in [0, 1)")
        if self.frame_hop_ms > self.frame_length_ms:
            raise InvalidInputError("frame hop must not exceed frame length")
        if self.window not in _WINDOWS:
            raise InvalidInputError(f"unknown window {self.window!r}")

    def frame_samples(self, sample_rate: int) -> int:
        n = int(round(self.frame_length_ms * sample_rate / 1000.0))
        if n < 2:
            raise InvalidInputError("frame length shorter than 2 samples at this rate")
        return n

    def hop_samples(self, sample_rate: int) -> int:
        return max(1, int(round(self.frame_hop_ms * sample_rate / 1000.0)))


@dataclass(frozen=True)
class MfccSpec:
    """Cepstral analysis parameters; defaults give 16 static + 16 delta."""

    n_static: int = 16
    n_mel_filters: int = 26
    fft_size: int | None = None
    include_deltas: bool = True
    delta_window: int = 2

    def __post_init__(self):
        if self.n_static > self.n_mel_filters:
            raise InvalidInputError("n_static must not exceed n_mel_filters")
        if self.fft_size is not None and self.fft_size & (self.fft_size - 1):
            raise InvalidInputError("fft_size must be a power of two")
        if self.delta_window < 1:
            raise InvalidInputError("delta_window must be >= 1")

    @property
    def dim(self) -> int:
        return self.n_static * 2 if self.include_deltas else self.n_static

    def resolve_fft_size(self, frame_samples: int) -> int:
        if self.fft_size is None:
            return next_pow2(frame_samples)
        if self.fft_size < frame_samples:
            raise InvalidInputError("fft_size smaller than the frame length in samples")
        return self.fft_size


@dataclass
class FeatureSequence:
    """Ordered, fixed-dimensional observation vectors with frame start times."""

    vectors: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InvalidInputError("feature vectors must form a (frames, dim) matrix")
        if self.frame_times.shape != (self.vectors.shape[0],):
            raise InvalidInputError("frame_times length must match the frame count")
        if not np.all(np.isfinite(self.vectors)):
            raise InvalidInputError("feature vectors contain non-finite entries")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ProsodicVector:
    """Per-segment prosody: pitch, energy, duration, voicing."""

    f0_mean: float
    f0_std: float
    f0_slope: float
    energy_mean: float
    energy_std: float
    duration: float
    voiced_fraction: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.f0_mean,
                self.f0_std,
                self.f0_slope,
                self.energy_mean,
                self.energy_std,
                self.duration,
                self.voiced_fraction,
            ],
            dtype=np.float64,
        )


@dataclass
class ProsodyTrack:
    """Frame-level pitch/energy/voicing, aligned with a FrameSpec grid."""

    frame_times: np.ndarray
    f0: np.ndarray
    voiced: np.ndarray
    log_rms: np.ndarray
    frame_length_s: float
    frame_hop_s: float

    def __len__(self) -> int:
        return self.f0.size


def preemphasize(audio: AudioBuffer, coeff: float) -> AudioBuffer:
    """First-order high-pass: y[n] = x[n] - coeff * x[n-1], y[0] = x[0]."""
    if not 0.0 <= coeff < 1.0:
        raise InvalidInputError("pre-emphasis coefficient must lie in [0, 1)")
    audio.require_extractable()
    x = audio.samples
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - coeff * x[:-1]
    return AudioBuffer(y, audio.sample_rate)


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Slice a 1-D signal into fully contained frames, shape (n_frames, frame_len)."""
    n = samples.size
    if n < frame_len:
        raise InvalidInputError("signal shorter than one frame")
    n_frames = 1 + (n - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_filters: int, fft_size: int, sample_rate: int, f_min: float = 0.0, f_max: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters on the mel scale.

    Returns (weights, centers): weights has shape (n_filters, fft_size // 2 + 1)
    and centers holds the filter center frequencies in Hz, strictly increasing.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
    bins = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    weights = np.zeros((n_filters, bins.size))
    for i in range(n_filters):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (bins - left) / (center - left)
        falling = (right - bins) / (right - center)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges[1:-1]


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, M @ M.T == I."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * m + 1) / (2.0 * n))
    mat[0] = np.sqrt(1.0 / n)
    return mat


def mel_log_energies(
    audio: AudioBuffer, frames: FrameSpec = FrameSpec(), spec: MfccSpec = MfccSpec()
) -> np.ndarray:
    """Log mel filterbank energies, shape (n_frames, n_mel_filters)."""
    audio.require_extractable()
    flen = frames.frame_samples(audio.sample_rate)
    hop = frames.hop_samples(audio.sample_rate)
    fft_size = spec.resolve_fft_size(flen)
    emphasized = preemphasize(audio, frames.preemphasis) if frames.preemphasis else audio
    mat = frame_signal(emphasized.samples, flen, hop) * _WINDOWS[frames.window](flen)
    magnitude = np.abs(np.fft.rfft(mat, n=fft_size, axis=1))
    bank, _ = mel_filterbank(spec.n_mel_filters, fft_size, audio.sample_rate)
    return np.log(np.maximum(magnitude @ bank.T, LOG_MEL_FLOOR))


def extract_mfcc(
    audio: AudioBuffer, frames: FrameSpec = FrameSpec(), spec: MfccSpec = MfccSpec()
) -> FeatureSequence:
    """Full cepstral pipeline; one row per frame, n_static or 2*n_static wide."""
    log_mel = mel_log_energies(audio, frames, spec)
    dct = dct_matrix(spec.n_mel_filters)[: spec.n_static]
    static = log_mel @ dct.T
    if spec.include_deltas:
        vectors = np.hstack([static, delta_matrix(static, spec.delta_window)])
    else:
        vectors = static
    hop_s = frames.hop_samples(audio.sample_rate) / audio.sample_rate
    times = np.arange(vectors.shape[0]) * hop_s
    return FeatureSequence(vectors, times)


def delta_matrix(values: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas over frames with edge replication.

    delta[t] = sum_w w * (c[t+w] - c[t-w]) / (2 * sum_w w^2)
    """
    if window < 1:
        raise InvalidInputError("delta window must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise InvalidInputError("delta input must be a non-empty (frames, dim) matrix")
    n = values.shape[0]
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    out = np.zeros_like(values)
    idx = np.arange(n)
    for w in range(1, window + 1):
        ahead = np.minimum(idx + w, n - 1)
        behind = np.maximum(idx - w, 0)
        out += w * (values[ahead] - values[behind])
    return out / denom


def compute_deltas(seq: FeatureSequence, window: int = 2) -> FeatureSequence:
    """Deltas of a feature sequence; same length and frame times."""
    return FeatureSequence(delta_matrix(seq.vectors, window), seq.frame_times.copy())


def pitch_track(
    audio: AudioBuffer,
    frames: FrameSpec = FrameSpec(),
    f0_min: float = 60.0,
    f0_max: float = 400.0,
    voicing_threshold: float = 0.30,
    energy_floor: float = 1e-5,
) -> ProsodyTrack:
    """Autocorrelation pitch with an energy gate.

    A frame is voiced when its normalized autocorrelation peak inside the
    [f0_min, f0_max] lag range exceeds the voicing threshold and its RMS
    clears the energy floor. Unvoiced frames report f0 = 0.
    """
    audio.require_extractable()
    if not 0.0 < f0_min < f0_max:
        raise InvalidInputError("need 0 < f0_min < f0_max")
    sr = audio.sample_rate
    flen = frames.frame_samples(sr)
    hop = frames.hop_samples(sr)
    if audio.samples.size < flen:
        mat = audio.samples[None, :]
        flen = audio.samples.size
    else:
        mat = frame_signal(audio.samples, flen, hop)

    rms = np.sqrt(np.mean(mat * mat, axis=1))
    log_rms = np.log(rms + 1e-12)

    lag_min = max(1, int(sr / f0_max))
    lag_max = min(flen - 1, int(np.ceil(sr / f0_min)))
    n_frames = mat.shape[0]
    if lag_max <= lag_min:
        zeros = np.zeros(n_frames)
        return ProsodyTrack(
            np.arange(n_frames) * hop / sr, zeros, zeros.astype(bool), log_rms, flen / sr, hop / sr
        )

    # Autocorrelation of every frame at once via the Wiener-Khinchin route.
    fft_size = next_pow2(2 * flen)
    spectrum = np.fft.rfft(mat, n=fft_size, axis=1)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), n=fft_size, axis=1)[:, :flen]
    energy = acf[:, 0]
    safe = np.where(energy > 1e-20, energy, 1.0)
    normalized = acf / safe[:, None]

    window_acf = normalized[:, lag_min : lag_max + 1]
    peak_idx = np.argmax(window_acf, axis=1)
    peak_val = window_acf[np.arange(n_frames), peak_idx]
    lags = lag_min + peak_idx

    voiced = (peak_val > voicing_threshold) & (rms > energy_floor) & (energy > 1e-20)
    f0 = np.where(voiced, sr / lags, 0.0)
    times = np.arange(n_frames) * hop / sr
    return ProsodyTrack(times, f0, voiced, log_rms, flen / sr, hop / sr)


def aggregate_prosody(track: ProsodyTrack, duration: float) -> ProsodicVector:
    """Collapse a frame-level track into one prosodic observation."""
    if duration <= 0:
        raise InvalidInputError("segment duration must be positive")
    voiced = track.voiced
    if np.any(voiced):
        f0v = track.f0[voiced]
        f0_mean = float(np.mean(f0v))
        f0_std = float(np.std(f0v))
        tv = track.frame_times[voiced]
        if f0v.size >= 2 and tv[-1] > tv[0]:
            f0_slope = float(np.polyfit(tv, f0v, 1)[0])
        else:
            f0_slope = 0.0
    else:
        f0_mean = f0_std = f0_slope = 0.0
    return ProsodicVector(
        f0_mean=f0_mean,
        f0_std=f0_std,
        f0_slope=f0_slope,
        energy_mean=float(np.mean(track.log_rms)),
        energy_std=float(np.std(track.log_rms)),
        duration=float(duration),
        voiced_fraction=float(np.mean(voiced)),
    )


def extract_prosody(
    audio: AudioBuffer,
    segments: list[tuple[float, float]],
    frames: FrameSpec = FrameSpec(),
    f0_min: float = 60.0,
    f0_max: float = 400.0,
) -> list[ProsodicVector]:
    """One ProsodicVector per (start, end) segment, times in seconds."""
    audio.require_extractable()
    total = audio.duration
    previous_end = None
    for start, end in segments:
        if end <= start:
            raise InvalidInputError(f"degenerate segment ({start}, {end})")
        if start < 0 or end > total + 1e-9:
            raise InvalidInputError(f"segment ({start}, {end}) outside audio of {total:.3f}s")
        if previous_end is not None and start < previous_end - 1e-9:
            raise InvalidInputError("segments overlap")
        previous_end = end
    out = []
    for start, end in segments:
        lo = int(round(start * audio.sample_rate))
        hi = max(lo + 1, int(round(end * audio.sample_rate)))
        piece = AudioBuffer(audio.samples[lo:hi], audio.sample_rate)
        track = pitch_track(piece, frames, f0_min=f0_min, f0_max=f0_max)
        out.append(aggregate_prosody(track, end - start))
    return out


def read_wav(path: str | Path) -> AudioBuffer:
    """Load 16-bit PCM mono WAV; anything else is rejected."""
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise InvalidInputError(f"unreadable WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise InvalidInputError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    return AudioBuffer(data.astype(np.float64) / 32768.0, int(rate))


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    """Write 16-bit PCM mono WAV, clipping to [-1, 1)."""
    clipped = np.clip(audio.samples, -1.0, 32767.0 / 32768.0)
    wavfile.write(str(path), audio.sample_rate, (clipped * 32768.0).astype(np.int16))


def write_features(
    path: str | Path,
    seq: FeatureSequence,
    frames: FrameSpec | None = None,
    spec: MfccSpec | None = None,
    sample_rate: int | None = None,
) -> None:
    """Binary feature file: magic, u32 frame count, u32 dim, f32 row-major data.

    A plain-text .meta sidecar records the extraction parameters.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(seq), seq.dim))
        fh.write(seq.vectors.astype("<f4").tobytes(order="C"))
    meta = {
        "frame_length_ms": frames.frame_length_ms if frames else FrameSpec().frame_length_ms,
        "frame_hop_ms": frames.frame_hop_ms if frames else FrameSpec().frame_hop_ms,
        "preemphasis": frames.preemphasis if frames else FrameSpec().preemphasis,
        "window": frames.window if frames else FrameSpec().window,
        "n_static": spec.n_static if spec else "",
        "n_mel_filters": spec.n_mel_filters if spec else "",
        "include_deltas": spec.include_deltas if spec else "",
        "delta_window": spec.delta_window if spec else "",
        "sample_rate": sample_rate if sample_rate else "",
    }
    lines = [f"{key} = {value}" for key, value in meta.items()]
    sidecar_path(path).write_text("\n".join(lines) + "\n")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_features(path: str | Path) -> tuple[FeatureSequence, dict]:
    """Inverse of write_features; frame times rebuilt from the sidecar hop."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise InvalidInputError(f"{path}: bad magic, not a feature file")
    n_frames, dim = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * n_frames * dim
    if len(raw) != expected:
        raise InvalidInputError(f"{path}: truncated feature file")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n_frames, dim).astype(np.float64)
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    hop_ms = float(meta.get("frame_hop_ms") or FrameSpec().frame_hop_ms)
    times = np.arange(n_frames) * hop_ms / 1000.0
    return FeatureSequence(data, times), meta
