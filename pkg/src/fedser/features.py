"""Log-Mel spectrogram extraction for 16 kHz mono speech."""

import wave
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SAMPLE_RATE = 16000
# 5.984 s; floor((95744 - 512) / 256) + 1 == 373 frames
TARGET_SAMPLES = 95744
LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("audio clip must be a non-empty 1-D array")
        if not np.all(np.abs(samples) <= 1.0):
            raise AudioFormatError("audio samples must be finite and lie in [-1, 1]")
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class MelConfig:
    window_len: int = 512
    hop: int = 256
    n_mels: int = 64
    target_frames: int = 373
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if self.hop < 1 or self.hop > self.window_len:
            raise ValueError("hop must lie in [1, window_len]")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def target_samples(self):
        return (self.target_frames - 1) * self.hop + self.window_len


def frame_count(n_samples, window_len, hop):
    """Frames produced without centre padding."""
    if n_samples < window_len:
        raise ValueError(f"signal of {n_samples} samples is shorter than the {window_len}-sample window")
    return (n_samples - window_len) // hop + 1


def unify_length(clip: AudioClip, target_samples=TARGET_SAMPLES) -> AudioClip:
    """Tile short clips end-to-end, truncate long ones, to exactly ``target_samples``."""
    if target_samples <= 0:
        raise ValueError("target_samples must be positive")
    x = clip.samples
    if x.size < target_samples:
        x = np.tile(x, -(-target_samples // x.size))
    return AudioClip(x[:target_samples].copy(), clip.sample_rate)


def hann(n):
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(clip: AudioClip, window_len=512, hop=256) -> np.ndarray:
    """|STFT| with a Hann window and no centre padding, shape (frames, window_len // 2 + 1)."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    frame_count(samples.size, window_len, hop)
    frames = sliding_window_view(samples, window_len)[::hop]
    return np.abs(np.fft.rfft(frames * hann(window_len), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=64, n_fft_bins=257, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=8000.0) -> np.ndarray:
    """Triangular filters with centres equally spaced in mel, shape (n_mels, n_fft_bins).

    Each row is scaled so its largest weight is exactly 1.
    """
    if not 0.0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got fmin={fmin}, fmax={fmax}")
    n_fft = 2 * (n_fft_bins - 1)
    bin_hz = np.arange(n_fft_bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks <= 0.0)
    if empty.size:
        raise ValueError(f"{n_mels} mel bands are too many for {n_fft_bins} FFT bins: "
                         f"filter {empty[0]} covers no bin")
    return fb / peaks[:, None]


def log_mel(clip: AudioClip, config: MelConfig = MelConfig()) -> np.ndarray:
    """Natural-log Mel power spectrogram of shape (target_frames, n_mels, 1)."""
    if len(clip) != config.target_samples:
        raise ValueError(f"clip has {len(clip)} samples; unify it to {config.target_samples} first")
    power = stft_magnitude(clip, config.window_len, config.hop) ** 2
    fb = mel_filterbank(config.n_mels, config.window_len // 2 + 1, clip.sample_rate, config.fmin, config.fmax)
    out = np.log(power @ fb.T + LOG_FLOOR)
    if out.shape[0] != config.target_frames:
        raise ValueError(f"got {out.shape[0]} frames, expected {config.target_frames}")
    return out[:, :, None]


def minmax_normalise(spec):
    """Rescale a spectrogram to [0, 1]; constant inputs map to 0."""
    lo, hi = spec.min(), spec.max()
    if hi - lo <= 0:
        return np.zeros_like(spec)
    return (spec - lo) / (hi - lo)


def extract(clip: AudioClip, config: MelConfig = MelConfig(), normalise=True):
    """Full pipeline: unify length, log-Mel, optional min-max scaling."""
    spec = log_mel(unify_length(clip, config.target_samples), config)
    return minmax_normalise(spec) if normalise else spec


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM mono 16 kHz WAV file."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV ({wf.getcomptype()}) is not supported")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if data.size == 0:
        raise AudioFormatError(f"{path}: no audio frames")
    return AudioClip(data, rate)


def write_wav(path, clip: AudioClip):
    """Write a clip as 16-bit PCM mono; samples are clipped to [-1, 1)."""
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(q.tobytes())
