"""Procedural stand-in for an emotional speech corpus.

Each class is a distinct spectro-temporal texture (steady harmonics, gated
noise bursts, pitch sweeps, ...) so that a small convolutional network with
global pooling can separate them; each speaker shifts pitch and level.
"""

from dataclasses import dataclass

import numpy as np

from .features import SAMPLE_RATE, AudioClip, MelConfig, extract

CLASS_NAMES = ("steady", "bursts", "sweeps", "tremolo", "rumble", "vibrato", "clicks")


def _harmonics(phase, n_harm, decay, rng):
    x = np.zeros_like(phase)
    for h in range(1, n_harm + 1):
        x += decay ** (h - 1) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return x


def _texture(label, t, rng, pitch):
    n = t.size
    if label == 0:      # steady low harmonic tone: dense horizontal lines
        f0 = 160.0 * pitch * rng.uniform(0.95, 1.05)
        return _harmonics(2 * np.pi * f0 * t, 12, 0.8, rng)
    if label == 1:      # gated broadband noise: vertical stripes
        rate = rng.uniform(5.0, 7.0)
        gate = (np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) > 0.3).astype(float)
        return gate * rng.standard_normal(n)
    if label == 2:      # repeated upward sweeps: diagonals
        period = rng.uniform(0.35, 0.5)
        frac = (t / period) % 1.0
        f = (300.0 + 2500.0 * frac) * pitch
        return np.sin(2 * np.pi * np.cumsum(f) / SAMPLE_RATE)
    if label == 3:      # sparse high harmonics with tremolo
        f0 = 620.0 * pitch * rng.uniform(0.95, 1.05)
        env = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(10.0, 14.0) * t)
        return env * _harmonics(2 * np.pi * f0 * t, 5, 0.7, rng)
    if label == 4:      # low-passed noise
        k = 40
        return np.convolve(rng.standard_normal(n), np.ones(k) / np.sqrt(k), mode="same")
    if label == 5:      # deep vibrato: wavy lines
        f0 = 300.0 * pitch
        phase = 2 * np.pi * f0 * t + (f0 * 0.15 / 5.0) * np.sin(2 * np.pi * 5.0 * t)
        return _harmonics(phase, 6, 0.6, rng)
    # impulse train: regular broadband clicks
    x = np.zeros(n)
    step = int(SAMPLE_RATE / rng.uniform(18.0, 24.0))
    x[rng.integers(0, step)::step] = 1.0
    return np.convolve(x, np.hanning(16), mode="same")


@dataclass(frozen=True)
class Utterance:
    client_id: int
    label: int
    clip: AudioClip


@dataclass
class Corpus:
    """Feature-level corpus: one row per utterance."""

    features: np.ndarray   # (N, W, H, 1)
    labels: np.ndarray     # (N,)
    clients: np.ndarray    # (N,)
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Corpus(self.features[idx], self.labels[idx], self.clients[idx], self.num_classes)


def synth_clip(label, rng, pitch_shift=1.0, gain=0.5, noise=0.02, min_seconds=1.5, max_seconds=5.0) -> AudioClip:
    """One clip of class ``label``; duration uniform in [min_seconds, max_seconds]."""
    if not 0 <= label < len(CLASS_NAMES):
        raise ValueError(f"label must lie in [0, {len(CLASS_NAMES)})")
    n = int(rng.uniform(min_seconds, max_seconds) * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    x = _texture(label, t, rng, pitch_shift)
    x /= np.max(np.abs(x)) + 1e-12
    x = gain * x + noise * rng.standard_normal(n)
    return AudioClip(np.clip(x, -1.0, 1.0))


def synthetic_corpus(n_clients=4, clips_per_client=40, num_classes=4, seed=0, noise=0.02):
    """Labelled utterances, balanced over classes within each client."""
    if not 2 <= num_classes <= len(CLASS_NAMES):
        raise ValueError(f"num_classes must lie in [2, {len(CLASS_NAMES)}]")
    out = []
    for client in range(n_clients):
        rng = np.random.default_rng([seed, client])
        pitch = rng.uniform(0.9, 1.1)
        gain = rng.uniform(0.3, 0.7)
        labels = np.arange(clips_per_client) % num_classes
        rng.shuffle(labels)
        for label in labels:
            out.append(Utterance(client, int(label), synth_clip(int(label), rng, pitch, gain, noise)))
    return out


def featurise(utterances, num_classes, config: MelConfig = MelConfig(), normalise=True) -> Corpus:
    feats = np.stack([extract(u.clip, config, normalise) for u in utterances]) if utterances else \
        np.zeros((0, config.target_frames, config.n_mels, 1))
    return Corpus(feats,
                  np.array([u.label for u in utterances], dtype=int),
                  np.array([u.client_id for u in utterances], dtype=int),
                  num_classes)
