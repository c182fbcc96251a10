"""Training-time (adversarial mixing) and inference-time (randomisation) defences."""

from dataclasses import dataclass

import numpy as np

from .network import Gradients, NetworkSpec, Parameters, backward, forward
from .network.model import ShapeError


@dataclass(frozen=True)
class RandomisationConfig:
    base_w: int = 373
    base_h: int = 64
    resize_w_range: tuple = (373, 380)   # half-open
    resize_h_range: tuple = (64, 66)
    final_w: int = 380
    final_h: int = 66
    pad_value: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "resize_w_range", tuple(self.resize_w_range))
        object.__setattr__(self, "resize_h_range", tuple(self.resize_h_range))
        for name in ("resize_w_range", "resize_h_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo < hi:
                raise ValueError(f"{name} must be a non-empty [lo, hi) range of positive ints, got {(lo, hi)}")
        if self.resize_w_range[1] - 1 > self.final_w or self.resize_h_range[1] - 1 > self.final_h:
            raise ValueError("final dimensions must cover every resize draw")
        if self.base_w > self.final_w or self.base_h > self.final_h:
            raise ValueError("final dimensions must cover the base dimensions")

    @property
    def final_shape(self):
        return (self.final_w, self.final_h, 1)

    @property
    def base_shape(self):
        return (self.base_w, self.base_h, 1)


@dataclass(frozen=True)
class RoundSplit:
    kept: np.ndarray
    to_attack: np.ndarray


def split_round_data(n_samples, rng) -> RoundSplit:
    """Random disjoint halves; an odd sample goes to ``kept``."""
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples to split, got {n_samples}")
    perm = rng.permutation(n_samples)
    n_kept = n_samples - n_samples // 2
    return RoundSplit(np.sort(perm[:n_kept]), np.sort(perm[n_kept:]))


def mixed_adversarial_loss(spec: NetworkSpec, params: Parameters, kept_batch, adv_batch,
                           labels_kept, labels_adv, mix_alpha=0.5, mode="train"):
    """``mix_alpha * CE(kept) + (1 - mix_alpha) * CE(adv)`` on one pooled forward pass.

    Both branches go through the network together, so in train mode they share
    batchnorm statistics. Returns ``(loss, grads)`` like ``loss_and_gradients``.
    """
    if not 0.0 <= mix_alpha <= 1.0:
        raise ValueError(f"mix_alpha must lie in [0, 1], got {mix_alpha}")
    kept_batch = np.asarray(kept_batch, dtype=np.float64)
    adv_batch = np.asarray(adv_batch, dtype=np.float64)
    nk, na = len(kept_batch), len(adv_batch)
    if nk == 0 and mix_alpha > 0:
        raise ValueError("clean branch is empty but carries non-zero weight")
    if na == 0 and mix_alpha < 1:
        raise ValueError("adversarial branch is empty but carries non-zero weight")
    parts = [b for b in (kept_batch, adv_batch) if len(b)]
    x = np.concatenate(parts)
    y = np.concatenate([np.asarray(labels_kept, dtype=int)[:nk], np.asarray(labels_adv, dtype=int)[:na]])
    if len(y) != len(x):
        raise ShapeError("labels do not match batch sizes")
    weights = np.concatenate([np.full(nk, mix_alpha / nk if nk else 0.0),
                              np.full(na, (1.0 - mix_alpha) / na if na else 0.0)])
    logits, cache = forward(spec, params, x, mode)
    k = logits.shape[1]
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(y))
    loss = float(-(weights * logp[rows, y]).sum())
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    grads = backward(spec, cache, dlogits * weights[:, None])
    return loss, Gradients(grads.params, grads.input, cache.running)


def _lerp_axis(x, new_len, axis):
    old = x.shape[axis]
    if new_len == old:
        return x
    pos = np.arange(new_len) * ((old - 1) / (new_len - 1)) if new_len > 1 else np.zeros(1)
    lo = np.clip(np.floor(pos).astype(int), 0, old - 1)
    hi = np.minimum(lo + 1, old - 1)
    t = pos - lo
    shape = [1] * x.ndim
    shape[axis] = new_len
    a, b = np.take(x, lo, axis=axis), np.take(x, hi, axis=axis)
    return a + t.reshape(shape) * (b - a)


def resize_bilinear(x, new_w, new_h):
    """Bilinear resize of a (W, H, C) array with corner-aligned sampling."""
    x = np.asarray(x, dtype=np.float64)
    out = _lerp_axis(_lerp_axis(x, new_w, 0), new_h, 1)
    return np.clip(out, x.min(), x.max()) if out is not x else out.copy()


def random_resize(x, rng, config: RandomisationConfig = RandomisationConfig()):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != config.base_shape:
        raise ShapeError(f"expected input of shape {config.base_shape}, got {x.shape}")
    w = int(rng.integers(*config.resize_w_range))
    h = int(rng.integers(*config.resize_h_range))
    return resize_bilinear(x, w, h)


def random_pad(x, rng, config: RandomisationConfig = RandomisationConfig()):
    x = np.asarray(x, dtype=np.float64)
    w, h = x.shape[0], x.shape[1]
    if x.ndim != 3 or w > config.final_w or h > config.final_h:
        raise ShapeError(f"input {x.shape} does not fit inside {config.final_shape}")
    left = int(rng.integers(0, config.final_w - w + 1))
    top = int(rng.integers(0, config.final_h - h + 1))
    out = np.full((config.final_w, config.final_h, x.shape[2]), config.pad_value)
    out[left:left + w, top:top + h, :] = x
    return out


def randomise(x, rng, config: RandomisationConfig = RandomisationConfig()):
    """Random resize followed by random pad, always yielding ``config.final_shape``."""
    return random_pad(random_resize(x, rng, config), rng, config)


def randomise_batch(batch, rng, config: RandomisationConfig = RandomisationConfig()):
    """Independent per-sample draws from one rng stream, in sample order."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) == 0:
        return np.zeros((0,) + config.final_shape)
    return np.stack([randomise(x, rng, config) for x in batch])


def centre_pad(batch, config: RandomisationConfig = RandomisationConfig()):
    """Deterministic pad of a base-shaped batch to the final shape (clean evaluation path)."""
    batch = np.asarray(batch, dtype=np.float64)
    w, h = batch.shape[1], batch.shape[2]
    if w > config.final_w or h > config.final_h:
        raise ShapeError(f"input {batch.shape[1:]} does not fit inside {config.final_shape}")
    left, top = (config.final_w - w) // 2, (config.final_h - h) // 2
    out = np.full((len(batch), config.final_w, config.final_h, batch.shape[3]), config.pad_value)
    out[:, left:left + w, top:top + h, :] = batch
    return out
