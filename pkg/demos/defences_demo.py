"""The two defences: mixed clean/adversarial training and input randomisation.

Run: python demos/defences_demo.py
"""

import numpy as np

from fedser.defences import RandomisationConfig, centre_pad, mixed_adversarial_loss, randomise, split_round_data
from fedser.network import build_tiny, init_params

rng = np.random.default_rng(0)

# Each round a client keeps half its data clean and attacks the other half.
split = split_round_data(9, rng)
print("kept:", split.kept.tolist(), "attacked:", split.to_attack.tolist())

# The training loss blends the two halves; alpha = 1 ignores the adversarial half.
spec = build_tiny((12, 8, 1), 3)
params = init_params(spec, rng)
xk, xa = rng.uniform(size=(4, 12, 8, 1)), rng.uniform(size=(4, 12, 8, 1))
yk, ya = rng.integers(0, 3, 4), rng.integers(0, 3, 4)
for alpha in (0.0, 0.5, 1.0):
    loss, _ = mixed_adversarial_loss(spec, params, xk, xa, yk, ya, alpha)
    print(f"alpha {alpha}: loss {loss:.4f}")

# Randomisation resizes the grid slightly and pads it at a random offset.
cfg = RandomisationConfig()
x = rng.uniform(size=cfg.base_shape)
for _ in range(3):
    r = randomise(x, rng, cfg)
    pad = r[..., 0] == cfg.pad_value
    print(f"randomised to {r.shape}, cells at the pad value {pad.sum()}")
print("deterministic centre pad for clean inputs:", centre_pad(x[None], cfg).shape)
