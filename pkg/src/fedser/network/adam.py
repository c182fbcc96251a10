"""Adam optimiser over the trainable tensors of a :class:`Parameters`."""

from dataclasses import dataclass

import numpy as np

from .model import Parameters

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Parameters) -> "AdamState":
        return cls({n: np.zeros_like(params[n]) for n in params.trainable},
                   {n: np.zeros_like(params[n]) for n in params.trainable})


def adam_step(params: Parameters, grads: dict, state: AdamState, lr=0.001,
              beta1=BETA1, beta2=BETA2, eps=EPS):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Raises ``ValueError`` (and leaves everything untouched) if any gradient is
    non-finite or the state does not match the parameters.
    """
    names = params.trainable
    if set(state.m) != set(names) or any(state.m[n].shape != params[n].shape for n in names):
        raise ValueError("optimiser state does not match the parameter layout")
    missing = set(names) - set(grads)
    if missing:
        raise ValueError(f"missing gradients for {sorted(missing)}")
    for n in names:
        if not np.all(np.isfinite(grads[n])):
            raise ValueError(f"non-finite gradient for {n}; step refused")
    t = state.t + 1
    m, v, updates = {}, {}, {}
    for n in names:
        g = grads[n]
        m[n] = beta1 * state.m[n] + (1.0 - beta1) * g
        v[n] = beta2 * state.v[n] + (1.0 - beta2) * g * g
        m_hat = m[n] / (1.0 - beta1 ** t)
        v_hat = v[n] / (1.0 - beta2 ** t)
        updates[n] = params[n] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.replace(updates), AdamState(m, v, t)
