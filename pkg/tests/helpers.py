"""Independent oracles shared by the test modules."""

import numpy as np

from fedser.network import NetworkSpec, conv, cross_entropy, dense, forward, init_params, loss_and_gradients
from fedser.network.model import BATCHNORM, FLATTEN, GAP, MAXPOOL, RELU


def central_diff(f, x, step=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a, b, floor=1e-6):
    """max|a - b| over the combined scale; ``floor`` keeps structurally zero
    gradients (e.g. a bias feeding train-mode batchnorm) from dividing
    finite-difference roundoff by ~0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(floor, np.max(np.abs(a)) + np.max(np.abs(b))))


# one small net per layer kind, each ending in logits
GRADCHECK_NETS = {
    "dense": lambda: NetworkSpec((2, 3, 1), (FLATTEN, dense(3)), 3),
    "conv2d": lambda: NetworkSpec((5, 4, 2), (conv(3), FLATTEN, dense(3)), 3),
    "conv2d_stride2": lambda: NetworkSpec((6, 5, 1), (conv(2, kernel=3, stride=2), FLATTEN, dense(3)), 3),
    "batchnorm": lambda: NetworkSpec((4, 3, 2), (conv(3), BATCHNORM, FLATTEN, dense(3)), 3),
    "relu": lambda: NetworkSpec((4, 3, 1), (conv(3), RELU, FLATTEN, dense(3)), 3),
    "maxpool": lambda: NetworkSpec((4, 6, 1), (conv(2), MAXPOOL, FLATTEN, dense(3)), 3),
    "globalavgpool": lambda: NetworkSpec((4, 3, 2), (conv(3), GAP, dense(3)), 3),
    "flatten": lambda: NetworkSpec((3, 2, 2), (FLATTEN, dense(4), RELU, dense(2)), 2),
}


def gradcheck_case(spec, seed, mode="train", batch=3):
    """Max relative error of analytic vs finite-difference gradients (params and input)."""
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng)
    # non-trivial batchnorm affine and running stats
    upd = {}
    for n in params.names:
        if n.endswith(("gamma", "beta", "running_mean")):
            upd[n] = rng.normal(0, 0.5, params[n].shape) + (1.0 if n.endswith("gamma") else 0.0)
        elif n.endswith("running_var"):
            upd[n] = rng.uniform(0.5, 2.0, params[n].shape)
        elif n.endswith(".b"):
            upd[n] = rng.normal(0, 0.3, params[n].shape)
    params = params.replace(upd)
    x = rng.normal(size=(batch,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, batch)
    _, grads = loss_and_gradients(spec, params, x, y, mode)

    def loss(p, v):  # forward only, so the oracle shares no backward code
        return cross_entropy(forward(spec, p, v, mode)[0], y)[0]

    errs = {}
    for name in params.trainable:
        errs[name] = rel_error(grads.params[name],
                               central_diff(lambda v, name=name: loss(params.replace({name: v}), x), params[name]))
    errs["input"] = rel_error(grads.input, central_diff(lambda v: loss(params, v), x))
    return errs
