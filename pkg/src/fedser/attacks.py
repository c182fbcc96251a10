"""White-box evasion attacks on spectrogram inputs: FGSM, PGD and DeepFool.

Attacks are untargeted, use ground-truth labels where a loss is needed, and
never modify their inputs. ``model`` is anything exposing the
:class:`fedser.network.Classifier` methods (``logits``, ``loss_input_grad``,
``logits_and_jacobian``); binary DeepFool needs ``decision`` and
``decision_grad`` instead (see :class:`AffineDecision`, :class:`LogitMargin`).
"""

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("fgsm", "pgd", "deepfool")
NORMS = {"fgsm": "l_inf", "pgd": "l_inf", "deepfool": "l2"}


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    family: str = "fgsm"
    epsilon: float = 0.05
    eta: float = 0.05
    step: float = 0.01
    max_iter: int = 5
    zeta: float = 0.02

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"attack family must be one of {FAMILIES}, got {self.family!r}")
        for name in ("epsilon", "eta", "step", "zeta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def norm(self):
        return NORMS[self.family]


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    perturbed: np.ndarray
    labels: np.ndarray
    success: np.ndarray      # prediction changed
    norms: np.ndarray        # per-sample perturbation norm in the attack's norm
    iterations: np.ndarray = field(default=None)
    norm: str = "l_inf"

    def __len__(self):
        return len(self.labels)

    @property
    def success_rate(self):
        return float(self.success.mean()) if len(self) else 0.0

    @property
    def mean_norm(self):
        return float(self.norms.mean()) if len(self) else 0.0


def _checked(g, what="gradient"):
    if not np.all(np.isfinite(g)):
        raise AttackError(f"non-finite {what} encountered")
    return g


def fgsm(model, params, x, y, epsilon=0.05):
    """One signed-gradient step of size ``epsilon`` (sign(0) = 0)."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    _, g = model.loss_input_grad(params, x, y)
    return x + epsilon * np.sign(_checked(g))


def pgd(model, params, x, y, config: AttackConfig = AttackConfig(family="pgd")):
    """Iterated signed steps; the running perturbation is kept in the l_inf eta-ball."""
    x0 = np.asarray(x, dtype=np.float64)
    delta = np.zeros_like(x0)
    for _ in range(config.max_iter):
        _, g = model.loss_input_grad(params, x0 + delta, y)
        delta = np.clip(delta + config.step * np.sign(_checked(g)), -config.eta, config.eta)
    return x0 + delta


class AffineDecision:
    """f(x) = <w, x> + b per sample; handy as an exactly linear binary model."""

    def __init__(self, w, b=0.0):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)

    def decision(self, params, x):
        x = np.asarray(x, dtype=np.float64)
        return x.reshape(len(x), -1) @ self.w.ravel() + self.b

    def decision_grad(self, params, x):
        return np.broadcast_to(self.w, np.shape(x)).copy()


class LogitMargin:
    """Binary decision value ``logit[pos] - logit[neg]`` of a classifier."""

    def __init__(self, model, pos=1, neg=0):
        self.model, self.pos, self.neg = model, pos, neg

    def decision(self, params, x):
        z = self.model.logits(params, x)
        return z[:, self.pos] - z[:, self.neg]

    def decision_grad(self, params, x):
        x = np.asarray(x, dtype=np.float64)
        d = np.zeros((len(x), self.model.num_classes))
        d[:, self.pos], d[:, self.neg] = 1.0, -1.0
        return self.model.logit_input_grad(params, x, d)


def _l2(a):
    return np.sqrt((a.reshape(len(a), -1) ** 2).sum(axis=1))


def deepfool_binary_iters(model, params, x, zeta=0.02, max_iter=5):
    """Binary DeepFool; returns ``(x_adv, iterations)``."""
    x0 = np.asarray(x, dtype=np.float64)
    shape = (-1,) + (1,) * (x0.ndim - 1)
    s0 = np.sign(model.decision(params, x0))
    r_tot = np.zeros_like(x0)
    iters = np.zeros(len(x0), dtype=int)
    active = s0 != 0
    for _ in range(max_iter):
        if not active.any():
            break
        xi = x0 + (1.0 + zeta) * r_tot
        f = model.decision(params, xi)
        g = _checked(model.decision_grad(params, xi))
        gg = _l2(g) ** 2
        stuck = active & (gg == 0) & (f != 0)
        if stuck.any():
            raise AttackError(f"zero decision gradient for samples {np.flatnonzero(stuck).tolist()}: "
                              "boundary unreachable")
        step = np.where(active, -f / np.where(gg > 0, gg, 1.0), 0.0)
        r_tot = r_tot + step.reshape(shape) * g
        iters += active
        f_new = model.decision(params, x0 + (1.0 + zeta) * r_tot)
        active &= np.sign(f_new) == s0
    return x0 + (1.0 + zeta) * r_tot, iters


def deepfool_binary(model, params, x, zeta=0.02, max_iter=5):
    """Step to the linearised boundary f = 0 until the sign flips, then overshoot by (1 + zeta)."""
    return deepfool_binary_iters(model, params, x, zeta, max_iter)[0]


def deepfool_multiclass_iters(model, params, x, zeta=0.02, max_iter=5):
    """One-vs-all DeepFool; returns ``(x_adv, iterations)``."""
    x0 = np.asarray(x, dtype=np.float64)
    n = len(x0)
    shape = (-1,) + (1,) * (x0.ndim - 1)
    if model.num_classes < 2:
        raise ValueError("DeepFool needs at least two classes")
    k0 = model.logits(params, x0).argmax(axis=1)
    r_tot = np.zeros_like(x0)
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xi = x0[idx] + (1.0 + zeta) * r_tot[idx]
        logits, jac = model.logits_and_jacobian(params, xi)   # jac: (K, b, ...)
        _checked(jac)
        kh = k0[idx]
        b = np.arange(len(idx))
        w_diff = jac - jac[kh, b][None]                      # w'_k = grad f_k - grad f_khat
        f_diff = logits.T - logits[b, kh][None]              # f'_k = f_k - f_khat, shape (K, b)
        w_norm = np.sqrt((w_diff.reshape(model.num_classes, len(idx), -1) ** 2).sum(axis=2))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(f_diff) / w_norm
        ratio[kh, b] = np.inf
        ratio[w_norm == 0] = np.inf
        if np.any(np.all(np.isinf(ratio), axis=0)):
            bad = idx[np.all(np.isinf(ratio), axis=0)]
            raise AttackError(f"all class-difference gradients vanish for samples {bad.tolist()}")
        target = ratio.argmin(axis=0)
        w_t = w_diff[target, b]
        coef = np.abs(f_diff[target, b]) / w_norm[target, b] ** 2
        r_tot[idx] = r_tot[idx] + coef.reshape(shape) * w_t
        iters[idx] += 1
        pred = model.logits(params, x0[idx] + (1.0 + zeta) * r_tot[idx]).argmax(axis=1)
        active[idx] = pred == k0[idx]
    return x0 + (1.0 + zeta) * r_tot, iters


def deepfool_multiclass(model, params, x, zeta=0.02, max_iter=5):
    """Step towards the nearest linearised one-vs-all boundary until the top class changes."""
    return deepfool_multiclass_iters(model, params, x, zeta, max_iter)[0]


def perturbation_norms(delta, norm):
    d = delta.reshape(len(delta), -1)
    if norm == "l_inf":
        return np.abs(d).max(axis=1) if d.shape[1] else np.zeros(len(d))
    return np.sqrt((d ** 2).sum(axis=1))


def attack_batch(model, params, batch, labels, config: AttackConfig) -> AdversarialBatch:
    """Run the configured attack on a batch and record success and perturbation size."""
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(x) == 0:
        empty = np.zeros(0)
        return AdversarialBatch(x.copy(), x.copy(), y.copy(), empty.astype(bool), empty,
                                np.zeros(0, dtype=int), config.norm)
    iters = None
    if config.family == "fgsm":
        adv = fgsm(model, params, x, y, config.epsilon)
        iters = np.ones(len(x), dtype=int)
    elif config.family == "pgd":
        adv = pgd(model, params, x, y, config)
        iters = np.full(len(x), config.max_iter)
    else:
        adv, iters = deepfool_multiclass_iters(model, params, x, config.zeta, config.max_iter)
    before = model.logits(params, x).argmax(axis=1)
    after = model.logits(params, adv).argmax(axis=1)
    return AdversarialBatch(x.copy(), adv, y.copy(), after != before,
                            perturbation_norms(adv - x, config.norm), iters, config.norm)
