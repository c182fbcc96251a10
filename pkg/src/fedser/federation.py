"""Simulated federated adversarial training with sample-weighted averaging."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import AttackConfig, AttackError, attack_batch
from .defences import RandomisationConfig, mixed_adversarial_loss, randomise_batch, split_round_data
from .metrics import evaluate_predictions, write_confusion, write_run_log
from .network import (AdamState, Classifier, NetworkSpec, Parameters, adam_step, build_tiny, build_vgg15,
                      init_params, loss_and_gradients, save_checkpoint)

log = logging.getLogger(__name__)

MODES = ("nature", "adv_train")
# SeedSequence tags keeping the global-init and evaluation streams apart from client streams
INIT_TAG = 1_000_003
EVAL_TAG = 1_000_033


class FederationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 4
    rounds: int = 300
    local_epochs: int = 1
    train_batch: int = 8
    eval_batch: int = 1
    eval_every: int = 10
    mode: str = "nature"
    attack: AttackConfig = AttackConfig()
    eval_attacks: tuple = ()          # families evaluated at checkpoints; empty = (attack.family,)
    mix_alpha: float = 0.5
    lr: float = 0.001
    seed: int = 0
    model: str = "tiny"               # "tiny" or "vgg15"
    randomisation: RandomisationConfig = RandomisationConfig()
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 1 or self.eval_every < 1 or self.local_epochs < 1:
            raise ValueError("rounds, eval_every and local_epochs must be >= 1")
        if self.train_batch < 1 or self.eval_batch < 1 or self.n_clients < 1:
            raise ValueError("batch sizes and n_clients must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise ValueError("mix_alpha must lie in [0, 1]")
        if self.model not in ("tiny", "vgg15"):
            raise ValueError("model must be 'tiny' or 'vgg15'")
        object.__setattr__(self, "eval_attacks", tuple(self.eval_attacks))

    @property
    def evaluation_attacks(self):
        fams = self.eval_attacks or (self.attack.family,)
        return [AttackConfig(f, self.attack.epsilon, self.attack.eta, self.attack.step,
                             self.attack.max_iter, self.attack.zeta) for f in fams]


def build_network(config: FederationConfig, num_classes) -> Classifier:
    """Model sized for the padded randomisation shape, accepting base-shaped inputs."""
    r = config.randomisation
    builder = build_tiny if config.model == "tiny" else build_vgg15
    return Classifier(builder(r.final_shape, num_classes), r.base_shape, r.pad_value)


def client_rng(seed, client_id, round_):
    """Independent stream per (master seed, client, round)."""
    return np.random.default_rng([seed, client_id, round_])


@dataclass
class ClientState:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    params: Optional[Parameters] = None      # local model after the client's last round
    optimiser: Optional[AdamState] = None
    samples_seen: int = field(default=0)

    def __post_init__(self):
        if len(self.labels) == 0 or len(self.features) != len(self.labels):
            raise ValueError(f"client {self.client_id}: dataset must be non-empty with one label per sample")


def _train_batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_epochs(model: Classifier, params, state, x, y, epochs, batch, lr, rng):
    """Plain mini-batch Adam on (x, y). Returns ``(params, state, samples_seen)``."""
    seen = 0
    for _ in range(epochs):
        for idx in _train_batches(len(x), batch, rng):
            _, grads = loss_and_gradients(model.spec, params, model.prepare(x[idx]), y[idx], "train",
                                          input_grad=False)
            params, state = adam_step(params, grads.params, state, lr)
            params = params.replace(grads.running)
            seen += len(idx)
    return params, state, seen


def train_mixed_epochs(model: Classifier, params, state, x_kept, y_kept, x_adv, y_adv, mix_alpha,
                       epochs, batch, lr, rng):
    """Mini-batch Adam on the mixed loss; every batch holds both clean and adversarial samples."""
    n = len(x_kept) + len(x_adv)
    n_batches = max(1, min(-(-n // batch), len(x_kept), len(x_adv)))
    seen = 0
    for _ in range(epochs):
        kb = np.array_split(rng.permutation(len(x_kept)), n_batches)
        ab = np.array_split(rng.permutation(len(x_adv)), n_batches)
        for ki, ai in zip(kb, ab):
            _, grads = mixed_adversarial_loss(model.spec, params, model.prepare(x_kept[ki]),
                                              model.prepare(x_adv[ai]), y_kept[ki], y_adv[ai], mix_alpha)
            params, state = adam_step(params, grads.params, state, lr)
            params = params.replace(grads.running)
            seen += len(ki) + len(ai)
    return params, state, seen


def local_train_round(client: ClientState, global_params: Parameters, config: FederationConfig,
                      round_: int, model: Classifier):
    """One client's round: load the global weights, (optionally) attack half the data, train.

    Returns ``(new_params, sample_count)`` and updates the client's local model,
    optimiser state and ``samples_seen``.
    """
    rng = client_rng(config.seed, client.client_id, round_)
    if client.optimiser is None:
        client.optimiser = AdamState.zeros_like(global_params)
    x, y = client.features, client.labels
    if config.mode == "adv_train" and round_ >= 2:
        split = split_round_data(len(x), rng)
        previous = client.params if client.params is not None else global_params
        try:
            adv = attack_batch(model, previous, x[split.to_attack], y[split.to_attack], config.attack)
        except AttackError as exc:
            raise FederationError(f"round {round_}, client {client.client_id}: attack failed: {exc}") from exc
        params, state, seen = train_mixed_epochs(
            model, global_params, client.optimiser, x[split.kept], y[split.kept], adv.perturbed,
            y[split.to_attack], config.mix_alpha, config.local_epochs, config.train_batch, config.lr, rng)
    else:
        params, state, seen = train_epochs(model, global_params, client.optimiser, x, y, config.local_epochs,
                                           config.train_batch, config.lr, rng)
    client.params, client.optimiser = params, state
    client.samples_seen = seen
    return params, len(x)


def aggregate_weights(reports) -> Parameters:
    """Sample-count-weighted element-wise mean of every tensor, running statistics included."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report to aggregate")
    first = reports[0][0]
    for p, c in reports:
        if not first.same_layout(p):
            raise ValueError("parameter layouts differ between reports")
        if c <= 0:
            raise ValueError("sample counts must be positive")
    total = float(sum(c for _, c in reports))
    fracs = [c / total for _, c in reports]
    out = {}
    for name in first.names:
        acc = fracs[0] * reports[0][0][name]
        for f, (p, _) in zip(fracs[1:], reports[1:]):
            acc = acc + f * p[name]
        out[name] = acc
    return Parameters(out)


def speaker_dependent_split(corpus, train_fraction=0.8, rng=None):
    """Per-client train/test split; test rows are pooled into one global test set.

    Returns ``(train_sets, test)`` where ``train_sets`` maps client id to a
    ``Corpus`` and ``test`` is a ``Corpus``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    train_idx, test_idx, per_client = [], [], {}
    for cid in np.unique(corpus.clients):
        idx = np.flatnonzero(corpus.clients == cid)
        n = len(idx)
        if n < 2:
            raise ValueError(f"client {cid} has {n} sample(s); need at least 2 to split")
        n_train = min(n - 1, max(1, int(np.floor(train_fraction * n + 0.5))))
        idx = idx[rng.permutation(n)]
        tr, te = np.sort(idx[:n_train]), np.sort(idx[n_train:])
        per_client[int(cid)] = corpus.subset(tr)
        train_idx.append(tr)
        test_idx.append(te)
    return per_client, corpus.subset(np.concatenate(test_idx))


def evaluate_global(model: Classifier, params, x, y, config: FederationConfig, round_):
    """Original, randomised, adversarial and randomised-adversarial metrics for one checkpoint."""
    k = model.num_classes
    rcfg = config.randomisation
    eval_rng = lambda cond: np.random.default_rng([config.seed, EVAL_TAG, round_, cond])

    def predict(batch):
        preds = [model.logits(params, batch[i:i + config.eval_batch]).argmax(axis=1)
                 for i in range(0, len(batch), config.eval_batch)]
        return np.concatenate(preds)

    records = [
        evaluate_predictions(round_, "original", "none", y, predict(x), k),
        evaluate_predictions(round_, "randomised", "none", y, predict(randomise_batch(x, eval_rng(0), rcfg)), k),
    ]
    for j, acfg in enumerate(config.evaluation_attacks, start=1):
        adv = attack_batch(model, params, x, y, acfg)
        extra = dict(mean_perturbation_norm=adv.mean_norm, attack_success_rate=adv.success_rate)
        records.append(evaluate_predictions(round_, "adversarial", acfg.family, y, predict(adv.perturbed), k,
                                            **extra))
        rand_adv = randomise_batch(adv.perturbed, eval_rng(j), rcfg)
        records.append(evaluate_predictions(round_, "randomised_adversarial", acfg.family, y, predict(rand_adv),
                                            k, **extra))
    return records


def make_clients(train_sets):
    return [ClientState(cid, c.features, c.labels) for cid, c in sorted(train_sets.items())]


def initial_params(model: Classifier, seed):
    return init_params(model.spec, np.random.default_rng([seed, INIT_TAG]))


def run_federated(clients, test, config: FederationConfig, model: Classifier = None, out_dir=None,
                  schedule=None, on_round=None):
    """Run ``config.rounds`` rounds and evaluate every ``config.eval_every`` rounds.

    ``test`` is a ``(features, labels)`` pair (or a Corpus). ``schedule`` may
    permute the order clients are trained in; the aggregate is always taken in
    client-id order so it does not depend on scheduling. With ``out_dir`` the
    run log, confusion matrices and ``round_<t>.ckpt`` checkpoints are written
    as checkpoints happen. Returns ``(global_params, records)``.
    """
    x_test, y_test = (test.features, test.labels) if hasattr(test, "features") else test
    num_classes = int(getattr(test, "num_classes", 0)) or int(max(
        [int(np.max(y_test))] + [int(np.max(c.labels)) for c in clients]) + 1)
    model = model or build_network(config, num_classes)
    params = initial_params(model, config.seed)
    by_id = {c.client_id: c for c in clients}
    if len(by_id) != len(clients):
        raise ValueError("client ids must be unique")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_run_log(out / "run_log.csv", [])
    threads = max(1, int(config.threads))
    records = []
    for t in range(1, config.rounds + 1):
        order = list(schedule(t, sorted(by_id))) if schedule else sorted(by_id)

        def work(cid, t=t, params=params):
            try:
                return cid, local_train_round(by_id[cid], params, config, t, model)
            except FederationError:
                raise
            except Exception as exc:
                raise FederationError(f"round {t}, client {cid}: {exc}") from exc

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = dict(pool.map(lambda c: work(c), order))
        else:
            results = dict(work(cid) for cid in order)
        params = aggregate_weights([results[cid] for cid in sorted(results)])
        if on_round is not None:
            on_round(t, params)
        if t % config.eval_every == 0:
            recs = evaluate_global(model, params, x_test, y_test, config, t)
            records.extend(recs)
            log.info("round %d: %s", t, ", ".join(f"{r.condition}/{r.attack}={r.uar:.3f}" for r in recs))
            if out is not None:
                write_run_log(out / "run_log.csv", recs, append=True)
                for r in recs:
                    write_confusion(out / f"confusion_round_{t}_{r.condition}_{r.attack}.csv", r.confusion)
                save_checkpoint(out / f"round_{t}.ckpt", model.spec, params)
    return params, records


def default_threads():
    """Thread count from ``FEDSER_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FEDSER_THREADS", "1")))
    except ValueError:
        return 1
