"""FGSM, PGD and DeepFool against a briefly trained tiny classifier.

Run: python demos/attacks_demo.py
"""

import numpy as np

from fedser.attacks import AttackConfig, attack_batch, fgsm
from fedser.federation import FederationConfig, build_network, make_clients, run_federated, speaker_dependent_split
from fedser.synthetic import featurise, synthetic_corpus

corpus = featurise(synthetic_corpus(n_clients=1, clips_per_client=40, num_classes=3, seed=0), 3)
train, test = speaker_dependent_split(corpus, 0.75, np.random.default_rng(0))
config = FederationConfig(n_clients=1, rounds=20, eval_every=20)
model = build_network(config, 3)
params, _ = run_federated(make_clients(train), test, config, model)

x, y = test.features, test.labels
clean = model.logits(params, x).argmax(axis=1)
print(f"clean accuracy on {len(y)} held-out clips: {np.mean(clean == y):.2f}")

# FGSM moves every input cell by exactly epsilon in the direction of the loss gradient.
adv = fgsm(model, params, x, y, 0.05)
print(f"FGSM max |perturbation| = {np.abs(adv - x).max():.3f}")

for family in ("fgsm", "pgd", "deepfool"):
    res = attack_batch(model, params, x, y, AttackConfig(family))
    acc = np.mean(model.logits(params, res.perturbed).argmax(axis=1) == y)
    print(f"{family:>8}: accuracy {acc:.2f}, prediction flipped {res.success_rate:.0%}, "
          f"mean {res.norm} norm {res.mean_norm:.4f}, median iterations {np.median(res.iterations):g}")
