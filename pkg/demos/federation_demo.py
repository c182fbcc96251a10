"""A small federated run in both training modes.

Run: python demos/federation_demo.py   (a few minutes)
"""

import numpy as np

from fedser.attacks import AttackConfig
from fedser.federation import FederationConfig, aggregate_weights, make_clients, run_federated, speaker_dependent_split
from fedser.network import Parameters
from fedser.synthetic import featurise, synthetic_corpus

# The server averages client weights in proportion to their sample counts.
a, b = Parameters({"w": np.array([1.0, 3.0])}), Parameters({"w": np.array([3.0, 5.0])})
print("aggregate of 1 and 3 samples:", aggregate_weights([(a, 1), (b, 3)])["w"])

corpus = featurise(synthetic_corpus(n_clients=3, clips_per_client=24, num_classes=3, seed=0), 3)
train, test = speaker_dependent_split(corpus, 0.75, np.random.default_rng(0))
print("clients:", {cid: len(c) for cid, c in train.items()}, "test clips:", len(test))

for mode in ("nature", "adv_train"):
    config = FederationConfig(n_clients=3, rounds=15, eval_every=5, mode=mode, attack=AttackConfig("fgsm"))
    _, records = run_federated(make_clients(train), test, config)
    for r in records:
        print(f"{mode:>9} round {r.round} {r.condition:<22} {r.attack:<5} UAR {r.uar:.2f}")
