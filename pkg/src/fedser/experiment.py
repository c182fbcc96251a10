"""End-to-end experiment driver shared by the command line and the demos."""

import csv
import logging
import traceback
from pathlib import Path

import numpy as np

from .charts import chart_run_log
from .config import ExperimentConfig
from .features import MelConfig, read_wav
from .federation import default_threads, make_clients, run_federated, speaker_dependent_split
from .synthetic import Utterance, featurise, synthetic_corpus

log = logging.getLogger(__name__)

# SeedSequence tag for the train/test split stream
SPLIT_TAG = 1_000_211


def read_manifest(directory, manifest, num_classes):
    """Utterances listed in a CSV manifest with columns ``path, client, label``.

    Paths are relative to ``directory``; clients may be any strings and are
    numbered in order of first appearance.
    """
    directory = Path(directory)
    utts, client_ids = [], {}
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "client", "label"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{manifest}: missing column(s) {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                label = int(row["label"])
            except ValueError as exc:
                raise ValueError(f"{manifest}:{lineno}: label must be an integer") from exc
            if not 0 <= label < num_classes:
                raise ValueError(f"{manifest}:{lineno}: label {label} outside [0, {num_classes})")
            cid = client_ids.setdefault(row["client"], len(client_ids))
            utts.append(Utterance(cid, label, read_wav(directory / row["path"])))
    if not utts:
        raise ValueError(f"{manifest}: no utterances listed")
    return utts


def build_corpus(cfg: ExperimentConfig):
    c = cfg.corpus
    if c.source == "synthetic":
        utts = synthetic_corpus(cfg.federation.n_clients, c.clips_per_client, c.num_classes, cfg.seed, c.noise)
    else:
        utts = read_manifest(c.directory, c.manifest, c.num_classes)
        n = len({u.client_id for u in utts})
        if n != cfg.federation.n_clients:
            raise ValueError(f"manifest lists {n} clients but federation.n_clients = {cfg.federation.n_clients}")
    r = cfg.randomisation
    mel = MelConfig(target_frames=r.base_w, n_mels=r.base_h)
    return featurise(utts, c.num_classes, mel)


def split_corpus(cfg: ExperimentConfig, corpus):
    return speaker_dependent_split(corpus, cfg.corpus.train_fraction,
                                   np.random.default_rng([cfg.seed, SPLIT_TAG]))


def run_experiment(cfg: ExperimentConfig, out_dir, threads=None):
    """Run every grid cell of ``cfg`` and write all artefacts under ``out_dir``.

    Each run gets a run log, per-checkpoint confusion matrices and weights, and
    a UAR chart; ``resolved_config.json`` reproduces the whole experiment. On
    failure an ``error.txt`` report is left next to whatever was written.
    Returns ``{run name: (final params, records)}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.snapshot())
    (out / "error.txt").unlink(missing_ok=True)   # left by an earlier failed run
    threads = threads or default_threads()
    results = {}
    try:
        corpus = build_corpus(cfg)
        train, test = split_corpus(cfg, corpus)
        runs = cfg.runs()
        for name, mode, family in runs:
            sub = out if len(runs) == 1 else out / name
            fcfg = cfg.federation_config(mode, family, threads)
            log.info("run %s: mode=%s attack=%s rounds=%d", name, mode, family, fcfg.rounds)
            params, records = run_federated(make_clients(train), test, fcfg, out_dir=sub)
            if records:
                chart_run_log(sub / "run_log.csv", sub / "uar.svg", f"UAR per round ({name})")
            results[name] = (params, records)
    except Exception:
        (out / "error.txt").write_text(traceback.format_exc())
        raise
    return results
