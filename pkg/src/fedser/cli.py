"""Command-line front end: ``fedser run | validate | chart | attack-demo``."""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .attacks import deepfool_multiclass, fgsm, pgd
from .charts import chart_run_log, heatmap_svg
from .config import ConfigError, load_config
from .experiment import build_corpus, run_experiment, split_corpus
from .features import AudioFormatError, MelConfig, extract, read_wav
from .federation import build_network, default_threads
from .network import CheckpointError, load_checkpoint

log = logging.getLogger("fedser")


def _overrides(args):
    return {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None),
            "federation.n_clients": getattr(args, "clients", None),
            "federation.rounds": getattr(args, "rounds", None)}


def cmd_validate(args):
    cfg = load_config(args.config, _overrides(args))
    runs = ", ".join(name for name, _, _ in cfg.runs())
    print(f"{args.config}: ok ({cfg.federation.n_clients} clients, {cfg.federation.rounds} rounds, runs: {runs})")
    return 0


def cmd_run(args):
    cfg = load_config(args.config, _overrides(args))
    results = run_experiment(cfg, cfg.out, default_threads())
    for name, (_, records) in results.items():
        last = max((r.round for r in records), default=None)
        for r in records:
            if r.round == last:
                print(f"{name} round {r.round} {r.condition:<22} {r.attack:<8} UAR {r.uar:.3f}")
    print(f"outputs written to {cfg.out}")
    return 0


def cmd_chart(args):
    chart_run_log(args.log, args.out, args.title)
    print(f"wrote {args.out}")
    return 0


def _write_grid(path, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid[:, :, 0]:
            w.writerow([f"{v:.6g}" for v in row])


def cmd_attack_demo(args):
    cfg = load_config(args.config, _overrides(args))
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CheckpointError(f"checkpoint {ckpt} not found; train a model with 'fedser run' first")
    fcfg = cfg.federation_config()
    model = build_network(fcfg, cfg.corpus.num_classes)
    params = load_checkpoint(ckpt, model.spec)
    r = cfg.randomisation
    if args.wav:
        x = extract(read_wav(args.wav), MelConfig(target_frames=r.base_w, n_mels=r.base_h))[None]
        y = np.array([args.label]) if args.label is not None else model.logits(params, x).argmax(axis=1)
    else:
        _, test = split_corpus(cfg, build_corpus(cfg))
        if not 0 <= args.sample < len(test):
            raise ValueError(f"--sample must lie in [0, {len(test)}) for this corpus")
        x, y = test.features[args.sample:args.sample + 1], test.labels[args.sample:args.sample + 1]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    eps = cfg.attack.epsilon if args.epsilon is None else args.epsilon
    clean_pred = int(model.logits(params, x).argmax(axis=1)[0])
    rows = []
    for family in args.attacks.split(","):
        family = family.strip()
        if family == "fgsm":
            adv = fgsm(model, params, x, y, eps)
        elif family == "pgd":
            adv = pgd(model, params, x, y, cfg.attack_config("pgd"))
        elif family == "deepfool":
            adv = deepfool_multiclass(model, params, x, cfg.attack.zeta, cfg.attack.max_iter)
        else:
            raise ValueError(f"unknown attack {family!r}")
        delta = (adv - x)[0]
        grids = {"original": x[0], "perturbation_x100": 100.0 * delta, "adversarial": adv[0]}
        for kind, grid in grids.items():
            _write_grid(out / f"{family}_{kind}.csv", grid)
            (out / f"{family}_{kind}.svg").write_text(
                heatmap_svg(grid, f"{family}: {kind.replace('_', ' ')}", diverging=kind.startswith("pert")))
        rows.append([family, int(y[0]), clean_pred, int(model.logits(params, adv).argmax(axis=1)[0]),
                     f"{np.sqrt((delta ** 2).sum()):.6g}", f"{np.abs(delta).max():.6g}"])
    with open(out / "attack_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attack", "label", "clean_prediction", "adversarial_prediction", "l2", "linf"])
        w.writerows(rows)
    for row in rows:
        print(f"{row[0]:<8} label {row[1]} clean {row[2]} -> adversarial {row[3]}  l2 {row[4]}  linf {row[5]}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fedser", description="Federated adversarial training experiments "
                                "for speech emotion recognition on log-Mel spectrograms.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment TOML file (or resolved_config.json)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--clients", type=int, help="number of clients (overrides the config)")
        sp.add_argument("--rounds", type=int, help="number of rounds (overrides the config)")

    sp = sub.add_parser("run", help="run the configured experiment grid")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("validate", help="check a config file without running anything")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("chart", help="render a run log as an SVG line chart")
    sp.add_argument("--log", required=True, help="run_log.csv written by 'run'")
    sp.add_argument("--out", required=True, help="SVG file to write")
    sp.add_argument("--title", help="chart title")
    sp.set_defaults(func=cmd_chart)
    sp = sub.add_parser("attack-demo", help="dump original / perturbation x100 / adversarial spectrograms")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="trained weights (round_<t>.ckpt)")
    sp.add_argument("--wav", help="16 kHz mono 16-bit WAV to attack (default: a synthetic test sample)")
    sp.add_argument("--label", type=int, help="true label of --wav (default: the model's prediction)")
    sp.add_argument("--sample", type=int, default=0, help="index into the synthetic test split")
    sp.add_argument("--attacks", default="fgsm,deepfool", help="comma-separated attack families")
    sp.add_argument("--epsilon", type=float, help="FGSM step (may be 0)")
    sp.set_defaults(func=cmd_attack_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, AudioFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
