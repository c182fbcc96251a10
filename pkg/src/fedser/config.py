"""Experiment configuration: TOML (or JSON snapshot) files validated against a strict schema."""

import json
import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attacks import AttackConfig
from .defences import RandomisationConfig
from .federation import FederationConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusSection(_Strict):
    source: Literal["synthetic", "wav"]
    clips_per_client: int = Field(40, ge=2)
    num_classes: int = Field(4, ge=2, le=7)
    noise: float = Field(0.02, ge=0.0)
    directory: Optional[str] = None
    manifest: Optional[str] = None     # CSV with columns path, client, label
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _wav_needs_files(self):
        if self.source == "wav" and (not self.directory or not self.manifest):
            raise ValueError("a wav corpus needs both 'directory' and 'manifest'")
        return self


class FederationSection(_Strict):
    n_clients: int = Field(ge=1)
    rounds: int = Field(ge=1)
    mode: Literal["nature", "adv_train"]
    local_epochs: int = Field(1, ge=1)
    train_batch: int = Field(8, ge=1)
    eval_batch: int = Field(1, ge=1)
    eval_every: int = Field(10, ge=1)
    mix_alpha: float = Field(0.5, ge=0.0, le=1.0)
    lr: float = Field(0.001, gt=0.0)
    model: Literal["tiny", "vgg15"] = "tiny"


class AttackSection(_Strict):
    family: Literal["fgsm", "pgd", "deepfool"]
    epsilon: float = Field(0.05, gt=0.0)
    eta: float = Field(0.05, gt=0.0)
    step: float = Field(0.01, gt=0.0)
    max_iter: int = Field(5, ge=1)
    zeta: float = Field(0.02, gt=0.0)
    eval_attacks: List[Literal["fgsm", "pgd", "deepfool"]] = []


class RandomisationSection(_Strict):
    base_w: int = 373
    base_h: int = 64
    resize_w_range: Tuple[int, int] = (373, 380)
    resize_h_range: Tuple[int, int] = (64, 66)
    final_w: int = 380
    final_h: int = 66
    pad_value: float = 0.5


class GridSection(_Strict):
    modes: List[Literal["nature", "adv_train"]] = Field(min_length=1)
    attacks: List[Literal["fgsm", "pgd", "deepfool"]] = Field(min_length=1)


class ExperimentConfig(_Strict):
    seed: int = 0
    out: str = "runs"
    corpus: CorpusSection
    federation: FederationSection
    attack: AttackSection
    randomisation: RandomisationSection = RandomisationSection()
    grid: Optional[GridSection] = None

    def attack_config(self, family=None) -> AttackConfig:
        a = self.attack
        return AttackConfig(family or a.family, a.epsilon, a.eta, a.step, a.max_iter, a.zeta)

    def randomisation_config(self) -> RandomisationConfig:
        return RandomisationConfig(**self.randomisation.model_dump())

    def federation_config(self, mode=None, family=None, threads=1) -> FederationConfig:
        f = self.federation
        return FederationConfig(
            n_clients=f.n_clients, rounds=f.rounds, local_epochs=f.local_epochs, train_batch=f.train_batch,
            eval_batch=f.eval_batch, eval_every=f.eval_every, mode=mode or f.mode,
            attack=self.attack_config(family), eval_attacks=tuple(self.attack.eval_attacks),
            mix_alpha=f.mix_alpha, lr=f.lr, seed=self.seed, model=f.model,
            randomisation=self.randomisation_config(), threads=threads)

    def runs(self):
        """``(name, mode, training attack)`` for every grid cell; nature runs ignore the training attack."""
        if self.grid is None:
            return [("run", self.federation.mode, self.attack.family)]
        cells = []
        for mode in self.grid.modes:
            for fam in (self.grid.attacks if mode == "adv_train" else [self.attack.family]):
                name = f"{mode}_{fam}" if mode == "adv_train" else "nature"
                if name not in [c[0] for c in cells]:
                    cells.append((name, mode, fam))
        return cells

    def snapshot(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def _format_validation(exc: ValidationError, path):
    lines = [f"{path}: invalid configuration"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def _set_path(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path, overrides=None) -> ExperimentConfig:
    """Parse and validate a ``.toml`` config (or a ``.json`` resolved snapshot).

    ``overrides`` maps dotted keys (``"federation.rounds"``) to values applied
    before validation. Errors carry the file name plus a line number (syntax)
    or the offending field path (schema).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: syntax error: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, key, value)
    try:
        cfg = ExperimentConfig.model_validate(data)
        cfg.randomisation_config()
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc, path)) from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: randomisation: {exc}") from exc
    return cfg


def bundled_config_path(name="desk.toml") -> Path:
    return Path(__file__).parent / "configs" / name

