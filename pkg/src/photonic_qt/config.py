"""Experiment configuration: a YAML (or JSON) file, overridden by command-line flags."""

import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InvalidParameterError
from .qnn_sampler import HARDWARE_RANGES, NoiseModel, ShotBudget
from .training import TrainConfig

COMMANDS = ("train-qt", "train-baseline", "sweep-bond", "sweep-noise", "ablate", "report")
BASELINES = ("original", "share", "prune")
NOISE_PARAMS = tuple(HARDWARE_RANGES)
ABLATION_MODES = ("frozen_pw", "stochastic")

# TrainConfig fields that may appear under the ``train`` key
TRAIN_KEYS = (
    "epochs", "batch_size", "lr", "lr_schedule", "beta1", "beta2", "adam_eps",
    "rhobeg", "rhoend", "maxfun", "cobyla_batch", "theta_mode", "theta_lr",
    "eval_every", "weight_scale",
)


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, such as ``1e-3`` or JSON's ``1e-08``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


class ConfigError(InvalidParameterError):
    """Invalid or inconsistent configuration; the CLI maps it to exit code 2."""


@dataclass
class ExperimentConfig:
    command: str = "train-qt"
    variant: str | None = None  # baseline method or swept noise parameter
    data_dir: str | None = None
    n_train: int = 6000
    n_test: int = 1000
    split_seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    chi: int = 4
    chis: list = field(default_factory=lambda: list(range(1, 11)))
    ablation_chis: list = field(default_factory=lambda: [2, 4, 8, 16])
    ablation_mode: str = "frozen_pw"
    share_k: int = 28
    prune_retained: int = 3370
    noise: dict = field(default_factory=dict)
    shots: dict = field(default_factory=dict)
    noise_values: list | None = None
    noise_points: int = 5
    train: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)  # run directories for ``report``
    out_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command == "train-baseline" and self.variant not in BASELINES:
            raise ConfigError(f"train-baseline needs one of {BASELINES}, got {self.variant!r}")
        if self.command == "sweep-noise" and self.variant not in NOISE_PARAMS:
            raise ConfigError(f"sweep-noise needs one of {NOISE_PARAMS}, got {self.variant!r}")
        if self.command == "report" and not self.inputs:
            raise ConfigError("report needs at least one run directory")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"ablation_mode must be one of {ABLATION_MODES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("subset sizes must be non-negative")
        if self.noise_points < 1:
            raise ConfigError("noise_points must be >= 1")
        for chi in [self.chi, *self.chis, *self.ablation_chis]:
            if int(chi) < 1:
                raise ConfigError(f"bond dimension must be >= 1, got {chi}")
        unknown = set(self.train) - set(TRAIN_KEYS)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        try:
            self.noise_model()
            self.shot_budget(0)
            self.train_config(self.chi, self.seeds[0])
        except (InvalidParameterError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def noise_model(self, **override) -> NoiseModel:
        return NoiseModel(**{**self.noise, **override})

    def shot_budget(self, seed: int, mode: str | None = None) -> ShotBudget:
        params = {"mode": "analytic", **self.shots, "seed": seed}
        if mode is not None and "mode" not in self.shots:
            params["mode"] = mode
        return ShotBudget(**params)

    def train_config(self, chi: int, seed: int, noise: NoiseModel | None = None, shots: ShotBudget | None = None) -> TrainConfig:
        return TrainConfig(
            **self.train,
            chi=int(chi),
            seed=int(seed),
            noise=noise or self.noise_model(),
            shots=shots or self.shot_budget(seed),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _known_keys() -> set:
    return {f.name for f in fields(ExperimentConfig)}


def from_mapping(data: dict) -> ExperimentConfig:
    unknown = set(data) - _known_keys()
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def load_config_file(path) -> tuple[dict, bool]:
    """Raw mapping from a config file, and whether it was a run manifest.

    Manifests are JSON, which the YAML loader reads as-is; their ``config``
    entry holds the full snapshot.
    """
    path = Path(path)
    try:
        data = yaml.load(path.read_text(), Loader=_Loader)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if data is None:
        return {}, False
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    if "config" in data and "manifest_version" in data:
        return dict(data["config"]), True
    return data, False


def parse_int_list(text: str) -> list[int]:
    """``"1..10"`` (inclusive range), ``"1,2,4"`` or a single integer."""
    try:
        out = []
        for part in str(text).split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = part.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise ConfigError(f"cannot parse integer list {text!r}") from None
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return out


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None
