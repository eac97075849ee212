"""Run configuration: TOML schema, defaults, validation, canonical hashing."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import PPOConfig, config_hash
from .data import DatasetSpec
from .env import EnvConfig, TrainerConfig
from .errors import ConfigurationError
from .prompts import Dictionary

DEFAULT_DOMAINS = ("photograph", "painting", "still-life", "image", "digital image")


@dataclass(frozen=True)
class DataConfig:
    directory: str = ""
    synthetic: DatasetSpec | None = None

    def __post_init__(self) -> None:
        if not self.directory and self.synthetic is None:
            raise ConfigurationError("data config needs either 'dir' or a [data.synthetic] spec")


@dataclass(frozen=True)
class TrainConfig:
    total_updates: int = 50
    episodes_per_update: int = 8

    def __post_init__(self) -> None:
        if self.total_updates < 0 or self.episodes_per_update < 1:
            raise ConfigurationError("total_updates >= 0 and episodes_per_update >= 1 required")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "simulated"
    endpoint: str = ""
    timeout: float = 120.0
    retries: int = 3
    slot_weights: tuple[float, float, float] = (0.6, 0.25, 0.15)
    noisy_domain_index: int | None = None  # None -> last domain; -1 -> disabled

    def __post_init__(self) -> None:
        if self.kind not in ("simulated", "remote"):
            raise ConfigurationError(f"backend kind must be simulated|remote, got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigurationError("remote backend needs an endpoint URL")


@dataclass(frozen=True)
class BaselineConfig:
    randomize_domain: bool = True
    fixed_domain_index: int = 0


@dataclass(frozen=True)
class ReportConfig:
    seeds: int = 5

    def __post_init__(self) -> None:
        if self.seeds < 1:
            raise ConfigurationError("report seeds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    threads: int = 1
    dictionary: Dictionary = field(
        default_factory=lambda: Dictionary(domains=DEFAULT_DOMAINS, classes=("class_0", "class_1"))
    )
    data: DataConfig = field(default_factory=lambda: DataConfig(synthetic=DatasetSpec()))
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    hidden_width: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.hidden_width < 1:
            raise ConfigurationError("hidden_width must be >= 1")

    def canonical_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "dictionary": {
                "domains": list(self.dictionary.domains),
                "classes": list(self.dictionary.classes),
            },
            "data": {
                "dir": self.data.directory,
                "synthetic": None if self.data.synthetic is None else vars(self.data.synthetic),
            },
            "env": {
                "n_syn": self.env.n_syn,
                "samples_per_step": self.env.samples_per_step,
                "trainer": vars(self.env.trainer),
            },
            "ppo": vars(self.ppo),
            "hidden_width": self.hidden_width,
            "train": vars(self.train),
            "backend": vars(self.backend),
            "baseline": vars(self.baseline),
            "report": vars(self.report),
        }

    def hash(self) -> str:
        return config_hash(self.canonical_dict())


def _section(raw: dict, name: str) -> dict:
    value = raw.pop(name, {})
    if not isinstance(value, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    return dict(value)


def _check_empty(table: dict, where: str) -> None:
    if table:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(table)}")


def load_config(path: str | Path, seed_override: int | None = None,
                out_dir_override: str | None = None) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_dict(raw, seed_override=seed_override, out_dir_override=out_dir_override)


def config_from_dict(raw: dict, seed_override: int | None = None,
                     out_dir_override: str | None = None) -> RunConfig:
    raw = dict(raw)

    run = _section(raw, "run")
    seed = int(run.pop("seed", 0))
    out_dir = str(run.pop("out_dir", "runs/out"))
    threads = int(run.pop("threads", 1))
    _check_empty(run, "[run]")

    data_raw = _section(raw, "data")
    directory = str(data_raw.pop("dir", ""))
    synthetic = None
    syn_raw = data_raw.pop("synthetic", None)
    if syn_raw is not None:
        syn_raw = dict(syn_raw)
        synthetic = DatasetSpec(
            n_classes=int(syn_raw.pop("n_classes", 10)),
            feature_dim=int(syn_raw.pop("feature_dim", 16)),
            per_class=int(syn_raw.pop("per_class", 200)),
            class_separation=float(syn_raw.pop("class_separation", 6.0)),
            sigma=float(syn_raw.pop("sigma", 1.0)),
            sigma_overrides=tuple(tuple(x) for x in syn_raw.pop("sigma_overrides", [])),
            overlap_pairs=tuple(tuple(p) for p in syn_raw.pop("overlap_pairs", [])),
            overlap_distance=float(syn_raw.pop("overlap_distance", 2.5)),
            underrepresented=tuple(syn_raw.pop("underrepresented", [])),
            underrepresented_fraction=float(syn_raw.pop("underrepresented_fraction", 0.25)),
            split_ratio=tuple(syn_raw.pop("split_ratio", (0.8, 0.1, 0.1))),
        )
        _check_empty(syn_raw, "[data.synthetic]")
    elif not directory:
        synthetic = DatasetSpec()
    _check_empty(data_raw, "[data]")
    data = DataConfig(directory=directory, synthetic=synthetic)

    dict_raw = _section(raw, "dictionary")
    domains = tuple(dict_raw.pop("domains", DEFAULT_DOMAINS))
    classes = tuple(dict_raw.pop("classes", ()))
    _check_empty(dict_raw, "[dictionary]")
    if not classes:
        if synthetic is None:
            raise ConfigurationError(
                "[dictionary] classes must be listed when data comes from files"
            )
        classes = tuple(f"class_{i}" for i in range(synthetic.n_classes))
    dictionary = Dictionary(domains=domains, classes=classes)
    if synthetic is not None and len(classes) != synthetic.n_classes:
        raise ConfigurationError(
            f"dictionary lists {len(classes)} classes but the dataset spec has "
            f"{synthetic.n_classes}"
        )

    env_raw = _section(raw, "env")
    trainer_raw = dict(env_raw.pop("trainer", {}))
    trainer = TrainerConfig(
        learning_rate=float(trainer_raw.pop("learning_rate", 0.5)),
        pretrain_epochs=int(trainer_raw.pop("pretrain_epochs", 200)),
        step_epochs=int(trainer_raw.pop("step_epochs", 30)),
        warm_start=bool(trainer_raw.pop("warm_start", True)),
    )
    _check_empty(trainer_raw, "[env.trainer]")
    env = EnvConfig(
        n_syn=int(env_raw.pop("n_syn", 400)),
        samples_per_step=int(env_raw.pop("samples_per_step", 10)),
        trainer=trainer,
        run_seed=seed,
    )
    _check_empty(env_raw, "[env]")

    ppo_raw = _section(raw, "ppo")
    hidden_width = int(ppo_raw.pop("hidden_width", 64))
    ppo = PPOConfig(
        clip_epsilon=float(ppo_raw.pop("clip_epsilon", 0.2)),
        gamma=float(ppo_raw.pop("gamma", 0.99)),
        lam=float(ppo_raw.pop("lambda", ppo_raw.pop("lam", 0.95))),
        learning_rate=float(ppo_raw.pop("learning_rate", 3e-4)),
        epochs=int(ppo_raw.pop("epochs", 4)),
        minibatch_size=int(ppo_raw.pop("minibatch_size", 64)),
        value_coef=float(ppo_raw.pop("value_coef", 0.5)),
        entropy_coef=float(ppo_raw.pop("entropy_coef", 0.0)),
    )
    _check_empty(ppo_raw, "[ppo]")

    train_raw = _section(raw, "train")
    train = TrainConfig(
        total_updates=int(train_raw.pop("total_updates", 50)),
        episodes_per_update=int(train_raw.pop("episodes_per_update", 8)),
    )
    _check_empty(train_raw, "[train]")

    backend_raw = _section(raw, "backend")
    sim_raw = dict(backend_raw.pop("simulator", {}))
    noisy = sim_raw.pop("noisy_domain_index", None)
    backend = BackendConfig(
        kind=str(backend_raw.pop("kind", "simulated")),
        endpoint=str(backend_raw.pop("endpoint", "")),
        timeout=float(backend_raw.pop("timeout", 120.0)),
        retries=int(backend_raw.pop("retries", 3)),
        slot_weights=tuple(sim_raw.pop("slot_weights", (0.6, 0.25, 0.15))),
        noisy_domain_index=None if noisy is None else int(noisy),
    )
    _check_empty(sim_raw, "[backend.simulator]")
    _check_empty(backend_raw, "[backend]")

    baseline_raw = _section(raw, "baseline")
    baseline = BaselineConfig(
        randomize_domain=bool(baseline_raw.pop("randomize_domain", True)),
        fixed_domain_index=int(baseline_raw.pop("fixed_domain_index", 0)),
    )
    _check_empty(baseline_raw, "[baseline]")
    if not 0 <= baseline.fixed_domain_index < dictionary.n_domains:
        raise ConfigurationError("baseline fixed_domain_index out of range")

    report_raw = _section(raw, "report")
    report = ReportConfig(seeds=int(report_raw.pop("seeds", 5)))
    _check_empty(report_raw, "[report]")

    _check_empty(raw, "config root")

    if seed_override is not None:
        seed = seed_override
        env = EnvConfig(
            n_syn=env.n_syn, samples_per_step=env.samples_per_step,
            trainer=env.trainer, run_seed=seed,
        )
    if out_dir_override is not None:
        out_dir = out_dir_override

    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        threads=threads,
        dictionary=dictionary,
        data=data,
        env=env,
        ppo=ppo,
        hidden_width=hidden_width,
        train=train,
        backend=backend,
        baseline=baseline,
        report=report,
    )
