"""End-to-end runs: exploration episodes, PPO updates, baselines, reporting.

One exploration episode builds one full support set (N_syn / m steps). The
training loop alternates batched episodes against a frozen policy snapshot
with one PPO update, then a final greedy pass (no feedback) emits the
deliverable support set. Baselines reuse the same splits so the three report
settings are a paired comparison.

Seeds: every stream is derived from the master seed through SeedSequence
tuples, so a run is reproducible end to end; with one exploration thread the
metrics log is byte-identical across repeats.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import (
    PolicyParams,
    PPOAgent,
    Trajectory,
    Transition,
    greedy_action,
    policy_forward,
    sample_action,
    save_checkpoint,
)
from .config import RunConfig
from .data import (
    SIMULATOR_FILE,
    make_synthetic_dataset,
    read_simulator_spec,
    read_split_files,
    write_simulator_spec,
    write_split_files,
    write_support_set,
)
from .env import (
    SYNTHETIC,
    DatasetSplits,
    EnvConfig,
    EvalReport,
    LabeledSample,
    PromptRecord,
    SoftmaxClassifier,
    SupportSet,
    SynthesisEnv,
    evaluate,
    stack_samples,
)
from .errors import BackendUnavailableError, ConfigurationError, SynthctlError
from .generators import (
    GeneratorRequest,
    RemoteGenerator,
    SimulatedGenerator,
    SimulatorSpec,
    default_domain_noise,
    request_seed,
)
from .prompts import (
    PromptAction,
    action_index,
    action_of_slots,
    format_prompt,
    random_action,
)

logger = logging.getLogger(__name__)

# SeedSequence stream tags, so no two derived streams can collide.
_STREAM_DATA = 0x01
_STREAM_EPISODE_ACTIONS = 0x02
_STREAM_EPISODE_GEN = 0x03
_STREAM_FINAL = 0x04
_STREAM_BASELINE = 0x05
_STREAM_SEED_OF_REPORT = 0x06

SETTING_NAMES = ("pretrained", "rand_syn", "ours")


def derive_seed(*parts: int) -> int:
    """Collision-resistant child seed from integer tuple."""
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1, np.uint64)[0])


class MetricsWriter:
    """Append-only JSONL log; lines carry no wall-clock so logs are replayable."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# Environment wiring
# ---------------------------------------------------------------------------


def build_splits(config: RunConfig, seed: int) -> tuple[DatasetSplits, SimulatorSpec | None]:
    """Dataset plus the matching simulator geometry (None for remote backends
    fed from files without a simulator spec)."""
    if config.data.directory:
        directory = Path(config.data.directory)
        splits = read_split_files(directory)
        spec_path = directory / SIMULATOR_FILE
        sim_spec = read_simulator_spec(spec_path) if spec_path.exists() else None
        return splits, sim_spec
    assert config.data.synthetic is not None
    splits, centroids, sigmas = make_synthetic_dataset(
        config.data.synthetic, derive_seed(seed, _STREAM_DATA)
    )
    sim_spec = SimulatorSpec(
        centroids=centroids,
        sigmas=sigmas,
        slot_weights=config.backend.slot_weights,
        domain_noise=_domain_noise_for(config),
    )
    return splits, sim_spec


def _domain_noise_for(config: RunConfig) -> tuple[float, ...]:
    n_domains = config.dictionary.n_domains
    noisy = config.backend.noisy_domain_index
    if noisy is None:
        noisy = n_domains - 1
    elif noisy < 0:
        return default_domain_noise(n_domains, None)
    return default_domain_noise(n_domains, noisy)


def build_generator(config: RunConfig, sim_spec: SimulatorSpec | None):
    if config.backend.kind == "remote":
        return RemoteGenerator(
            endpoint=config.backend.endpoint,
            timeout=config.backend.timeout,
            retries=config.backend.retries,
        )
    if sim_spec is None:
        raise ConfigurationError(
            "simulated backend needs a simulator spec (generate data via make-data "
            "or provide simulator.json next to the dataset files)"
        )
    return SimulatedGenerator(sim_spec)


def build_env(config: RunConfig, splits: DatasetSplits, generator) -> SynthesisEnv:
    return SynthesisEnv(splits, config.dictionary, generator, config.env)


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def run_episode(
    params: PolicyParams,
    env: SynthesisEnv,
    action_rng: np.random.Generator,
    episode_seed: int,
) -> Trajectory:
    """Sample actions from the frozen policy until the budget is spent."""
    env.run_seed = episode_seed
    state = env.reset()
    transitions: list[Transition] = []
    step = 0
    try:
        done = False
        while not done:
            dists, value = policy_forward(params, state.as_array())
            slots, log_prob = sample_action(dists, action_rng)
            action = action_of_slots(slots)
            next_state, reward, done = env.step(action)
            transitions.append(
                Transition(
                    state=state.as_array(), action=slots, log_prob=log_prob,
                    value=value, reward=reward, done=done,
                )
            )
            state = next_state
            step += 1
    except SynthctlError:
        logger.error(
            "episode aborted at step %d with |S|=%d (episode_seed=%d); "
            "completed transitions are resumable from the support-set records",
            step, len(env.support_set), episode_seed,
        )
        raise
    return Trajectory(transitions=tuple(transitions))


def run_greedy_episode(params: PolicyParams, env: SynthesisEnv, episode_seed: int) -> SupportSet:
    """Final no-feedback pass: per-slot argmax (ties toward the lowest index)."""
    env.run_seed = episode_seed
    state = env.reset()
    done = False
    while not done:
        dists, _ = policy_forward(params, state.as_array())
        action = action_of_slots(greedy_action(dists))
        state, _, done = env.step(action)
    return env.support_set


# ---------------------------------------------------------------------------
# Agent training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    agent: PPOAgent
    update_log: list[dict] = field(default_factory=list)

    def mean_episode_rewards(self) -> list[float]:
        return [u["mean_episode_reward"] for u in self.update_log]


def train_agent(
    config: RunConfig,
    splits: DatasetSplits,
    generator,
    metrics: MetricsWriter | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Alternate batched exploration episodes with PPO updates."""
    metrics = metrics or MetricsWriter(None)
    dictionary = config.dictionary
    n = dictionary.n_classes
    head_sizes = (dictionary.n_domains, n, n, n)
    agent = PPOAgent(
        state_dim=splits.n_classes + 2,
        head_sizes=head_sizes,
        config=config.ppo,
        hidden_width=config.hidden_width,
        seed=config.seed,
    )
    n_workers = min(config.threads, config.train.episodes_per_update)
    envs = [build_env(config, splits, generator) for _ in range(n_workers)]
    result = TrainResult(agent=agent)

    for update in range(config.train.total_updates):
        snapshot = agent.snapshot()
        episodes = config.train.episodes_per_update
        trajectories: list[Trajectory | None] = [None] * episodes

        def collect(worker: int) -> None:
            env = envs[worker]
            for episode in range(worker, episodes, n_workers):
                action_rng = np.random.default_rng(
                    np.random.SeedSequence(
                        (config.seed, _STREAM_EPISODE_ACTIONS, update, episode)
                    )
                )
                episode_seed = derive_seed(
                    config.seed, _STREAM_EPISODE_GEN, update, episode
                )
                trajectories[episode] = run_episode(snapshot, env, action_rng, episode_seed)

        try:
            if n_workers == 1:
                collect(0)
            else:
                with ThreadPoolExecutor(max_workers=n_workers) as pool:
                    futures = [pool.submit(collect, w) for w in range(n_workers)]
                    for future in futures:
                        future.result()
        except BackendUnavailableError:
            if checkpoint_path is not None:
                save_checkpoint(agent.params, checkpoint_path, config.hash())
                logger.error("backend failure; checkpoint saved to %s", checkpoint_path)
            raise

        collected = [t for t in trajectories if t is not None]
        episode_rewards = [t.total_reward() for t in collected]
        for episode, traj in enumerate(collected):
            metrics.write({
                "kind": "episode", "update": update, "episode": episode,
                "reward": traj.total_reward(), "steps": len(traj),
            })
        stats = agent.update(collected)
        record = {
            "kind": "update",
            "update": update,
            "mean_episode_reward": float(np.mean(episode_rewards)),
            "mean_ratio": stats.mean_ratio,
            "clip_fraction": stats.clip_fraction,
            "value_loss": stats.value_loss,
            "policy_loss": stats.policy_loss,
            "entropy": stats.entropy,
            "n_transitions": stats.n_transitions,
        }
        metrics.write(record)
        result.update_log.append(record)
        if checkpoint_path is not None:
            save_checkpoint(agent.params, checkpoint_path, config.hash())

    if checkpoint_path is not None:
        save_checkpoint(agent.params, checkpoint_path, config.hash())
    return result


def finalize_support_set(
    params: PolicyParams,
    config: RunConfig,
    splits: DatasetSplits,
    generator,
    out_dir: str | Path | None = None,
) -> tuple[SupportSet, Path | None]:
    """Greedy no-feedback pass; optionally persist samples + manifest."""
    env = build_env(config, splits, generator)
    support = run_greedy_episode(
        params, env, derive_seed(config.seed, _STREAM_FINAL)
    )
    manifest_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = out_dir / "support_manifest.jsonl"
        write_support_set(
            out_dir / "support_set.csv", manifest_path, support, splits.n_classes
        )
    return support, manifest_path


# ---------------------------------------------------------------------------
# Final evaluation and baselines
# ---------------------------------------------------------------------------


def final_test_report(
    config: RunConfig, splits: DatasetSplits, support_samples: list[LabeledSample]
) -> EvalReport:
    """Same protocol for every setting: fresh full training on D + S, eval on T."""
    trainer = config.env.trainer
    X_train, y_train = stack_samples(list(splits.train) + list(support_samples))
    model = SoftmaxClassifier(
        n_classes=splits.n_classes,
        learning_rate=trainer.learning_rate,
        epochs=trainer.pretrain_epochs,
    ).fit(X_train, y_train)
    return evaluate(model, splits.test)


def random_support_set(
    config: RunConfig, splits: DatasetSplits, generator, seed: int
) -> SupportSet:
    """Fill S with uniformly random actions (the Rand Syn setting)."""
    dictionary = config.dictionary
    m = config.env.samples_per_step
    steps = config.env.n_syn // m
    rng = np.random.default_rng(np.random.SeedSequence((seed, _STREAM_BASELINE)))
    support = SupportSet(config.env.n_syn)
    for step in range(steps):
        action = random_action(dictionary, rng)
        if not config.baseline.randomize_domain:
            action = PromptAction(
                domain_idx=config.baseline.fixed_domain_index, class_idx=action.class_idx
            )
        prompt = format_prompt(dictionary, action)
        flat = action_index(dictionary, action)
        gen_seed = request_seed(seed, step, flat)
        batch = generator.generate(
            GeneratorRequest(prompt=prompt, count=m, seed=gen_seed,
                             feature_dim=splits.feature_dim)
        )
        label = action.class_idx[0]
        samples = [
            LabeledSample(features=vec, label=label, provenance=SYNTHETIC, prompt_id=step)
            for vec in batch.samples
        ]
        support.append_batch(
            samples,
            PromptRecord(step=step, prompt=prompt, count=m, seed=gen_seed,
                         label=label, flat_index=flat),
        )
    return support


def run_baseline(
    mode: str, config: RunConfig, splits: DatasetSplits, generator, seed: int | None = None
) -> EvalReport:
    """mode 'none' -> model on D alone; mode 'random' -> D + random S."""
    seed = config.seed if seed is None else seed
    if mode == "none":
        return final_test_report(config, splits, [])
    if mode == "random":
        support = random_support_set(config, splits, generator, seed)
        return final_test_report(config, splits, support.samples)
    raise ConfigurationError(f"unknown baseline mode {mode!r} (expected none|random)")


# ---------------------------------------------------------------------------
# Multi-seed comparison
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    settings: dict
    seeds: list[int]
    support_manifests: list[str]
    wall_clock: dict
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "settings": self.settings,
                "seeds": self.seeds,
                "support_manifests": self.support_manifests,
                "wall_clock": self.wall_clock,
                "config_hash": self.config_hash,
            },
            indent=1,
        )

    def table(self) -> str:
        header = f"{'setting':<12} {'mean_acc':>9} {'std':>8} {'seeds':>6}"
        lines = [header, "-" * len(header)]
        for name in SETTING_NAMES:
            entry = self.settings[name]
            if "error" in entry:
                lines.append(f"{name:<12} {'MISSING':>9} {'-':>8} {'-':>6}  ({entry['error']})")
            else:
                lines.append(
                    f"{name:<12} {entry['mean']:>9.4f} {entry['std']:>8.4f} "
                    f"{len(entry['per_seed']):>6}"
                )
        return "\n".join(lines)


def _summarize(per_seed: list[float]) -> dict:
    mean = float(np.mean(per_seed))
    std = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
    return {"per_seed": per_seed, "mean": mean, "std": std}


def _with_seed(config: RunConfig, seed: int) -> RunConfig:
    env = EnvConfig(
        n_syn=config.env.n_syn,
        samples_per_step=config.env.samples_per_step,
        trainer=config.env.trainer,
        run_seed=seed,
    )
    return replace(config, seed=seed, env=env)


def run_single_seed(
    config: RunConfig, seed: int, out_dir: Path | None
) -> tuple[dict[str, float], dict[str, float], dict[str, str], str | None]:
    """All three settings on one shared dataset.

    Returns (per-setting test accuracy, per-setting wall-clock seconds,
    per-setting error strings, support-set manifest path). A failing setting
    lands in the error dict instead of aborting the other settings.
    """
    splits, sim_spec = build_splits(config, seed)
    generator = build_generator(config, sim_spec)
    seed_config = _with_seed(config, seed)

    accuracies: dict[str, float] = {}
    clock: dict[str, float] = {}
    errors: dict[str, str] = {}
    manifest_path: Path | None = None

    def timed(name: str, fn) -> None:
        t0 = time.perf_counter()
        try:
            accuracies[name] = fn()
        except SynthctlError as exc:
            logger.error("setting %s failed on seed %d: %s", name, seed, exc)
            errors[name] = str(exc)
        finally:
            clock[name] = time.perf_counter() - t0

    timed("pretrained",
          lambda: run_baseline("none", seed_config, splits, generator).accuracy)
    timed("rand_syn",
          lambda: run_baseline("random", seed_config, splits, generator, seed=seed).accuracy)

    def rl_setting() -> float:
        nonlocal manifest_path
        metrics = MetricsWriter(out_dir / "metrics.jsonl" if out_dir else None)
        checkpoint = out_dir / "checkpoint.npz" if out_dir else None
        train_result = train_agent(seed_config, splits, generator,
                                   metrics=metrics, checkpoint_path=checkpoint)
        support, manifest_path = finalize_support_set(
            train_result.agent.params, seed_config, splits, generator, out_dir
        )
        if out_dir is not None and sim_spec is not None:
            write_simulator_spec(Path(out_dir) / SIMULATOR_FILE, sim_spec)
        return final_test_report(seed_config, splits, support.samples).accuracy

    timed("ours", rl_setting)
    return accuracies, clock, errors, str(manifest_path) if manifest_path else None


def compare_and_report(config: RunConfig, out_dir: str | Path | None = None) -> RunReport:
    """Pretrained / random-synthesis / RL over the configured seeds; mean +/- sd on T."""
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    seeds = [derive_seed(config.seed, _STREAM_SEED_OF_REPORT, i)
             for i in range(config.report.seeds)]
    per_setting: dict[str, list[float]] = {name: [] for name in SETTING_NAMES}
    errors: dict[str, str] = {}
    manifests: list[str] = []
    clock: dict[str, float] = {name: 0.0 for name in SETTING_NAMES}
    t_start = time.perf_counter()

    for i, seed in enumerate(seeds):
        seed_dir = out_dir / f"seed_{i}" if out_dir is not None else None
        if seed_dir is not None:
            seed_dir.mkdir(parents=True, exist_ok=True)
        try:
            accuracies, seed_clock, seed_errors, manifest = run_single_seed(
                config, seed, seed_dir
            )
        except SynthctlError as exc:
            # Failure before any setting could run (e.g. dataset construction).
            logger.error("seed %d failed: %s", seed, exc)
            accuracies, seed_clock, manifest = {}, {}, None
            seed_errors = {name: str(exc) for name in SETTING_NAMES}
        for name in SETTING_NAMES:
            if name in accuracies:
                per_setting[name].append(accuracies[name])
            if name in seed_errors:
                errors.setdefault(name, seed_errors[name])
            clock[name] += seed_clock.get(name, 0.0)
        if manifest:
            manifests.append(manifest)

    settings = {}
    for name in SETTING_NAMES:
        if per_setting[name]:
            settings[name] = _summarize(per_setting[name])
        else:
            settings[name] = {"error": errors.get(name, "no completed seeds")}

    report = RunReport(
        settings=settings,
        seeds=seeds,
        support_manifests=manifests,
        wall_clock={**clock, "total": time.perf_counter() - t_start},
        config_hash=config.hash(),
    )
    if out_dir is not None:
        (out_dir / "report.json").write_text(report.to_json() + "\n")
        (out_dir / "report.txt").write_text(report.table() + "\n")
    return report


# ---------------------------------------------------------------------------
# Dataset emission (make-data)
# ---------------------------------------------------------------------------


def emit_dataset(config: RunConfig, out_dir: str | Path) -> Path:
    """Write split files plus the matching simulator spec."""
    if config.data.synthetic is None:
        raise ConfigurationError("make-data needs a [data.synthetic] spec")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits, sim_spec = build_splits(config, config.seed)
    write_split_files(out_dir, splits)
    if sim_spec is not None:
        write_simulator_spec(out_dir / SIMULATOR_FILE, sim_spec)
    return out_dir
