"""synthctl: RL-controlled synthesis of small synthetic support sets.

A policy-gradient agent composes prompts from a fixed dictionary, a pluggable
backend turns each prompt into labeled feature samples, and a budgeted support
set is accumulated that measurably improves a classifier.
"""

from .agent import (
    AdamOptimizer,
    PolicyParams,
    PPOAgent,
    PPOConfig,
    Trajectory,
    Transition,
    compute_gae,
    greedy_action,
    init_policy_params,
    load_checkpoint,
    policy_forward,
    ppo_loss,
    ppo_update,
    sample_action,
    save_checkpoint,
)
from .config import RunConfig, load_config
from .data import DatasetSpec, make_synthetic_dataset, read_manifest, replay_manifest
from .env import (
    DatasetSplits,
    EnvConfig,
    EvalReport,
    LabeledSample,
    SoftmaxClassifier,
    StateVector,
    SupportSet,
    SynthesisEnv,
    TrainerConfig,
    compute_reward,
    entropy_of_probs,
    evaluate,
    predictive_entropy,
    train_model,
)
from .errors import (
    BackendUnavailableError,
    ConfigurationError,
    InvalidActionError,
    InvalidInputError,
    InvalidRequestError,
    NumericalFailureError,
    ProtocolError,
    SynthctlError,
)
from .generators import (
    GeneratorBatch,
    GeneratorRequest,
    RemoteGenerator,
    SimulatedGenerator,
    SimulatorSpec,
    request_seed,
)
from .orchestrate import (
    RunReport,
    compare_and_report,
    finalize_support_set,
    run_baseline,
    run_episode,
    run_greedy_episode,
    train_agent,
)
from .prompts import (
    Dictionary,
    Prompt,
    PromptAction,
    action_index,
    action_of_index,
    action_of_slots,
    format_prompt,
    iter_actions,
    random_action,
)

__version__ = "0.1.0"
