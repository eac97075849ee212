"""Factored categorical policy with a clipped-surrogate PPO update.

The network is deliberately tiny: one shared tanh hidden layer feeding one
categorical head per action slot plus a scalar value head. Gradients are
hand-derived (no autodiff) so the whole update is plain numpy and cheap to
verify against finite differences.

Loss for a batch B of transitions with stored behaviour log-probs lp_old:

    ratio   = exp(lp_new - lp_old)
    surr1   = ratio * adv
    surr2   = clip(ratio, 1 - eps, 1 + eps) * adv
    loss    = -mean(min(surr1, surr2))
              + value_coef * mean((v - ret)^2)
              - entropy_coef * mean(sum_k H_k)

The min() picks the unclipped branch on ties, which makes the policy-term
gradient exactly zero for a clipped transition (adv > 0 with ratio > 1+eps,
or adv < 0 with ratio < 1-eps).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError, NumericalFailureError

LOGP_FLOOR = 1e-300  # guards log() of an underflowed softmax probability


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class PolicyParams:
    """All tensors of the policy/value network.

    Treat instances handed to rollout workers as frozen snapshots; updates
    always operate on a copy.
    """

    w_in: np.ndarray  # (hidden, state_dim)
    b_in: np.ndarray  # (hidden,)
    head_w: tuple[np.ndarray, ...]  # each (arity_k, hidden)
    head_b: tuple[np.ndarray, ...]  # each (arity_k,)
    w_value: np.ndarray  # (hidden,)
    b_value: np.ndarray  # (1,)

    @property
    def state_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.w_in.shape[0]

    @property
    def head_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.head_w)

    def arrays(self) -> list[np.ndarray]:
        """Stable flat ordering of every parameter tensor."""
        out = [self.w_in, self.b_in]
        for w, b in zip(self.head_w, self.head_b):
            out.extend((w, b))
        out.extend((self.w_value, self.b_value))
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            w_in=self.w_in.copy(),
            b_in=self.b_in.copy(),
            head_w=tuple(w.copy() for w in self.head_w),
            head_b=tuple(b.copy() for b in self.head_b),
            w_value=self.w_value.copy(),
            b_value=self.b_value.copy(),
        )

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(
            w_in=np.zeros_like(self.w_in),
            b_in=np.zeros_like(self.b_in),
            head_w=tuple(np.zeros_like(w) for w in self.head_w),
            head_b=tuple(np.zeros_like(b) for b in self.head_b),
            w_value=np.zeros_like(self.w_value),
            b_value=np.zeros_like(self.b_value),
        )


def init_policy_params(
    state_dim: int,
    head_sizes: tuple[int, ...],
    hidden_width: int = 64,
    rng: np.random.Generator | None = None,
    head_scale: float = 0.01,
) -> PolicyParams:
    """Seeded initialization; small head scale keeps the starting policy near uniform."""
    if state_dim < 1 or hidden_width < 1 or not head_sizes:
        raise ConfigurationError("state_dim, hidden_width and head_sizes must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    w_in = rng.normal(0.0, 1.0 / np.sqrt(state_dim), size=(hidden_width, state_dim))
    head_w = tuple(
        rng.normal(0.0, head_scale / np.sqrt(hidden_width), size=(a, hidden_width))
        for a in head_sizes
    )
    w_value = rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=hidden_width)
    return PolicyParams(
        w_in=w_in,
        b_in=np.zeros(hidden_width),
        head_w=head_w,
        head_b=tuple(np.zeros(a) for a in head_sizes),
        w_value=w_value,
        b_value=np.zeros(1),
    )


# ---------------------------------------------------------------------------
# Forward pass and sampling
# ---------------------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward_batch(
    params: PolicyParams, states: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """Batched forward pass.

    Returns (per-head probability matrices [(B, A_k)], values (B,), hidden (B, H)).
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != params.state_dim:
        raise ConfigurationError(
            f"state batch has shape {states.shape}, expected (*, {params.state_dim})"
        )
    hidden = np.tanh(states @ params.w_in.T + params.b_in)
    probs = [_softmax(hidden @ w.T + b) for w, b in zip(params.head_w, params.head_b)]
    values = hidden @ params.w_value + params.b_value[0]
    return probs, values, hidden


def policy_forward(
    params: PolicyParams, state: np.ndarray
) -> tuple[list[np.ndarray], float]:
    """Single-state forward: normalized per-slot distributions plus a value estimate."""
    state = np.asarray(state, dtype=float)
    if state.ndim != 1 or state.shape[0] != params.state_dim:
        raise ConfigurationError(
            f"state has shape {state.shape}, expected ({params.state_dim},)"
        )
    probs, values, _ = forward_batch(params, state[None, :])
    return [p[0] for p in probs], float(values[0])


def sample_action(
    dists: list[np.ndarray], rng: np.random.Generator
) -> tuple[tuple[int, ...], float]:
    """Sample each slot independently; log-prob is the sum over slots."""
    slots: list[int] = []
    log_prob = 0.0
    for p in dists:
        a = int(rng.choice(len(p), p=p))
        slots.append(a)
        log_prob += float(np.log(max(p[a], LOGP_FLOOR)))
    return tuple(slots), log_prob


def greedy_action(dists: list[np.ndarray]) -> tuple[int, ...]:
    """Per-slot argmax; ties resolve toward the lowest index."""
    return tuple(int(np.argmax(p)) for p in dists)


def action_log_prob(dists: list[np.ndarray], slots: tuple[int, ...]) -> float:
    """Log-probability of a given slot tuple under the distributions."""
    return float(sum(np.log(max(p[a], LOGP_FLOOR)) for p, a in zip(dists, slots)))


# ---------------------------------------------------------------------------
# Transitions and advantage estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    """One environment step as consumed by PPO.

    ``action`` holds the per-head slot indices; for the prompt policy that is
    (domain, c1, c2, c3) and converts to a PromptAction one-to-one.
    """

    state: np.ndarray
    action: tuple[int, ...]
    log_prob: float
    value: float
    reward: float
    done: bool

    def __post_init__(self) -> None:
        if self.log_prob > 0.0:
            raise InvalidInputError(f"log_prob must be <= 0, got {self.log_prob}")
        if not np.isfinite(self.reward):
            raise InvalidInputError(f"reward must be finite, got {self.reward}")


@dataclass(frozen=True)
class Trajectory:
    """Ordered transitions of one full exploration episode."""

    transitions: tuple[Transition, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.transitions:
            raise InvalidInputError("trajectory must contain at least one transition")
        done_flags = [t.done for t in self.transitions]
        if not done_flags[-1] or any(done_flags[:-1]):
            raise InvalidInputError("exactly the last transition must have done=True")

    def __len__(self) -> int:
        return len(self.transitions)

    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))


def compute_gae(
    trajectory: Trajectory, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with terminal bootstrap value 0.

    Returns (advantages, return targets) where targets = advantages + values.
    """
    if not 0.0 <= gamma <= 1.0 or not 0.0 <= lam <= 1.0:
        raise InvalidInputError("gamma and lambda must lie in [0, 1]")
    ts = trajectory.transitions
    n = len(ts)
    rewards = np.array([t.reward for t in ts])
    values = np.array([t.value for t in ts])
    not_done = np.array([0.0 if t.done else 1.0 for t in ts])
    advantages = np.empty(n)
    gae = 0.0
    for t in reversed(range(n)):
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        gae = delta + gamma * lam * not_done[t] * gae
        advantages[t] = gae
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# PPO loss with hand-derived gradients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PPOConfig:
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.clip_epsilon <= 0.0:
            raise ConfigurationError("clip_epsilon must be > 0")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigurationError("epochs and minibatch_size must be >= 1")


@dataclass
class PPOLossResult:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    grads: PolicyParams
    mean_ratio: float
    clip_fraction: float


def _stack_batch(batch: list[Transition]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    states = np.stack([t.state for t in batch]).astype(float)
    slots = np.array([t.action for t in batch], dtype=int)
    old_log_probs = np.array([t.log_prob for t in batch])
    return states, slots, old_log_probs


def ppo_loss(
    params: PolicyParams,
    batch: list[Transition],
    advantages: np.ndarray,
    returns: np.ndarray,
    config: PPOConfig,
) -> PPOLossResult:
    """Clipped-surrogate loss plus value squared error; returns loss and gradients."""
    if not batch:
        raise InvalidInputError("ppo_loss needs a non-empty batch")
    advantages = np.asarray(advantages, dtype=float)
    returns = np.asarray(returns, dtype=float)
    if advantages.shape[0] != len(batch) or returns.shape[0] != len(batch):
        raise InvalidInputError("advantages/returns must align with the batch")

    states, slots, old_log_probs = _stack_batch(batch)
    n = len(batch)
    eps = config.clip_epsilon

    probs, values, hidden = forward_batch(params, states)
    rows = np.arange(n)
    log_prob_new = np.zeros(n)
    for k, p in enumerate(probs):
        log_prob_new += np.log(np.maximum(p[rows, slots[:, k]], LOGP_FLOOR))

    ratio = np.exp(log_prob_new - old_log_probs)
    bad = ~np.isfinite(ratio)
    if bad.any():
        raise NumericalFailureError(
            f"non-finite probability ratio at batch element {int(np.flatnonzero(bad)[0])}"
        )
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    policy_loss = -float(np.minimum(surr1, surr2).mean())

    value_err = values - returns
    value_loss = float(np.mean(value_err**2))

    entropies = np.zeros(n)
    for p in probs:
        plogp = np.where(p > 0.0, p * np.log(np.maximum(p, LOGP_FLOOR)), 0.0)
        entropies -= plogp.sum(axis=1)
    entropy = float(entropies.mean())

    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    if not np.isfinite(loss):
        raise NumericalFailureError("non-finite PPO loss")

    # d loss / d log_prob_new: unclipped branch wins on ties, so a clipped
    # transition contributes exactly zero.
    unclipped = surr1 <= surr2
    d_logp = np.where(unclipped, -ratio * advantages, 0.0) / n
    d_value = config.value_coef * 2.0 * value_err / n

    grads = params.zeros_like()
    d_hidden = np.outer(d_value, params.w_value)
    head_w_grads: list[np.ndarray] = []
    head_b_grads: list[np.ndarray] = []
    for k, p in enumerate(probs):
        one_hot = np.zeros_like(p)
        one_hot[rows, slots[:, k]] = 1.0
        d_logits = d_logp[:, None] * (one_hot - p)
        if config.entropy_coef != 0.0:
            log_p = np.log(np.maximum(p, LOGP_FLOOR))
            head_entropy = -(np.where(p > 0.0, p * log_p, 0.0)).sum(axis=1)
            # dH/dz_j = -p_j (log p_j + H); bonus enters the loss as -coef * mean(H)
            d_entropy = -p * (log_p + head_entropy[:, None])
            d_logits = d_logits - (config.entropy_coef / n) * d_entropy
        head_w_grads.append(d_logits.T @ hidden)
        head_b_grads.append(d_logits.sum(axis=0))
        d_hidden += d_logits @ params.head_w[k]
    d_pre = d_hidden * (1.0 - hidden**2)

    grads.w_in = d_pre.T @ states
    grads.b_in = d_pre.sum(axis=0)
    grads.head_w = tuple(head_w_grads)
    grads.head_b = tuple(head_b_grads)
    grads.w_value = hidden.T @ d_value
    grads.b_value = np.array([d_value.sum()])

    clip_fraction = float(np.mean(np.abs(ratio - 1.0) > eps))
    return PPOLossResult(
        loss=float(loss),
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        grads=grads,
        mean_ratio=float(ratio.mean()),
        clip_fraction=clip_fraction,
    )


# ---------------------------------------------------------------------------
# Optimizer and update loop
# ---------------------------------------------------------------------------


class AdamOptimizer:
    """Adaptive-moment gradient descent over a PolicyParams-shaped tensor list."""

    def __init__(
        self,
        params: PolicyParams,
        learning_rate: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(a) for a in params.arrays()]
        self._v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params: PolicyParams, grads: PolicyParams) -> None:
        """Update params in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(params.arrays(), grads.arrays(), self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            a -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class UpdateStats:
    mean_ratio: float
    clip_fraction: float
    value_loss: float
    policy_loss: float
    entropy: float
    n_transitions: int


def ppo_update(
    params: PolicyParams,
    trajectories: list[Trajectory],
    config: PPOConfig,
    rng: np.random.Generator,
    optimizer: AdamOptimizer | None = None,
) -> tuple[PolicyParams, UpdateStats]:
    """Run the configured epochs of minibatch clipped-surrogate steps.

    The input params are left untouched; a fresh copy is optimized and
    returned. Advantages are normalized once over the whole update batch
    (sigma guard 1e-8).
    """
    if not trajectories:
        raise InvalidInputError("ppo_update needs at least one trajectory")
    new_params = params.copy()
    if optimizer is None:
        optimizer = AdamOptimizer(
            new_params,
            learning_rate=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    transitions: list[Transition] = []
    adv_parts: list[np.ndarray] = []
    ret_parts: list[np.ndarray] = []
    for traj in trajectories:
        adv, ret = compute_gae(traj, config.gamma, config.lam)
        transitions.extend(traj.transitions)
        adv_parts.append(adv)
        ret_parts.append(ret)
    advantages = np.concatenate(adv_parts)
    returns = np.concatenate(ret_parts)
    advantages = (advantages - advantages.mean()) / max(float(advantages.std()), 1e-8)

    n = len(transitions)
    stats_acc = {"mean_ratio": 0.0, "clip_fraction": 0.0, "value_loss": 0.0,
                 "policy_loss": 0.0, "entropy": 0.0}
    steps = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            result = ppo_loss(
                new_params,
                [transitions[i] for i in idx],
                advantages[idx],
                returns[idx],
                config,
            )
            optimizer.step(new_params, result.grads)
            stats_acc["mean_ratio"] += result.mean_ratio
            stats_acc["clip_fraction"] += result.clip_fraction
            stats_acc["value_loss"] += result.value_loss
            stats_acc["policy_loss"] += result.policy_loss
            stats_acc["entropy"] += result.entropy
            steps += 1

    stats = UpdateStats(
        mean_ratio=stats_acc["mean_ratio"] / steps,
        clip_fraction=stats_acc["clip_fraction"] / steps,
        value_loss=stats_acc["value_loss"] / steps,
        policy_loss=stats_acc["policy_loss"] / steps,
        entropy=stats_acc["entropy"] / steps,
        n_transitions=n,
    )
    return new_params, stats


class PPOAgent:
    """Stateful wrapper tying params, optimizer state, and the update rng together."""

    def __init__(
        self,
        state_dim: int,
        head_sizes: tuple[int, ...],
        config: PPOConfig,
        hidden_width: int = 64,
        seed: int = 0,
    ):
        self.config = config
        init_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA6E)))
        self.params = init_policy_params(
            state_dim, head_sizes, hidden_width=hidden_width, rng=init_rng
        )
        self._update_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0BB)))
        self.optimizer = AdamOptimizer(
            self.params,
            learning_rate=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    def snapshot(self) -> PolicyParams:
        """Frozen copy for rollout workers (theta_old)."""
        return self.params.copy()

    def update(self, trajectories: list[Trajectory]) -> UpdateStats:
        self.params, stats = ppo_update(
            self.params, trajectories, self.config, self._update_rng, self.optimizer
        )
        return stats


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def config_hash(config_obj) -> str:
    """sha256 over a canonical JSON rendering of any JSON-serializable config."""
    payload = json.dumps(config_obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()


def save_checkpoint(params: PolicyParams, path: str | Path, cfg_hash: str = "") -> None:
    """npz with every tensor plus a JSON metadata entry (shapes live in the npz)."""
    arrays = {
        "w_in": params.w_in,
        "b_in": params.b_in,
        "w_value": params.w_value,
        "b_value": params.b_value,
    }
    for k, (w, b) in enumerate(zip(params.head_w, params.head_b)):
        arrays[f"head_w_{k}"] = w
        arrays[f"head_b_{k}"] = b
    meta = json.dumps({"n_heads": len(params.head_w), "config_hash": cfg_hash})
    np.savez(path, meta=np.array(meta), **arrays)


def load_checkpoint(
    path: str | Path, expected_hash: str | None = None
) -> tuple[PolicyParams, str]:
    """Inverse of save_checkpoint; verifies the config hash when one is expected."""
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        stored_hash = meta.get("config_hash", "")
        if expected_hash is not None and stored_hash != expected_hash:
            raise ConfigurationError(
                f"checkpoint config hash {stored_hash!r} does not match {expected_hash!r}"
            )
        n_heads = meta["n_heads"]
        params = PolicyParams(
            w_in=data["w_in"],
            b_in=data["b_in"],
            head_w=tuple(data[f"head_w_{k}"] for k in range(n_heads)),
            head_b=tuple(data[f"head_b_{k}"] for k in range(n_heads)),
            w_value=data["w_value"],
            b_value=data["b_value"],
        )
    return params, stored_hash
