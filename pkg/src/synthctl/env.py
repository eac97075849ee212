"""Environment side of the loop: datasets, the retrainable classifier, and rewards.

The classifier (model M) is a multinomial linear-softmax model trained by
full-batch gradient descent. It subclasses scikit-learn's BaseEstimator so it
composes with the wider ecosystem (get_params, clone, cross-validation), but
the trainer itself is in-repo: zero init, fixed epoch count, deterministic to
the bit for identical inputs.

Reward per step: (accuracy delta) minus (mean predictive-entropy delta) on the
validation split, both measured against the previous step's report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import (
    ConfigurationError,
    InvalidInputError,
    InvalidRequestError,
    NumericalFailureError,
)
from .generators import GeneratorRequest, request_seed
from .prompts import Dictionary, Prompt, PromptAction, action_index, format_prompt


# ---------------------------------------------------------------------------
# Samples and splits
# ---------------------------------------------------------------------------

REAL = "real"
SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class LabeledSample:
    """One feature vector with its class id and provenance."""

    features: np.ndarray
    label: int
    provenance: str = REAL
    prompt_id: int | None = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 1:
            raise InvalidInputError("sample features must be a 1-D vector")
        object.__setattr__(self, "features", features)
        if self.provenance not in (REAL, SYNTHETIC):
            raise InvalidInputError(f"unknown provenance {self.provenance!r}")
        if self.provenance == SYNTHETIC and self.prompt_id is None:
            raise InvalidInputError("synthetic samples must carry a prompt_id")
        if self.provenance == REAL and self.prompt_id is not None:
            raise InvalidInputError("real samples must not carry a prompt_id")


def stack_samples(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """(features, labels) arrays for a non-empty sample sequence."""
    if not samples:
        raise InvalidInputError("cannot stack an empty sample list")
    X = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=int)
    return X, y


class DatasetSplits:
    """Disjoint train/val/test splits with access-audit counters.

    Every read of a split goes through a property that bumps its counter, so
    tests can assert the test split is never touched during training.
    """

    def __init__(
        self,
        train: Iterable[LabeledSample],
        val: Iterable[LabeledSample],
        test: Iterable[LabeledSample],
        n_classes: int,
    ):
        self._train = tuple(train)
        self._val = tuple(val)
        self._test = tuple(test)
        self.n_classes = int(n_classes)
        self.access_counts = {"train": 0, "val": 0, "test": 0}
        for name, split in (("train", self._train), ("val", self._val), ("test", self._test)):
            if not split:
                raise InvalidInputError(f"{name} split must be non-empty")
            for s in split:
                if not 0 <= s.label < self.n_classes:
                    raise InvalidInputError(
                        f"label {s.label} out of range [0, {self.n_classes}) in {name}"
                    )
        dims = {s.features.shape[0] for split in (self._train, self._val, self._test) for s in split}
        if len(dims) != 1:
            raise InvalidInputError(f"inconsistent feature dimensions across splits: {dims}")
        self.feature_dim = dims.pop()
        keys = [
            (s.features.tobytes(), s.label)
            for split in (self._train, self._val, self._test)
            for s in split
        ]
        if len(set(keys)) != len(keys):
            raise InvalidInputError("splits must be disjoint by sample identity")

    @property
    def train(self) -> tuple[LabeledSample, ...]:
        self.access_counts["train"] += 1
        return self._train

    @property
    def val(self) -> tuple[LabeledSample, ...]:
        self.access_counts["val"] += 1
        return self._val

    @property
    def test(self) -> tuple[LabeledSample, ...]:
        self.access_counts["test"] += 1
        return self._test

    def sizes(self) -> tuple[int, int, int]:
        return len(self._train), len(self._val), len(self._test)


# ---------------------------------------------------------------------------
# Classifier (model M)
# ---------------------------------------------------------------------------


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """Multinomial linear-softmax classifier trained by full-batch GD.

    Parameters
    ----------
    n_classes : number of classes; labels must lie in [0, n_classes).
    learning_rate : gradient-descent step size.
    epochs : fixed number of full-batch passes; 0 leaves the init untouched.
    warm_start : continue from the previous fit's parameters when True.
    """

    def __init__(
        self,
        n_classes: int = 2,
        learning_rate: float = 0.5,
        epochs: int = 200,
        warm_start: bool = False,
    ):
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.warm_start = warm_start

    def fit(self, X, y) -> "SoftmaxClassifier":
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(int)
        if y.min() < 0 or y.max() >= self.n_classes:
            raise InvalidInputError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{y.min()}, {y.max()}]"
            )
        n, d = X.shape
        if self.warm_start and hasattr(self, "coef_"):
            if self.coef_.shape[1] != d:
                raise InvalidInputError(
                    f"warm start expects {self.coef_.shape[1]} features, got {d}"
                )
            weights = self.coef_.copy()
            bias = self.intercept_.copy()
        else:
            weights = np.zeros((self.n_classes, d))
            bias = np.zeros(self.n_classes)

        one_hot = np.zeros((n, self.n_classes))
        one_hot[np.arange(n), y] = 1.0
        for _ in range(self.epochs):
            probs = _softmax_rows(X @ weights.T + bias)
            grad = (probs - one_hot) / n
            weights -= self.learning_rate * (grad.T @ X)
            bias -= self.learning_rate * grad.sum(axis=0)

        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise NumericalFailureError("classifier training diverged to non-finite parameters")
        self.coef_ = weights
        self.intercept_ = bias
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = d
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return _softmax_rows(X @ self.coef_.T + self.intercept_)

    def predict(self, X) -> np.ndarray:
        # np.argmax breaks ties toward the lowest class index by construction
        return np.argmax(self.predict_proba(X), axis=1)


def train_model(
    train_data: Sequence[LabeledSample],
    n_classes: int,
    learning_rate: float = 0.5,
    epochs: int = 200,
    init: SoftmaxClassifier | None = None,
) -> SoftmaxClassifier:
    """Train model M on the given samples, fresh or warm-started from ``init``."""
    X, y = stack_samples(train_data)
    model = SoftmaxClassifier(
        n_classes=n_classes,
        learning_rate=learning_rate,
        epochs=epochs,
        warm_start=init is not None,
    )
    if init is not None:
        check_is_fitted(init, "coef_")
        model.coef_ = init.coef_.copy()
        model.intercept_ = init.intercept_.copy()
        model.classes_ = init.classes_.copy()
        model.n_features_in_ = init.n_features_in_
    return model.fit(X, y)


# ---------------------------------------------------------------------------
# Entropy, evaluation, reward
# ---------------------------------------------------------------------------


def entropy_of_probs(probs: np.ndarray) -> float:
    """Shannon entropy (natural log) with the 0*log 0 = 0 convention."""
    probs = np.asarray(probs, dtype=float)
    if not np.isfinite(probs).all():
        raise NumericalFailureError("non-finite probabilities in entropy computation")
    terms = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    return float(-terms.sum())


def predictive_entropy(model: SoftmaxClassifier, x: np.ndarray) -> float:
    """Entropy of the model's class distribution for a single input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("predictive_entropy expects a single feature vector")
    return entropy_of_probs(model.predict_proba(x[None, :])[0])


@dataclass(frozen=True)
class EvalReport:
    """Accuracy, per-class accuracy, and mean predictive entropy on one split."""

    accuracy: float
    per_class_accuracy: np.ndarray
    mean_entropy: float
    n_eval: int
    empty_classes: tuple[int, ...] = ()


def evaluate(model: SoftmaxClassifier, split: Sequence[LabeledSample]) -> EvalReport:
    """Argmax accuracy (ties toward the lowest index) plus entropy statistics."""
    if not split:
        raise InvalidInputError("cannot evaluate on an empty split")
    return evaluate_arrays(model, *stack_samples(split))


def evaluate_arrays(model: SoftmaxClassifier, X: np.ndarray, y: np.ndarray) -> EvalReport:
    """Array-based evaluate; the env uses this to avoid restacking every step."""
    probs = model.predict_proba(X)
    if not np.isfinite(probs).all():
        raise NumericalFailureError("non-finite probabilities during evaluation")
    predictions = np.argmax(probs, axis=1)
    accuracy = float(np.mean(predictions == y))

    n_classes = probs.shape[1]
    per_class = np.zeros(n_classes)
    empty: list[int] = []
    for c in range(n_classes):
        mask = y == c
        if mask.any():
            per_class[c] = float(np.mean(predictions[mask] == c))
        else:
            empty.append(c)

    log_probs = np.log(np.where(probs > 0.0, probs, 1.0))
    entropies = -(np.where(probs > 0.0, probs * log_probs, 0.0)).sum(axis=1)
    return EvalReport(
        accuracy=accuracy,
        per_class_accuracy=per_class,
        mean_entropy=float(entropies.mean()),
        n_eval=len(y),
        empty_classes=tuple(empty),
    )


def compute_reward(before: EvalReport, after: EvalReport) -> float:
    """Accuracy gain minus mean-entropy gain between two reports on the same split."""
    if before.n_eval != after.n_eval:
        raise InvalidInputError(
            f"reports compare different splits: n_eval {before.n_eval} vs {after.n_eval}"
        )
    return (after.accuracy - before.accuracy) - (after.mean_entropy - before.mean_entropy)


@dataclass(frozen=True)
class StateVector:
    """Policy input: per-class validation accuracy, mean entropy, budget use."""

    per_class_accuracy: np.ndarray
    mean_entropy: float
    budget_fraction: float

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [
                np.asarray(self.per_class_accuracy, dtype=float),
                [self.mean_entropy, self.budget_fraction],
            ]
        )

    @property
    def dim(self) -> int:
        return len(self.per_class_accuracy) + 2


def state_dim_for(n_classes: int) -> int:
    return n_classes + 2


# ---------------------------------------------------------------------------
# Support set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptRecord:
    """Bookkeeping for one generation step: which prompt produced which samples."""

    step: int
    prompt: Prompt
    count: int
    seed: int
    label: int
    flat_index: int


class SupportSet:
    """Append-only synthetic sample store capped at the N_syn budget."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("support-set capacity must be >= 1")
        self.capacity = capacity
        self.samples: list[LabeledSample] = []
        self.records: list[PromptRecord] = []
        self._feature_parts: list[np.ndarray] = []
        self._labels: list[int] = []

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def budget_fraction(self) -> float:
        return len(self.samples) / self.capacity

    def append_batch(self, samples: Sequence[LabeledSample], record: PromptRecord) -> None:
        if len(samples) != record.count:
            raise InvalidInputError(
                f"record claims {record.count} samples, got {len(samples)}"
            )
        if len(self.samples) + len(samples) > self.capacity:
            raise InvalidRequestError(
                f"support-set budget overflow: {len(self.samples)} + {len(samples)} "
                f"> {self.capacity}"
            )
        self.samples.extend(samples)
        self.records.append(record)
        self._feature_parts.append(np.stack([s.features for s in samples]))
        self._labels.extend(s.label for s in samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.samples:
            raise InvalidInputError("support set is empty")
        return np.concatenate(self._feature_parts), np.array(self._labels, dtype=int)


# ---------------------------------------------------------------------------
# The environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainerConfig:
    """Model-M training schedule used inside the loop."""

    learning_rate: float = 0.5
    pretrain_epochs: int = 200
    step_epochs: int = 30
    warm_start: bool = True


@dataclass(frozen=True)
class EnvConfig:
    n_syn: int = 400
    samples_per_step: int = 10
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    run_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_syn < 1 or self.samples_per_step < 1:
            raise ConfigurationError("n_syn and samples_per_step must be >= 1")
        if self.n_syn % self.samples_per_step != 0:
            raise ConfigurationError(
                f"n_syn ({self.n_syn}) must be a multiple of samples_per_step "
                f"({self.samples_per_step})"
            )


class SynthesisEnv:
    """Stateful episode: generate -> extend S -> retrain M -> reward.

    One instance per exploration thread; the splits are shared read-only.
    """

    def __init__(self, splits: DatasetSplits, dictionary: Dictionary, generator, config: EnvConfig):
        self.splits = splits
        self.dictionary = dictionary
        self.generator = generator
        self.config = config
        self.support_set = SupportSet(config.n_syn)
        self.model: SoftmaxClassifier | None = None
        self.pretrained_report: EvalReport | None = None
        self.last_report: EvalReport | None = None
        # Per-episode generation seed; the orchestrator re-derives it so
        # parallel episodes draw distinct batches while staying replayable.
        self.run_seed = config.run_seed
        self._X_train, self._y_train = stack_samples(splits.train)
        self._X_val, self._y_val = stack_samples(splits.val)
        self._step = 0

    @property
    def steps_per_episode(self) -> int:
        return self.config.n_syn // self.config.samples_per_step

    def _state(self) -> StateVector:
        assert self.last_report is not None
        return StateVector(
            per_class_accuracy=self.last_report.per_class_accuracy.copy(),
            mean_entropy=self.last_report.mean_entropy,
            budget_fraction=self.support_set.budget_fraction,
        )

    def reset(self) -> StateVector:
        """Empty S, train M on D alone, seed the before-report from it."""
        trainer = self.config.trainer
        self.support_set = SupportSet(self.config.n_syn)
        self._step = 0
        self.model = SoftmaxClassifier(
            n_classes=self.splits.n_classes,
            learning_rate=trainer.learning_rate,
            epochs=trainer.pretrain_epochs,
        ).fit(self._X_train, self._y_train)
        self.pretrained_report = evaluate_arrays(self.model, self._X_val, self._y_val)
        self.last_report = self.pretrained_report
        return self._state()

    def step(self, action: PromptAction) -> tuple[StateVector, float, bool]:
        """Run one generation step; reward is the Eq.-style accuracy/entropy delta."""
        if self.model is None or self.last_report is None:
            raise InvalidRequestError("call reset() before step()")
        m = self.config.samples_per_step
        if len(self.support_set) + m > self.config.n_syn:
            raise InvalidRequestError(
                f"budget overflow: |S|={len(self.support_set)} + m={m} exceeds "
                f"N_syn={self.config.n_syn}"
            )
        prompt = format_prompt(self.dictionary, action)
        flat = action_index(self.dictionary, action)
        seed = request_seed(self.run_seed, self._step, flat)
        batch = self.generator.generate(
            GeneratorRequest(
                prompt=prompt, count=m, seed=seed, feature_dim=self.splits.feature_dim
            )
        )
        label = action.class_idx[0]
        samples = [
            LabeledSample(
                features=vec, label=label, provenance=SYNTHETIC, prompt_id=self._step
            )
            for vec in batch.samples
        ]
        self.support_set.append_batch(
            samples,
            PromptRecord(
                step=self._step, prompt=prompt, count=m, seed=seed, label=label,
                flat_index=flat,
            ),
        )

        trainer = self.config.trainer
        X_syn, y_syn = self.support_set.arrays()
        X_all = np.concatenate([self._X_train, X_syn])
        y_all = np.concatenate([self._y_train, y_syn])
        if trainer.warm_start:
            step_model = SoftmaxClassifier(
                n_classes=self.splits.n_classes,
                learning_rate=trainer.learning_rate,
                epochs=trainer.step_epochs,
                warm_start=True,
            )
            step_model.coef_ = self.model.coef_.copy()
            step_model.intercept_ = self.model.intercept_.copy()
            step_model.classes_ = self.model.classes_.copy()
            step_model.n_features_in_ = self.model.n_features_in_
            self.model = step_model.fit(X_all, y_all)
        else:
            self.model = SoftmaxClassifier(
                n_classes=self.splits.n_classes,
                learning_rate=trainer.learning_rate,
                epochs=trainer.pretrain_epochs,
            ).fit(X_all, y_all)
        after = evaluate_arrays(self.model, self._X_val, self._y_val)
        reward = compute_reward(self.last_report, after)
        self.last_report = after
        self._step += 1
        done = len(self.support_set) == self.config.n_syn
        return self._state(), reward, done
