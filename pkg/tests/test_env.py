"""Classifier, entropy/reward math, and the support-set environment."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from synthctl.env import (
    EnvConfig,
    EvalReport,
    LabeledSample,
    DatasetSplits,
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
from synthctl.errors import (
    ConfigurationError,
    InvalidInputError,
    InvalidRequestError,
)
from synthctl.generators import SimulatedGenerator, SimulatorSpec
from synthctl.prompts import Dictionary, PromptAction


def gaussian_samples(rng, centroids, counts, sigma=1.0, provenance="real"):
    samples = []
    for label, (mu, count) in enumerate(zip(centroids, counts)):
        points = mu + sigma * rng.standard_normal((count, len(mu)))
        samples.extend(LabeledSample(features=p, label=label) for p in points)
    return samples


def tiny_world(n_classes=3, dim=4, per_class=30, separation=6.0, seed=0):
    """Small well-separated dataset plus a matching simulator."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
    centroids = basis.T * (separation / np.sqrt(2.0))
    train = gaussian_samples(rng, centroids, [per_class] * n_classes)
    val = gaussian_samples(rng, centroids, [max(4, per_class // 5)] * n_classes)
    test = gaussian_samples(rng, centroids, [max(4, per_class // 5)] * n_classes)
    splits = DatasetSplits(train=train, val=val, test=test, n_classes=n_classes)
    spec = SimulatorSpec(
        centroids=centroids,
        sigmas=np.ones(n_classes),
        domain_noise=(1.0, 1.5),
    )
    dictionary = Dictionary(
        domains=("photo", "noisy"),
        classes=tuple(f"c{i}" for i in range(n_classes)),
    )
    return splits, SimulatedGenerator(spec), dictionary


# ---------------------------------------------------------------------------
# LabeledSample / DatasetSplits
# ---------------------------------------------------------------------------


class TestLabeledSample:
    def test_synthetic_needs_prompt_id(self):
        with pytest.raises(InvalidInputError):
            LabeledSample(features=np.zeros(2), label=0, provenance="synthetic")

    def test_real_must_not_have_prompt_id(self):
        with pytest.raises(InvalidInputError):
            LabeledSample(features=np.zeros(2), label=0, prompt_id=3)


class TestDatasetSplits:
    def test_audit_counters(self):
        splits, _, _ = tiny_world()
        before = splits.access_counts["test"]
        _ = splits.test
        assert splits.access_counts["test"] == before + 1

    def test_rejects_overlapping_splits(self):
        s = LabeledSample(features=np.array([1.0, 2.0]), label=0)
        dup = LabeledSample(features=np.array([1.0, 2.0]), label=0)
        other = LabeledSample(features=np.array([3.0, 4.0]), label=0)
        with pytest.raises(InvalidInputError):
            DatasetSplits(train=[s], val=[dup], test=[other], n_classes=1)

    def test_rejects_out_of_range_labels(self):
        s = LabeledSample(features=np.array([1.0]), label=5)
        with pytest.raises(InvalidInputError):
            DatasetSplits(train=[s], val=[s], test=[s], n_classes=3)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


class TestEntropy:
    def test_uniform_ten(self):
        assert entropy_of_probs(np.full(10, 0.1)) == pytest.approx(np.log(10), abs=1e-9)

    def test_one_hot(self):
        p = np.zeros(10)
        p[3] = 1.0
        assert entropy_of_probs(p) == 0.0

    def test_two_point(self):
        p = np.zeros(10)
        p[0] = p[1] = 0.5
        assert entropy_of_probs(p) == pytest.approx(np.log(2), abs=1e-9)

    def test_predictive_entropy_uniform_model(self):
        model = SoftmaxClassifier(n_classes=10, epochs=0)
        model.fit(np.zeros((3, 4)), np.array([0, 1, 2]))  # zero epochs -> zero params
        assert predictive_entropy(model, np.ones(4)) == pytest.approx(np.log(10), abs=1e-9)

    def test_bounds_property(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            model = SoftmaxClassifier(n_classes=n, epochs=0)
            model.fit(rng.normal(size=(n, 3)), np.arange(n))
            model.coef_ = rng.normal(scale=5.0, size=(n, 3))
            model.intercept_ = rng.normal(scale=5.0, size=n)
            h = predictive_entropy(model, rng.normal(scale=3.0, size=3))
            assert 0.0 <= h <= np.log(n) + 1e-12

    def test_non_finite_rejected(self):
        from synthctl.errors import NumericalFailureError
        with pytest.raises(NumericalFailureError):
            entropy_of_probs(np.array([np.nan, 0.5]))


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


class TestSoftmaxClassifier:
    def test_separable_blobs_reach_high_accuracy(self):
        # linearly separable by construction: centroid distance 8 sigma
        rng = np.random.default_rng(0)
        centroids = np.array([[0.0, 0.0], [8.0, 0.0]])
        samples = gaussian_samples(rng, centroids, [100, 100])
        model = train_model(samples, n_classes=2, learning_rate=0.5, epochs=400)
        report = evaluate(model, samples)
        assert report.accuracy >= 0.99

    def test_zero_epochs_fresh_returns_zero_init(self):
        model = SoftmaxClassifier(n_classes=3, epochs=0)
        model.fit(np.ones((5, 4)), np.array([0, 1, 2, 0, 1]))
        assert np.all(model.coef_ == 0.0)
        assert np.all(model.intercept_ == 0.0)

    def test_zero_epochs_warm_keeps_init(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(20, 3)), rng.integers(0, 2, size=20)
        base = SoftmaxClassifier(n_classes=2, epochs=50).fit(X, y)
        again = train_model(
            [LabeledSample(features=x, label=int(l)) for x, l in zip(X, y)],
            n_classes=2, epochs=0, init=base,
        )
        assert np.array_equal(again.coef_, base.coef_)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X, y = rng.normal(size=(50, 4)), rng.integers(0, 3, size=50)
        m1 = SoftmaxClassifier(n_classes=3, epochs=100).fit(X, y)
        m2 = SoftmaxClassifier(n_classes=3, epochs=100).fit(X, y)
        assert np.array_equal(m1.coef_, m2.coef_)
        assert np.array_equal(m1.intercept_, m2.intercept_)

    def test_label_out_of_range(self):
        with pytest.raises(InvalidInputError):
            SoftmaxClassifier(n_classes=2).fit(np.ones((2, 2)), np.array([0, 5]))

    def test_predict_proba_rows_normalized(self):
        rng = np.random.default_rng(3)
        model = SoftmaxClassifier(n_classes=4, epochs=20).fit(
            rng.normal(size=(40, 5)), rng.integers(0, 4, size=40)
        )
        probs = model.predict_proba(rng.normal(size=(10, 5)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_sklearn_clone_compatible(self):
        model = SoftmaxClassifier(n_classes=4, learning_rate=0.1, epochs=7)
        cloned = clone(model)
        assert cloned.get_params() == model.get_params()

    def test_feature_dim_mismatch(self):
        model = SoftmaxClassifier(n_classes=2, epochs=1).fit(
            np.ones((4, 3)), np.array([0, 1, 0, 1])
        )
        with pytest.raises(InvalidInputError):
            model.predict_proba(np.ones((2, 5)))


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def certain_model(n_classes, dim, scale=1e4):
    """Huge logits collapse softmax to an exact one-hot."""
    model = SoftmaxClassifier(n_classes=n_classes, epochs=0)
    model.fit(np.zeros((n_classes, dim)), np.arange(n_classes))
    model.coef_ = np.eye(n_classes, dim) * scale
    return model


class TestEvaluate:
    def test_perfect_classifier(self):
        # samples on the axis of their class -> certain correct predictions
        samples = [
            LabeledSample(features=np.eye(3, 5)[c], label=c) for c in range(3)
        ]
        report = evaluate(certain_model(3, 5), samples)
        assert report.accuracy == 1.0
        assert report.mean_entropy == 0.0
        np.testing.assert_array_equal(report.per_class_accuracy, np.ones(3))

    def test_uniform_model_predicts_class_zero(self):
        rng = np.random.default_rng(4)
        samples = []
        for c in range(10):
            for _ in range(5):
                samples.append(LabeledSample(features=rng.normal(size=3), label=c))
        model = SoftmaxClassifier(n_classes=10, epochs=0)
        model.fit(np.zeros((10, 3)), np.arange(10))
        report = evaluate(model, samples)
        assert report.accuracy == pytest.approx(0.1)
        assert report.mean_entropy == pytest.approx(np.log(10), abs=1e-9)
        np.testing.assert_array_equal(
            report.per_class_accuracy, np.eye(10)[0]
        )

    def test_matches_naive_recount_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 4))
        y = rng.integers(0, 5, size=200)
        model = SoftmaxClassifier(n_classes=5, epochs=30).fit(X, y)
        samples = [LabeledSample(features=x, label=int(l)) for x, l in zip(X, y)]
        report = evaluate(model, samples)
        probs = model.predict_proba(X)
        correct = 0
        for i in range(200):
            best, best_p = 0, probs[i, 0]
            for c in range(1, 5):
                if probs[i, c] > best_p:
                    best, best_p = c, probs[i, c]
            correct += best == y[i]
        assert report.accuracy == correct / 200

    def test_balanced_split_accuracy_equals_mean_per_class(self):
        splits, _, _ = tiny_world()
        model = train_model(list(splits.train), n_classes=3, epochs=100)
        report = evaluate(model, splits.val)
        assert report.accuracy == pytest.approx(
            float(report.per_class_accuracy.mean()), abs=1e-9
        )

    def test_empty_class_flagged(self):
        samples = [LabeledSample(features=np.ones(2), label=0)]
        model = SoftmaxClassifier(n_classes=3, epochs=0)
        model.fit(np.zeros((3, 2)), np.arange(3))
        report = evaluate(model, samples)
        assert report.empty_classes == (1, 2)
        assert report.per_class_accuracy[1] == 0.0

    def test_empty_split_rejected(self):
        with pytest.raises(InvalidInputError):
            evaluate(certain_model(2, 2), [])


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------


class TestComputeReward:
    @staticmethod
    def report(acc, entropy, n=100):
        return EvalReport(accuracy=acc, per_class_accuracy=np.array([acc]),
                          mean_entropy=entropy, n_eval=n)

    def test_table_one_style_delta(self):
        r = compute_reward(self.report(0.920, 0.5), self.report(0.927, 0.5))
        assert r == pytest.approx(0.007, abs=1e-12)

    def test_identity_transition(self):
        a = self.report(0.8, 0.3)
        assert compute_reward(a, a) == 0.0

    def test_combined_delta(self):
        r = compute_reward(self.report(0.50, 0.100), self.report(0.51, 0.104))
        assert r == pytest.approx(0.006, abs=1e-12)

    def test_mismatched_split_rejected(self):
        with pytest.raises(InvalidInputError):
            compute_reward(self.report(0.5, 0.1, n=100), self.report(0.5, 0.1, n=99))

    @given(
        acc_a=st.floats(0, 1), acc_b=st.floats(0, 1),
        h_a=st.floats(0, 3), h_b=st.floats(0, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_antisymmetry_exact(self, acc_a, acc_b, h_a, h_b):
        a = self.report(acc_a, h_a)
        b = self.report(acc_b, h_b)
        assert compute_reward(a, b) == -compute_reward(b, a)


# ---------------------------------------------------------------------------
# StateVector
# ---------------------------------------------------------------------------


class TestStateVector:
    def test_dimension_and_bounds(self):
        sv = StateVector(per_class_accuracy=np.full(10, 0.5), mean_entropy=1.2,
                         budget_fraction=0.25)
        arr = sv.as_array()
        assert arr.shape == (12,)
        assert sv.dim == 12
        assert (arr >= 0).all() and (arr <= max(1.0, np.log(10))).all()


# ---------------------------------------------------------------------------
# SynthesisEnv
# ---------------------------------------------------------------------------


def make_env(n_syn=40, m=10, seed=0, step_epochs=15, pretrain_epochs=80):
    splits, generator, dictionary = tiny_world(seed=seed)
    config = EnvConfig(
        n_syn=n_syn,
        samples_per_step=m,
        trainer=TrainerConfig(learning_rate=0.5, pretrain_epochs=pretrain_epochs,
                              step_epochs=step_epochs, warm_start=True),
        run_seed=seed,
    )
    return SynthesisEnv(splits, dictionary, generator, config)


class TestSynthesisEnv:
    def test_reset_state(self):
        env = make_env()
        state = env.reset()
        assert len(env.support_set) == 0
        assert state.budget_fraction == 0.0
        expected = evaluate(env.model, env.splits.val)
        np.testing.assert_array_equal(
            state.per_class_accuracy, expected.per_class_accuracy
        )

    def test_reset_deterministic(self):
        s1 = make_env().reset()
        s2 = make_env().reset()
        assert np.array_equal(s1.as_array(), s2.as_array())

    def test_step_bookkeeping(self):
        env = make_env()
        env.reset()
        state, reward, done = env.step(PromptAction(0, (1, 1, 1)))
        assert len(env.support_set) == 10
        assert len(env.support_set.records) == 1
        assert state.budget_fraction == pytest.approx(0.25)
        assert not done
        record = env.support_set.records[0]
        assert record.count == 10
        assert record.label == 1

    def test_episode_ends_exactly_at_budget(self):
        env = make_env(n_syn=400, m=10, step_epochs=3, pretrain_epochs=30)
        env.reset()
        action = PromptAction(0, (0, 1, 2))
        for step in range(40):
            _, _, done = env.step(action)
            assert len(env.support_set) == (step + 1) * 10 <= 400
            assert done == (step == 39)
        with pytest.raises(InvalidRequestError):
            env.step(action)

    def test_rewards_match_report_log(self):
        # replay-from-log oracle: recompute each reward from persisted reports
        env = make_env()
        env.reset()
        reports = [env.last_report]
        rewards = []
        for c in range(4):
            _, r, _ = env.step(PromptAction(0, (c % 3, (c + 1) % 3, (c + 2) % 3)))
            rewards.append(r)
            reports.append(env.last_report)
        for i, r in enumerate(rewards):
            assert r == compute_reward(reports[i], reports[i + 1])

    def test_telescoping_episode_reward(self):
        env = make_env()
        env.reset()
        pre = env.pretrained_report
        total = 0.0
        done = False
        while not done:
            _, r, done = env.step(PromptAction(1, (0, 2, 1)))
            total += r
        final = env.last_report
        expected = (final.accuracy - pre.accuracy) - (final.mean_entropy - pre.mean_entropy)
        assert total == pytest.approx(expected, abs=1e-9)

    def test_full_episode_bitwise_deterministic(self):
        def run():
            env = make_env(seed=3)
            env.reset()
            rewards = []
            done = False
            step = 0
            while not done:
                _, r, done = env.step(PromptAction(step % 2, (0, 1, 2)))
                rewards.append(r)
                step += 1
            return rewards
        assert run() == run()

    def test_step_before_reset_rejected(self):
        env = make_env()
        with pytest.raises(InvalidRequestError):
            env.step(PromptAction(0, (0, 0, 0)))

    def test_budget_not_multiple_rejected(self):
        with pytest.raises(ConfigurationError):
            EnvConfig(n_syn=35, samples_per_step=10)


class TestSupportSet:
    def test_capacity_enforced(self):
        from synthctl.env import PromptRecord
        from synthctl.prompts import Prompt
        support = SupportSet(capacity=5)
        prompt = Prompt(text="t", action=PromptAction(0, (0, 0, 0)))
        samples = [
            LabeledSample(features=np.zeros(2), label=0, provenance="synthetic",
                          prompt_id=0)
            for _ in range(6)
        ]
        with pytest.raises(InvalidRequestError):
            support.append_batch(samples, PromptRecord(0, prompt, 6, 1, 0, 0))

    def test_sample_count_matches_record_sum(self):
        env = make_env()
        env.reset()
        env.step(PromptAction(0, (0, 0, 0)))
        env.step(PromptAction(0, (1, 1, 1)))
        assert len(env.support_set) == sum(r.count for r in env.support_set.records)
