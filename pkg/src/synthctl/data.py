"""Gaussian-blob benchmark datasets and every on-disk format the tools share.

Dataset files are line-oriented text: a header ``n_classes=<n>,dim=<d>``
followed by one ``label,f1,...,fd`` row per sample. Floats are written with
repr so a read-back is bit-identical, which is what makes "same seed, same
bytes" and manifest replay checks possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import REAL, SYNTHETIC, DatasetSplits, LabeledSample, SupportSet, PromptRecord
from .errors import ConfigurationError, InvalidInputError
from .generators import GeneratorRequest, SimulatorSpec
from .prompts import Dictionary, PromptAction, format_prompt

SPLIT_FILES = {"train": "train.csv", "val": "val.csv", "test": "test.csv"}
SIMULATOR_FILE = "simulator.json"


# ---------------------------------------------------------------------------
# Synthetic dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    """Blob geometry knobs: spacing, widths, designated overlaps, designated imbalance."""

    n_classes: int = 10
    feature_dim: int = 16
    per_class: int = 200
    class_separation: float = 6.0
    sigma: float = 1.0
    sigma_overrides: tuple[tuple[int, float], ...] = ()
    overlap_pairs: tuple[tuple[int, int], ...] = ()
    overlap_distance: float = 2.5
    underrepresented: tuple[int, ...] = ()
    underrepresented_fraction: float = 0.25
    split_ratio: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "overlap_pairs", tuple(tuple(int(i) for i in p) for p in self.overlap_pairs)
        )
        object.__setattr__(self, "underrepresented", tuple(int(i) for i in self.underrepresented))
        object.__setattr__(self, "split_ratio", tuple(float(r) for r in self.split_ratio))
        object.__setattr__(
            self, "sigma_overrides",
            tuple((int(c), float(s)) for c, s in self.sigma_overrides),
        )
        if self.n_classes < 2 or self.feature_dim < 1 or self.per_class < 1:
            raise ConfigurationError("n_classes >= 2, feature_dim >= 1, per_class >= 1 required")
        if self.sigma <= 0 or self.class_separation <= 0 or self.overlap_distance <= 0:
            raise ConfigurationError("sigma, class_separation, overlap_distance must be positive")
        for c, s in self.sigma_overrides:
            if not 0 <= c < self.n_classes:
                raise ConfigurationError(f"sigma override for unknown class {c}")
            if s <= 0:
                raise ConfigurationError(f"sigma override for class {c} must be positive")
        for a, b in self.overlap_pairs:
            if not (0 <= a < self.n_classes and 0 <= b < self.n_classes) or a == b:
                raise ConfigurationError(f"bad overlap pair ({a}, {b})")
        for c in self.underrepresented:
            if not 0 <= c < self.n_classes:
                raise ConfigurationError(f"underrepresented class {c} out of range")
        if not 0.0 < self.underrepresented_fraction <= 1.0:
            raise ConfigurationError("underrepresented_fraction must be in (0, 1]")
        if len(self.split_ratio) != 3 or abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigurationError("split_ratio must be three fractions summing to 1")
        if min(self.split_ratio) <= 0.0:
            raise ConfigurationError("split_ratio parts must be positive")

    def class_count(self, c: int) -> int:
        if c in self.underrepresented:
            return max(1, round(self.per_class * self.underrepresented_fraction))
        return self.per_class

    def class_sigmas(self) -> np.ndarray:
        sigmas = np.full(self.n_classes, self.sigma)
        for c, s in self.sigma_overrides:
            sigmas[c] = s
        return sigmas


def _place_centroids(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Equidistant base placement, then pull overlap partners close."""
    n, d = spec.n_classes, spec.feature_dim
    if n <= d:
        # Orthonormal directions give all pairwise distances = class_separation.
        basis, _ = np.linalg.qr(rng.standard_normal((d, n)))
        centroids = basis.T * (spec.class_separation / np.sqrt(2.0))
    else:
        directions = rng.standard_normal((n, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        centroids = directions * (spec.class_separation / np.sqrt(2.0))
    for a, b in spec.overlap_pairs:
        gap = centroids[b] - centroids[a]
        centroids[b] = centroids[a] + spec.overlap_distance * gap / np.linalg.norm(gap)
    return centroids


def make_synthetic_dataset(
    spec: DatasetSpec, seed: int
) -> tuple[DatasetSplits, np.ndarray, np.ndarray]:
    """Generate stratified 80:10:10-style splits plus the ground-truth geometry.

    Returns (splits, centroids, sigmas); the geometry feeds the simulator so
    synthetic generation samples from the same world the data came from.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    centroids = _place_centroids(spec, rng)
    sigmas = spec.class_sigmas()

    train: list[LabeledSample] = []
    val: list[LabeledSample] = []
    test: list[LabeledSample] = []
    r_train, r_val, r_test = spec.split_ratio
    for c in range(spec.n_classes):
        count = spec.class_count(c)
        n_val = round(count * r_val)
        n_test = round(count * r_test)
        n_train = count - n_val - n_test
        if min(n_train, n_val, n_test) < 1:
            raise ConfigurationError(
                f"class {c}: split of {count} samples leaves an empty part "
                f"(train={n_train}, val={n_val}, test={n_test})"
            )
        points = centroids[c] + sigmas[c] * rng.standard_normal((count, spec.feature_dim))
        samples = [LabeledSample(features=p, label=c) for p in points]
        train.extend(samples[:n_train])
        val.extend(samples[n_train : n_train + n_val])
        test.extend(samples[n_train + n_val :])
    splits = DatasetSplits(train=train, val=val, test=test, n_classes=spec.n_classes)
    return splits, centroids, sigmas


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def _format_row(label: int, features: np.ndarray) -> str:
    return ",".join([str(int(label))] + [repr(float(v)) for v in features])


def write_dataset_file(
    path: str | Path, samples: Sequence[LabeledSample], n_classes: int
) -> None:
    if not samples:
        raise InvalidInputError("refusing to write an empty dataset file")
    dim = samples[0].features.shape[0]
    lines = [f"n_classes={n_classes},dim={dim}"]
    lines.extend(_format_row(s.label, s.features) for s in samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset_file(
    path: str | Path, provenance: str = REAL
) -> tuple[list[LabeledSample], int, int]:
    """Returns (samples, n_classes, dim). Synthetic provenance gets prompt_id=-1
    placeholders; the manifest is the authoritative pairing."""
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise InvalidInputError(f"{path}: empty dataset file")
    header = text[0].strip()
    try:
        fields = dict(kv.split("=") for kv in header.split(","))
        n_classes = int(fields["n_classes"])
        dim = int(fields["dim"])
    except (ValueError, KeyError) as exc:
        raise InvalidInputError(f"{path}: bad header {header!r}") from exc
    samples = []
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise InvalidInputError(f"{path}:{lineno}: expected {dim + 1} fields")
        label = int(parts[0])
        features = np.array([float(v) for v in parts[1:]])
        prompt_id = -1 if provenance == SYNTHETIC else None
        samples.append(
            LabeledSample(features=features, label=label, provenance=provenance,
                          prompt_id=prompt_id)
        )
    return samples, n_classes, dim


def write_split_files(directory: str | Path, splits: DatasetSplits) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, samples in (
        ("train", splits.train), ("val", splits.val), ("test", splits.test)
    ):
        write_dataset_file(directory / SPLIT_FILES[name], samples, splits.n_classes)


def read_split_files(directory: str | Path) -> DatasetSplits:
    directory = Path(directory)
    parts = {}
    n_classes = None
    for name, filename in SPLIT_FILES.items():
        samples, n, _ = read_dataset_file(directory / filename)
        parts[name] = samples
        if n_classes is None:
            n_classes = n
        elif n != n_classes:
            raise InvalidInputError(f"{filename}: n_classes {n} != {n_classes}")
    return DatasetSplits(train=parts["train"], val=parts["val"], test=parts["test"],
                         n_classes=n_classes)


# ---------------------------------------------------------------------------
# Simulator spec file
# ---------------------------------------------------------------------------


def write_simulator_spec(path: str | Path, spec: SimulatorSpec) -> None:
    payload = {
        "centroids": spec.centroids.tolist(),
        "sigmas": spec.sigmas.tolist(),
        "slot_weights": list(spec.slot_weights),
        "domain_noise": list(spec.domain_noise),
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_simulator_spec(path: str | Path) -> SimulatorSpec:
    payload = json.loads(Path(path).read_text())
    return SimulatorSpec(
        centroids=np.array(payload["centroids"], dtype=float),
        sigmas=np.array(payload["sigmas"], dtype=float),
        slot_weights=tuple(payload["slot_weights"]),
        domain_noise=tuple(payload.get("domain_noise", ())),
    )


# ---------------------------------------------------------------------------
# Support-set persistence and replay
# ---------------------------------------------------------------------------


def write_support_set(
    samples_path: str | Path, manifest_path: str | Path, support: SupportSet,
    n_classes: int,
) -> None:
    """Samples in the dataset format plus a JSONL manifest pairing line ranges
    with the generating step, prompt text, and seed."""
    write_dataset_file(samples_path, support.samples, n_classes)
    lines = []
    offset = 0
    for rec in support.records:
        lines.append(json.dumps({
            "step": rec.step,
            "flat_index": rec.flat_index,
            "domain_idx": rec.prompt.action.domain_idx,
            "class_idx": list(rec.prompt.action.class_idx),
            "prompt": rec.prompt.text,
            "count": rec.count,
            "seed": rec.seed,
            "label": rec.label,
            "line_start": offset,
        }))
        offset += rec.count
    Path(manifest_path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().strip().splitlines(), start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad manifest line") from exc
    if not records:
        raise InvalidInputError(f"{path}: empty manifest")
    return records


def replay_manifest(
    records: Sequence[dict], dictionary: Dictionary, generator, feature_dim: int,
    n_syn: int,
) -> SupportSet:
    """Regenerate the support set from manifest records alone.

    Under the simulated backend the result is bit-identical to the original
    run because every record carries its request seed.
    """
    support = SupportSet(n_syn)
    for rec in records:
        action = PromptAction(
            domain_idx=rec["domain_idx"], class_idx=tuple(rec["class_idx"])
        )
        prompt = format_prompt(dictionary, action)
        if prompt.text != rec["prompt"]:
            raise InvalidInputError(
                f"manifest step {rec['step']}: stored prompt {rec['prompt']!r} does "
                f"not match dictionary rendering {prompt.text!r}"
            )
        batch = generator.generate(
            GeneratorRequest(
                prompt=prompt, count=rec["count"], seed=rec["seed"],
                feature_dim=feature_dim,
            )
        )
        samples = [
            LabeledSample(
                features=vec, label=rec["label"], provenance=SYNTHETIC,
                prompt_id=rec["step"],
            )
            for vec in batch.samples
        ]
        support.append_batch(
            samples,
            PromptRecord(
                step=rec["step"], prompt=prompt, count=rec["count"], seed=rec["seed"],
                label=rec["label"], flat_index=rec["flat_index"],
            ),
        )
    return support
