"""Generation backends: a deterministic Gaussian simulator and a remote HTTP client.

Both turn a prompt (plus count, seed, feature_dim) into a batch of feature
vectors. The simulator realizes the slot semantics: each sample is drawn
around the weighted barycenter of the three chosen class centroids, so the
first slot dominates and swapping slots moves the batch, which is what makes
slot order meaningful. Deterministic given the request seed.

Wire protocol (shared with the serving side), bit-exact:
  POST {endpoint}/v1/generate
  request:  {"prompt": str, "count": int, "seed": int, "feature_dim": int}
  response: {"samples": [[float; feature_dim]; count], "backend_info": str}
  400 on malformed request with {"error": str}; 503 while the model loads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import requests

from .errors import (
    BackendUnavailableError,
    ConfigurationError,
    InvalidActionError,
    ProtocolError,
)
from .prompts import Prompt

logger = logging.getLogger(__name__)

GENERATE_PATH = "/v1/generate"
DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 3


@dataclass(frozen=True)
class GeneratorRequest:
    prompt: Prompt
    count: int
    seed: int
    feature_dim: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigurationError(f"count must be >= 1, got {self.count}")
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")


@dataclass(frozen=True)
class GeneratorBatch:
    samples: np.ndarray  # (count, feature_dim)
    backend_info: str

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 2:
            raise ProtocolError("samples must be a 2-D array")
        if not np.isfinite(samples).all():
            raise ProtocolError("samples contain non-finite values")


def request_seed(run_seed: int, step: int, flat_index: int) -> int:
    """Stable per-request seed from (run seed, step, action flat-index)."""
    seq = np.random.SeedSequence((run_seed, step, flat_index))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SimulatorSpec:
    """Ground-truth geometry the simulator draws from.

    Slot weights must be strictly decreasing and sum to 1 so the first class
    slot dominates the barycenter.
    """

    centroids: np.ndarray  # (n_classes, feature_dim)
    sigmas: np.ndarray  # (n_classes,)
    slot_weights: tuple[float, float, float] = (0.6, 0.25, 0.15)
    domain_noise: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        centroids = np.asarray(self.centroids, dtype=float)
        sigmas = np.asarray(self.sigmas, dtype=float)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "slot_weights", tuple(float(w) for w in self.slot_weights))
        object.__setattr__(self, "domain_noise", tuple(float(x) for x in self.domain_noise))
        if centroids.ndim != 2:
            raise ConfigurationError("centroids must be (n_classes, feature_dim)")
        if sigmas.shape != (centroids.shape[0],):
            raise ConfigurationError("need one sigma per class")
        if (sigmas <= 0).any():
            raise ConfigurationError("sigmas must be positive")
        w = self.slot_weights
        if len(w) != 3 or any(x <= 0 for x in w) or not (w[0] > w[1] > w[2]):
            raise ConfigurationError(f"slot weights must be positive and decreasing, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ConfigurationError(f"slot weights must sum to 1 within 1e-9, got {sum(w)}")
        if any(x <= 0 for x in self.domain_noise):
            raise ConfigurationError("domain noise multipliers must be positive")

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]

    def barycenter(self, class_idx: tuple[int, int, int]) -> np.ndarray:
        """Closed-form expected sample location for a class triple."""
        w = np.array(self.slot_weights)
        return w @ self.centroids[list(class_idx)]


def default_domain_noise(n_domains: int, noisy_index: int | None = None) -> tuple[float, ...]:
    """All domains at 1.0 except one designated noisy domain at 1.5."""
    noise = [1.0] * n_domains
    if noisy_index is not None:
        if not 0 <= noisy_index < n_domains:
            raise ConfigurationError(f"noisy domain index {noisy_index} out of range")
        noise[noisy_index] = 1.5
    return tuple(noise)


class SimulatedGenerator:
    """Stateless desk-scale stand-in for a text-to-image backend."""

    def __init__(self, spec: SimulatorSpec):
        self.spec = spec

    def generate(self, req: GeneratorRequest) -> GeneratorBatch:
        spec = self.spec
        action = req.prompt.action
        for slot, c in enumerate(action.class_idx):
            if not 0 <= c < spec.n_classes:
                raise InvalidActionError(
                    f"class_idx[{slot}] = {c} unknown to the simulator "
                    f"(n_classes={spec.n_classes})"
                )
        if spec.domain_noise and not 0 <= action.domain_idx < len(spec.domain_noise):
            raise InvalidActionError(
                f"domain_idx {action.domain_idx} unknown to the simulator"
            )
        if req.feature_dim != spec.feature_dim:
            raise ConfigurationError(
                f"request feature_dim {req.feature_dim} != simulator {spec.feature_dim}"
            )
        mean = spec.barycenter(action.class_idx)
        scale = float(np.mean(spec.sigmas[list(action.class_idx)]))
        if spec.domain_noise:
            scale *= spec.domain_noise[action.domain_idx]
        rng = np.random.default_rng(req.seed)
        samples = mean + scale * rng.standard_normal((req.count, spec.feature_dim))
        return GeneratorBatch(samples=samples, backend_info="simulator")


class RemoteGenerator:
    """Client for the generation wire protocol with idempotent retries."""

    def __init__(
        self,
        endpoint: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        session: requests.Session | None = None,
    ):
        if not endpoint:
            raise ConfigurationError("remote generator needs an endpoint URL")
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def generate(self, req: GeneratorRequest) -> GeneratorBatch:
        body = {
            "prompt": req.prompt.text,
            "count": req.count,
            "seed": req.seed,
            "feature_dim": req.feature_dim,
        }
        url = self.endpoint + GENERATE_PATH
        last_failure = ""
        for attempt in range(self.retries + 1):
            if attempt:
                logger.warning(
                    "generate retry %d/%d against %s after %s",
                    attempt, self.retries, url, last_failure,
                )
            try:
                response = self._session.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_failure = f"transport error: {exc}"
                continue
            if response.status_code in (503,) or response.status_code >= 500:
                last_failure = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise ProtocolError(
                    f"backend rejected request with status {response.status_code}: "
                    f"{response.text[:200]}"
                )
            return self._parse(response, req)
        raise BackendUnavailableError(
            f"backend at {url} unavailable after {self.retries} retries ({last_failure})"
        )

    @staticmethod
    def _parse(response: requests.Response, req: GeneratorRequest) -> GeneratorBatch:
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "samples" not in payload:
            raise ProtocolError("response missing field 'samples'")
        if "backend_info" not in payload:
            raise ProtocolError("response missing field 'backend_info'")
        samples = payload["samples"]
        if not isinstance(samples, list) or len(samples) != req.count:
            got = len(samples) if isinstance(samples, list) else type(samples).__name__
            raise ProtocolError(f"samples length: expected {req.count}, got {got}")
        try:
            array = np.asarray(samples, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"samples: not numeric ({exc})") from exc
        if array.ndim != 2 or array.shape[1] != req.feature_dim:
            raise ProtocolError(
                f"samples dimension: expected (*, {req.feature_dim}), got {array.shape}"
            )
        return GeneratorBatch(samples=array, backend_info=str(payload["backend_info"]))
