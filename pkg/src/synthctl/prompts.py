"""Prompt dictionary, the fixed sentence template, and the action <-> flat-index bijection.

An action is one domain token plus an ordered triple of class names. The
triple is ordered on purpose: the first class slot dominates the generated
content and later determines the synthetic sample's label. Flat indices are
row-major with the domain as the slowest axis, so enumeration and uniform
sampling share one stable layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidActionError, InvalidInputError

PROMPT_TEMPLATE = "A {domain} of a {c1}, {c2}, and {c3}"


@dataclass(frozen=True)
class Dictionary:
    """Ordered, immutable token lists the agent composes prompts from."""

    domains: tuple[str, ...]
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "domains", tuple(self.domains))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.domains:
            raise InvalidInputError("dictionary needs at least one domain token")
        if not self.classes:
            raise InvalidInputError("dictionary needs at least one class name")
        for name, tokens in (("domains", self.domains), ("classes", self.classes)):
            if any(not isinstance(t, str) or not t for t in tokens):
                raise InvalidInputError(f"dictionary {name} must be non-empty strings")
            if len(set(tokens)) != len(tokens):
                raise InvalidInputError(f"dictionary {name} must be unique")

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def action_space_size(self) -> int:
        """|domains| * n^3 distinct actions."""
        return self.n_domains * self.n_classes**3


@dataclass(frozen=True)
class PromptAction:
    """One agent decision: a domain index plus an ordered class-index triple."""

    domain_idx: int
    class_idx: tuple[int, int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_idx", tuple(int(c) for c in self.class_idx))
        object.__setattr__(self, "domain_idx", int(self.domain_idx))
        if len(self.class_idx) != 3:
            raise InvalidActionError(
                f"class_idx must have exactly 3 slots, got {len(self.class_idx)}"
            )

    @property
    def slots(self) -> tuple[int, int, int, int]:
        """Per-head view (domain, c1, c2, c3) used by the policy."""
        return (self.domain_idx, *self.class_idx)


@dataclass(frozen=True)
class Prompt:
    """Rendered sentence together with the action that produced it."""

    text: str
    action: PromptAction = field(compare=False)


def validate_action(dictionary: Dictionary, action: PromptAction) -> None:
    """Raise InvalidActionError naming the offending field if out of range."""
    if not 0 <= action.domain_idx < dictionary.n_domains:
        raise InvalidActionError(
            f"domain_idx {action.domain_idx} out of range [0, {dictionary.n_domains})"
        )
    for slot, c in enumerate(action.class_idx):
        if not 0 <= c < dictionary.n_classes:
            raise InvalidActionError(
                f"class_idx[{slot}] = {c} out of range [0, {dictionary.n_classes})"
            )


def format_prompt(dictionary: Dictionary, action: PromptAction) -> Prompt:
    """Render the fixed template; repeated class tokens appear verbatim."""
    validate_action(dictionary, action)
    c1, c2, c3 = (dictionary.classes[c] for c in action.class_idx)
    text = PROMPT_TEMPLATE.format(
        domain=dictionary.domains[action.domain_idx], c1=c1, c2=c2, c3=c3
    )
    return Prompt(text=text, action=action)


def action_index(dictionary: Dictionary, action: PromptAction) -> int:
    """Bijective row-major flat index over (domain, c1, c2, c3)."""
    validate_action(dictionary, action)
    n = dictionary.n_classes
    idx = action.domain_idx
    for c in action.class_idx:
        idx = idx * n + c
    return idx


def action_of_index(dictionary: Dictionary, index: int) -> PromptAction:
    """Inverse of action_index."""
    size = dictionary.action_space_size()
    if not 0 <= index < size:
        raise InvalidActionError(f"flat index {index} out of range [0, {size})")
    n = dictionary.n_classes
    index, c3 = divmod(index, n)
    index, c2 = divmod(index, n)
    domain_idx, c1 = divmod(index, n)
    return PromptAction(domain_idx=domain_idx, class_idx=(c1, c2, c3))


def random_action(dictionary: Dictionary, rng: np.random.Generator) -> PromptAction:
    """Uniform draw over the full flat-index space."""
    return action_of_index(dictionary, int(rng.integers(dictionary.action_space_size())))


def iter_actions(dictionary: Dictionary) -> Iterator[PromptAction]:
    """All actions in flat-index order."""
    for index in range(dictionary.action_space_size()):
        yield action_of_index(dictionary, index)


def action_of_slots(slots: tuple[int, ...]) -> PromptAction:
    """Build an action from the policy's (domain, c1, c2, c3) head samples."""
    if len(slots) != 4:
        raise InvalidActionError(f"expected 4 slots (domain + 3 classes), got {len(slots)}")
    return PromptAction(domain_idx=slots[0], class_idx=(slots[1], slots[2], slots[3]))
