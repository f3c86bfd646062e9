"""Syllable-constrained poem environment."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Feedback, FeedbackKind

VOWELS = frozenset("aeiouy")
TASK_SYLLABLES = (7, 8, 9, 10)
TASK_LINES = 4

_NON_ALPHA = re.compile(r"[^a-z]")
_VOWEL_RUN = re.compile(r"[aeiouy]+")


@dataclass(frozen=True)
class PoemConstraint:
    line_targets: tuple[int, ...]

    def __post_init__(self):
        if not self.line_targets:
            raise ValueError("a constraint needs at least one line")
        if any(int(t) < 1 for t in self.line_targets):
            raise ValueError("syllable targets must be >= 1")
        object.__setattr__(self, "line_targets", tuple(int(t) for t in self.line_targets))

    @classmethod
    def uniform(cls, target: int, lines: int = TASK_LINES) -> "PoemConstraint":
        if lines < 1:
            raise ValueError("required_lines must be >= 1")
        return cls((target,) * lines)

    @property
    def required_lines(self) -> int:
        return len(self.line_targets)

    @property
    def uniform_target(self) -> Optional[int]:
        return self.line_targets[0] if len(set(self.line_targets)) == 1 else None

    def describe(self) -> str:
        if self.uniform_target is not None:
            return f"{self.required_lines}x{self.uniform_target}"
        return "-".join(map(str, self.line_targets))


@dataclass(frozen=True)
class PoemScore:
    per_line_counts: tuple[int, ...]
    per_line_ok: tuple[bool, ...]
    reward: float

    @property
    def extra_lines(self) -> int:
        return max(0, len(self.per_line_counts) - len(self.per_line_ok))


def count_syllables_word(word: str) -> int:
    w = _NON_ALPHA.sub("", word.lower())
    if not w:
        return 0
    count = len(_VOWEL_RUN.findall(w))
    if (
        w.endswith("e")
        and len(w) >= 2
        and w[-2] not in VOWELS
        and count > 1
        and not (w.endswith("le") and len(w) >= 3 and w[-3] not in VOWELS)
    ):
        count -= 1
    return max(count, 1)


def count_syllables_line(line: str) -> int:
    return sum(count_syllables_word(tok) for tok in line.split())


def poem_lines(poem: str) -> list[str]:
    return [line.strip() for line in poem.splitlines() if line.strip()]


def score_poem(poem: str, constraint: PoemConstraint) -> PoemScore:
    counts = tuple(count_syllables_line(line) for line in poem_lines(poem))
    n = constraint.required_lines
    ok = tuple(i < len(counts) and counts[i] == t for i, t in enumerate(constraint.line_targets))
    reward = sum(ok) / n
    if len(counts) > n:
        # an over-long poem never earns full credit
        reward = min(reward, (n - 1) / n)
    return PoemScore(counts, ok, reward)


def _violations(score: PoemScore, constraint: PoemConstraint) -> list[tuple[int, int]]:
    """(line index, target - count) for every line that needs changing."""
    deltas = []
    for i, target in enumerate(constraint.line_targets):
        count = score.per_line_counts[i] if i < len(score.per_line_counts) else 0
        if not score.per_line_ok[i]:
            deltas.append((i, target - count))
    for i in range(constraint.required_lines, len(score.per_line_counts)):
        deltas.append((i, -score.per_line_counts[i]))
    return deltas


def directional_feedback(score: PoemScore, constraint: PoemConstraint) -> Feedback:
    deltas = _violations(score, constraint)
    if not deltas:
        return Feedback(FeedbackKind.DIRECTIONAL, "All lines satisfy the constraint.", [])
    lines = []
    bad = dict(deltas)
    for i, target in enumerate(constraint.line_targets):
        if i >= len(score.per_line_counts):
            lines.append(f"Line {i + 1} is missing. Add a line with {target} syllables.")
        elif i in bad:
            count = score.per_line_counts[i]
            verb = "Increase" if count < target else "Decrease"
            lines.append(
                f"Line {i + 1} has {count} syllables but needs {target}. "
                f"{verb} the number of syllables in this line."
            )
        else:
            lines.append(f"Line {i + 1} has {target} syllables, which is correct.")
    if score.extra_lines:
        lines.append(
            f"The poem has {len(score.per_line_counts)} lines but needs {constraint.required_lines}. "
            "Remove the extra lines."
        )
    return Feedback(FeedbackKind.DIRECTIONAL, "\n".join(lines), deltas)


def nondirectional_feedback(score: PoemScore, constraint: PoemConstraint) -> Feedback:
    v = len(_violations(score, constraint))
    return Feedback(FeedbackKind.NONDIRECTIONAL, f"{v} line(s) of your poem violate the syllable constraint.", v)


def assignment_text(constraint: PoemConstraint) -> str:
    target = constraint.uniform_target
    if target is not None:
        return (
            f"Can you write me a poem with {constraint.required_lines} lines? "
            f"Each line needs to have {target} syllables."
        )
    pattern = "-".join(map(str, constraint.line_targets))
    return (
        f"Can you write me a poem with {constraint.required_lines} lines? "
        f"The lines need to follow a {pattern} syllable pattern."
    )


def sample_task(rng: np.random.Generator) -> tuple[PoemConstraint, str]:
    target = int(rng.choice(TASK_SYLLABLES))
    constraint = PoemConstraint.uniform(target, TASK_LINES)
    return constraint, assignment_text(constraint)
