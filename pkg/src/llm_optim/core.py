"""Domain types: feedback, interaction records, chat messages and the history buffer."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import EmptyBuffer, StepMismatch

DEFAULT_HISTORY_BUDGET = 10


class FeedbackKind(str, enum.Enum):
    DIRECTIONAL = "directional"
    NONDIRECTIONAL = "nondirectional"
    SYNTHESIZED = "synthesized"
    NONE = "none"


@dataclass(frozen=True)
class Feedback:
    """Feedback shown to the optimizer.

    ``payload`` carries the structured form the text was rendered from: the
    reward gradient (numeric, directional), the 1-based dimension index
    (numeric, non-directional), ``(line_index, delta)`` pairs (poem,
    directional) or the violating-line count (poem, non-directional).
    """

    kind: FeedbackKind
    text: str = ""
    payload: Any = None

    def __post_init__(self):
        if self.kind is FeedbackKind.NONE and (self.text or self.payload is not None):
            raise ValueError("Feedback of kind NONE carries no text or payload")

    @classmethod
    def none(cls) -> "Feedback":
        return cls(FeedbackKind.NONE)

    def __bool__(self) -> bool:
        return bool(self.text)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role: {self.role!r}")
        if self.role != "assistant" and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class InteractionRecord:
    """One evaluated parameter: what was tried, what came out, and whether it was kept."""

    step: int
    parameter: str
    output: str
    reward: float
    feedback: Feedback = field(default_factory=Feedback.none)
    accepted: bool = True
    candidate_estimate: Optional[float] = None
    current_estimate: Optional[float] = None

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if not self.parameter:
            raise ValueError("parameter must be non-empty")
        if not math.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "parameter": self.parameter,
            "output": self.output,
            "reward": self.reward,
            "feedback_kind": self.feedback.kind.value,
            "feedback_text": self.feedback.text,
            "accepted": self.accepted,
            "candidate_estimate": self.candidate_estimate,
            "current_estimate": self.current_estimate,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InteractionRecord":
        kind = FeedbackKind(obj["feedback_kind"])
        return cls(
            step=obj["step"],
            parameter=obj["parameter"],
            output=obj["output"],
            reward=obj["reward"],
            feedback=Feedback(kind, obj["feedback_text"]),
            accepted=obj["accepted"],
            candidate_estimate=obj.get("candidate_estimate"),
            current_estimate=obj.get("current_estimate"),
        )


class HistoryBuffer:
    """Append-only store of interaction records.

    With a finite ``capacity`` the oldest records are evicted; step numbering
    keeps counting from the total number of pushes.
    """

    def __init__(self, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.records: list[InteractionRecord] = []
        self._pushed = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def push(self, record: InteractionRecord) -> "HistoryBuffer":
        if record.step != self._pushed:
            raise StepMismatch(f"expected step {self._pushed}, got {record.step}")
        self.records.append(record)
        self._pushed += 1
        if self.capacity is not None and len(self.records) > self.capacity:
            del self.records[0]
        return self

    def best_record(self) -> InteractionRecord:
        if not self.records:
            raise EmptyBuffer("history buffer is empty")
        best = self.records[0]
        for rec in self.records[1:]:
            if rec.reward > best.reward:
                best = rec
        return best

    def sample_history(self, budget: int = DEFAULT_HISTORY_BUDGET) -> list[InteractionRecord]:
        """Most recent ``budget - 1`` records plus the best one, in step order."""
        if budget < 1:
            raise ValueError("budget must be >= 1")
        if len(self.records) <= budget:
            return list(self.records)
        best = self.best_record()
        recent = self.records[len(self.records) - (budget - 1):] if budget > 1 else []
        if any(rec is best for rec in recent):
            return self.records[-budget:]
        return [best] + recent


@dataclass
class Trace:
    """Run metadata plus every evaluated record, in step order.

    Serialized as JSONL: line 0 is ``{"meta": {...}}``, then one record per line.
    """

    meta: dict
    records: list[InteractionRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"meta": self.meta})]
        lines.extend(json.dumps(rec.to_json()) for rec in self.records)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or "meta" not in rows[0]:
            raise ValueError("trace is missing its meta header line")
        return cls(rows[0]["meta"], [InteractionRecord.from_json(r) for r in rows[1:]])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())

    def active_records(self) -> list[InteractionRecord]:
        """The active (most recently accepted) record after each step."""
        active: list[InteractionRecord] = []
        current = None
        for rec in self.records:
            if rec.accepted or current is None:
                current = rec
            active.append(current)
        return active
