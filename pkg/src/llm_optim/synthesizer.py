"""Feedback synthesis for environments that return a reward only."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import ChatMessage, Feedback, FeedbackKind
from .errors import EmptyCompletion
from .template import load_template, render_chat

NUMERIC_TEMPERATURE = 0.0
MAX_NUMERIC_SENTENCES = 2

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class Exchange:
    """One (action, observation) pair as the synthesizer sees it.

    Numeric: action ``x = [..]``, observation ``y = ..``. Poem: action is the
    poem, observation the instruction it was written under, feedback the
    teacher's verdict.
    """

    action: str
    observation: str
    feedback: str = ""


@dataclass(frozen=True)
class SynthesizerRequest:
    task_prompt: str
    current: Exchange
    history: Sequence[Exchange] = field(default_factory=tuple)


def first_sentences(text: str, n: int = MAX_NUMERIC_SENTENCES) -> str:
    parts = _SENTENCE_END.split(text.strip())
    return " ".join(parts[:n])


def build_messages(request: SynthesizerRequest, env_kind: str) -> tuple[list[ChatMessage], Optional[float]]:
    """Rendered prompt plus the temperature its generation slot asks for, if any."""
    if env_kind == "numeric":
        template = load_template("synthesizer_numeric")
        context = {"history": [*request.history, request.current]}
    elif env_kind == "poem":
        template = load_template("synthesizer_poem")
        context = {
            "history": list(request.history),
            "observation": request.current.observation,
            "action": request.current.action,
        }
    else:
        raise ValueError(f"unknown env kind {env_kind!r}")
    messages = [m for m in render_chat(template, context) if m.content or m.role != "assistant"]
    slots = template.generation_slots
    temperature = slots[0].params.get("temperature") if slots else None
    return messages, temperature


def synthesize_feedback(
    backend, request: SynthesizerRequest, env_kind: str, temperature: Optional[float] = None
) -> Feedback:
    messages, slot_temperature = build_messages(request, env_kind)
    if temperature is None:
        temperature = slot_temperature if slot_temperature is not None else NUMERIC_TEMPERATURE
    completion = backend.complete(messages, temperature=temperature)
    if not completion or not completion.strip():
        raise EmptyCompletion("synthesizer backend returned an empty completion")
    text = first_sentences(completion) if env_kind == "numeric" else completion.strip()
    return Feedback(FeedbackKind.SYNTHESIZED, text)
