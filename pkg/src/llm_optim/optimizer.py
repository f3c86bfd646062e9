"""Sequential prompt optimization.

Each step the optimizer backend sees a sample of past records plus the active
one (with its feedback) and proposes a new parameter. The candidate is
evaluated, given feedback of its own, and replaces the active parameter only
if its estimated reward is at least as high. Every candidate is recorded,
accepted or not.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Optional, Sequence, Union

from . import env_numeric as en
from . import env_poem as ep
from .core import ChatMessage, Feedback, FeedbackKind, HistoryBuffer, InteractionRecord, Trace
from .errors import BackendError, EmptyCompletion, NonFinite, ParseFailure, RunAborted
from .synthesizer import Exchange, SynthesizerRequest, synthesize_feedback
from .template import load_template, render_chat

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("directional", "nondirectional", "synthesized", "reward_only")
PARSE_RETRIES = 2
AGENT_TEMPERATURE = 0.7
OPTIMIZER_TEMPERATURE = 0.0
REPEAT_NOTICE = "You repeated a previous x. This incurs a penalty. Propose a different x."
FORMAT_REMINDER = "Your reply did not contain x in the required format. Reply with: x = [x1, x2]"
NUMERIC_TASK_DESCRIPTION = (
    "x is a 2-dimensional vector x = [x1, x2], where x1 and x2 are real numbers. "
    "Find the x that makes y as small as possible."
)
DEFAULT_INSTRUCTION = "Write a poem that follows the assignment."

_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_POINT_RE = re.compile(rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*\]")


def normalize_mode(mode: str) -> str:
    mode = mode.replace("-", "_")
    if mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {mode!r}; choose from {FEEDBACK_MODES}")
    return mode


@dataclass
class OptimizerConfig:
    steps: int = 10
    eval_samples: Optional[int] = None  # None: 1 for numeric, 3 for poem
    history_budget: int = 10
    feedback_mode: str = "directional"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.eval_samples is not None and self.eval_samples < 1:
            raise ValueError("eval_samples must be >= 1")
        if self.history_budget < 1:
            raise ValueError("history_budget must be >= 1")
        self.feedback_mode = normalize_mode(self.feedback_mode)


@dataclass(frozen=True)
class Candidate:
    parameter: str
    raw_completion: str
    estimated_reward: Optional[float] = None


class Decision(enum.Enum):
    ACCEPT_CANDIDATE = "accept"
    KEEP_CURRENT = "keep"


@dataclass(frozen=True)
class NumericTask:
    function: en.TestFunction
    start: en.Point
    kind = "numeric"

    @property
    def task_prompt(self) -> str:
        return NUMERIC_TASK_DESCRIPTION

    def initial_parameter(self) -> str:
        return en.format_point(self.start)

    def describe(self) -> str:
        return self.function.name


@dataclass(frozen=True)
class PoemTask:
    constraint: ep.PoemConstraint
    assignment: str = ""
    initial_instruction: str = DEFAULT_INSTRUCTION
    kind = "poem"

    def __post_init__(self):
        if not self.assignment:
            object.__setattr__(self, "assignment", ep.assignment_text(self.constraint))

    @property
    def task_prompt(self) -> str:
        return self.assignment

    def initial_parameter(self) -> str:
        return self.initial_instruction

    def describe(self) -> str:
        return f"syllables-{self.constraint.describe()}"


Task = Union[NumericTask, PoemTask]


@dataclass
class Estimate:
    mean: float
    samples: list = field(default_factory=list)  # (output, reward, score-or-None)

    @property
    def output(self) -> str:
        return self.samples[0][0]


def parse_point(completion: str) -> en.Point:
    """Last bracketed ``[a, b]`` pair in the text."""
    matches = _POINT_RE.findall(completion)
    if not matches:
        raise ParseFailure(f"no [x1, x2] pair in completion: {completion[:120]!r}")
    a, b = matches[-1]
    return en.Point(float(a), float(b))


def select(current_estimate: float, candidate_estimate: float) -> Decision:
    if candidate_estimate >= current_estimate:
        return Decision.ACCEPT_CANDIDATE
    return Decision.KEEP_CURRENT


# ---------------------------------------------------------------------------
# prompt construction


def _numeric_observation(history: Sequence[InteractionRecord], current: InteractionRecord) -> str:
    ordered = [rec for rec in history if rec is not current and rec.step != current.step] + [current]
    return "\n".join(en.observation_line(rec.parameter, -rec.reward) for rec in ordered)


def _teacher_text(rec: InteractionRecord) -> str:
    text = f"The poem scored {rec.reward:.2f} (fraction of lines meeting the constraint)."
    if rec.feedback and rec.feedback.kind is not FeedbackKind.SYNTHESIZED:
        text += "\n" + rec.feedback.text
    return text


def _poem_history(task: PoemTask, history: Sequence[InteractionRecord], current: InteractionRecord) -> list[dict]:
    ordered = [rec for rec in history if rec.step != current.step] + [current]
    return [
        {
            "assignment": task.assignment,
            "prompt": rec.parameter,
            "action": rec.output,
            "feedback": _teacher_text(rec),
            "exp_feedback": rec.feedback.text if rec.feedback.kind is FeedbackKind.SYNTHESIZED else "",
        }
        for rec in ordered
    ]


def build_optimizer_messages(
    task: Task,
    history: Sequence[InteractionRecord],
    current: InteractionRecord,
    mode: str,
    repeat_notice: bool = False,
) -> list[ChatMessage]:
    mode = normalize_mode(mode)
    if task.kind == "numeric":
        context = {
            "task_description": task.task_prompt,
            "observation": _numeric_observation(history, current),
            "feedback": "" if mode == "reward_only" else current.feedback.text,
            "repeat_notice": REPEAT_NOTICE if repeat_notice else "",
        }
        return render_chat(load_template("optimizer_numeric"), context)
    context = {"history": _poem_history(task, history, current)}
    return render_chat(load_template("optimizer_poem"), context)


def agent_messages(task: PoemTask, instruction: str) -> list[ChatMessage]:
    context = {
        "assignment": task.assignment,
        "exists_intrusction": bool(instruction.strip()),
        "instruction": instruction,
    }
    return render_chat(load_template("poem_agent"), context)


def propose(
    backend,
    task: Task,
    history: Sequence[InteractionRecord],
    current: InteractionRecord,
    mode: str,
    repeat_notice: bool = False,
    temperature: float = OPTIMIZER_TEMPERATURE,
) -> Candidate:
    messages = build_optimizer_messages(task, history, current, mode, repeat_notice)
    if task.kind == "poem":
        completion = backend.complete(messages, temperature=temperature)
        if not completion.strip():
            raise ParseFailure("optimizer returned an empty instruction")
        return Candidate(completion.strip(), completion)
    for attempt in range(PARSE_RETRIES + 1):
        completion = backend.complete(messages, temperature=temperature)
        try:
            point = parse_point(completion)
        except ParseFailure:
            if attempt == PARSE_RETRIES:
                raise
            log.info("unparsable proposal, re-asking (%d/%d)", attempt + 1, PARSE_RETRIES)
            if completion.strip():
                messages = messages + [ChatMessage("assistant", completion)]
            messages = messages + [ChatMessage("user", FORMAT_REMINDER)]
            continue
        return Candidate(en.format_point(point), completion)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# evaluation and feedback


def estimate_reward(task: Task, agent_backend, parameter: str, M: int = 1) -> Estimate:
    if M < 1:
        raise ValueError("M must be >= 1")
    if task.kind == "numeric":
        r = en.reward(task.function, parse_point(parameter))
        return Estimate(r, [(parameter, r, None)])
    if agent_backend is None:
        raise ValueError("the poem task needs an agent backend")
    messages = agent_messages(task, parameter)
    samples = []
    for _ in range(M):
        poem = agent_backend.complete(messages, temperature=AGENT_TEMPERATURE)
        score = ep.score_poem(poem, task.constraint)
        samples.append((poem, score.reward, score))
    return Estimate(fmean(s[1] for s in samples), samples)


def env_feedback(task: Task, estimate: Estimate, mode: str) -> Feedback:
    if task.kind == "numeric":
        x = parse_point(estimate.output)
        if mode == "directional":
            return en.directional_feedback(task.function, x)
        return en.nondirectional_feedback(task.function, x)
    score = estimate.samples[0][2]
    if mode == "directional":
        return ep.directional_feedback(score, task.constraint)
    return ep.nondirectional_feedback(score, task.constraint)


def _exchange(task: Task, rec_parameter: str, output: str, reward: float, feedback_text: str = "") -> Exchange:
    if task.kind == "numeric":
        return Exchange(f"x = {rec_parameter}", f"y = {en.fmt(-reward)}")
    observation = task.assignment
    if rec_parameter.strip():
        observation += "\n" + rec_parameter
    return Exchange(output, observation, feedback_text)


def make_feedback(
    task: Task,
    mode: str,
    parameter: str,
    estimate: Estimate,
    history: Sequence[InteractionRecord],
    synthesizer_backend=None,
) -> Feedback:
    if mode == "reward_only":
        return Feedback.none()
    if mode in ("directional", "nondirectional"):
        return env_feedback(task, estimate, mode)
    if synthesizer_backend is None:
        raise ValueError("synthesized mode needs a synthesizer backend")
    past = [
        _exchange(task, rec.parameter, rec.output, rec.reward, _teacher_text(rec) if task.kind == "poem" else "")
        for rec in history
    ]
    teacher = f"The poem scored {estimate.mean:.2f} (fraction of lines meeting the constraint)."
    current = _exchange(task, parameter, estimate.output, estimate.mean, teacher)
    request = SynthesizerRequest(task.task_prompt, current, past)
    return synthesize_feedback(synthesizer_backend, request, task.kind)


# ---------------------------------------------------------------------------
# the loop


def run_spo(
    task: Task,
    optimizer_backend,
    config: OptimizerConfig,
    agent_backend=None,
    synthesizer_backend=None,
    meta: Optional[dict] = None,
) -> Trace:
    """Run ``config.steps`` proposal/evaluation/selection rounds.

    ``synthesizer_backend`` defaults to the optimizer backend. On a backend
    or parse failure a ``RunAborted`` carrying the partial trace is raised.
    """
    mode = config.feedback_mode
    M = config.eval_samples or (1 if task.kind == "numeric" else 3)
    synthesizer_backend = synthesizer_backend or optimizer_backend
    trace = Trace(
        {
            "env": task.kind,
            ("function" if task.kind == "numeric" else "constraint"): task.describe(),
            "feedback_mode": mode,
            "seed": config.seed,
            "K": config.steps,
            "M": M,
            "history_budget": config.history_budget,
            **(meta or {}),
            "status": "ok",
        }
    )
    buffer = HistoryBuffer()

    def record(step, parameter, estimate, history, accepted, current_estimate):
        fb = make_feedback(task, mode, parameter, estimate, history, synthesizer_backend)
        rec = InteractionRecord(
            step, parameter, estimate.output, estimate.mean, fb, accepted, estimate.mean, current_estimate
        )
        buffer.push(rec)
        trace.records.append(rec)
        return rec

    try:
        parameter = task.initial_parameter()
        current = record(0, parameter, estimate_reward(task, agent_backend, parameter, M), [], True, None)
        repeat = False
        for k in range(config.steps):
            history = buffer.sample_history(config.history_budget)
            candidate = propose(optimizer_backend, task, history, current, mode, repeat)
            estimate = estimate_reward(task, agent_backend, candidate.parameter, M)
            accepted = select(current.reward, estimate.mean) is Decision.ACCEPT_CANDIDATE
            rec = record(k + 1, candidate.parameter, estimate, history, accepted, current.reward)
            repeat = task.kind == "numeric" and parse_point(candidate.parameter) == parse_point(current.parameter)
            if accepted:
                current = rec
    except (BackendError, ParseFailure, EmptyCompletion, NonFinite) as exc:
        trace.meta["status"] = "failed"
        trace.meta["error"] = f"{type(exc).__name__}: {exc}"
        raise RunAborted(exc, trace) from exc
    return trace
