"""Completion backends.

Every backend exposes ``complete(messages, temperature=None, max_tokens=None) -> str``.
``RemoteBackend`` talks to an OpenAI-compatible ``/chat/completions`` endpoint;
the scripted backends read the rendered prompt text and compute their reply,
so they exercise the same template -> parse path an LLM would.
"""

from __future__ import annotations

import logging
import math
import os
import re
import time
from typing import Callable, Optional, Protocol, Sequence

import httpx
import numpy as np

from . import env_numeric as en
from .core import ChatMessage, Feedback, InteractionRecord, Trace
from .errors import (
    AuthError,
    BackendError,
    BackendTimeout,
    ExhaustedScript,
    MalformedResponse,
    MissingFeedback,
    NonFinite,
    RateLimited,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "LLM_OPTIM_API_KEY"
BASE_URL_ENV = "LLM_OPTIM_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4"
FD_PROBE = 0.1
FD_MAX_STEP: Optional[float] = None  # optional trust radius of one secant step
FD_RADIUS = 2.0  # observations farther than this from the base are too coarse for a slope


class ChatBackend(Protocol):
    def complete(
        self, messages: Sequence[ChatMessage], temperature: Optional[float] = None, max_tokens: Optional[int] = None
    ) -> str: ...


class CannedBackend:
    """Replays a fixed list of replies; records every prompt it was sent."""

    def __init__(self, replies: Sequence[str]):
        self.replies = list(replies)
        self.calls: list[list[ChatMessage]] = []

    def complete(self, messages, temperature=None, max_tokens=None) -> str:
        self.calls.append(list(messages))
        if len(self.calls) > len(self.replies):
            raise ExhaustedScript(f"canned backend has only {len(self.replies)} replies")
        return self.replies[len(self.calls) - 1]


class RemoteBackend:
    """OpenAI-compatible chat completion client with retry and exponential backoff."""

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        model: str = DEFAULT_MODEL,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        temperature: float = 0.0,
        max_retries: int = 3,
        timeout: float = 60.0,
        backoff: float = 1.0,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        self.model = model
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not key:
            raise AuthError(f"no credentials: set {API_KEY_ENV}")
        self._api_key = key
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def __repr__(self) -> str:
        return f"RemoteBackend(model={self.model!r}, base_url={self.base_url!r})"

    def close(self) -> None:
        self._client.close()

    def complete(self, messages, temperature=None, max_tokens=None) -> str:
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": self.temperature if temperature is None else temperature,
        }
        if max_tokens is not None:
            body["max_tokens"] = max_tokens
        headers = {"Authorization": f"Bearer {self._api_key}"}
        url = f"{self.base_url}/chat/completions"

        last_exc: Exception = BackendError("no attempt made")
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff * 2 ** (attempt - 1)
                log.debug("retrying %s in %.2fs (attempt %d)", url, delay, attempt + 1)
                self._sleep(delay)
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeout(f"request to {url} timed out")
                continue
            except httpx.TransportError as exc:
                last_exc = BackendError(f"transport error talking to {url}: {exc.__class__.__name__}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429:
                last_exc = RateLimited(f"rate limited by {url}")
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_exc = BackendError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            return self._content(resp)
        raise last_exc

    @staticmethod
    def _content(resp: httpx.Response) -> str:
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion payload: {resp.text[:200]}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("completion content is not a string")
        return content


# ---------------------------------------------------------------------------
# prompt reading shared by the scripted backends

_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_OBS_RE = re.compile(rf"x = \[\s*({_NUM})\s*,\s*({_NUM})\s*\]; y = ({_NUM})")
_GRAD_RE = re.compile(rf"The gradient of the reward at your last x is \[\s*({_NUM})\s*,\s*({_NUM})\s*\]")
_SUGGEST_RE = re.compile(rf"\b(increase|decrease) x([12]) by ({_NUM})", re.IGNORECASE)
_SYNTH_PAIR_RE = re.compile(rf"^x = \[\s*({_NUM})\s*,\s*({_NUM})\s*\]\ny = ({_NUM})$", re.MULTILINE)
_TARGET_RE = re.compile(r"(\d+) syllables")
_ASSIGNED_RE = re.compile(r"needs to have (\d+) syllables")
_LINES_RE = re.compile(r"poem with (\d+) lines")

NUMERIC_OPTIMIZER_MARK = "Format: x = [x1, x2]"
NUMERIC_SYNTH_MARK = "What are the suggestions you can give"
POEM_SYNTH_MARK = "What changes can you make to the poem"
POEM_OPTIMIZER_MARK = "come up with better instructions"
POEM_AGENT_MARK = "The assignment is:"


def _prompt_text(messages: Sequence[ChatMessage]) -> str:
    return "\n".join(m.content for m in messages if m.role != "system")


def observed_pairs(prompt: str) -> list[tuple[en.Point, float]]:
    """Every ``x = [..]; y = ..`` observation line, in prompt order."""
    return [(en.Point(float(a), float(b)), float(y)) for a, b, y in _OBS_RE.findall(prompt)]


def _format_reply(x1: float, x2: float) -> str:
    return f"x = {en.format_point((x1, x2))}"


def scripted_gradient_reply(last_point: en.Point, payload: Sequence[float], eta: float) -> str:
    """One gradient-ascent step on the reward: ``x + eta * grad R``."""
    return _format_reply(last_point[0] + eta * payload[0], last_point[1] + eta * payload[1])


def _key(x1: float, x2: float) -> str:
    return en.format_point((x1, x2))


def scripted_finite_difference_reply(
    history: Sequence[tuple[en.Point, float]], eta: float, h: float = FD_PROBE, max_step: Optional[float] = FD_MAX_STEP,
    radius: float = FD_RADIUS,
) -> str:
    """Secant-gradient descent driven only by observed (x, J(x)) pairs.

    The first point is probed at ``x0 + h*e1`` and ``x0 + h*e2``. After that
    the gradient is the slope of the plane through the best non-probe point
    and its two nearest non-collinear neighbours within ``radius``; without
    such neighbours the base is probed along the coordinates again. The
    proposal is ``base - eta * g_hat`` (step length optionally capped at
    ``max_step``), halving the step while the proposal was already tried.
    """
    if not history:
        raise MissingFeedback("finite-difference backend needs at least one observation")
    seen: dict[str, float] = {}
    order: list[tuple[en.Point, float]] = []
    for x, y in history:
        if _key(*x) not in seen:
            seen[_key(*x)] = y
            order.append((x, y))
    # a coordinate probe sits exactly h from another observed point, whichever came first in the prompt
    bases = [
        (x, y) for x, y in order if not any(_key(x[0] - dx, x[1] - dy) in seen for dx, dy in ((h, 0.0), (0.0, h)))
    ]
    x0 = (bases or order)[0][0]
    for dx, dy in ((h, 0.0), (0.0, h)):
        if len(order) < 3 and _key(x0[0] + dx, x0[1] + dy) not in seen:
            return _format_reply(x0[0] + dx, x0[1] + dy)
    base, j0 = min(bases or order, key=lambda p: p[1])
    others = [p for p in order if _key(*p[0]) != _key(*base)]
    # nearest neighbours give the most local slope; most recent wins ties
    others.sort(key=lambda p: math.hypot(p[0][0] - base[0], p[0][1] - base[1]))
    others = [p for p in others if math.hypot(p[0][0] - base[0], p[0][1] - base[1]) <= radius]
    g = None
    for i in range(min(len(others), 4)):
        for j in range(i + 1, min(len(others), 4)):
            d = np.array([[p[0][0] - base[0], p[0][1] - base[1]] for p in (others[i], others[j])])
            scale = np.linalg.norm(d[0]) * np.linalg.norm(d[1])
            if scale > 0 and abs(np.linalg.det(d)) > 1e-6 * scale:
                g = np.linalg.solve(d, np.array([others[i][1] - j0, others[j][1] - j0]))
                break
        if g is not None:
            break
    if g is None:
        for dx, dy in ((h, 0.0), (0.0, h)):
            if _key(base[0] + dx, base[1] + dy) not in seen:
                return _format_reply(base[0] + dx, base[1] + dy)
        g = np.array([(seen[_key(base[0] + h, base[1])] - j0) / h, (seen[_key(base[0], base[1] + h)] - j0) / h])
    step = eta
    norm = float(np.hypot(*g))
    if max_step is not None and step * norm > max_step:
        step = max_step / norm
    for _ in range(60):
        x1, x2 = base[0] - step * float(g[0]), base[1] - step * float(g[1])
        if _key(x1, x2) not in seen:
            return _format_reply(x1, x2)
        step /= 2
    return _format_reply(base[0], base[1])


def scripted_random_reply(domain, rng: np.random.Generator) -> str:
    (lo1, hi1), (lo2, hi2) = domain
    return _format_reply(float(rng.uniform(lo1, hi1)), float(rng.uniform(lo2, hi2)))


def suggest_from_pairs(pairs: Sequence[tuple[en.Point, float]], eta: float, h: float = FD_PROBE) -> str:
    """Suggestion text derived from observed (x, y) pairs only.

    With fewer than three affinely independent points it asks for a
    coordinate probe; otherwise it fits a plane to the last five pairs and
    suggests a step of ``eta`` against the fitted slope.
    """
    if len(pairs) < 2:
        return f"Increase x1 by {en.fmt(h)}."
    if len(pairs) < 3:
        return f"Increase x2 by {en.fmt(h)}."
    recent = pairs[-5:]
    a = np.array([[1.0, p[0], p[1]] for p, _ in recent])
    y = np.array([v for _, v in recent])
    if np.linalg.matrix_rank(a) < 3:
        return f"Increase x{1 + len(pairs) % 2} by {en.fmt(h)}."
    coef = np.linalg.lstsq(a, y, rcond=None)[0]
    d1, d2 = -eta * coef[1], -eta * coef[2]
    parts = []
    for i, d in ((1, d1), (2, d2)):
        if en.fmt(abs(d)) != "0.000000":
            parts.append(f"{'increase' if d > 0 else 'decrease'} x{i} by {en.fmt(abs(d))}")
    if not parts:
        return "Keep x where it is; the function looks flat around it."
    text = " and ".join(parts)
    return text[0].upper() + text[1:] + "."


def _apply_suggestion(prompt: str, last: en.Point) -> Optional[str]:
    moves = _SUGGEST_RE.findall(prompt)
    if not moves:
        return None
    x = [last[0], last[1]]
    for verb, dim, amount in moves:
        sign = 1.0 if verb.lower() == "increase" else -1.0
        x[int(dim) - 1] += sign * float(amount)
    return _format_reply(*x)


def _feedback_section(prompt: str) -> str:
    """The part of a numeric optimizer prompt after the observation block."""
    lines = prompt.splitlines()
    last_obs = max((i for i, line in enumerate(lines) if _OBS_RE.search(line)), default=-1)
    return "\n".join(lines[last_obs + 1:])


_POEM_WORDS = ("cat", "dog", "sun", "hill", "rock", "fish", "bird", "leaf", "wind", "rain", "moon", "sky")


class _ScriptedBase:
    """Shared handling of the prompts a scripted optimizer can receive."""

    name = "scripted"

    def __init__(self, eta: float = 0.05, seed: Optional[int] = None):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.eta = eta
        self.rng = np.random.default_rng(seed)

    def complete(self, messages, temperature=None, max_tokens=None) -> str:
        prompt = _prompt_text(messages)
        if NUMERIC_SYNTH_MARK in prompt:
            pairs = [(en.Point(float(a), float(b)), float(y)) for a, b, y in _SYNTH_PAIR_RE.findall(prompt)]
            return suggest_from_pairs(pairs, self.eta)
        if POEM_SYNTH_MARK in prompt:
            return "Count the syllables in every line and match the number the assignment asks for."
        if POEM_OPTIMIZER_MARK in prompt:
            return self.poem_instruction(prompt)
        if NUMERIC_OPTIMIZER_MARK in prompt:
            return self.numeric_reply(prompt)
        raise BackendError(f"{self.name} backend does not recognize this prompt")

    def numeric_reply(self, prompt: str) -> str:
        raise NotImplementedError

    def poem_instruction(self, prompt: str) -> str:
        targets = _ASSIGNED_RE.findall(prompt)
        if not targets:
            return "Write carefully and count your syllables."
        return f"Write every line with exactly {targets[-1]} syllables."


class ScriptedGradientBackend(_ScriptedBase):
    """Follows the gradient (or an explicit increase/decrease suggestion) in the feedback."""

    name = "scripted-gradient"

    def numeric_reply(self, prompt: str) -> str:
        pairs = observed_pairs(prompt)
        if not pairs:
            raise MissingFeedback("no observation line in prompt")
        last = pairs[-1][0]
        section = _feedback_section(prompt)
        m = _GRAD_RE.search(section)
        if m:
            return scripted_gradient_reply(last, (float(m.group(1)), float(m.group(2))), self.eta)
        reply = _apply_suggestion(section, last)
        if reply is None:
            raise MissingFeedback("prompt has no parsable gradient or suggestion")
        return reply


class ScriptedFiniteDifferenceBackend(_ScriptedBase):
    """Estimates the gradient from observed values; ignores feedback text."""

    name = "scripted-fd"

    def __init__(
        self, eta: float = 0.05, h: float = FD_PROBE, seed: Optional[int] = None, max_step: Optional[float] = FD_MAX_STEP
    ):
        super().__init__(eta, seed)
        self.h = h
        self.max_step = max_step

    def numeric_reply(self, prompt: str) -> str:
        return scripted_finite_difference_reply(observed_pairs(prompt), self.eta, self.h, self.max_step)


class ScriptedRandomBackend(_ScriptedBase):
    """Uniform proposals over the function's domain: the no-information control."""

    name = "random"

    def __init__(self, domain, seed: Optional[int] = None, eta: float = 0.05):
        super().__init__(eta, seed)
        self.domain = domain

    def numeric_reply(self, prompt: str) -> str:
        return scripted_random_reply(self.domain, self.rng)

    def poem_instruction(self, prompt: str) -> str:
        n = int(self.rng.integers(5, 13))
        return f"Write every line with exactly {n} syllables."


class ScriptedPoetBackend:
    """Stand-in poem agent built from one-syllable words.

    If the instruction names a per-line syllable count it aims for that count
    and misses by one with probability 0.4; otherwise each line's length is
    drawn uniformly from 5-12 syllables.
    """

    name = "scripted-poet"

    def __init__(self, seed: Optional[int] = None):
        self.rng = np.random.default_rng(seed)

    def complete(self, messages, temperature=None, max_tokens=None) -> str:
        prompt = _prompt_text(messages)
        if POEM_AGENT_MARK not in prompt:
            raise BackendError("scripted poet only answers poem assignments")
        m = _LINES_RE.search(prompt)
        n_lines = int(m.group(1)) if m else 4
        _, _, advice = prompt.partition("helpful advice and guidance:")
        aim = _TARGET_RE.search(advice)
        lines = []
        for _ in range(n_lines):
            if aim:
                count = int(aim.group(1)) + int(self.rng.choice([-1, 0, 0, 0, 1]))
            else:
                count = int(self.rng.integers(5, 13))
            words = self.rng.choice(_POEM_WORDS, size=max(count, 1))
            lines.append(" ".join(words))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# SGD baseline


def sgd_run(
    f: en.TestFunction, x0: en.Point, eta: float, K: int, decimals: Optional[int] = None
) -> Trace:
    """Plain gradient descent ``x <- x - eta * grad J(x)`` for ``K`` steps.

    With ``decimals=6`` every iterate and gradient is rounded the way the
    text feedback channel rounds them, so the result can be compared exactly
    with a run driven through rendered prompts.
    """
    if eta <= 0 or K < 1:
        raise ValueError("need eta > 0 and K >= 1")
    if decimals not in (None, 6):
        raise ValueError("decimals must be None or 6")
    q = en.quantize if decimals else (lambda v: v)

    def label(x):
        return en.format_point(x) if decimals else f"[{x[0]!r}, {x[1]!r}]"

    meta = {"env": "numeric", "function": f.name, "feedback_mode": "directional", "backend": "sgd",
            "eta": eta, "K": K, "status": "ok"}
    trace = Trace(meta)
    x = en.Point(q(float(x0[0])), q(float(x0[1])))
    try:
        for k in range(K + 1):
            r = en.reward(f, x)
            trace.records.append(
                InteractionRecord(k, label(x), label(x), r, Feedback.none(), True, r, None if k == 0 else prev)
            )
            prev = r
            if k == K:
                break
            g1, g2 = en.gradient(f, x)
            step = (q(-g1 + 0.0), q(-g2 + 0.0))
            x = en.Point(q(x[0] + eta * step[0]), q(x[1] + eta * step[1]))
            if not (math.isfinite(x[0]) and math.isfinite(x[1])):
                raise NonFinite(f"iterate diverged at step {k + 1}")
    except NonFinite as exc:
        meta["status"] = "diverged"
        meta["error"] = str(exc)
    return trace
