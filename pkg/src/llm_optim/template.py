"""A small handlebars-style template engine.

Supported constructs, and nothing else::

    {{name}} {{this.field}}            variable substitution
    {{#each path}} ... {{/each}}        repeat body per list element, ``this`` bound
    {{#if path}} ... {{/if}}            body kept iff the value is truthy
    {{#system}} {{#user}} {{#assistant}} role blocks (one chat message each)
    {{gen 'name' key=value}}           generation slot, renders as nothing

A ``~`` just inside the braces (``{{~`` or ``~}}``) strips all whitespace,
newlines included, on that side of the tag. No other whitespace is touched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping, Union

from .core import ChatMessage
from .errors import MissingVariable, TypeMismatch, UnbalancedBlock, UnknownTag

ROLES = ("system", "user", "assistant")

TEMPLATE_NAMES = (
    "optimizer_numeric",
    "synthesizer_numeric",
    "poem_agent",
    "synthesizer_poem",
    "optimizer_poem",
)

_TAG_RE = re.compile(r"\{\{(~?)(.*?)(~?)\}\}", re.DOTALL)
_PATH_RE = re.compile(r"^[A-Za-z_]\w*(?:\.[A-Za-z_]\w*)*$")
_GEN_ARG_RE = re.compile(r"""(\w+)=('[^']*'|"[^"]*"|\S+)""")


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Variable:
    path: str


@dataclass(frozen=True)
class Each:
    path: str
    body: tuple


@dataclass(frozen=True)
class If:
    path: str
    body: tuple


@dataclass(frozen=True)
class RoleBlock:
    role: str
    body: tuple


@dataclass(frozen=True)
class Gen:
    name: str
    params: dict = field(default_factory=dict, hash=False)


Node = Union[Literal, Variable, Each, If, RoleBlock, Gen]


@dataclass(frozen=True)
class Template:
    source: str
    nodes: tuple

    @property
    def generation_slots(self) -> list[Gen]:
        slots: list[Gen] = []

        def walk(nodes):
            for node in nodes:
                if isinstance(node, Gen):
                    slots.append(node)
                elif isinstance(node, (Each, If, RoleBlock)):
                    walk(node.body)

        walk(self.nodes)
        return slots


def _position(source: str, offset: int) -> str:
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return f"line {line}, column {col}"


def _parse_literal_value(raw: str) -> Any:
    if raw[:1] in ("'", '"'):
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _parse_gen(body: str, where: str) -> Gen:
    m = re.match(r"""gen\s+('([^']*)'|"([^"]*)")(.*)$""", body, re.DOTALL)
    if not m:
        raise UnknownTag(f"malformed gen tag {{{{{body}}}}} at {where}")
    name = m.group(2) if m.group(2) is not None else m.group(3)
    rest = m.group(4).strip()
    params = {}
    for key, raw in _GEN_ARG_RE.findall(rest):
        params[key] = _parse_literal_value(raw)
    if _GEN_ARG_RE.sub("", rest).strip():
        raise UnknownTag(f"malformed gen arguments {rest!r} at {where}")
    return Gen(name, params)


def _tokenize(source: str) -> list:
    """Split into literal strings and (kind, arg, offset) tag tuples, applying tilde trimming."""
    tokens: list = []
    pos = 0
    strip_next = False
    for m in _TAG_RE.finditer(source):
        text = source[pos:m.start()]
        if strip_next:
            text = text.lstrip()
        if m.group(1):
            text = text.rstrip()
        tokens.append(text)
        tokens.append((m.group(2).strip(), m.start()))
        strip_next = bool(m.group(3))
        pos = m.end()
    tail = source[pos:]
    tokens.append(tail.lstrip() if strip_next else tail)
    return [t for t in tokens if t != ""]


def parse_template(source: str) -> Template:
    if not source:
        raise ValueError("template source is empty")
    # each frame: (kind, arg, offset, children)
    stack: list = [("root", None, 0, [])]
    for tok in _tokenize(source):
        if isinstance(tok, str):
            stack[-1][3].append(Literal(tok))
            continue
        body, offset = tok
        where = _position(source, offset)
        if body.startswith("#"):
            head, _, arg = body[1:].partition(" ")
            arg = arg.strip()
            if head in ROLES:
                if arg:
                    raise UnknownTag(f"role block takes no argument: {{{{{body}}}}} at {where}")
                if any(frame[0] in ROLES for frame in stack):
                    raise UnknownTag(f"nested role block {{{{#{head}}}}} at {where}")
            elif head in ("each", "if"):
                if not _PATH_RE.match(arg):
                    raise UnknownTag(f"bad path in {{{{{body}}}}} at {where}")
            else:
                raise UnknownTag(f"unsupported block {{{{{body}}}}} at {where}")
            stack.append((head, arg, offset, []))
        elif body.startswith("/"):
            head = body[1:].strip()
            kind, arg, open_offset, children = stack[-1]
            if kind == "root":
                raise UnbalancedBlock(f"closing tag {{{{/{head}}}}} at {where} has no opener")
            if head != kind:
                raise UnbalancedBlock(
                    f"closing tag {{{{/{head}}}}} at {where} does not match "
                    f"{{{{#{kind}}}}} opened at {_position(source, open_offset)}"
                )
            stack.pop()
            children = tuple(children)
            if kind == "each":
                node = Each(arg, children)
            elif kind == "if":
                node = If(arg, children)
            else:
                node = RoleBlock(kind, children)
            stack[-1][3].append(node)
        elif body.startswith("gen ") or body == "gen":
            stack[-1][3].append(_parse_gen(body, where))
        elif _PATH_RE.match(body):
            stack[-1][3].append(Variable(body))
        else:
            raise UnknownTag(f"unsupported tag {{{{{body}}}}} at {where}")
    if len(stack) > 1:
        kind, _, offset, _ = stack[-1]
        raise UnbalancedBlock(f"block {{{{#{kind}}}}} opened at {_position(source, offset)} is never closed")
    return Template(source, tuple(stack[0][3]))


_MISSING = object()


def _lookup(obj: Any, key: str) -> Any:
    if isinstance(obj, Mapping):
        return obj.get(key, _MISSING)
    return getattr(obj, key, _MISSING)


def _resolve(path: str, context: Mapping, scope: list) -> Any:
    head, *rest = path.split(".")
    if head == "this":
        if not scope:
            raise MissingVariable(path)
        value = scope[-1]
    else:
        value = _MISSING
        for frame in reversed(scope):
            value = _lookup(frame, head)
            if value is not _MISSING:
                break
        if value is _MISSING:
            value = _lookup(context, head)
    for key in rest:
        if value is _MISSING:
            break
        value = _lookup(value, key)
    if value is _MISSING:
        raise MissingVariable(path)
    return value


def _truthy(value: Any) -> bool:
    if value is None:
        return False
    if isinstance(value, (str, list, tuple, dict, bool, int, float)):
        return bool(value)
    return True


def _render_nodes(nodes, context: Mapping, scope: list, out: list) -> None:
    for node in nodes:
        if isinstance(node, Literal):
            out.append(node.text)
        elif isinstance(node, Variable):
            value = _resolve(node.path, context, scope)
            if isinstance(value, bool):
                out.append("true" if value else "false")
            elif isinstance(value, (str, int, float)):
                out.append(str(value))
            else:
                raise TypeMismatch(f"variable {node.path} is {type(value).__name__}, not text")
        elif isinstance(node, If):
            if _truthy(_resolve(node.path, context, scope)):
                _render_nodes(node.body, context, scope, out)
        elif isinstance(node, Each):
            items = _resolve(node.path, context, scope)
            if not isinstance(items, (list, tuple)):
                raise TypeMismatch(f"#each over {node.path}, which is {type(items).__name__}, not a list")
            for item in items:
                _render_nodes(node.body, context, scope + [item], out)
        elif isinstance(node, Gen):
            pass
        elif isinstance(node, RoleBlock):
            _render_nodes(node.body, context, scope, out)


def render_text(template: Template, context: Mapping) -> str:
    """Render to a flat string, role blocks contributing their bodies in place."""
    out: list[str] = []
    _render_nodes(template.nodes, context, [], out)
    return "".join(out)


def render_chat(template: Template, context: Mapping) -> list[ChatMessage]:
    """One message per role block, in template order.

    Assistant blocks that only hold a generation slot become empty assistant
    messages; callers drop them before sending.
    """
    messages: list[ChatMessage] = []
    for node in template.nodes:
        if isinstance(node, RoleBlock):
            out: list[str] = []
            _render_nodes(node.body, context, [], out)
            messages.append(ChatMessage(node.role, "".join(out)))
        else:
            out = []
            _render_nodes([node], context, [], out)
            if "".join(out).strip():
                raise TypeMismatch("content outside a role block cannot be rendered as chat")
    return messages


@lru_cache(maxsize=None)
def load_template(name: str) -> Template:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}; choose from {TEMPLATE_NAMES}")
    source = resources.files("llm_optim.templates").joinpath(f"{name}.tpl").read_text(encoding="utf-8")
    return parse_template(source)
