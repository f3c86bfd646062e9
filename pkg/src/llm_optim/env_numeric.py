"""Two-dimensional benchmark functions and the feedback they generate.

The optimizer minimizes ``J``; the environment reports reward ``R = -J``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import Feedback, FeedbackKind
from .errors import NonFinite


class Point(NamedTuple):
    x1: float
    x2: float


def fmt(value: float) -> str:
    """Fixed 6-decimal rendering used in every LLM-visible number."""
    s = f"{value:.6f}"
    return "0.000000" if s == "-0.000000" else s


def quantize(value: float) -> float:
    """The float a reader recovers from ``fmt(value)``."""
    return float(fmt(value))


def format_point(x: Point) -> str:
    return f"[{fmt(x[0])}, {fmt(x[1])}]"


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    name: str
    domain: tuple[tuple[float, float], tuple[float, float]]
    optimum_point: Point
    optimum_value: float
    _value: Callable[[float, float], float]
    _grad: Callable[[float, float], tuple[float, float]]

    def in_domain(self, x: Point) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(x, self.domain))


def _booth(x1, x2):
    return (x1 + 2 * x2 - 7) ** 2 + (2 * x1 + x2 - 5) ** 2


def _booth_grad(x1, x2):
    a = x1 + 2 * x2 - 7
    b = 2 * x1 + x2 - 5
    return 2 * a + 4 * b, 4 * a + 2 * b


def _mccormick(x1, x2):
    return math.sin(x1 + x2) + (x1 - x2) ** 2 - 1.5 * x1 + 2.5 * x2 + 1


def _mccormick_grad(x1, x2):
    c = math.cos(x1 + x2)
    d = 2 * (x1 - x2)
    return c + d - 1.5, c - d + 2.5


def _rosenbrock(x1, x2):
    return (1 - x1) ** 2 + 100 * (x2 - x1 * x1) ** 2


def _rosenbrock_grad(x1, x2):
    r = x2 - x1 * x1
    return -2 * (1 - x1) - 400 * x1 * r, 200 * r


def _camel(x1, x2):
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


def _camel_grad(x1, x2):
    return 8 * x1 - 8.4 * x1**3 + 2 * x1**5 + x2, x1 - 8 * x2 + 16 * x2**3


# McCormick's minimizer is (1/2 - pi/3, -1/2 - pi/3) in closed form; the
# six-hump camel minimizer was polished with a 40-digit Newton solve.
_MCCORMICK_OPT = Point(0.5 - math.pi / 3, -0.5 - math.pi / 3)
_CAMEL_OPT = Point(0.08984201310031806, -0.7126564030207396)

FUNCTIONS: dict[str, TestFunction] = {
    "booth": TestFunction("booth", ((-10.0, 10.0), (-10.0, 10.0)), Point(1.0, 3.0), 0.0, _booth, _booth_grad),
    "mccormick": TestFunction(
        "mccormick", ((-1.5, 4.0), (-3.0, 4.0)), _MCCORMICK_OPT, _mccormick(*_MCCORMICK_OPT), _mccormick, _mccormick_grad
    ),
    "rosenbrock": TestFunction(
        "rosenbrock", ((-5.0, 10.0), (-5.0, 10.0)), Point(1.0, 1.0), 0.0, _rosenbrock, _rosenbrock_grad
    ),
    "six_hump_camel": TestFunction(
        "six_hump_camel", ((-3.0, 3.0), (-2.0, 2.0)), _CAMEL_OPT, _camel(*_CAMEL_OPT), _camel, _camel_grad
    ),
}

ALIASES = {"sixhumpcamel": "six_hump_camel", "six-hump-camel": "six_hump_camel", "camel": "six_hump_camel"}

# Per-function SGD step sizes, tuned on held-out uniform starts: the smallest
# mean 10-step cumulative regret among values with no divergent or
# non-monotone run.
DEFAULT_ETA = {"booth": 0.07, "mccormick": 0.3, "rosenbrock": 3e-5, "six_hump_camel": 0.02}


def get_function(name: str) -> TestFunction:
    key = name.lower()
    key = ALIASES.get(key, key)
    try:
        return FUNCTIONS[key]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; choose from {sorted(FUNCTIONS)}") from None


def _finite(values, what: str):
    if not all(math.isfinite(v) for v in values):
        raise NonFinite(f"{what} is not finite: {values}")
    return values


def evaluate(f: TestFunction, x: Point) -> float:
    try:
        value = float(f._value(float(x[0]), float(x[1])))
    except OverflowError as exc:
        raise NonFinite(f"{f.name} overflowed at {x}") from exc
    return _finite((value,), f"{f.name}{tuple(x)}")[0]


def gradient(f: TestFunction, x: Point) -> tuple[float, float]:
    try:
        g = f._grad(float(x[0]), float(x[1]))
    except OverflowError as exc:
        raise NonFinite(f"gradient of {f.name} overflowed at {x}") from exc
    return _finite((float(g[0]), float(g[1])), f"gradient of {f.name}{tuple(x)}")


def reward(f: TestFunction, x: Point) -> float:
    return -evaluate(f, x)


def sample_start(f: TestFunction, rng: np.random.Generator) -> tuple[Point, float]:
    (lo1, hi1), (lo2, hi2) = f.domain
    x = Point(float(rng.uniform(lo1, hi1)), float(rng.uniform(lo2, hi2)))
    return x, evaluate(f, x)


def directional_feedback(f: TestFunction, x: Point) -> Feedback:
    g1, g2 = gradient(f, x)
    payload = (-g1 + 0.0, -g2 + 0.0)
    text = (
        f"The gradient of the reward at your last x is [{fmt(payload[0])}, {fmt(payload[1])}]. "
        "Moving x along this direction increases the reward."
    )
    return Feedback(FeedbackKind.DIRECTIONAL, text, payload)


def nondirectional_feedback(f: TestFunction, x: Point) -> Feedback:
    g1, g2 = gradient(f, x)
    i, j = (2, 1) if abs(g2) > abs(g1) else (1, 2)
    text = (
        f"Changing x{i} has a bigger effect on the objective than changing x{j}. "
        f"You should change x{i}."
    )
    return Feedback(FeedbackKind.NONDIRECTIONAL, text, i)


def observation_line(parameter: str, value: float) -> str:
    return f"x = {parameter}; y = {fmt(value)}"
