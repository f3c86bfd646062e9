"""Reference computations written independently of the package code.

Each oracle re-derives a value the package computes, using a different
method (finite differences instead of the analytic gradient, brute-force
grids instead of stored optima, a character scanner instead of regexes),
so agreement means something.
"""

import math

import numpy as np

# ---------------------------------------------------------------------------
# numeric functions, re-typed from their textbook definitions


def booth(x1, x2):
    return (x1 + 2 * x2 - 7) ** 2 + (2 * x1 + x2 - 5) ** 2


def mccormick(x1, x2):
    return np.sin(x1 + x2) + (x1 - x2) ** 2 - 1.5 * x1 + 2.5 * x2 + 1


def rosenbrock(x1, x2):
    return (1 - x1) ** 2 + 100 * (x2 - x1**2) ** 2


def six_hump_camel(x1, x2):
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


FORMULAS = {
    "booth": booth,
    "mccormick": mccormick,
    "rosenbrock": rosenbrock,
    "six_hump_camel": six_hump_camel,
}

# standard test-suite domain boxes
DOMAINS = {
    "booth": ((-10.0, 10.0), (-10.0, 10.0)),
    "mccormick": ((-1.5, 4.0), (-3.0, 4.0)),
    "rosenbrock": ((-5.0, 10.0), (-5.0, 10.0)),
    "six_hump_camel": ((-3.0, 3.0), (-2.0, 2.0)),
}


def central_difference(fn, x1, x2, h=1e-5):
    return (
        (fn(x1 + h, x2) - fn(x1 - h, x2)) / (2 * h),
        (fn(x1, x2 + h) - fn(x1, x2 - h)) / (2 * h),
    )


def grid_minimum(name, n=201):
    """Smallest value of the formula on an n x n grid over the domain, and where."""
    (lo1, hi1), (lo2, hi2) = DOMAINS[name]
    g1, g2 = np.meshgrid(np.linspace(lo1, hi1, n), np.linspace(lo2, hi2, n), indexing="ij")
    values = FORMULAS[name](g1, g2)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    return float(values[i, j]), (float(g1[i, j]), float(g2[i, j]))


def refine_minimum(name, start, rounds=60):
    """Shrinking-grid local search around ``start``; used to pin optima to ~1e-12."""
    fn = FORMULAS[name]
    c1, c2 = start
    width = 0.5
    for _ in range(rounds):
        a = np.linspace(c1 - width, c1 + width, 41)
        b = np.linspace(c2 - width, c2 + width, 41)
        g1, g2 = np.meshgrid(a, b, indexing="ij")
        v = fn(g1, g2)
        i, j = np.unravel_index(np.argmin(v), v.shape)
        c1, c2 = float(g1[i, j]), float(g2[i, j])
        width /= 4
    return float(fn(c1, c2)), (c1, c2)


def sgd_oracle(name, x0, eta, steps):
    """Gradient descent using central-difference gradients of the re-typed formula."""
    fn = FORMULAS[name]
    x1, x2 = x0
    values = [fn(x1, x2)]
    for _ in range(steps):
        g1, g2 = central_difference(fn, x1, x2, h=1e-6)
        x1, x2 = x1 - eta * g1, x2 - eta * g2
        values.append(fn(x1, x2))
    return values


def booth_gd_closed_form(x0, eta, steps):
    """J(x_k) for gradient descent on Booth via the exact linear recursion.

    Booth is (1/2) z^T H z + ... with constant Hessian H = [[10, 8], [8, 10]],
    so the error e_k = x_k - (1, 3) evolves as e_{k+1} = (I - eta H) e_k and
    J = e^T (H / 2) e.
    """
    H = np.array([[10.0, 8.0], [8.0, 10.0]])
    e = np.array(x0, dtype=float) - np.array([1.0, 3.0])
    A = np.eye(2) - eta * H
    for _ in range(steps):
        e = A @ e
    return float(e @ (H / 2) @ e)


# ---------------------------------------------------------------------------
# syllables: a character scanner applying the counting rules one by one

_VOWEL_SET = "aeiouy"


def syllables_word(word):
    letters = [c for c in word.lower() if "a" <= c <= "z"]
    if not letters:
        return 0
    runs = 0
    previous_vowel = False
    for c in letters:
        is_vowel = c in _VOWEL_SET
        if is_vowel and not previous_vowel:
            runs += 1
        previous_vowel = is_vowel
    n = len(letters)
    silent_e = (
        letters[-1] == "e"
        and n >= 2
        and letters[-2] not in _VOWEL_SET
        and runs > 1
        and not (n >= 3 and letters[-2] == "l" and letters[-3] not in _VOWEL_SET)
    )
    if silent_e:
        runs -= 1
    return max(runs, 1)


def syllables_line(line):
    return sum(syllables_word(w) for w in line.split())


def fraction_reward(counts, targets):
    n = len(targets)
    ok = sum(1 for i, t in enumerate(targets) if i < len(counts) and counts[i] == t)
    r = ok / n
    if len(counts) > n:
        r = min(r, (n - 1) / n)
    return r


# ---------------------------------------------------------------------------
# regret


def cumulative(values, optimum):
    """Sum of |J - J*| over steps 1..T of a best-so-far (monotone) sequence."""
    best = math.inf
    total = 0.0
    for t, v in enumerate(values):
        best = min(best, v)
        if t >= 1:
            total += abs(best - optimum)
    return total
