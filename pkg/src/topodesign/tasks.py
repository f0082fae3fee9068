"""Synthetic task world with computable ground truth.

Queries are self-describing so that simulated agents can solve them from the
prompt text alone:

* ``arith_easy``  ``compute 3+4``
* ``arith_hard``  ``compute ((3+4)*5)-6``, three dependent steps
* ``choice``      ``choose the value of 3+4: (A) 6 (B) 7 (C) 9 (D) 8``
* ``relay``       ``recall the code for key 42``; only specialists know codes
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .numerics import Rng

CATEGORIES = ("arith_easy", "arith_hard", "choice", "relay")
LETTERS = "ABCD"
DIFFICULTY = {"arith_easy": 0.2, "arith_hard": 0.9, "choice": 0.5, "relay": 0.7}

_EASY = re.compile(r"^compute (\d+)\+(\d+)$")
_HARD = re.compile(r"^compute \(\((\d+)\+(\d+)\)\*(\d+)\)-(\d+)$")
_CHOICE = re.compile(r"^choose the value of (\d+)\+(\d+):((?: \([A-D]\) -?\d+){4})$")
_RELAY = re.compile(r"^recall the code for key (\d+)$")
_ANSWER = re.compile(r"^\s*answer\s*:\s*(.*?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class SyntheticTask:
    query: str
    category: str
    ground_truth: str
    difficulty: float


def relay_code(key: int) -> int:
    return (key * 7919 + 131) % 997


def hard_steps(a: int, b: int, c: int, d: int) -> list[int]:
    s1 = a + b
    s2 = s1 * c
    return [s1, s2, s2 - d]


def parse_query(query: str) -> tuple[str, tuple] | None:
    """Category and operands of a query, or None for foreign text."""
    q = query.strip()
    if m := _EASY.match(q):
        return "arith_easy", (int(m[1]), int(m[2]))
    if m := _HARD.match(q):
        return "arith_hard", tuple(int(g) for g in m.groups())
    if m := _CHOICE.match(q):
        options = dict(re.findall(r"\(([A-D])\) (-?\d+)", m[3]))
        return "choice", (int(m[1]), int(m[2]), {k: int(v) for k, v in options.items()})
    if m := _RELAY.match(q):
        return "relay", (int(m[1]),)
    return None


def extract_answer(text: str) -> str:
    """Trailing ``Answer: X`` line if present, else the last whitespace token."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    for ln in reversed(lines):
        if m := _ANSWER.match(ln):
            return m[1].strip()
    tokens = text.split()
    return tokens[-1] if tokens else ""


def normalize_answer(text: str) -> str:
    return extract_answer(text).strip().casefold()


def evaluate(answer: str, task: SyntheticTask) -> float:
    """Exact-match utility after answer extraction, trimming and case folding."""
    return 1.0 if normalize_answer(answer) == task.ground_truth.strip().casefold() else 0.0


def _easy(rng: Rng) -> SyntheticTask:
    a, b = int(rng.integers(1, 50)), int(rng.integers(1, 50))
    return SyntheticTask(f"compute {a}+{b}", "arith_easy", str(a + b), DIFFICULTY["arith_easy"])


def _hard(rng: Rng) -> SyntheticTask:
    a, b = int(rng.integers(1, 30)), int(rng.integers(1, 30))
    c, d = int(rng.integers(2, 10)), int(rng.integers(1, 50))
    truth = hard_steps(a, b, c, d)[-1]
    return SyntheticTask(f"compute (({a}+{b})*{c})-{d}", "arith_hard", str(truth), DIFFICULTY["arith_hard"])


def _choice(rng: Rng) -> SyntheticTask:
    a, b = int(rng.integers(1, 50)), int(rng.integers(1, 50))
    truth = a + b
    distractors: list[int] = []
    while len(distractors) < 3:
        cand = truth + int(rng.integers(-5, 6))
        if cand != truth and cand not in distractors:
            distractors.append(cand)
    slot = int(rng.integers(0, 4))
    values = distractors[:slot] + [truth] + distractors[slot:]
    opts = " ".join(f"({LETTERS[i]}) {v}" for i, v in enumerate(values))
    return SyntheticTask(f"choose the value of {a}+{b}: {opts}", "choice", LETTERS[slot], DIFFICULTY["choice"])


def _relay(rng: Rng) -> SyntheticTask:
    key = int(rng.integers(1, 1000))
    return SyntheticTask(f"recall the code for key {key}", "relay", str(relay_code(key)), DIFFICULTY["relay"])


_MAKERS = {"arith_easy": _easy, "arith_hard": _hard, "choice": _choice, "relay": _relay}


def generate_suite(seed: int, counts: dict[str, int], interleave: bool = True) -> list[SyntheticTask]:
    """Deterministic task suite.

    With ``interleave`` the categories are emitted round-robin so that any
    prefix of the suite covers every requested category.
    """
    for cat, n in counts.items():
        if cat not in _MAKERS:
            raise ValueError(f"unknown task category {cat!r}")
        if n < 0:
            raise ValueError("counts must be non-negative")
    rng = Rng(seed)
    per_cat = {
        cat: [_MAKERS[cat](rng.child(ci, k)) for k in range(n)]
        for ci, (cat, n) in enumerate(sorted(counts.items()))
    }
    if not interleave:
        return [t for cat in sorted(per_cat) for t in per_cat[cat]]
    out: list[SyntheticTask] = []
    k = 0
    while any(k < len(v) for v in per_cat.values()):
        for cat in sorted(per_cat):
            if k < len(per_cat[cat]):
                out.append(per_cat[cat][k])
        k += 1
    return out
