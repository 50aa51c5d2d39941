"""Synthetic corpus: templated mini programs with honest input descriptions.

Every problem pairs a program with a description of the input its tests use
(line count, element count, value range). Test inputs follow an adversarial
convention: whenever the announced range lets a hazard fire, the tests hit
it. Outcomes are therefore (almost always) determined by a comparison between
a constant in the code and a number in the description, so models that read
descriptions have an edge over models that cannot. A configurable fraction
of descriptions is replaced by uninformative filler. Labels never come from
the templates: every example is run through interpreter B and the observed
outcome is stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .cfg import build_cfg, step_limit
from .encoder import MAX_SEQUENCE, Vocabulary, surface_tokens
from .features import ExampleFeatures, compute_features, target_index, target_kind
from .interp import run_interpreter_b
from .minilang import parse

SPLITS = ("train", "valid", "test")

DEFAULT_STEP_BUDGET = 500
DEFAULT_CLASS_QUOTA = 20

UNINFORMATIVE_TEXT = "unspecified input"

_WORD_POOL = ("deck", "apple", "seven", "hello", "data")
_VAR_POOL = ("x", "y", "z", "a", "b", "c", "d", "k", "m", "n", "p", "q", "t", "u", "v", "w")


class GenerationExhausted(RuntimeError):
    """Raised when class quotas cannot be met within the attempt budget."""


@dataclass(frozen=True)
class Example:
    uid: int
    problem_id: int
    split: str
    source: str
    stdin: tuple
    description: str
    target: int  # class id; 0 = no-error
    error_line: int | None

    def to_record(self) -> dict:
        return {
            "id": self.uid,
            "problem-id": self.problem_id,
            "split": self.split,
            "source": self.source,
            "stdin": list(self.stdin),
            "description": self.description,
            "target": target_kind(self.target) or "no-error",
            "error-line": self.error_line,
        }

    @staticmethod
    def from_record(record: dict) -> "Example":
        kind = record["target"]
        return Example(
            uid=int(record["id"]),
            problem_id=int(record["problem-id"]),
            split=record["split"],
            source=record["source"],
            stdin=tuple(record["stdin"]),
            description=record["description"],
            target=0 if kind == "no-error" else target_index(kind),
            error_line=record["error-line"],
        )


@dataclass(frozen=True)
class CorpusManifest:
    seed: int
    examples: tuple[Example, ...]

    @property
    def size(self) -> int:
        return len(self.examples)

    def split(self, name: str) -> tuple[Example, ...]:
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        return tuple(e for e in self.examples if e.split == name)

    def class_counts(self, name: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for example in self.split(name):
            key = target_kind(example.target) or "no-error"
            counts[key] = counts.get(key, 0) + 1
        return counts

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"seed": self.seed, "count": self.size}) + "\n")
            for example in self.examples:
                fh.write(json.dumps(example.to_record()) + "\n")

    @staticmethod
    def load(path: str) -> "CorpusManifest":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line]
        seed = -1
        records = []
        for line in lines:
            obj = json.loads(line)
            if "seed" in obj and "id" not in obj:
                seed = int(obj["seed"])
                continue
            records.append(Example.from_record(obj))
        return CorpusManifest(seed=seed, examples=tuple(records))


# --- templates ------------------------------------------------------------------
#
# Each template returns (source, description, stdin_factory); stdin_factory
# draws a fresh stdin per example, outcome-equivalent within the problem.

StdinFactory = Callable[[np.random.Generator], tuple]
TemplateOut = tuple[str, str, StdinFactory]


def _pick(rng: np.random.Generator, pool: Sequence, count: int) -> list:
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in idx]


def _int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _padding(rng: np.random.Generator, names: list) -> list[str]:
    return [f"{name} = {_int(rng, 1, 9)}" for name in names]


def _range_description(lo: int, hi: int) -> str:
    return f"one line with one integer from {lo} to {hi}"


def _t_reads(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """EOFError: more input_int() calls than announced input lines."""
    k = _int(rng, 2, 4)
    announced = _int(rng, 1, k - 1) if want_error else _int(rng, k, k + 1)
    names = _pick(rng, _VAR_POOL, k + 1)
    lo, hi = 1, 9
    lines = [f"{names[i]} = input_int()" for i in range(k)]
    lines.append(f"{names[k]} = {names[0]} + {names[k - 1]}")
    lines.append(f"print({names[k]})")
    description = f"{announced} lines with one integer from {lo} to {hi} on each line"
    if announced == 1:
        description = f"1 line with one integer from {lo} to {hi}"

    def stdin_factory(r: np.random.Generator) -> tuple:
        return tuple(_int(r, lo, hi) for _ in range(announced))

    return "\n".join(lines) + "\n", description, stdin_factory


def _t_divide(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """ZeroDivisionError: denominator hits zero inside the announced range."""
    lo = _int(rng, 1, 5)
    hi = lo + _int(rng, 1, 4)
    hazard = _int(rng, lo, hi) if want_error else _int(rng, hi + 1, hi + 4)
    op = ("/", "//", "%")[_int(rng, 0, 2)]
    numerator = _int(rng, 2, 9)
    names = _pick(rng, _VAR_POOL, 4)
    pad = _padding(rng, names[2 : 2 + _int(rng, 0, 2)])
    lines = pad + [
        f"{names[0]} = input_int()",
        f"{names[1]} = {numerator} {op} ({names[0]} - {hazard})",
        f"print({names[1]})",
    ]

    def stdin_factory(r: np.random.Generator) -> tuple:
        if want_error:
            return (hazard,)
        return (_int(r, lo, hi),)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


def _t_parse(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """ValueError: int() of a word, or sqrt() below the announced minimum."""
    names = _pick(rng, _VAR_POOL, 4)
    pad = _padding(rng, names[3:4] if _int(rng, 0, 1) else [])
    if _int(rng, 0, 1):  # int(input) variant
        description = (
            "one line with a single word" if want_error else "one line with a single integer"
        )
        lines = pad + [
            f"{names[0]} = input_str()",
            f"{names[1]} = int({names[0]})",
            f"{names[2]} = {names[1]} + {_int(rng, 1, 9)}",
        ]

        def stdin_factory(r: np.random.Generator) -> tuple:
            if want_error:
                return (_WORD_POOL[_int(r, 0, len(_WORD_POOL) - 1)],)
            return (_int(r, 1, 9),)

        return "\n".join(lines) + "\n", description, stdin_factory

    # sqrt(x - A): errors whenever the range minimum sits below A
    lo = _int(rng, 1, 5)
    hi = lo + _int(rng, 1, 4)
    hazard = _int(rng, lo + 1, hi + 2) if want_error else _int(rng, 1, lo)
    lines = pad + [
        f"{names[0]} = input_int()",
        f"{names[1]} = sqrt({names[0]} - {hazard})",
        f"print({names[1]})",
    ]

    def stdin_factory(r: np.random.Generator) -> tuple:
        if want_error:
            return (lo,)
        return (_int(r, lo, hi),)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


def _t_index(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """IndexError: constant index vs announced element count."""
    count = _int(rng, 2, 6)
    index = _int(rng, count, count + 3) if want_error else _int(rng, 0, count - 1)
    names = _pick(rng, _VAR_POOL, 4)
    pad = _padding(rng, names[2 : 2 + _int(rng, 0, 2)])
    lines = pad + [
        f"{names[0]} = input_list()",
        f"{names[1]} = {names[0]}[{index}] + {_int(rng, 1, 9)}",
        f"print({names[1]})",
    ]
    description = f"one line with {count} integers from 1 to 9"

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (" ".join(str(_int(r, 1, 9)) for _ in range(count)),)

    return "\n".join(lines) + "\n", description, stdin_factory


def _t_types(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """TypeError: string + integer (code-determined; description is honest)."""
    names = _pick(rng, _VAR_POOL, 3)
    pad = _padding(rng, names[2:3] if _int(rng, 0, 1) else [])
    if want_error:
        tail = f"{names[1]} = {names[0]} + {_int(rng, 1, 9)}"
    else:
        tail = f'{names[1]} = {names[0]} + "{_WORD_POOL[_int(rng, 0, 4)]}"'
    lines = pad + [f"{names[0]} = input_str()", tail, f"print({names[1]})"]

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (_WORD_POOL[_int(r, 0, len(_WORD_POOL) - 1)],)

    return "\n".join(lines) + "\n", "one line with a single word", stdin_factory


def _t_names(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """NameError: a branch binds a name only when the input can go below T."""
    threshold = _int(rng, 2, 8)
    if want_error:  # whole announced range sits at or above the threshold
        lo = _int(rng, threshold, 9)
        hi = _int(rng, lo, 9)
    else:  # whole announced range sits below the threshold
        hi = _int(rng, 1, threshold - 1)
        lo = _int(rng, 1, hi)
    names = _pick(rng, _VAR_POOL, 4)
    pad = _padding(rng, names[3:4] if _int(rng, 0, 1) else [])
    lines = pad + [
        f"{names[0]} = input_int()",
        f"if {names[0]} < {threshold}:",
        f"  {names[1]} = {names[0]} + 1",
        f"{names[2]} = {names[1]} + 1",
    ]

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (_int(r, lo, hi),)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


def _t_loop(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """Timeout: a while loop that only terminates for non-positive input."""
    names = _pick(rng, _VAR_POOL, 3)
    if want_error:
        lo = _int(rng, 1, 5)
        hi = _int(rng, lo, 9)
        body = f"  {names[1]} = {names[1]} + 1"  # counter grows, x untouched
    else:
        lo = -_int(rng, 3, 5)
        hi = -_int(rng, 0, 2)
        body = f"  {names[0]} = {names[0]} - 1"
    lines = [
        f"{names[0]} = input_int()",
        f"{names[1]} = 0",
        f"while {names[0]} > 0:",
        body,
        f"print({names[1]})",
    ]

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (_int(r, lo, hi),)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


def _t_guard(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """try/except over a hazard; errors only when the handler raises again."""
    lo = _int(rng, 1, 4)
    hi = lo + _int(rng, 1, 4)
    hazard = _int(rng, lo, hi)  # the tests always hit it
    names = _pick(rng, _VAR_POOL, 3)
    handler = "  raise_value_error()" if want_error else f"  {names[1]} = 0"
    lines = [
        f"{names[0]} = input_int()",
        "try:",
        f"  {names[1]} = {_int(rng, 2, 9)} // ({names[0]} - {hazard})",
        "except:",
        handler,
        f"{names[2]} = {names[1]} + 1" if not want_error else f"{names[2]} = {names[0]} + 1",
        f"print({names[2]})",
    ]

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (hazard,)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


def _t_chain(rng: np.random.Generator, want_error: bool) -> TemplateOut:
    """Safe arithmetic pipeline, optionally with a bounded for loop."""
    names = _pick(rng, _VAR_POOL, 4)
    lo, hi = 1, 9
    lines = [f"{names[0]} = input_int()"]
    if _int(rng, 0, 1):
        lines += [
            f"{names[1]} = 0",
            f"for i in range({_int(rng, 2, 4)}):",
            f"  {names[1]} = {names[1]} + {names[0]}",
        ]
    else:
        lines.append(f"{names[1]} = {names[0]} * {_int(rng, 2, 5)} + {_int(rng, 1, 9)}")
    lines.append(f"{names[2]} = abs({names[1]}) + sqrt({_int(rng, 1, 9)})")
    lines.append(f"print({names[2]})")

    def stdin_factory(r: np.random.Generator) -> tuple:
        return (_int(r, lo, hi),)

    return "\n".join(lines) + "\n", _range_description(lo, hi), stdin_factory


TEMPLATES: dict[str, Callable[[np.random.Generator, bool], TemplateOut]] = {
    "reads": _t_reads,
    "divide": _t_divide,
    "parse": _t_parse,
    "index": _t_index,
    "types": _t_types,
    "names": _t_names,
    "loop": _t_loop,
    "guard": _t_guard,
    "chain": _t_chain,
}

# error kinds a template can emit when asked for an error
TEMPLATE_KINDS = {
    "reads": ("EOFError",),
    "divide": ("ZeroDivisionError",),
    "parse": ("ValueError",),
    "index": ("IndexError",),
    "types": ("TypeError",),
    "names": ("NameError",),
    "loop": ("Timeout",),
    "guard": ("ValueError",),
    "chain": (),
}

DEFAULT_MIX = {name: 1.0 for name in TEMPLATES}

# five error classes, all description-dependent, all with known error lines
ACCEPTANCE_MIX = {
    "reads": 1.0,
    "divide": 1.0,
    "parse": 1.0,
    "index": 1.0,
    "names": 1.0,
    "guard": 0.5,
    "chain": 1.0,
}


def _mix_kinds(mix: dict[str, float]) -> set[str]:
    kinds: set[str] = set()
    for name, weight in mix.items():
        if weight > 0:
            kinds.update(TEMPLATE_KINDS[name])
    return kinds


def generate_corpus(
    seed: int,
    size: int,
    template_mix: dict[str, float] | None = None,
    *,
    uninformative: float = 0.2,
    examples_per_problem: tuple[int, int] = (1, 4),
    step_budget: int = DEFAULT_STEP_BUDGET,
    class_quota: int = DEFAULT_CLASS_QUOTA,
    max_attempts: int | None = None,
) -> CorpusManifest:
    """Generate at least `size` labeled examples, deterministically per seed.

    Problems are assigned whole to splits (8:1:1 by problem id); the test
    split is trimmed so no-error examples make up roughly half of it; every
    error kind the template mix can emit appears at least `class_quota`
    times in the train split, or GenerationExhausted is raised.
    """
    if size < 100:
        raise ValueError("size must be >= 100")
    mix = dict(template_mix) if template_mix is not None else dict(DEFAULT_MIX)
    unknown = set(mix) - set(TEMPLATES)
    if unknown:
        raise ValueError(f"unknown templates in mix: {sorted(unknown)}")
    names = sorted(name for name, w in mix.items() if w > 0)
    if not names:
        raise ValueError("template mix is empty")
    weights = np.array([mix[name] for name in names])
    weights = weights / weights.sum()
    quota_kinds = _mix_kinds(mix)
    budget = max_attempts if max_attempts is not None else 200 * size

    rng = np.random.default_rng(seed)
    examples: list[Example] = []
    train_kind_counts: dict[str, int] = {kind: 0 for kind in quota_kinds}
    uid = 0
    problem_id = 0
    attempts = 0

    def quota_missing() -> list[str]:
        return sorted(k for k, c in train_kind_counts.items() if c < class_quota)

    while len(examples) < size or quota_missing():
        attempts += 1
        if attempts > budget:
            raise GenerationExhausted(
                f"corpus targets unmet after {attempts - 1} attempts: "
                f"{len(examples)}/{size} examples, quota missing {quota_missing()}"
            )
        missing = quota_missing() if len(examples) >= size else []
        if missing:
            candidates = [
                n for n in names if set(TEMPLATE_KINDS[n]) & set(missing)
            ]
            name = candidates[_int(rng, 0, len(candidates) - 1)]
            want_error = True
        else:
            name = names[int(rng.choice(len(names), p=weights))]
            want_error = bool(rng.random() < 0.5)
        source, description, stdin_factory = TEMPLATES[name](rng, want_error)
        if rng.random() < uninformative:
            description = UNINFORMATIVE_TEXT

        program = parse(source)
        cfg = build_cfg(program)
        assert step_limit(cfg) <= 174
        if len(surface_tokens(program)) > MAX_SEQUENCE:
            continue  # encoder cap; templates stay far below it

        split = SPLITS[0] if problem_id % 10 < 8 else SPLITS[1 + (problem_id % 10) - 8]
        count = _int(rng, examples_per_problem[0], examples_per_problem[1])
        for _ in range(count):
            stdin = stdin_factory(rng)
            trace = run_interpreter_b(cfg, program, stdin, step_budget=step_budget)
            outcome = trace.outcome
            target = target_index(outcome.kind) if outcome.kind else 0
            examples.append(
                Example(
                    uid=uid,
                    problem_id=problem_id,
                    split=split,
                    source=source,
                    stdin=stdin,
                    description=description,
                    target=target,
                    error_line=outcome.line,
                )
            )
            if split == "train" and target != 0:
                kind = target_kind(target)
                if kind in train_kind_counts:
                    train_kind_counts[kind] += 1
            uid += 1
        problem_id += 1

    return CorpusManifest(seed=seed, examples=tuple(_rebalance_test(examples, rng)))


def _rebalance_test(examples: list[Example], rng: np.random.Generator) -> list[Example]:
    """Trim the larger test stratum so no-error is roughly half the split."""
    test_clean = [e.uid for e in examples if e.split == "test" and e.target == 0]
    test_error = [e.uid for e in examples if e.split == "test" and e.target != 0]
    keep = min(len(test_clean), len(test_error))
    if keep == 0:  # degenerate split; trimming would empty it entirely
        return examples
    drop: set[int] = set()
    for stratum in (test_clean, test_error):
        if len(stratum) > keep:
            extra = rng.permutation(len(stratum))[: len(stratum) - keep]
            drop.update(stratum[i] for i in extra)
    return [e for e in examples if e.uid not in drop]


def balanced_batches(
    manifest: CorpusManifest,
    split: str,
    batch_size: int = 32,
    seed: int = 0,
) -> Iterator[list[Example]]:
    """Endless batch stream; each slot flips a fair coin between strata."""
    pool = manifest.split(split)
    clean = [e for e in pool if e.target == 0]
    error = [e for e in pool if e.target != 0]
    if not clean or not error:
        raise ValueError(f"split {split!r} lacks a stratum (clean={len(clean)}, error={len(error)})")
    rng = np.random.default_rng(seed)
    while True:
        batch = []
        for _ in range(batch_size):
            stratum = error if rng.random() < 0.5 else clean
            batch.append(stratum[int(rng.integers(len(stratum)))])
        yield batch


def build_vocabulary(manifest: CorpusManifest, split: str = "train") -> Vocabulary:
    """Vocabulary over the split's program tokens and description words."""
    surfaces: list[str] = []
    seen_sources: set[str] = set()
    for example in manifest.split(split):
        if example.source not in seen_sources:
            seen_sources.add(example.source)
            surfaces.extend(s for s, _, _ in surface_tokens(parse(example.source)))
        surfaces.extend(example.description.lower().split())
    return Vocabulary.build(surfaces)


def features_for(
    example: Example, vocab: Vocabulary, method: str = "none"
) -> ExampleFeatures:
    """Featurize a corpus example for a given description method."""
    return compute_features(
        example.source,
        vocab,
        description=example.description if method != "none" else None,
        method=method,
        target=example.target,
        error_line=example.error_line if example.error_line is not None else -1,
        uid=example.uid,
    )
