"""Hard/soft matching scores for (target, argument, group, hateful) quadruples.

A prediction string holds quadruples as ``t | a | g | h`` segments joined by
``[SEP]`` and optionally terminated by ``[END]``. Hard matching requires all
four fields to be identical; soft matching keeps group and hateful exact and
accepts target and argument spans whose LCS similarity exceeds 0.5.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

__all__ = [
    "Quadruple",
    "SampleExtraction",
    "PRF",
    "ScoreReport",
    "parse_quadruples",
    "lcs_length",
    "similarity",
    "hard_match",
    "soft_match",
    "greedy_match",
    "exact_first_greedy_match",
    "max_bipartite_match",
    "score",
    "read_jsonl",
    "DuplicateSampleError",
    "CorpusFormatError",
]

log = logging.getLogger(__name__)

SEP = "[SEP]"
END = "[END]"


@dataclass(frozen=True)
class Quadruple:
    target: str
    argument: str
    group: str
    hateful: str

    def __post_init__(self) -> None:
        for name in ("target", "argument", "group", "hateful"):
            value = getattr(self, name)
            if value is None:
                raise TypeError(f"{name} must be a string")
            object.__setattr__(self, name, str(value).strip())

    def __str__(self) -> str:
        return f"{self.target} | {self.argument} | {self.group} | {self.hateful}"


@dataclass
class SampleExtraction:
    sample_id: str
    quads: list[Quadruple] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_raw(cls, sample_id: str, raw: str) -> "SampleExtraction":
        warnings: list[str] = []
        quads = parse_quadruples(raw, warnings)
        return cls(sample_id, quads, warnings)


def parse_quadruples(raw: str, warnings: list[str] | None = None) -> list[Quadruple]:
    """Split a raw model output into quadruples.

    Never raises. Segments without exactly four ``|``-separated fields are
    skipped; a message for each is appended to ``warnings`` when given.
    """
    text = (raw or "").strip()
    if text.endswith(END):
        text = text[: -len(END)].rstrip()
    if not text:
        return []
    quads = []
    for i, segment in enumerate(text.split(SEP)):
        fields = segment.split("|")
        if len(fields) != 4:
            msg = f"segment {i}: expected 4 fields, got {len(fields)}: {segment.strip()!r}"
            log.debug("malformed quadruple %s", msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        quads.append(Quadruple(*fields))
    return quads


def lcs_length(a: str, b: str) -> int:
    """Length of the longest common subsequence of two strings (code points).

    Bit-parallel over the longer string: a zero bit in ``v`` marks a position
    where the LCS length steps up, with Python ints as arbitrary-width words.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    masks: dict[str, int] = {}
    for i, ch in enumerate(a):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for ch in b:
        u = v & masks.get(ch, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def similarity(pred: str, gold: str) -> float:
    """``2 * LCS / (len(pred) + len(gold))``; 1.0 when both are empty."""
    total = len(pred) + len(gold)
    if total == 0:
        return 1.0
    return 2 * lcs_length(pred, gold) / total


def _exceeds_half(pred: str, gold: str) -> bool:
    # 2M / L > 1/2  <=>  4M > L, kept in integers so 0.5 is never misjudged
    total = len(pred) + len(gold)
    if total == 0:
        return True
    return 4 * lcs_length(pred, gold) > total


def hard_match(pred: Quadruple, gold: Quadruple) -> bool:
    return (
        pred.target == gold.target
        and pred.argument == gold.argument
        and pred.group == gold.group
        and pred.hateful == gold.hateful
    )


def soft_match(pred: Quadruple, gold: Quadruple) -> bool:
    return (
        pred.group == gold.group
        and pred.hateful == gold.hateful
        and _exceeds_half(pred.target, gold.target)
        and _exceeds_half(pred.argument, gold.argument)
    )


MatchFn = Callable[[Quadruple, Quadruple], bool]
Matcher = Callable[[Sequence[Quadruple], Sequence[Quadruple], MatchFn], int]


def greedy_match(preds: Sequence[Quadruple], golds: Sequence[Quadruple], match: MatchFn) -> int:
    """Each prediction, in order, claims the first unclaimed gold it matches."""
    claimed = [False] * len(golds)
    hits = 0
    for p in preds:
        for j, g in enumerate(golds):
            if not claimed[j] and match(p, g):
                claimed[j] = True
                hits += 1
                break
    return hits


def exact_first_greedy_match(
    preds: Sequence[Quadruple], golds: Sequence[Quadruple], match: MatchFn
) -> int:
    """Greedy matching that first pairs up identical quadruples.

    Plain greedy can let a fuzzy pair steal the gold an exact duplicate needed,
    which would let the soft count fall below the hard count. Pairing identical
    quadruples first (itself a maximum matching for equality) and then running
    greedy over the leftovers keeps every hard hit a soft hit.
    """
    claimed = [False] * len(golds)
    used = [False] * len(preds)
    hits = 0
    for i, p in enumerate(preds):
        for j, g in enumerate(golds):
            if not claimed[j] and p == g and match(p, g):
                claimed[j] = used[i] = True
                hits += 1
                break
    for i, p in enumerate(preds):
        if used[i]:
            continue
        for j, g in enumerate(golds):
            if not claimed[j] and match(p, g):
                claimed[j] = True
                hits += 1
                break
    return hits


def max_bipartite_match(
    preds: Sequence[Quadruple], golds: Sequence[Quadruple], match: MatchFn
) -> int:
    """Size of a maximum one-to-one matching (augmenting paths)."""
    adj = [[j for j, g in enumerate(golds) if match(p, g)] for p in preds]
    owner: list[int | None] = [None] * len(golds)

    def augment(i: int, seen: set[int]) -> bool:
        for j in adj[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] is None or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(preds)))


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, predicted: int, gold: int) -> "PRF":
        p = correct / predicted if predicted else 0.0
        r = correct / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1)


@dataclass(frozen=True)
class ScoreReport:
    hard: PRF
    soft: PRF
    average_score: float
    predicted_total: int
    gold_total: int
    hard_correct: int
    soft_correct: int

    def summary(self) -> str:
        return f"hard={self.hard.f1:.4f} soft={self.soft.f1:.4f} avg={self.average_score:.4f}"

    def to_dict(self) -> dict:
        return {
            "hard": asdict(self.hard),
            "soft": asdict(self.soft),
            "average_score": self.average_score,
            "counts": {
                "predicted_total": self.predicted_total,
                "gold_total": self.gold_total,
                "hard_correct": self.hard_correct,
                "soft_correct": self.soft_correct,
            },
        }


class DuplicateSampleError(ValueError):
    pass


class CorpusFormatError(ValueError):
    """A JSON Lines corpus file is unreadable."""


def _index(samples: Iterable[SampleExtraction], what: str) -> dict[str, list[Quadruple]]:
    out: dict[str, list[Quadruple]] = {}
    for s in samples:
        if s.sample_id in out:
            raise DuplicateSampleError(f"duplicate sample id {s.sample_id!r} in {what}")
        out[s.sample_id] = list(s.quads)
    return out


def score(
    preds: Iterable[SampleExtraction],
    golds: Iterable[SampleExtraction],
    matcher: Matcher = exact_first_greedy_match,
) -> ScoreReport:
    """Micro-averaged hard and soft precision/recall/F1 over a corpus.

    Gold samples without a prediction count as empty predictions; predictions
    for ids absent from the gold set count as false positives.
    """
    pred_map = _index(preds, "predictions")
    gold_map = _index(golds, "gold")
    n_pred = n_gold = hard = soft = 0
    for sid in sorted(set(pred_map) | set(gold_map)):
        p = pred_map.get(sid, [])
        g = gold_map.get(sid, [])
        n_pred += len(p)
        n_gold += len(g)
        hard += matcher(p, g, hard_match)
        soft += matcher(p, g, soft_match)
    hard_prf = PRF.from_counts(hard, n_pred, n_gold)
    soft_prf = PRF.from_counts(soft, n_pred, n_gold)
    return ScoreReport(
        hard=hard_prf,
        soft=soft_prf,
        average_score=(hard_prf.f1 + soft_prf.f1) / 2,
        predicted_total=n_pred,
        gold_total=n_gold,
        hard_correct=hard,
        soft_correct=soft,
    )


def read_jsonl(path: str | os.PathLike) -> list[SampleExtraction]:
    """Read ``{"id": ..., "output": ...}`` lines into parsed samples."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                raise CorpusFormatError(f"{path}:{lineno}: expected an object with a string 'id'")
            output = obj.get("output", "")
            if not isinstance(output, str):
                raise CorpusFormatError(f"{path}:{lineno}: 'output' must be a string")
            sample = SampleExtraction.from_raw(obj["id"], output)
            for w in sample.warnings:
                log.warning("%s:%d (%s): %s", path, lineno, sample.sample_id, w)
            samples.append(sample)
    return samples
