"""Corpus- and sample-level metrics used in reviews, and the rerank aggregate."""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .record import ExperimentResult

_PUNCT = str.maketrans("", "", string.punctuation)

HIST_BUCKETS = 10


class MetricError(ValueError):
    pass


def words(text: str) -> list[str]:
    """Lowercase whitespace tokens with ASCII punctuation removed; empty tokens dropped."""
    out = []
    for tok in text.lower().split():
        tok = tok.translate(_PUNCT)
        if tok:
            out.append(tok)
    return out


def load_wordlist(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def _bundled(name: str) -> frozenset[str]:
    text = (resources.files("labloop") / "data" / name).read_text(encoding="utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class Lexicon:
    stopwords: frozenset[str]
    positive: frozenset[str]
    negative: frozenset[str]

    @classmethod
    def from_files(cls, stopwords: str | Path, positive: str | Path, negative: str | Path) -> "Lexicon":
        return cls(load_wordlist(stopwords), load_wordlist(positive), load_wordlist(negative))


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return Lexicon(_bundled("stopwords.txt"), _bundled("positive.txt"), _bundled("negative.txt"))


@dataclass(frozen=True)
class Sample:
    id: str
    instruction: str
    response: str
    rating: float | None = None


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    min: float
    max: float
    histogram: tuple[int, ...]
    edges: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "histogram": list(self.histogram),
            "edges": list(self.edges),
        }


def summarize(values: Sequence[float], buckets: int = HIST_BUCKETS) -> Summary:
    if not values:
        raise MetricError("cannot summarize an empty set")
    lo, hi = min(values), max(values)
    counts = [0] * (buckets if hi > lo else 1)
    for v in values:
        idx = 0 if hi == lo else min(int((v - lo) / (hi - lo) * buckets), buckets - 1)
        counts[idx] += 1
    return Summary(len(values), math.fsum(values) / len(values), lo, hi, tuple(counts), (lo, hi))


@dataclass(frozen=True)
class CorpusStats:
    metrics: Mapping[str, Summary]

    def __getitem__(self, name: str) -> Summary:
        return self.metrics[name]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in sorted(self.metrics.items())}


def length_stats(samples: Sequence[Sample]) -> CorpusStats:
    if not samples:
        raise MetricError("length_stats needs at least one record")
    chars = [float(len(s.response)) for s in samples]
    counts = [float(len(s.response.split())) for s in samples]
    return CorpusStats({"chars": summarize(chars), "words": summarize(counts)})


def content_words(text: str, lexicon: Lexicon | None = None) -> set[str]:
    stop = (lexicon or default_lexicon()).stopwords
    return {w for w in words(text) if w not in stop}


def keyword_overlap(instruction: str, response: str, lexicon: Lexicon | None = None) -> float:
    a = content_words(instruction, lexicon)
    b = content_words(response, lexicon)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def sentiment_score(text: str, lexicon: Lexicon | None = None) -> float:
    lex = lexicon or default_lexicon()
    toks = words(text)
    pos = sum(1 for t in toks if t in lex.positive)
    neg = sum(1 for t in toks if t in lex.negative)
    return (pos - neg) / (pos + neg + 1)


def extremal_samples(samples: Sequence[Sample], k: int) -> dict[str, list[str]]:
    """Top-k and bottom-k ids by rating; ties go to the smaller id."""
    if k < 0 or k > len(samples):
        raise MetricError(f"k={k} outside [0, {len(samples)}]")
    if any(s.rating is None for s in samples):
        raise MetricError("every record needs a rating")
    best = sorted(samples, key=lambda s: (-s.rating, s.id))
    worst = sorted(samples, key=lambda s: (s.rating, s.id))
    return {"best": [s.id for s in best[:k]], "worst": [s.id for s in worst[:k]]}


def rerank_score(result: ExperimentResult) -> float:
    """Mean of the validation-split scores, lower-is-better ones negated. Test scores are never read."""
    vals = [s.value if s.higher_is_better else -s.value for s in result.scores("validation").values()]
    if not vals:
        raise MetricError("rerank needs at least one validation score")
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class MetricSpec:
    name: str
    level: str
    source: str = "builtin"
    code_fragment: str | None = None
    active: bool = True

    def __post_init__(self) -> None:
        if self.level not in ("corpus", "sample"):
            raise MetricError(f"metric {self.name!r}: level must be corpus or sample")
        if self.source == "builtin":
            if self.name not in BUILTIN_METRICS:
                raise MetricError(f"{self.name!r} is not a builtin metric")
        elif self.source == "agent_generated":
            if not self.code_fragment:
                raise MetricError(f"agent metric {self.name!r} needs a code fragment")
        else:
            raise MetricError(f"unknown metric source {self.source!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "level": self.level,
            "source": self.source,
            "code_fragment": self.code_fragment,
            "active": self.active,
        }


BUILTIN_METRICS: dict[str, str] = {
    "length": "corpus",
    "keyword_overlap": "sample",
    "sentiment": "sample",
    "extremal_samples": "sample",
}


def builtin_spec(name: str) -> MetricSpec:
    return MetricSpec(name, BUILTIN_METRICS[name])


def corpus_metrics(
    samples: Sequence[Sample],
    names: Iterable[str] = tuple(BUILTIN_METRICS),
    k: int = 3,
    lexicon: Lexicon | None = None,
) -> dict[str, Any]:
    """JSON-ready payloads for the requested builtin metrics."""
    out: dict[str, Any] = {}
    for name in names:
        if name == "length":
            out[name] = length_stats(samples).to_dict()
        elif name == "keyword_overlap":
            out[name] = summarize([keyword_overlap(s.instruction, s.response, lexicon) for s in samples]).to_dict()
        elif name == "sentiment":
            out[name] = summarize([sentiment_score(s.response, lexicon) for s in samples]).to_dict()
        elif name == "extremal_samples":
            out[name] = extremal_samples(samples, min(k, len(samples)))
        else:
            raise MetricError(f"unknown builtin metric {name!r}")
    return out
