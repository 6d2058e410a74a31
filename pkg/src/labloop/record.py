"""Provenance model for a run: proposals, results, reviews, turns.

Everything a run produces is appended to ``history.jsonl`` in the run
directory. Each line is canonical JSON carrying a 64-bit rolling checksum
chained over all previous lines, so any edit is detectable on replay.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .dsl import DslDocument, canonical_dumps

LOG_NAME = "history.jsonl"
MANIFEST_NAME = "manifest.json"
GENESIS = "0" * 16

SPLITS = ("validation", "test")


class RecordError(ValueError):
    """A record violates an invariant or an append precondition."""


class LogCorruptionError(RuntimeError):
    def __init__(self, index: int, reason: str):
        self.index = index
        super().__init__(f"record {index}: {reason}")


@dataclass(frozen=True)
class BenchmarkScore:
    name: str
    value: float
    split: str
    higher_is_better: bool = True

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise RecordError(f"benchmark {self.name!r}: split must be one of {SPLITS}")
        if isinstance(self.value, bool) or not math.isfinite(self.value):
            raise RecordError(f"benchmark {self.name!r}: value must be finite")

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "split": self.split, "higher_is_better": self.higher_is_better}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BenchmarkScore":
        return cls(d["name"], float(d["value"]), d["split"], bool(d["higher_is_better"]))


@dataclass(frozen=True)
class ExperimentResult:
    benchmark_scores: Mapping[str, BenchmarkScore] = field(default_factory=dict)
    metric_values: Mapping[str, Any] = field(default_factory=dict)
    artifacts: Mapping[str, Any] = field(default_factory=dict)
    logs: str = ""
    status: str = "success"
    failure_reason: str | None = None

    def __post_init__(self) -> None:
        if self.status not in ("success", "failure"):
            raise RecordError(f"unknown result status {self.status!r}")
        for name, score in self.benchmark_scores.items():
            if name != score.name:
                raise RecordError(f"benchmark key {name!r} does not match score name {score.name!r}")

    @property
    def ok(self) -> bool:
        return self.status == "success"

    @classmethod
    def failure(cls, reason: str, logs: str = "") -> "ExperimentResult":
        return cls(status="failure", failure_reason=reason, logs=logs)

    def scores(self, split: str) -> dict[str, BenchmarkScore]:
        return {n: s for n, s in self.benchmark_scores.items() if s.split == split}

    def check_complete(self, validation_names: Iterable[str]) -> None:
        if self.ok:
            missing = set(validation_names) - set(self.scores("validation"))
            if missing:
                raise RecordError(f"successful result lacks validation benchmarks {sorted(missing)}")

    def to_dict(self) -> dict:
        return {
            "benchmark_scores": {n: s.to_dict() for n, s in sorted(self.benchmark_scores.items())},
            "metric_values": dict(self.metric_values),
            "artifacts": dict(self.artifacts),
            "logs": self.logs,
            "status": self.status,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentResult":
        return cls(
            benchmark_scores={n: BenchmarkScore.from_dict(s) for n, s in d["benchmark_scores"].items()},
            metric_values=d.get("metric_values", {}),
            artifacts=d.get("artifacts", {}),
            logs=d.get("logs", ""),
            status=d["status"],
            failure_reason=d.get("failure_reason"),
        )


@dataclass(frozen=True)
class Review:
    exp_results_review: str
    proposal_review: str
    per_metric_analyses: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.exp_results_review.strip() or not self.proposal_review.strip():
            raise RecordError("a review needs both top-level texts")

    def to_dict(self) -> dict:
        return {
            "exp_results_review": self.exp_results_review,
            "proposal_review": self.proposal_review,
            "per_metric_analyses": dict(self.per_metric_analyses),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Review":
        return cls(d["exp_results_review"], d["proposal_review"], dict(d.get("per_metric_analyses", {})))


@dataclass(frozen=True)
class ExpSettings:
    baseline_turn: int = 0
    options: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"baseline_turn": self.baseline_turn, "options": dict(self.options)}


@dataclass(frozen=True)
class Proposal:
    """One turn's proposal. ``methodology_dsl`` is a raw tree until validated."""

    idea: str
    methodology_text: str
    methodology_dsl: DslDocument | Mapping[str, Any]
    exp_settings: ExpSettings
    hypothesis: str
    related_feature: str
    rebuttal: str | None = None

    @property
    def validated(self) -> bool:
        return isinstance(self.methodology_dsl, DslDocument)

    def to_dict(self) -> dict:
        dsl = self.methodology_dsl
        return {
            "idea": self.idea,
            "methodology_text": self.methodology_text,
            "methodology_dsl": dsl.to_dict() if isinstance(dsl, DslDocument) else dict(dsl),
            "dsl_validated": isinstance(dsl, DslDocument),
            "exp_settings": self.exp_settings.to_dict(),
            "hypothesis": self.hypothesis,
            "related_feature": self.related_feature,
            "rebuttal": self.rebuttal,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Proposal":
        raw = d["methodology_dsl"]
        dsl: DslDocument | Mapping[str, Any]
        if d.get("dsl_validated"):
            dsl = DslDocument(raw["topic_id"], raw["paradigm"], raw["params"], raw.get("grammar_version", 1))
        else:
            dsl = raw
        es = d["exp_settings"]
        return cls(
            d["idea"],
            d["methodology_text"],
            dsl,
            ExpSettings(es["baseline_turn"], es.get("options", {})),
            d["hypothesis"],
            d["related_feature"],
            d.get("rebuttal"),
        )


TurnKey = tuple[int, int]


@dataclass(frozen=True)
class TurnRecord:
    iteration: int
    thread: int
    result: ExperimentResult
    parent: TurnKey | None = None
    proposal: Proposal | None = None
    review: Review | None = None
    warnings: tuple[str, ...] = ()
    metric_specs: tuple[Mapping[str, Any], ...] = ()

    @property
    def key(self) -> TurnKey:
        return (self.iteration, self.thread)

    def check(self) -> None:
        i = self.iteration
        if i < 0 or self.thread < 1:
            raise RecordError(f"turn ({i}, {self.thread}): iteration must be >=0 and thread >=1")
        if (self.proposal is None) != (i == 0):
            raise RecordError(f"turn ({i}, {self.thread}): proposal must be absent exactly at iteration 0")
        if i == 0 and self.review is not None:
            raise RecordError("turn 0 carries no review")
        if i > 0 and self.result.ok and self.proposal.validated and self.review is None:
            raise RecordError(f"turn ({i}, {self.thread}): successful turn lacks a review")
        if (self.parent is None) != (i in (0, 1)):
            raise RecordError(f"turn ({i}, {self.thread}): parent must be absent exactly for iterations 0 and 1")
        if self.parent is not None and self.parent[0] != i - 1:
            raise RecordError(f"turn ({i}, {self.thread}): parent {self.parent} is not from iteration {i - 1}")
        if self.proposal is not None:
            if (self.proposal.rebuttal is None) != (i == 1):
                raise RecordError(f"turn ({i}, {self.thread}): rebuttal must be absent exactly at iteration 1")
            if not 0 <= self.proposal.exp_settings.baseline_turn < i:
                raise RecordError(f"turn ({i}, {self.thread}): baseline_turn must name an earlier turn")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "thread": self.thread,
            "parent": list(self.parent) if self.parent else None,
            "proposal": self.proposal.to_dict() if self.proposal else None,
            "result": self.result.to_dict(),
            "review": self.review.to_dict() if self.review else None,
            "warnings": list(self.warnings),
            "metric_specs": [dict(m) for m in self.metric_specs],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TurnRecord":
        return cls(
            iteration=d["iteration"],
            thread=d["thread"],
            parent=tuple(d["parent"]) if d.get("parent") else None,
            proposal=Proposal.from_dict(d["proposal"]) if d.get("proposal") else None,
            result=ExperimentResult.from_dict(d["result"]),
            review=Review.from_dict(d["review"]) if d.get("review") else None,
            warnings=tuple(d.get("warnings", ())),
            metric_specs=tuple(d.get("metric_specs", ())),
        )


@dataclass(frozen=True)
class HistoryView:
    """The history a thread sees at iteration ``iteration``: turn 0 plus its own ancestors."""

    iteration: int
    thread: int
    turn_zero: TurnRecord
    turns: tuple[TurnRecord, ...]

    @property
    def proposals(self) -> list[Proposal]:
        return [t.proposal for t in self.turns if t.proposal is not None]

    @property
    def reviews(self) -> list[Review]:
        return [t.review for t in self.turns if t.review is not None]

    @property
    def last(self) -> TurnRecord:
        return self.turns[-1] if self.turns else self.turn_zero


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    data: Mapping[str, Any]
    checksum: str


def _checksum(prev: str, body: str) -> str:
    return hashlib.sha256((prev + body).encode("ascii")).hexdigest()[:16]


def _body(seq: int, kind: str, data: Mapping[str, Any]) -> str:
    return canonical_dumps({"seq": seq, "kind": kind, "data": data})


def _line(seq: int, kind: str, data: Mapping[str, Any], checksum: str) -> str:
    return canonical_dumps({"seq": seq, "kind": kind, "data": data, "checksum": checksum})


def write_canonical(path: Path, obj: Any) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_dumps(obj) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class RunState:
    """Everything reconstructed from a log."""

    events: list[Event]
    turns: dict[TurnKey, TurnRecord]
    digest: str

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]


def read_log(path: str | Path) -> RunState:
    """Parse and verify a history log. Raises :class:`LogCorruptionError`."""
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    events: list[Event] = []
    turns: dict[TurnKey, TurnRecord] = {}
    if raw and not raw.endswith(b"\n"):
        # a torn final write is the only legitimate way to get here
        raise LogCorruptionError(raw.count(b"\n"), "log does not end with a newline")
    prev = GENESIS
    for index, line in enumerate(raw.split(b"\n")[:-1] if raw else []):
        try:
            text = line.decode("ascii")
            obj = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LogCorruptionError(index, f"unreadable line ({exc})") from None
        if not isinstance(obj, dict) or set(obj) != {"seq", "kind", "data", "checksum"}:
            raise LogCorruptionError(index, "unexpected record shape")
        if canonical_dumps(obj) != text:
            raise LogCorruptionError(index, "record is not in canonical form")
        if obj["seq"] != index + 1:
            raise LogCorruptionError(index, f"sequence number {obj['seq']} out of order")
        expected = _checksum(prev, _body(obj["seq"], obj["kind"], obj["data"]))
        if obj["checksum"] != expected:
            raise LogCorruptionError(index, "checksum mismatch")
        prev = expected
        ev = Event(obj["seq"], obj["kind"], obj["data"], obj["checksum"])
        events.append(ev)
        if ev.kind == "turn":
            try:
                rec = TurnRecord.from_dict(ev.data)
            except (KeyError, TypeError, ValueError) as exc:
                raise LogCorruptionError(index, f"malformed turn record ({exc})") from None
            turns[rec.key] = rec
    return RunState(events, turns, digest)


class RunStore:
    """Append-only event log for one run directory.

    Appends from different lineages may come from different threads; the
    store serializes them internally. Records are never rewritten.
    """

    def __init__(self, run_dir: str | Path, *, _state: RunState | None = None):
        self.run_dir = Path(run_dir)
        self.log_path = self.run_dir / LOG_NAME
        self._lock = threading.Lock()
        state = _state or RunState([], {}, hashlib.sha256(b"").hexdigest())
        self._events: list[Event] = list(state.events)
        self._turns: dict[TurnKey, TurnRecord] = dict(state.turns)
        self._hasher = hashlib.sha256()
        if self.log_path.exists():
            self._hasher.update(self.log_path.read_bytes())

    @classmethod
    def create(cls, run_dir: str | Path, manifest: Mapping[str, Any]) -> "RunStore":
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        log = run_dir / LOG_NAME
        if log.exists() and log.stat().st_size:
            raise RecordError(f"{log} already holds a run; open it to resume")
        log.write_bytes(b"")
        write_canonical(run_dir / MANIFEST_NAME, dict(manifest))
        return cls(run_dir)

    @classmethod
    def open(cls, run_dir: str | Path) -> "RunStore":
        run_dir = Path(run_dir)
        return cls(run_dir, _state=read_log(run_dir / LOG_NAME))

    # -- reads -------------------------------------------------------------

    @property
    def manifest(self) -> dict:
        with open(self.run_dir / MANIFEST_NAME, encoding="utf-8") as fh:
            return json.load(fh)

    def update_manifest(self, **fields: Any) -> None:
        m = self.manifest
        m.update(fields)
        write_canonical(self.run_dir / MANIFEST_NAME, m)

    @property
    def events(self) -> list[Event]:
        return list(self._events)

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self._events if e.kind == kind]

    @property
    def turns(self) -> dict[TurnKey, TurnRecord]:
        return dict(self._turns)

    def turn(self, iteration: int, thread: int) -> TurnRecord:
        try:
            return self._turns[(iteration, thread)]
        except KeyError:
            raise RecordError(f"unknown turn ({iteration}, {thread})") from None

    def has_turn(self, iteration: int, thread: int) -> bool:
        return (iteration, thread) in self._turns

    def turn_zero(self) -> TurnRecord:
        for (i, _), rec in sorted(self._turns.items()):
            if i == 0:
                return rec
        raise RecordError("turn 0 has not been recorded")

    def digest(self) -> str:
        with self._lock:
            return self._hasher.copy().hexdigest()

    def lineage(self, iteration: int, thread: int) -> list[TurnRecord]:
        """Turn 0 followed by every ancestor of (iteration, thread), ending with it."""
        chain = []
        rec: TurnRecord | None = self.turn(iteration, thread)
        while rec is not None:
            chain.append(rec)
            if rec.iteration == 0:
                break
            if rec.parent is not None:
                rec = self.turn(*rec.parent)
            else:
                rec = self.turn_zero()
        return list(reversed(chain))

    def view_for(self, iteration: int, parent: TurnKey | None) -> HistoryView:
        """History for a not-yet-recorded turn at ``iteration`` descending from ``parent``."""
        t0 = self.turn_zero()
        if iteration <= 1 or parent is None:
            return HistoryView(iteration, 0, t0, ())
        chain = self.lineage(*parent)[1:]
        return HistoryView(iteration, 0, t0, tuple(chain))

    # -- writes ------------------------------------------------------------

    def _append(self, kind: str, data: Mapping[str, Any]) -> int:
        seq = len(self._events) + 1
        prev = self._events[-1].checksum if self._events else GENESIS
        checksum = _checksum(prev, _body(seq, kind, data))
        line = (_line(seq, kind, data, checksum) + "\n").encode("ascii")
        with open(self.log_path, "ab") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        self._hasher.update(line)
        self._events.append(Event(seq, kind, data, checksum))
        return seq

    def append_event(self, kind: str, data: Mapping[str, Any]) -> int:
        if kind == "turn":
            raise RecordError("use append_turn for turn records")
        with self._lock:
            return self._append(kind, json.loads(canonical_dumps(data)))

    def append_turn(self, record: TurnRecord) -> int:
        record.check()
        with self._lock:
            if record.key in self._turns:
                raise RecordError(f"duplicate turn {record.key}")
            i = record.iteration
            if i == 0:
                if any(k[0] == 0 for k in self._turns):
                    raise RecordError("turn 0 is already recorded")
            elif i == 1:
                if not any(k[0] == 0 for k in self._turns):
                    raise RecordError("gap: turn 0 must be recorded before iteration 1")
            elif record.parent not in self._turns:
                raise RecordError(f"gap: predecessor {record.parent} of turn {record.key} is not recorded")
            seq = self._append("turn", json.loads(canonical_dumps(record.to_dict())))
            # keep the decoded form so in-memory state equals a replayed state
            self._turns[record.key] = TurnRecord.from_dict(self._events[-1].data)
            return seq

    def state(self) -> RunState:
        with self._lock:
            return RunState(list(self._events), dict(self._turns), self._hasher.copy().hexdigest())


def history_view(store: RunStore, iteration: int, thread: int) -> HistoryView:
    """What turn (iteration, thread) was shown: turn 0 plus its own ancestors 1..i-1."""
    rec = store.turn(iteration, thread)
    chain = store.lineage(rec.iteration, rec.thread)
    prior = tuple(t for t in chain if 0 < t.iteration < iteration)
    return HistoryView(iteration, thread, chain[0], prior)


def replay(run_dir: str | Path, manifest: Mapping[str, Any] | None = None) -> RunState:
    """Rebuild run state from disk; checks the recorded run digest when the manifest has one."""
    run_dir = Path(run_dir)
    state = read_log(run_dir / LOG_NAME)
    manifest = manifest if manifest is not None else json.loads((run_dir / MANIFEST_NAME).read_text("utf-8"))
    recorded = manifest.get("run_digest")
    if recorded is not None and recorded != state.digest:
        raise LogCorruptionError(len(state.events), "run digest does not match the manifest")
    return state
