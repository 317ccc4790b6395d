"""Abort recording, conflict-cause classification and reports.

Recording is cheap: an event captures the conflict (both sides' op
descriptors) into the aborting worker's buffer.  Classification runs after
the run, when the report is built, by asking the structure that owns the
conflicting object.
"""
from __future__ import annotations

import collections
import json
from dataclasses import dataclass, field
from typing import Iterable

from .ds.causes import RECIPES, UNCLASSIFIED, Classification, ConflictCause
from .stm import ConflictInfo, ConflictKind, Transaction

__all__ = ["AbortEvent", "Profiler", "ProfileReport", "CallSiteRow", "CauseRow", "UnknownFormat",
           "record_abort", "classify_abort", "build_report", "render_report", "report_from_json"]


class UnknownFormat(ValueError):
    pass


@dataclass(frozen=True)
class AbortEvent:
    tx_id: int
    worker: int
    site: str
    conflict: ConflictInfo
    structure: str | None = None
    params: tuple = ()


class Profiler:
    """Per-worker abort buffers.  ``enabled=False`` makes recording a no-op."""

    def __init__(self, structures: dict | None = None, enabled: bool = True):
        self.enabled = enabled
        self.structures = structures if structures is not None else {}
        self.sinks: dict[int, list[AbortEvent]] = collections.defaultdict(list)

    def bind(self, structures: dict) -> "Profiler":
        self.structures = structures
        return self

    def on_abort(self, tx: Transaction, conflict: ConflictInfo) -> None:
        if not self.enabled:
            return
        op = conflict.this_op
        site = op.site if op is not None and op.site else (tx.site or "?")
        name = conflict.oid[0] if conflict.oid is not None else None
        record_abort(self.sinks[tx.worker], AbortEvent(tx.id, tx.worker, site, conflict, name))

    def events(self) -> list[AbortEvent]:
        return [e for w in sorted(self.sinks) for e in self.sinks[w]]

    @property
    def total_aborts(self) -> int:
        return sum(len(s) for s in self.sinks.values())


def record_abort(sink: list | None, event: AbortEvent) -> None:
    if sink is not None:
        sink.append(event)


def classify_abort(event: AbortEvent, structures: dict) -> Classification:
    c = event.conflict
    if c.kind is ConflictKind.FORCED or event.structure is None:
        return UNCLASSIFIED
    owner = structures.get(event.structure)
    if owner is None:
        return UNCLASSIFIED
    return owner.classify(c)


@dataclass(frozen=True)
class CallSiteRow:
    tag: str
    count: int
    fraction: float


@dataclass(frozen=True)
class CauseRow:
    id: str
    count: int
    fraction: float
    recipes: tuple[str, ...]
    hints: tuple[str, ...] = ()


@dataclass
class ProfileReport:
    total_tx: int
    total_aborts: int
    abort_fraction: float
    call_sites: list[CallSiteRow] = field(default_factory=list)
    causes: list[CauseRow] = field(default_factory=list)

    def cause(self, cause: ConflictCause | str) -> CauseRow | None:
        cid = cause.value if isinstance(cause, ConflictCause) else cause
        for row in self.causes:
            if row.id == cid:
                return row
        return None

    def cause_fraction(self, cause: ConflictCause | str) -> float:
        row = self.cause(cause)
        return row.fraction if row else 0.0

    def classified_fraction(self, cause: ConflictCause | str) -> float:
        """Share of ``cause`` among aborts with a known (non-UNCLASSIFIED) cause."""
        classified = sum(r.count for r in self.causes if r.id != ConflictCause.UNCLASSIFIED.value)
        row = self.cause(cause)
        return row.count / classified if row and classified else 0.0

    @property
    def top_cause(self) -> str | None:
        return self.causes[0].id if self.causes else None

    def to_dict(self) -> dict:
        return {
            "total_tx": self.total_tx,
            "total_aborts": self.total_aborts,
            "abort_fraction": self.abort_fraction,
            "call_sites": [{"tag": r.tag, "count": r.count, "fraction": r.fraction} for r in self.call_sites],
            "causes": [{"id": r.id, "count": r.count, "fraction": r.fraction, "recipes": list(r.recipes),
                        **({"hints": list(r.hints)} if r.hints else {})} for r in self.causes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileReport":
        return cls(d["total_tx"], d["total_aborts"], d["abort_fraction"],
                   [CallSiteRow(r["tag"], r["count"], r["fraction"]) for r in d["call_sites"]],
                   [CauseRow(r["id"], r["count"], r["fraction"], tuple(r["recipes"]), tuple(r.get("hints", ())))
                    for r in d["causes"]])


def build_report(sinks: Profiler | Iterable[Iterable[AbortEvent]], total_commits: int,
                 structures: dict | None = None) -> ProfileReport:
    """Merge buffers, classify every event and rank sites and causes by count.

    ``total_commits`` counts committed transactions; the abort fraction is
    aborts over all attempts (commits plus aborts).
    """
    if isinstance(sinks, Profiler):
        structures = sinks.structures if structures is None else structures
        events = sinks.events()
    else:
        events = [e for sink in sinks for e in sink]
    structures = structures or {}
    n = len(events)
    attempts = total_commits + n
    sites = collections.Counter(e.site for e in events)
    causes: collections.Counter = collections.Counter()
    hints: dict[ConflictCause, list[str]] = {}
    for e in events:
        c = classify_abort(e, structures)
        causes[c.cause] += 1
        seen = hints.setdefault(c.cause, [])
        for h in c.hints:
            if h not in seen and len(seen) < 3:
                seen.append(h)
    rank = lambda kv: (-kv[1], str(kv[0]))
    report = ProfileReport(
        total_tx=attempts, total_aborts=n, abort_fraction=n / attempts if attempts else 0.0,
        call_sites=[CallSiteRow(tag, k, k / n) for tag, k in sorted(sites.items(), key=rank)],
        causes=[CauseRow(c.value, k, k / n, RECIPES[c], tuple(hints.get(c, ())))
                for c, k in sorted(causes.items(), key=lambda kv: (-kv[1], kv[0].value))])
    return report


def _text(report: ProfileReport) -> str:
    lines = [f"{report.total_aborts} aborts in {report.total_tx} transactions "
             f"({100 * report.abort_fraction:.1f}% of transactions abort)"]
    if report.call_sites:
        lines.append("")
        lines.append("aborts by call site:")
        for r in report.call_sites:
            lines.append(f"  {100 * r.fraction:6.1f}%  {r.count:8d}  {r.tag}")
    if report.causes:
        lines.append("")
        lines.append("conflict causes:")
        for i, r in enumerate(report.causes, 1):
            lines.append(f"  ({i}) {r.id}: {r.count} aborts, {100 * r.fraction:.1f}%")
            for recipe in r.recipes:
                lines.append(f"      recipe: {recipe}")
            for h in r.hints:
                lines.append(f"      hint: {h}")
    return "\n".join(lines) + "\n"


def render_report(report: ProfileReport, fmt: str = "text") -> str:
    if fmt == "text":
        return _text(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    raise UnknownFormat(f"unknown report format {fmt!r} (text or json)")


def report_from_json(text: str) -> ProfileReport:
    return ProfileReport.from_dict(json.loads(text))
