"""Conflict causes and their recipes.

Every built-in structure exposes ``classify(conflict)`` returning a
:class:`Classification`.  Recipe strings are the fixed catalog below; a
classification may add parameter hints (e.g. the current bucket count).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass


class ConflictCause(enum.Enum):
    VEC_SAME_ELEMENT = "VEC_SAME_ELEMENT"
    ALLOC_POOL_EXHAUSTED_STEAL = "ALLOC_POOL_EXHAUSTED_STEAL"
    ALLOC_SAME_ALLOCATED_LIST = "ALLOC_SAME_ALLOCATED_LIST"
    MAP_SAME_KEY = "MAP_SAME_KEY"
    MAP_SAME_BUCKET = "MAP_SAME_BUCKET"
    DOBJ_STALENESS_EXCEEDED = "DOBJ_STALENESS_EXCEEDED"
    UNCLASSIFIED = "UNCLASSIFIED"


DESCRIPTIONS = {
    ConflictCause.VEC_SAME_ELEMENT: "concurrent read-write or write-write on one vector element",
    ConflictCause.ALLOC_POOL_EXHAUSTED_STEAL: "a local pool ran dry and allocation contended on another worker's pool",
    ConflictCause.ALLOC_SAME_ALLOCATED_LIST: "two resources sit on the same allocated list",
    ConflictCause.MAP_SAME_KEY: "concurrent access to the same key",
    ConflictCause.MAP_SAME_BUCKET: "distinct keys hashed to the same bucket",
    ConflictCause.DOBJ_STALENESS_EXCEEDED: "cached value too stale, read merged every portion",
    ConflictCause.UNCLASSIFIED: "conflict outside the built-in data structures",
}

RECIPES: dict[ConflictCause, tuple[str, ...]] = {
    ConflictCause.VEC_SAME_ELEMENT: ("Replace contended elements with distributed objects.",),
    ConflictCause.ALLOC_POOL_EXHAUSTED_STEAL: ("Overprovision resource.",),
    ConflictCause.ALLOC_SAME_ALLOCATED_LIST: ("Reduce refresh interval.",),
    ConflictCause.MAP_SAME_KEY: ("Use distributed objects.",),
    ConflictCause.MAP_SAME_BUCKET: ("Increase map size or change hash func.",),
    ConflictCause.DOBJ_STALENESS_EXCEEDED: ("Increase maximal allowed staleness.",),
    ConflictCause.UNCLASSIFIED: ("Replace contended elements with distributed objects.",),
}


@dataclass(frozen=True)
class Classification:
    cause: ConflictCause
    recipes: tuple[str, ...]
    hints: tuple[str, ...] = ()


def classification(cause: ConflictCause, *hints: str) -> Classification:
    return Classification(cause, RECIPES[cause], tuple(hints))


UNCLASSIFIED = classification(ConflictCause.UNCLASSIFIED)
