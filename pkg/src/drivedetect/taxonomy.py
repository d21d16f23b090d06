"""Behavior class taxonomy.

Twelve-way per-frame labeling: id 0 is background (no annotated behavior),
ids 1-11 are the tactical maneuver classes in fixed order. The mapping is
bijective and frozen at import time.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BehaviorClass:
    id: int
    name: str


BACKGROUND_ID = 0
NUM_CLASSES = 12

_FOREGROUND_NAMES = (
    "left lane change",
    "right lane change",
    "railroad passing",
    "left lane branch",
    "right lane branch",
    "left turn",
    "right turn",
    "U-turn",
    "intersection passing",
    "crosswalk passing",
    "merge",
)

TAXONOMY: tuple[BehaviorClass, ...] = (
    BehaviorClass(BACKGROUND_ID, "background"),
) + tuple(BehaviorClass(i + 1, name) for i, name in enumerate(_FOREGROUND_NAMES))

FOREGROUND_IDS: tuple[int, ...] = tuple(c.id for c in TAXONOMY[1:])

_BY_NAME = {c.name: c for c in TAXONOMY}

# Bump when the class list changes; persisted in session manifests.
TAXONOMY_VERSION = 1


def class_name(class_id: int) -> str:
    if not 0 <= class_id < NUM_CLASSES:
        raise KeyError(f"no behavior class with id {class_id}")
    return TAXONOMY[class_id].name


def class_id(name: str) -> int:
    try:
        return _BY_NAME[name].id
    except KeyError:
        raise KeyError(f"no behavior class named {name!r}") from None


def is_foreground(class_id: int) -> bool:
    return class_id != BACKGROUND_ID
