"""Category splits for zero-shot training and evaluation.

A split partitions the interaction-category universe into seen ids (train
and evaluate) and unseen ids (evaluate only). Composed splits withhold
either whole objects, whole verbs, or individual compositions chosen by
training-set frequency under the constraint that every object and every
verb keeps at least one seen composition.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .data import HOITable, ImageAnnotation

VALID_KINDS = ("regular", "nf-uc", "rf-uc", "uo", "uv")


class SplitError(Exception):
    """A split request that cannot be honored or a malformed split file."""


@dataclass
class SplitSpec:
    """A named partition of category ids into seen and unseen."""

    kind: str
    seen: list[int]
    unseen: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise SplitError(f"unknown split kind {self.kind!r}; expected one of {VALID_KINDS}")
        self.seen = sorted(int(i) for i in self.seen)
        self.unseen = sorted(int(i) for i in self.unseen)
        if any(i < 0 for i in self.seen + self.unseen):
            raise SplitError("category ids must be non-negative")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise SplitError(f"seen and unseen overlap: {sorted(overlap)[:5]}")

    def save(self, path) -> None:
        payload = {"kind": self.kind, "seen": self.seen, "unseen": self.unseen}
        Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        raw = json.loads(Path(path).read_text())
        missing = {"kind", "seen", "unseen"} - set(raw)
        if missing:
            raise SplitError(f"{path}: missing fields {sorted(missing)}")
        return cls(kind=raw["kind"], seen=raw["seen"], unseen=raw["unseen"])


def hoi_counts(annotations: list[ImageAnnotation], table: HOITable) -> dict[int, int]:
    """Ground-truth instances per category id across a set of images."""
    counts: Counter[int] = Counter()
    for ann in annotations:
        for _, _, obj, verb in ann.gt:
            hid = table.hoi_id(obj, verb)
            if hid is None:
                raise SplitError(
                    f"image {ann.image_id}: composition ({obj}, {verb}) not in the category table"
                )
            counts[hid] += 1
    return dict(counts)


def rare_split(
    counts: dict[int, int], num_categories: int, threshold: int = 10
) -> tuple[list[int], list[int]]:
    """Categories with strictly fewer than ``threshold`` training instances.

    Ids absent from ``counts`` count as zero. Returns (rare, non-rare).
    """
    rare = [i for i in range(num_categories) if counts.get(i, 0) < threshold]
    nonrare = [i for i in range(num_categories) if counts.get(i, 0) >= threshold]
    return rare, nonrare


def make_regular(table: HOITable) -> SplitSpec:
    return SplitSpec(kind="regular", seen=list(range(len(table))))


def make_uc(
    table: HOITable,
    counts: dict[int, int],
    flavor: str,
    target: int = 120,
) -> SplitSpec:
    """Withhold ``target`` compositions, picked by training frequency.

    ``flavor`` "nf" walks from the most frequent composition downward,
    "rf" from the least frequent upward; equal counts break by ascending
    id. A candidate is skipped (and the walk continues) whenever taking it
    would leave its object or its verb with no seen composition.
    """
    if flavor not in ("nf", "rf"):
        raise SplitError(f"unknown flavor {flavor!r}; expected 'nf' or 'rf'")
    if not 0 <= target <= len(table):
        raise SplitError(f"cannot withhold {target} of {len(table)} categories")
    sign = -1 if flavor == "nf" else 1
    order = sorted(range(len(table)), key=lambda i: (sign * counts.get(i, 0), i))
    remaining_obj = Counter(o for o, _ in table.pairs)
    remaining_verb = Counter(v for _, v in table.pairs)
    unseen: list[int] = []
    for i in order:
        if len(unseen) == target:
            break
        obj, verb = table.pairs[i]
        if remaining_obj[obj] <= 1 or remaining_verb[verb] <= 1:
            continue
        unseen.append(i)
        remaining_obj[obj] -= 1
        remaining_verb[verb] -= 1
    if len(unseen) < target:
        raise SplitError(
            f"only {len(unseen)} of {target} compositions can be withheld "
            "without stranding an object or verb"
        )
    unseen_set = set(unseen)
    seen = [i for i in range(len(table)) if i not in unseen_set]
    return SplitSpec(kind=f"{flavor}-uc", seen=seen, unseen=unseen)


def _make_by_component(
    table: HOITable,
    kind: str,
    component: int,
    withheld: list[int],
    expect: tuple[int, int] | None,
) -> SplitSpec:
    withheld_set = set(int(x) for x in withheld)
    unseen = [i for i, pair in enumerate(table.pairs) if pair[component] in withheld_set]
    seen = [i for i, pair in enumerate(table.pairs) if pair[component] not in withheld_set]
    if not unseen:
        raise SplitError(f"{kind}: no category uses the withheld ids")
    if expect is not None and (len(unseen), len(seen)) != tuple(expect):
        raise SplitError(
            f"{kind}: got {len(unseen)} unseen / {len(seen)} seen, expected {expect}"
        )
    return SplitSpec(kind=kind, seen=seen, unseen=unseen)


def make_uo(
    table: HOITable, unseen_objects: list[int], expect: tuple[int, int] | None = None
) -> SplitSpec:
    """Withhold every composition whose object is in ``unseen_objects``."""
    return _make_by_component(table, "uo", 0, unseen_objects, expect)


def make_uv(
    table: HOITable, unseen_verbs: list[int], expect: tuple[int, int] | None = None
) -> SplitSpec:
    """Withhold every composition whose verb is in ``unseen_verbs``."""
    return _make_by_component(table, "uv", 1, unseen_verbs, expect)
