"""Deterministic synthetic data for demos and self-contained verification.

Real detection and annotation archives are large external downloads; the
generators here produce small stand-ins with the same shapes and invariants
so the full pipeline can be exercised hermetically. The category tables
reproduce the exact cardinality profile of the standard 600-composition
benchmark (80 objects x 117 verbs) so that split construction can be checked
against its published sizes without shipping the dataset itself.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import (
    EMBED_DIM,
    ClipFixture,
    DetectionFixture,
    EmbeddingTable,
    HOITable,
    ImageAnnotation,
    save_annotations,
    save_clip_fixture,
    save_detection_fixture,
    save_embedding_table,
)

NUM_OBJECTS = 80
NUM_VERBS = 117
NUM_COMPOSITIONS = 600
NUM_RARE = 138


def _cycled_table(degrees: list[tuple[int, int]], component: str) -> HOITable:
    """Compositions from (id, degree) blocks, cycling the other component."""
    pairs: list[tuple[int, int]] = []
    cursor = 0
    for ident, degree in degrees:
        for _ in range(degree):
            if component == "object":
                pairs.append((ident, cursor % NUM_VERBS))
            else:
                pairs.append((cursor % NUM_OBJECTS, ident))
            cursor += 1
    return HOITable(pairs)


def benchmark_counts(seed: int = 7) -> dict[int, int]:
    """Per-category instance counts with exactly NUM_RARE below ten."""
    rng = np.random.default_rng(seed)
    rare_ids = set(rng.choice(NUM_COMPOSITIONS, size=NUM_RARE, replace=False).tolist())
    return {
        i: (1 + i % 9) if i in rare_ids else (10 + i % 90)
        for i in range(NUM_COMPOSITIONS)
    }


def benchmark_object_table() -> tuple[HOITable, list[int], dict[int, int]]:
    """Table whose object degrees match the benchmark's object-split profile.

    The twelve withheld objects jointly cover 100 compositions
    (4 objects x 9 + 8 x 8); the other 68 cover 500 (24 x 8 + 44 x 7).
    Returns (table, withheld object ids, per-category counts).
    """
    degrees = (
        [(o, 9) for o in range(4)]
        + [(o, 8) for o in range(4, 12)]
        + [(o, 8) for o in range(12, 36)]
        + [(o, 7) for o in range(36, 80)]
    )
    table = _cycled_table(degrees, "object")
    assert len(table) == NUM_COMPOSITIONS
    return table, list(range(12)), benchmark_counts()


def benchmark_verb_table() -> tuple[HOITable, list[int], dict[int, int]]:
    """Table whose verb degrees match the benchmark's verb-split profile.

    The twenty withheld verbs jointly cover 84 compositions
    (4 verbs x 5 + 16 x 4); the other 97 cover 516 (31 x 6 + 66 x 5).
    Returns (table, withheld verb ids, per-category counts).
    """
    degrees = (
        [(v, 5) for v in range(4)]
        + [(v, 4) for v in range(4, 20)]
        + [(v, 6) for v in range(20, 51)]
        + [(v, 5) for v in range(51, 117)]
    )
    table = _cycled_table(degrees, "verb")
    assert len(table) == NUM_COMPOSITIONS
    return table, list(range(20)), benchmark_counts()


# ---------------------------------------------------------------------------
# full dataset trees


def make_synthetic_dataset(
    root,
    num_images: int = 20,
    num_objects: int = 3,
    num_verbs: int = 5,
    seed: int = 0,
    d: int = EMBED_DIM,
    grid: tuple[int, int] = (4, 4),
    num_patches: int = 9,
) -> HOITable:
    """Writes a small consistent dataset tree and returns its category table.

    Each image holds one person (class 0) and one or two target objects,
    every person-target pair carries exactly one ground-truth verb, and the
    annotation boxes equal the detection boxes so label assignment matches
    at full overlap. The category table is the full cross of non-person
    objects with all verbs. Everything is derived from ``seed``.
    """
    root = Path(root)
    (root / "detections").mkdir(parents=True, exist_ok=True)
    (root / "clip").mkdir(exist_ok=True)
    (root / "tables").mkdir(exist_ok=True)

    table = HOITable([(o, v) for o in range(1, num_objects) for v in range(num_verbs)])
    table.save(root / "hoi_table.json")

    master = np.random.default_rng(seed)
    object_rows = master.normal(size=(num_objects, d))
    verb_rows = master.normal(size=(num_verbs, d))
    hoi_rows = np.stack([object_rows[o] + verb_rows[v] for o, v in table.pairs])
    save_embedding_table(
        root / "tables" / "objects.isaf",
        EmbeddingTable("objects", [f"object {i}" for i in range(num_objects)], object_rows),
    )
    save_embedding_table(
        root / "tables" / "verbs.isaf",
        EmbeddingTable("verbs", [f"verb {i}" for i in range(num_verbs)], verb_rows),
    )
    save_embedding_table(
        root / "tables" / "hois.isaf",
        EmbeddingTable("hois", [f"composition {i}" for i in range(len(table))], hoi_rows),
    )

    width, height = 64, 64
    annotations = []
    for idx in range(num_images):
        rng = np.random.default_rng([seed, idx])
        image_id = f"img{idx:03d}"
        num_targets = 1 + idx % 2

        def rand_box():
            x1 = float(rng.integers(0, 40))
            y1 = float(rng.integers(0, 40))
            return np.array([x1, y1, x1 + float(rng.integers(12, 24)), y1 + float(rng.integers(12, 24))])

        boxes = np.stack([rand_box() for _ in range(1 + num_targets)])
        labels = np.array([0] + [1 + (idx + t) % (num_objects - 1) for t in range(num_targets)])
        scores = np.array([0.9] + [0.95 - 0.1 * t for t in range(num_targets)])
        det = DetectionFixture(
            image_id=image_id,
            image_size=(width, height),
            boxes=boxes,
            labels=labels,
            scores=scores,
            appearance=rng.normal(size=(1 + num_targets, d)),
            feature_map=rng.normal(size=(grid[0] * grid[1], d)),
            grid=grid,
        )
        save_detection_fixture(root / "detections" / f"{image_id}.isaf", det)
        save_clip_fixture(
            root / "clip" / f"{image_id}.isaf",
            ClipFixture(image_id, rng.normal(size=(1, d)), rng.normal(size=(num_patches, d))),
        )
        gt = []
        for t in range(num_targets):
            verb = (idx + t) % num_verbs
            gt.append((boxes[0].copy(), boxes[1 + t].copy(), int(labels[1 + t]), verb))
        annotations.append(ImageAnnotation(image_id, gt))

    save_annotations(root / "annotations.jsonl", annotations)
    return table
