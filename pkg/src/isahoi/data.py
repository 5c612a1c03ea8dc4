"""Fixture types, ingestion, pair enumeration, and label assignment.

Stage-1 outputs (detections, backbone tokens) and frozen encoder outputs
(global/patch tokens, prompt tables) arrive as ISAF files; this module
turns them into human-object pair proposals with appearance, spatial, and
ROI features, and assigns masked binary verb labels against ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .isaf import DimensionMismatchError, FixtureError, read_isaf, write_isaf

EMBED_DIM = 512
SPATIAL_RAW_DIM = 36


# ---------------------------------------------------------------------------
# fixture types


@dataclass
class DetectionFixture:
    """Per-image stage-1 outputs: instances plus the backbone token grid."""

    image_id: str
    image_size: tuple[int, int]  # (W, H) pixels
    boxes: np.ndarray  # N x 4, (x1, y1, x2, y2)
    labels: np.ndarray  # N object-class ids
    scores: np.ndarray  # N in [0, 1]
    appearance: np.ndarray  # N x d
    feature_map: np.ndarray  # (H_g * W_g) x d
    grid: tuple[int, int]  # (H_g, W_g)

    def validate(self, dim: int | None = EMBED_DIM) -> "DetectionFixture":
        n = self.boxes.shape[0]
        if self.boxes.shape != (n, 4):
            raise FixtureError(f"boxes must be Nx4, got {self.boxes.shape}")
        if dim is None:  # accept whatever width the payload carries
            dim = self.appearance.shape[1] if self.appearance.ndim == 2 else -1
        if self.appearance.shape[1:] != (dim,) or self.feature_map.shape[1:] != (dim,):
            raise DimensionMismatchError(
                f"{self.image_id}: feature width {self.appearance.shape[1:]} / "
                f"{self.feature_map.shape[1:]}, expected {dim}"
            )
        if self.feature_map.shape[0] != self.grid[0] * self.grid[1]:
            raise FixtureError(f"{self.image_id}: feature map rows != H*W of grid {self.grid}")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise FixtureError(f"{self.image_id}: scores outside [0, 1]")
        w, h = self.image_size
        self.boxes[:, 0::2] = np.clip(self.boxes[:, 0::2], 0, w)
        self.boxes[:, 1::2] = np.clip(self.boxes[:, 1::2], 0, h)
        if np.any(self.boxes[:, 2] <= self.boxes[:, 0]) or np.any(self.boxes[:, 3] <= self.boxes[:, 1]):
            raise FixtureError(f"{self.image_id}: degenerate box after clamping")
        return self


@dataclass
class ClipFixture:
    """Frozen image-encoder outputs: one global token plus patch tokens."""

    image_id: str
    global_token: np.ndarray  # 1 x d
    patch_tokens: np.ndarray  # P x d

    def validate(self, dim: int | None = EMBED_DIM) -> "ClipFixture":
        if dim is None:
            dim = self.global_token.shape[1] if self.global_token.ndim == 2 else -1
        if self.global_token.shape != (1, dim):
            raise DimensionMismatchError(f"{self.image_id}: global token {self.global_token.shape}")
        if self.patch_tokens.ndim != 2 or self.patch_tokens.shape[1] != dim or self.patch_tokens.shape[0] < 1:
            raise DimensionMismatchError(f"{self.image_id}: patch tokens {self.patch_tokens.shape}")
        return self


@dataclass
class EmbeddingTable:
    """Named matrix of prompt embeddings, one row per prompt."""

    name: str
    prompts: list[str]
    matrix: np.ndarray  # rows x d

    def validate(self, dim: int | None = EMBED_DIM) -> "EmbeddingTable":
        if dim is None:
            dim = self.matrix.shape[1] if self.matrix.ndim == 2 else -1
        if self.matrix.ndim != 2 or self.matrix.shape[1] != dim:
            raise DimensionMismatchError(f"table '{self.name}': width {self.matrix.shape}, expected {dim}")
        if len(self.prompts) != self.matrix.shape[0]:
            raise FixtureError(f"table '{self.name}': {len(self.prompts)} prompts vs {self.matrix.shape[0]} rows")
        return self


@dataclass
class HOIPair:
    """An ordered (human, target) proposal with its fused input features."""

    human_index: int
    target_index: int
    human_box: np.ndarray  # (4,)
    target_box: np.ndarray  # (4,)
    confidence: float  # product of instance scores
    object_class: int
    appearance: np.ndarray  # 2d: human features ++ target features
    spatial_raw: np.ndarray  # raw 36-dim box-pair encoding
    roi: np.ndarray  # d: union-box ROI over the backbone grid


@dataclass
class ImageAnnotation:
    """Ground truth for one image: (human box, object box, object, verb)."""

    image_id: str
    gt: list[tuple[np.ndarray, np.ndarray, int, int]] = field(default_factory=list)


class HOITable:
    """The category universe: hoi id -> (object id, verb id)."""

    def __init__(self, pairs: list[tuple[int, int]]):
        self.pairs = [(int(o), int(v)) for o, v in pairs]
        self.by_composition = {ov: i for i, ov in enumerate(self.pairs)}
        if len(self.by_composition) != len(self.pairs):
            raise FixtureError("duplicate (object, verb) composition in HOI table")
        self.num_objects = max(o for o, _ in self.pairs) + 1
        self.num_verbs = max(v for _, v in self.pairs) + 1
        self._verbs_for_object: dict[int, set[int]] = {}
        for o, v in self.pairs:
            self._verbs_for_object.setdefault(o, set()).add(v)

    def __len__(self) -> int:
        return len(self.pairs)

    def verbs_for_object(self, object_id: int) -> set[int]:
        return self._verbs_for_object.get(object_id, set())

    def hoi_id(self, object_id: int, verb_id: int) -> int | None:
        return self.by_composition.get((object_id, verb_id))

    @classmethod
    def load(cls, path) -> "HOITable":
        raw = json.loads(Path(path).read_text())
        pairs = [None] * len(raw)
        for key, (obj, verb) in raw.items():
            pairs[int(key)] = (obj, verb)
        if any(p is None for p in pairs):
            raise FixtureError(f"{path}: HOI ids not contiguous from 0")
        return cls(pairs)

    def save(self, path) -> None:
        payload = {str(i): [o, v] for i, (o, v) in enumerate(self.pairs)}
        Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# ISAF round trips


def save_detection_fixture(path, det: DetectionFixture) -> None:
    write_isaf(
        path,
        "detection",
        {
            "boxes": det.boxes,
            "labels": det.labels.astype(np.float64),
            "scores": det.scores,
            "appearance": det.appearance,
            "feature_map": det.feature_map,
        },
        {"image_id": det.image_id, "image_size": list(det.image_size), "grid": list(det.grid)},
    )


def save_clip_fixture(path, clip: ClipFixture) -> None:
    write_isaf(
        path,
        "clip",
        {"global": clip.global_token, "patches": clip.patch_tokens},
        {"image_id": clip.image_id},
    )


def save_embedding_table(path, table: EmbeddingTable) -> None:
    write_isaf(path, "table", {"matrix": table.matrix}, {"name": table.name, "prompts": table.prompts})


def load_fixture(path, dim: int | None = EMBED_DIM):
    """Load any ISAF fixture kind, validated; returns the typed object.

    ``dim=None`` accepts whatever embedding width the file carries.
    """
    kind, tensors, meta = read_isaf(path)
    if kind == "detection":
        return DetectionFixture(
            image_id=meta["image_id"],
            image_size=tuple(meta["image_size"]),
            boxes=tensors["boxes"].copy(),
            labels=np.rint(tensors["labels"]).astype(np.int64),
            scores=tensors["scores"],
            appearance=tensors["appearance"],
            feature_map=tensors["feature_map"],
            grid=tuple(meta["grid"]),
        ).validate(dim)
    if kind == "clip":
        return ClipFixture(meta["image_id"], tensors["global"], tensors["patches"]).validate(dim)
    if kind == "table":
        return EmbeddingTable(meta["name"], list(meta["prompts"]), tensors["matrix"]).validate(dim)
    raise FixtureError(f"{path}: unknown fixture kind '{kind}'")


def load_annotations(path) -> list[ImageAnnotation]:
    """JSON-lines annotations: one image per line."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        gt = [
            (np.asarray(t[0], dtype=np.float64), np.asarray(t[1], dtype=np.float64), int(t[2]), int(t[3]))
            for t in rec.get("gt", [])
        ]
        out.append(ImageAnnotation(image_id=str(rec["image_id"]), gt=gt))
    return out


def save_annotations(path, annotations: list[ImageAnnotation]) -> None:
    with open(path, "w") as fh:
        for ann in annotations:
            rec = {
                "image_id": ann.image_id,
                "gt": [[list(map(float, h)), list(map(float, o)), int(c), int(v)] for h, o, c, v in ann.gt],
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# geometry


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return float(inter / (area_a + area_b - inter))


def box_pair_features(b_h: np.ndarray, b_o: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    """Raw 36-dim spatial encoding of a box pair.

    Layout: 6 base terms per box (center x/y, width, height, area, aspect,
    all normalized), their human-minus-object deltas, their elementwise
    products, then IoU, normalized intersection/union areas, the center
    offset with its polar form, and pairwise overlap/size ratios. Zero-area
    boxes are clamped to one pixel.
    """
    w_img = max(float(image_size[0]), 1.0)
    h_img = max(float(image_size[1]), 1.0)

    def base(b):
        w = max(b[2] - b[0], 1.0)
        h = max(b[3] - b[1], 1.0)
        return np.array(
            [
                (b[0] + b[2]) / 2.0 / w_img,
                (b[1] + b[3]) / 2.0 / h_img,
                w / w_img,
                h / h_img,
                (w * h) / (w_img * h_img),
                w / h,
            ]
        )

    t_h, t_o = base(b_h), base(b_o)
    iou = box_iou(b_h, b_o)
    ix = max(0.0, min(b_h[2], b_o[2]) - max(b_h[0], b_o[0]))
    iy = max(0.0, min(b_h[3], b_o[3]) - max(b_h[1], b_o[1]))
    inter = ix * iy
    area_h = max((b_h[2] - b_h[0]) * (b_h[3] - b_h[1]), 1.0)
    area_o = max((b_o[2] - b_o[0]) * (b_o[3] - b_o[1]), 1.0)
    union = area_h + area_o - inter
    dx = (t_o[0] - t_h[0])
    dy = (t_o[1] - t_h[1])
    tail = np.array(
        [
            iou,
            inter / (w_img * h_img),
            union / (w_img * h_img),
            dx,
            dy,
            math.hypot(dx, dy),
            math.atan2(dy, dx),
            inter / area_h,
            inter / area_o,
            area_h / area_o,
            max(b_h[2] - b_h[0], 1.0) / max(b_o[2] - b_o[0], 1.0),
            max(b_h[3] - b_h[1], 1.0) / max(b_o[3] - b_o[1], 1.0),
        ]
    )
    out = np.concatenate([t_h, t_o, t_h - t_o, t_h * t_o, tail])
    assert out.shape == (SPATIAL_RAW_DIM,)
    return out


IOU_FEATURE_INDEX = 24  # position of the IoU term inside box_pair_features


def roi_align(
    feature_map: np.ndarray,
    grid: tuple[int, int],
    box: np.ndarray,
    image_size: tuple[int, int],
    bins: int = 2,
) -> np.ndarray:
    """Average of bilinear samples at bin centers of the box, over the grid.

    The box is mapped from pixel space into continuous grid coordinates
    (cell j spans image x in [j*W_img/W_g, (j+1)*W_img/W_g], its center at
    grid coordinate j). One sample per bin center, bins x bins bins,
    clamped to the grid border.
    """
    h_g, w_g = grid
    fmap = feature_map.reshape(h_g, w_g, -1)
    w_img, h_img = float(image_size[0]), float(image_size[1])
    x1, y1, x2, y2 = (float(v) for v in box)
    bw, bh = x2 - x1, y2 - y1

    acc = np.zeros(fmap.shape[-1], dtype=np.float64)
    for bi in range(bins):
        for bj in range(bins):
            px = x1 + (bj + 0.5) * bw / bins
            py = y1 + (bi + 0.5) * bh / bins
            gx = min(max(px / w_img * w_g - 0.5, 0.0), w_g - 1.0)
            gy = min(max(py / h_img * h_g - 0.5, 0.0), h_g - 1.0)
            x0, y0 = int(math.floor(gx)), int(math.floor(gy))
            x1g, y1g = min(x0 + 1, w_g - 1), min(y0 + 1, h_g - 1)
            fx, fy = gx - x0, gy - y0
            acc += (
                fmap[y0, x0] * (1 - fx) * (1 - fy)
                + fmap[y0, x1g] * fx * (1 - fy)
                + fmap[y1g, x0] * (1 - fx) * fy
                + fmap[y1g, x1g] * fx * fy
            )
    return acc / (bins * bins)


def union_box(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array([min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])])


# ---------------------------------------------------------------------------
# pair enumeration and labels


def enumerate_pairs(
    det: DetectionFixture,
    score_threshold: float = 0.2,
    max_pairs: int | None = None,
    person_class: int = 0,
) -> list[HOIPair]:
    """All (human, other-detection) pairs above threshold, best-first.

    Every detection of the person class pairs with every other surviving
    detection (persons included). Pair confidence is the product of the
    two instance scores; the list is sorted by descending confidence with
    (human index, target index) as the tie-break, then truncated.
    """
    keep = np.flatnonzero(det.scores >= score_threshold)
    humans = [i for i in keep if det.labels[i] == person_class]
    pairs: list[HOIPair] = []
    for h in humans:
        for t in keep:
            if t == h:
                continue
            pairs.append(
                HOIPair(
                    human_index=int(h),
                    target_index=int(t),
                    human_box=det.boxes[h].copy(),
                    target_box=det.boxes[t].copy(),
                    confidence=float(det.scores[h] * det.scores[t]),
                    object_class=int(det.labels[t]),
                    appearance=np.concatenate([det.appearance[h], det.appearance[t]]),
                    spatial_raw=box_pair_features(det.boxes[h], det.boxes[t], det.image_size),
                    roi=roi_align(
                        det.feature_map,
                        det.grid,
                        union_box(det.boxes[h], det.boxes[t]),
                        det.image_size,
                    ),
                )
            )
    pairs.sort(key=lambda p: (-p.confidence, p.human_index, p.target_index))
    if max_pairs is not None:
        pairs = pairs[:max_pairs]
    return pairs


def assign_labels(
    pairs: list[HOIPair],
    ann: ImageAnnotation,
    table: HOITable,
    hoi_categories: bool = False,
    iou_threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary labels and validity mask per pair.

    In verb mode (C = number of verbs), labels[i, v] = 1 iff some ground
    truth tuple with verb v overlaps both boxes of pair i above the IoU
    threshold (strict) with matching object class; mask[i, v] = 1 iff verb
    v composes with pair i's object class in the table. In HOI-category
    mode the category axis is the table itself.
    """
    n = len(pairs)
    c = len(table) if hoi_categories else table.num_verbs
    labels = np.zeros((n, c), dtype=np.float64)
    mask = np.zeros((n, c), dtype=np.float64)
    for i, pair in enumerate(pairs):
        if hoi_categories:
            for hid, (obj, _verb) in enumerate(table.pairs):
                if obj == pair.object_class:
                    mask[i, hid] = 1.0
        else:
            for v in table.verbs_for_object(pair.object_class):
                mask[i, v] = 1.0
        for gt_h, gt_o, gt_obj, gt_verb in ann.gt:
            if gt_obj != pair.object_class:
                continue
            if box_iou(pair.human_box, gt_h) <= iou_threshold:
                continue
            if box_iou(pair.target_box, gt_o) <= iou_threshold:
                continue
            if hoi_categories:
                hid = table.hoi_id(gt_obj, gt_verb)
                if hid is not None:
                    labels[i, hid] = 1.0
            else:
                labels[i, gt_verb] = 1.0
    if np.any(labels > mask):
        raise FixtureError("ground-truth composition missing from the HOI table")
    return labels, mask
