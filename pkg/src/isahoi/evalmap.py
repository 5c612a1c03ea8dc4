"""Detection-style evaluation of interaction triplets.

A predicted triplet (human box, object box, composition, score) is a true
positive when it can be greedily matched, in score order, to an unmatched
ground-truth instance of the same composition in the same image with both
box overlaps strictly above the threshold. Average precision uses all-point
interpolation, categories without ground truth are excluded from means, and
the Known-Objects setting additionally drops predictions from images whose
ground truth never shows the predicted object class.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import HOITable, ImageAnnotation, box_iou


class EvalError(Exception):
    """Predictions or ground truth that cannot be evaluated."""


def average_precision(tp: np.ndarray, fp: np.ndarray, num_gt: int) -> float | None:
    """All-point interpolated AP in [0, 1]; None when there is nothing to find.

    ``tp`` and ``fp`` are complementary 0/1 arrays over predictions already
    sorted by rank.
    """
    if num_gt == 0:
        return None
    tp = np.asarray(tp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / (cum_tp + np.cumsum(fp))
    # Envelope: best precision achievable at this recall or beyond.
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    return float(precision[tp == 1].sum() / num_gt)


def _match_category(
    preds: list[tuple[str, np.ndarray, np.ndarray, float, int]],
    gt_by_image: dict[str, list[tuple[np.ndarray, np.ndarray]]],
    iou_threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy score-ordered matching; ties break by image id then emission order."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][3], preds[i][0], preds[i][4]))
    taken = {img: [False] * len(gts) for img, gts in gt_by_image.items()}
    tp = np.zeros(len(preds))
    fp = np.zeros(len(preds))
    for rank, i in enumerate(order):
        img, hbox, obox, _, _ = preds[i]
        best_iou, best_j = 0.0, -1
        for j, (gt_h, gt_o) in enumerate(gt_by_image.get(img, [])):
            if taken[img][j]:
                continue
            overlap = min(box_iou(hbox, gt_h), box_iou(obox, gt_o))
            if overlap > best_iou:
                best_iou, best_j = overlap, j
        if best_j >= 0 and best_iou > iou_threshold:
            taken[img][best_j] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    return tp, fp


def evaluate(
    records: list[dict],
    annotations: list[ImageAnnotation],
    table: HOITable,
    iou_threshold: float = 0.5,
) -> dict[int, dict]:
    """Per-category AP under both settings.

    Returns {category id: {"num_gt", "default", "known_objects"}} covering
    every id in the table; the AP fields are None where num_gt is zero.
    Predictions for images absent from the annotations count as images with
    empty ground truth.
    """
    gt_by_cat: dict[int, dict[str, list]] = {c: {} for c in range(len(table))}
    images_with_object: dict[int, set[str]] = {}
    for ann in annotations:
        for hbox, obox, obj, verb in ann.gt:
            cat = table.hoi_id(obj, verb)
            if cat is None:
                raise EvalError(
                    f"image {ann.image_id}: ground truth composition ({obj}, {verb}) "
                    "not in the category table"
                )
            gt_by_cat[cat].setdefault(ann.image_id, []).append(
                (np.asarray(hbox, dtype=np.float64), np.asarray(obox, dtype=np.float64))
            )
            images_with_object.setdefault(obj, set()).add(ann.image_id)

    preds_by_cat: dict[int, list] = {c: [] for c in range(len(table))}
    for emission, rec in enumerate(records):
        cat = table.hoi_id(rec["object_class"], rec["verb"])
        if cat is None:
            raise EvalError(
                f"prediction composition ({rec['object_class']}, {rec['verb']}) "
                "not in the category table"
            )
        preds_by_cat[cat].append(
            (
                rec["image_id"],
                np.asarray(rec["human_box"], dtype=np.float64),
                np.asarray(rec["object_box"], dtype=np.float64),
                float(rec["score"]),
                emission,
            )
        )

    out: dict[int, dict] = {}
    for cat in range(len(table)):
        gts = gt_by_cat[cat]
        num_gt = sum(len(v) for v in gts.values())
        preds = preds_by_cat[cat]
        tp, fp = _match_category(preds, gts, iou_threshold)
        obj = table.pairs[cat][0]
        allowed = images_with_object.get(obj, set())
        ko_preds = [p for p in preds if p[0] in allowed]
        ko_tp, ko_fp = _match_category(ko_preds, gts, iou_threshold)
        out[cat] = {
            "num_gt": num_gt,
            "default": average_precision(tp, fp, num_gt),
            "known_objects": average_precision(ko_tp, ko_fp, num_gt),
        }
    return out


def mean_ap(per_category: dict[int, dict], ids: list[int], setting: str) -> float | None:
    """Mean AP x100 over the ids that have ground truth; None if none do."""
    values = [
        per_category[i][setting]
        for i in ids
        if i in per_category and per_category[i]["num_gt"] > 0
    ]
    if not values:
        return None
    return float(100.0 * np.mean(values))


def summarize(per_category: dict[int, dict], groups: dict[str, list[int]]) -> dict:
    """Group means for both settings, on the x100 scale."""
    return {
        setting: {name: mean_ap(per_category, ids, setting) for name, ids in groups.items()}
        for setting in ("default", "known_objects")
    }


def format_report(summary: dict) -> str:
    """Fixed-width text table of the summary, one row per group."""
    names = list(summary["default"].keys())
    width = max([len(n) for n in names] + [len("group")])
    lines = [f"{'group':<{width}}  {'default':>10}  {'known-objects':>14}"]
    for name in names:
        cells = []
        for setting in ("default", "known_objects"):
            v = summary[setting][name]
            cells.append("     -" if v is None else f"{v:.2f}")
        lines.append(f"{name:<{width}}  {cells[0]:>10}  {cells[1]:>14}")
    return "\n".join(lines)


def write_report(path, summary: dict, per_category: dict[int, dict] | None = None) -> None:
    payload: dict = {"summary": summary}
    if per_category is not None:
        payload["per_category"] = {
            str(k): {
                "num_gt": v["num_gt"],
                "default": v["default"],
                "known_objects": v["known_objects"],
            }
            for k, v in per_category.items()
        }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
