"""Similarity scoring, the training objective, and inference-time fusion.

Interaction vectors are scored against the per-image verb table by cosine
similarity squashed through a sigmoid, trained with a masked binary focal
loss, and at inference blended with the detector's pair confidence through a
geometric mean controlled by a mixing exponent.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import HOIPair, HOITable
from .tensor import NumericError, Tensor

# Probabilities are clamped away from {0, 1} before logs/fractional powers so
# saturated sigmoids cannot produce infinities.
_PROB_FLOOR = 1e-12


def verb_scores(interactions: Tensor, verb_table: Tensor, temperature: float = 1.0) -> Tensor:
    """Sigmoid of the scaled cosine similarity, (N pairs x C categories).

    Rows of both inputs are L2-normalized, so the logits live in
    [-1/temperature, 1/temperature]. Lower temperatures sharpen the scores.
    """
    if temperature <= 0:
        raise NumericError(f"temperature must be positive, got {temperature}")
    if interactions.shape[1] != verb_table.shape[1]:
        raise NumericError(
            f"interaction width {interactions.shape[1]} != table width {verb_table.shape[1]}"
        )
    sim = T.matmul(T.l2_normalize(interactions), T.transpose(T.l2_normalize(verb_table), (1, 0)))
    return T.sigmoid(T.scale(sim, 1.0 / temperature))


def focal_loss(
    scores: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
    alpha: float = 0.5,
    gamma: float = 0.1,
) -> Tensor:
    """Masked binary focal loss, summed and divided by max(1, #positives).

    ``labels`` and ``mask`` are binary (N x C) arrays; every labeled cell must
    also be masked valid. Cells outside the mask contribute exactly zero.
    """
    y = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if scores.shape != y.shape or scores.shape != m.shape:
        raise NumericError(
            f"score/label/mask shapes differ: {scores.shape} {y.shape} {m.shape}"
        )
    if not set(np.unique(y)).issubset({0.0, 1.0}) or not set(np.unique(m)).issubset({0.0, 1.0}):
        raise NumericError("labels and mask must be binary")
    if np.any(y * (1.0 - m)):
        raise NumericError("positive label outside the valid-composition mask")
    if not 0.0 <= alpha <= 1.0:
        raise NumericError(f"alpha must lie in [0, 1], got {alpha}")
    if gamma < 0.0:
        raise NumericError(f"gamma must be non-negative, got {gamma}")

    y_t = Tensor(y)
    one_minus_p = T.add_const(T.scale(scores, -1.0), 1.0)
    # p_t is the probability assigned to the true class of each cell.
    p_t = T.hadamard(scores, y_t) + T.hadamard(one_minus_p, Tensor(1.0 - y))
    p_t = T.maximum_const(p_t, _PROB_FLOOR)
    miss = T.maximum_const(T.add_const(T.scale(p_t, -1.0), 1.0), _PROB_FLOOR)
    alpha_t = Tensor(alpha * y + (1.0 - alpha) * (1.0 - y))
    elem = T.hadamard(alpha_t, T.hadamard(T.pow_const(miss, gamma), T.log(p_t)))
    total = T.tsum(T.hadamard(T.scale(elem, -1.0), Tensor(m)))
    return T.scale(total, 1.0 / max(1.0, float(y.sum())))


def fuse_scores(pair_conf: np.ndarray, verb_prob: np.ndarray, lam: float) -> np.ndarray:
    """Geometric blend s_c^(1-lam) * s_v^lam, broadcasting pair confidence.

    At lam=0 the detector confidence passes through unchanged; at lam=1 the
    similarity scores do.
    """
    if not 0.0 <= lam <= 1.0:
        raise NumericError(f"mixing exponent must lie in [0, 1], got {lam}")
    s_c = np.asarray(pair_conf, dtype=np.float64)
    s_v = np.asarray(verb_prob, dtype=np.float64)
    if s_c.ndim != 1 or s_v.ndim != 2 or s_v.shape[0] != s_c.shape[0]:
        raise NumericError(f"incompatible score shapes {s_c.shape} and {s_v.shape}")
    for name, arr in (("pair", s_c), ("verb", s_v)):
        if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
            raise NumericError(f"{name} scores must be finite probabilities in [0, 1]")
    return (s_c[:, None] ** (1.0 - lam)) * (s_v**lam)


def assemble_triplets(
    fused: np.ndarray,
    mask: np.ndarray,
    top_k: int = 100,
) -> list[tuple[int, int, float]]:
    """Top-scoring (pair index, category index, score) cells of one image.

    Only masked-valid cells are eligible. Sorted by score descending; exact
    ties break by pair index then category index, ascending.
    """
    s = np.asarray(fused, dtype=np.float64)
    m = np.asarray(mask)
    if s.shape != m.shape:
        raise NumericError(f"score/mask shapes differ: {s.shape} vs {m.shape}")
    if top_k < 0:
        raise NumericError(f"top_k must be non-negative, got {top_k}")
    cells = [(int(i), int(j)) for i, j in np.argwhere(m > 0)]
    cells.sort(key=lambda ij: (-s[ij[0], ij[1]], ij[0], ij[1]))
    return [(i, j, float(s[i, j])) for i, j in cells[:top_k]]


def triplet_records(
    image_id: str,
    pairs: list[HOIPair],
    triplets: list[tuple[int, int, float]],
    table: HOITable | None = None,
) -> list[dict]:
    """Serializable prediction records for one image.

    Category columns are verb ids unless ``table`` is given, in which case
    they are composition ids that resolve to an (object, verb) pair.
    """
    out = []
    for pair_idx, col, score in triplets:
        pair = pairs[pair_idx]
        if table is not None:
            obj, verb = table.pairs[col]
            if obj != pair.object_class:
                raise NumericError(
                    f"composition {col} names object {obj} but the pair detected {pair.object_class}"
                )
        else:
            obj, verb = pair.object_class, col
        out.append(
            {
                "image_id": image_id,
                "human_box": [float(v) for v in pair.human_box],
                "object_box": [float(v) for v in pair.target_box],
                "object_class": int(obj),
                "verb": int(verb),
                "score": float(score),
            }
        )
    return out


def write_triplets(path, records: list[dict]) -> None:
    """One prediction record per line, in stable key order."""
    lines = [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_triplets(path) -> list[dict]:
    text = Path(path).read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]
