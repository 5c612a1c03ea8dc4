"""Export jobs: prompt-embedding tables, image-token fixtures, detections.

Every job is a pure function of the manifest plus the (frozen) encoder, so
re-running an export writes byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import EncoderError, build_encoder
from .isaf1 import write_isaf1
from .manifest import ExportManifest


class ExportError(RuntimeError):
    """Raised when an export job cannot complete."""


def _write_table(path: Path, name: str, prompts: list[str], matrix: np.ndarray) -> Path:
    if matrix.shape[0] != len(prompts):
        raise ExportError(f"{name}: {len(prompts)} prompts but {matrix.shape[0]} rows")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_isaf1(path, "table", {"matrix": matrix}, {"name": name, "prompts": prompts})
    return path


def export_text_tables(manifest: ExportManifest, encoder=None) -> list[Path]:
    """Object/verb (and optional composition) tables as ISAF files."""
    if encoder is None:
        encoder = build_encoder(manifest.encoder)
    if not manifest.objects or not manifest.verbs:
        raise ExportError("the manifest lists no objects or no verbs to encode")
    out = manifest.output_dir / "tables"
    written = [
        _write_table(
            out / "objects.isaf", "objects", manifest.object_prompts(),
            encoder.encode_text(manifest.object_prompts()),
        ),
        _write_table(
            out / "verbs.isaf", "verbs", manifest.verb_prompts(),
            encoder.encode_text(manifest.verb_prompts()),
        ),
    ]
    if manifest.compositions:
        prompts = manifest.composition_prompts()
        written.append(
            _write_table(out / "hois.isaf", "hois", prompts, encoder.encode_text(prompts))
        )
    return written


def _open_image(path: str) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (FileNotFoundError, UnidentifiedImageError, OSError) as err:
        raise ExportError(f"cannot read image {path}: {err}") from err


def export_image_fixtures(manifest: ExportManifest, encoder=None) -> list[Path]:
    """Per-image token fixtures: one global token plus the patch grid."""
    if encoder is None:
        encoder = build_encoder(manifest.encoder)
    if not manifest.images:
        raise ExportError("the manifest lists no images")
    out = manifest.output_dir / "clip"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in manifest.images:
        image = _open_image(entry["path"])
        global_token, patches = encoder.encode_image(image)
        path = out / f"{entry['id']}.isaf"
        write_isaf1(
            path, "clip", {"global": global_token, "patches": patches},
            {"image_id": entry["id"]},
        )
        written.append(path)
    return written


def convert_detections(manifest: ExportManifest, encoder=None) -> list[Path]:
    """Released per-image detection JSON into detection fixtures.

    The JSON holds boxes/labels/scores; box geometry and scores pass
    through to the container untouched. The appearance row for each box is
    the encoder's global token of that crop, and the image-wide feature
    map is its patch grid, so the result is self-consistent with the
    token fixtures produced from the same image.
    """
    if encoder is None:
        encoder = build_encoder(manifest.encoder)
    if not manifest.detections:
        raise ExportError("the manifest lists no detection files")
    image_paths = {entry["id"]: entry["path"] for entry in manifest.images}
    out = manifest.output_dir / "detections"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in manifest.detections:
        image_id = entry["id"]
        if image_id not in image_paths:
            raise ExportError(f"detections for {image_id!r} have no matching image entry")
        try:
            raw = json.loads(Path(entry["path"]).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ExportError(f"cannot read detections {entry['path']}: {err}") from err
        for key in ("image_size", "boxes", "labels", "scores"):
            if key not in raw:
                raise ExportError(f"{entry['path']}: missing field {key!r}")
        boxes = np.asarray(raw["boxes"], dtype=np.float64).reshape(-1, 4)
        labels = np.asarray(raw["labels"], dtype=np.float64)
        scores = np.asarray(raw["scores"], dtype=np.float64)
        if not (len(boxes) == len(labels) == len(scores)):
            raise ExportError(f"{entry['path']}: boxes/labels/scores lengths disagree")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ExportError(f"{entry['path']}: scores outside [0, 1]")

        image = _open_image(image_paths[image_id])
        _, patches = encoder.encode_image(image)
        rows = []
        for x1, y1, x2, y2 in boxes:
            crop = image.crop((x1, y1, max(x2, x1 + 1), max(y2, y1 + 1)))
            crop_global, _ = encoder.encode_image(crop)
            rows.append(crop_global[0])
        appearance = (
            np.stack(rows) if rows else np.zeros((0, encoder.dim), dtype=np.float64)
        )
        g = encoder.grid_size
        path = out / f"{image_id}.isaf"
        write_isaf1(
            path,
            "detection",
            {
                "boxes": boxes,
                "labels": labels,
                "scores": scores,
                "appearance": appearance,
                "feature_map": patches,
            },
            {
                "image_id": image_id,
                "image_size": list(raw["image_size"]),
                "grid": [g, g],
            },
        )
        written.append(path)
    return written
