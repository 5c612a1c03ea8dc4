"""Export manifest: what to encode, with which templates, to where.

The manifest is a single JSON file. Prompt templates carry an ``a/an``
token that is resolved per noun by its leading sound, so "apple" becomes
"an apple" and "dog" becomes "a dog".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_OBJECT_TEMPLATE = "a photo of a/an {object}"
DEFAULT_VERB_TEMPLATE = "a photo of a person {verb} an object"
DEFAULT_COMPOSITION_TEMPLATE = "a photo of a person {verb} a/an {object}"

_VOWELS = "aeiou"


class ManifestError(ValueError):
    """Raised for a malformed or incomplete manifest."""


def indefinite_article(noun: str) -> str:
    stripped = noun.strip().lower()
    if not stripped:
        raise ManifestError("cannot pick an article for an empty noun")
    return "an" if stripped[0] in _VOWELS else "a"


def fill_template(template: str, **names: str) -> str:
    """Substitute ``{placeholder}`` names and resolve any ``a/an`` token."""
    try:
        text = template.format(**names)
    except (KeyError, IndexError) as err:
        raise ManifestError(f"template {template!r} references unknown field {err}") from err
    while "a/an " in text:
        head, tail = text.split("a/an ", 1)
        noun = tail.split(" ", 1)[0] if " " in tail else tail
        text = f"{head}{indefinite_article(noun)} {tail}"
    return text


@dataclass
class ExportManifest:
    output_dir: Path
    objects: list[str] = field(default_factory=list)
    verbs: list[str] = field(default_factory=list)
    compositions: list[tuple[int, int]] = field(default_factory=list)
    images: list[dict] = field(default_factory=list)  # {"id", "path"}
    detections: list[dict] = field(default_factory=list)  # {"id", "path"}
    object_template: str = DEFAULT_OBJECT_TEMPLATE
    verb_template: str = DEFAULT_VERB_TEMPLATE
    composition_template: str = DEFAULT_COMPOSITION_TEMPLATE
    encoder: dict = field(default_factory=dict)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if "{object}" not in self.object_template:
            raise ManifestError("object template must contain {object}")
        if "{verb}" not in self.verb_template:
            raise ManifestError("verb template must contain {verb}")
        if self.compositions:
            if "{verb}" not in self.composition_template or "{object}" not in self.composition_template:
                raise ManifestError("composition template must contain {verb} and {object}")
            for obj, verb in self.compositions:
                if not (0 <= obj < len(self.objects)):
                    raise ManifestError(f"composition object id {obj} out of range")
                if not (0 <= verb < len(self.verbs)):
                    raise ManifestError(f"composition verb id {verb} out of range")
        for entry in list(self.images) + list(self.detections):
            if "id" not in entry or "path" not in entry:
                raise ManifestError(f"image/detection entries need id and path: {entry}")

    # ------------------------------------------------------------------
    def object_prompts(self) -> list[str]:
        return [fill_template(self.object_template, object=name) for name in self.objects]

    def verb_prompts(self) -> list[str]:
        return [fill_template(self.verb_template, verb=name) for name in self.verbs]

    def composition_prompts(self) -> list[str]:
        return [
            fill_template(self.composition_template, verb=self.verbs[v], object=self.objects[o])
            for o, v in self.compositions
        ]

    @classmethod
    def load(cls, path) -> "ExportManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ManifestError(f"{path}: not valid JSON: {err}") from err
        if "output_dir" not in raw:
            raise ManifestError(f"{path}: missing output_dir")
        known = {
            "output_dir", "objects", "verbs", "compositions", "images",
            "detections", "object_template", "verb_template",
            "composition_template", "encoder",
        }
        unknown = set(raw) - known
        if unknown:
            raise ManifestError(f"{path}: unknown manifest fields {sorted(unknown)}")
        if "compositions" in raw:
            raw["compositions"] = [tuple(pair) for pair in raw["compositions"]]
        base = path.parent
        manifest = cls(**raw)
        if not manifest.output_dir.is_absolute():
            manifest.output_dir = base / manifest.output_dir
        for entry in list(manifest.images) + list(manifest.detections):
            if not Path(entry["path"]).is_absolute():
                entry["path"] = str(base / entry["path"])
        return manifest
