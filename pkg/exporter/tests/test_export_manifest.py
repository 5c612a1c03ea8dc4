"""Manifest parsing, prompt templates, and the a/an article rule."""

import json

import pytest

from isahoi_export.manifest import (
    ExportManifest,
    ManifestError,
    fill_template,
    indefinite_article,
)


class TestArticle:
    def test_vowel_initial_nouns_take_an(self):
        for noun in ["apple", "orange", "elephant", "umbrella", "Igloo"]:
            assert indefinite_article(noun) == "an"

    def test_consonant_initial_nouns_take_a(self):
        for noun in ["dog", "kite", "surfboard", "Zebra"]:
            assert indefinite_article(noun) == "a"

    def test_empty_noun_rejected(self):
        with pytest.raises(ManifestError, match="empty noun"):
            indefinite_article("   ")


class TestFillTemplate:
    def test_substitutes_and_resolves_article(self):
        assert fill_template("a photo of a/an {object}", object="apple") == "a photo of an apple"
        assert fill_template("a photo of a/an {object}", object="kite") == "a photo of a kite"

    def test_resolves_every_article_token(self):
        out = fill_template(
            "a photo of a person {verb} a/an {object}", verb="eating", object="orange"
        )
        assert out == "a photo of a person eating an orange"

    def test_unknown_placeholder_rejected(self):
        with pytest.raises(ManifestError, match="unknown field"):
            fill_template("a photo of a/an {noun}", object="apple")


class TestValidation:
    def test_object_template_must_use_object_placeholder(self):
        with pytest.raises(ManifestError, match=r"\{object\}"):
            ExportManifest(output_dir="out", objects=["dog"], object_template="a photo")

    def test_verb_template_must_use_verb_placeholder(self):
        with pytest.raises(ManifestError, match=r"\{verb\}"):
            ExportManifest(output_dir="out", verbs=["ride"], verb_template="a photo")

    def test_composition_ids_must_be_in_range(self):
        with pytest.raises(ManifestError, match="verb id 3 out of range"):
            ExportManifest(
                output_dir="out", objects=["dog"], verbs=["ride"], compositions=[(0, 3)]
            )
        with pytest.raises(ManifestError, match="object id 9 out of range"):
            ExportManifest(
                output_dir="out", objects=["dog"], verbs=["ride"], compositions=[(9, 0)]
            )

    def test_image_entries_need_id_and_path(self):
        with pytest.raises(ManifestError, match="id and path"):
            ExportManifest(output_dir="out", images=[{"id": "img001"}])


class TestPrompts:
    def manifest(self):
        return ExportManifest(
            output_dir="out",
            objects=["apple", "dog"],
            verbs=["eating", "walking"],
            compositions=[(0, 0), (1, 1)],
        )

    def test_object_prompts(self):
        assert self.manifest().object_prompts() == [
            "a photo of an apple",
            "a photo of a dog",
        ]

    def test_verb_prompts(self):
        assert self.manifest().verb_prompts() == [
            "a photo of a person eating an object",
            "a photo of a person walking an object",
        ]

    def test_composition_prompts_pair_object_then_verb(self):
        assert self.manifest().composition_prompts() == [
            "a photo of a person eating an apple",
            "a photo of a person walking a dog",
        ]


class TestLoad:
    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        doc = {
            "output_dir": "out",
            "objects": ["dog"],
            "verbs": ["walking"],
            "images": [{"id": "img001", "path": "imgs/img001.png"}],
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        manifest = ExportManifest.load(path)
        assert manifest.output_dir == tmp_path / "out"
        assert manifest.images[0]["path"] == str(tmp_path / "imgs" / "img001.png")

    def test_unknown_fields_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"output_dir": "out", "bogus": 1}))
        with pytest.raises(ManifestError, match="bogus"):
            ExportManifest.load(path)

    def test_missing_output_dir_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"objects": ["dog"]}))
        with pytest.raises(ManifestError, match="output_dir"):
            ExportManifest.load(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(ManifestError, match="JSON"):
            ExportManifest.load(path)

    def test_composition_pairs_become_tuples(self, tmp_path):
        doc = {
            "output_dir": "out",
            "objects": ["dog"],
            "verbs": ["walking"],
            "compositions": [[0, 0]],
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        assert ExportManifest.load(path).compositions == [(0, 0)]
