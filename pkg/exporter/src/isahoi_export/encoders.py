"""Text and image encoders that feed the export pipeline.

Two implementations of one small interface:

* ``HashEncoder`` — fully offline and deterministic. Every prompt or pixel
  block is digested with SHA-256 and the digest seeds a unit-norm vector.
  It has the same geometry as a patch-based vision transformer (square
  input, square patches, one global token), so exports built with it
  exercise every downstream shape contract without model weights.
* ``ClipEncoder`` — the pretrained vision-language model (ViT-B/16 layout),
  loaded from a local weights directory. The patch tokens are taken from
  the final hidden states with the model's own post-layernorm and output
  projection applied tokenwise, landing in the same 512-wide joint space
  as the text features.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image


class EncoderError(RuntimeError):
    """Raised when an encoder cannot be constructed or applied."""


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.maximum(norms, 1e-12)


def _digest_vector(payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(payload).digest()
    rng = np.random.default_rng(list(digest))
    return rng.standard_normal(dim)


class HashEncoder:
    """Deterministic stand-in encoder: digests seed unit-norm features."""

    def __init__(self, dim: int = 512, resolution: int = 224, patch_size: int = 16):
        if resolution % patch_size != 0:
            raise EncoderError(
                f"resolution {resolution} is not a multiple of patch size {patch_size}"
            )
        self.dim = dim
        self.resolution = resolution
        self.patch_size = patch_size

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch_size

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        if not prompts:
            raise EncoderError("no prompts to encode")
        rows = [_digest_vector(b"text:" + p.encode("utf-8"), self.dim) for p in prompts]
        return _unit_rows(np.stack(rows))

    def preprocess(self, image: Image.Image) -> np.ndarray:
        resized = image.convert("RGB").resize(
            (self.resolution, self.resolution), Image.Resampling.BICUBIC
        )
        return np.asarray(resized, dtype=np.float32) / 255.0

    def encode_image(self, image: Image.Image) -> tuple[np.ndarray, np.ndarray]:
        """Returns (global token (1, dim), patch tokens (grid^2, dim))."""
        pixels = self.preprocess(image)
        global_token = _digest_vector(b"image:" + pixels.tobytes(), self.dim)[None, :]
        g, p = self.grid_size, self.patch_size
        patches = []
        for row in range(g):
            for col in range(g):
                block = pixels[row * p : (row + 1) * p, col * p : (col + 1) * p]
                tag = f"patch:{row}:{col}:".encode()
                patches.append(_digest_vector(tag + block.tobytes(), self.dim))
        return _unit_rows(global_token), _unit_rows(np.stack(patches))


class ClipEncoder:
    """Frozen pretrained encoder pair loaded from a local directory."""

    def __init__(self, weights: str, resolution: int = 224, patch_size: int = 16):
        path = Path(weights) if weights else None
        if path is None or not path.exists():
            raise EncoderError(
                f"pretrained weights not found at {weights!r}; pass a local directory "
                "holding the vision-language checkpoint, or use the hash encoder"
            )
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as err:
            raise EncoderError(f"the clip encoder needs torch and transformers: {err}") from err
        self._torch = torch
        self.model = CLIPModel.from_pretrained(str(path)).eval()
        self.processor = CLIPProcessor.from_pretrained(str(path))
        self.dim = int(self.model.config.projection_dim)
        self.resolution = resolution
        self.patch_size = patch_size

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch_size

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        if not prompts:
            raise EncoderError("no prompts to encode")
        with self._torch.no_grad():
            tokens = self.processor(text=prompts, return_tensors="pt", padding=True)
            feats = self.model.get_text_features(**tokens)
        return feats.double().cpu().numpy()

    def encode_image(self, image: Image.Image) -> tuple[np.ndarray, np.ndarray]:
        with self._torch.no_grad():
            pixel_values = self.processor(
                images=image.convert("RGB"), return_tensors="pt"
            ).pixel_values
            vision = self.model.vision_model(pixel_values)
            # project every token (not just the pooled one) into the joint space
            projected = self.model.visual_projection(
                self.model.vision_model.post_layernorm(vision.last_hidden_state)
            )[0]
        tokens = projected.double().cpu().numpy()
        return tokens[:1], tokens[1:]


def build_encoder(config: dict):
    """Encoder from a manifest's ``encoder`` section; hash-based by default."""
    config = dict(config or {})
    kind = config.pop("kind", "hash")
    if kind == "hash":
        return HashEncoder(**config)
    if kind == "clip":
        return ClipEncoder(**config)
    raise EncoderError(f"unknown encoder kind {kind!r}")
