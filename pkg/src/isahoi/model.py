"""Full model wiring: per-image forward pass and checkpoint round trips.

The model consumes precomputed per-image fixtures (detections with backbone
features, plus a context token and patch tokens from an image-text encoder)
and two text-embedding tables, and produces per-pair category probabilities.
Category columns are verbs by default, or whole (object, verb) compositions
when ``hoi_categories`` is set, which zero-shot training requires.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import SPATIAL_RAW_DIM, ClipFixture, DetectionFixture, HOIPair, enumerate_pairs
from .interaction import InteractionModule, lookup_object_text
from .isaf import FixtureError, read_isaf, write_isaf
from .layers import Module
from .scoring import verb_scores
from .tensor import NumericError, Tensor
from .verbsem import VerbSemanticModule


@dataclass
class ModelConfig:
    d: int = 512
    heads: int = 8
    ffn_hidden: int = 2048
    if_layers: int = 2
    vsi_layers: int = 2
    mu: float = 0.5
    temperature: float = 1.0
    use_global: bool = True
    use_roi: bool = True
    use_objtext: bool = True
    vsi_gate: bool = True
    vsi_backbone: bool = True
    vsi_patches: bool = True
    hoi_categories: bool = False
    train_text: bool = False
    seed: int = 0


@dataclass
class ImageInputs:
    """Everything the forward pass needs for one image."""

    image_id: str
    pairs: list[HOIPair]
    feature_map: np.ndarray  # (M, d) backbone memory
    global_token: np.ndarray  # (1, d) image context token
    patch_tokens: np.ndarray  # (P, d) patch memory


def build_image_inputs(
    det: DetectionFixture,
    clip: ClipFixture,
    score_threshold: float = 0.2,
    max_pairs: int | None = None,
) -> ImageInputs:
    if det.image_id != clip.image_id:
        raise FixtureError(
            f"fixture mismatch: detections for {det.image_id!r}, tokens for {clip.image_id!r}"
        )
    pairs = enumerate_pairs(det, score_threshold=score_threshold, max_pairs=max_pairs)
    return ImageInputs(
        image_id=det.image_id,
        pairs=pairs,
        feature_map=det.feature_map,
        global_token=clip.global_token,
        patch_tokens=clip.patch_tokens,
    )


class HOIModel(Module):
    """Interaction recognition over detected pairs of one image at a time."""

    def __init__(self, config: ModelConfig, object_table: np.ndarray, verb_table: np.ndarray):
        object_table = np.asarray(object_table, dtype=np.float64)
        verb_table = np.asarray(verb_table, dtype=np.float64)
        for name, tbl in (("object", object_table), ("category", verb_table)):
            if tbl.ndim != 2 or tbl.shape[1] != config.d:
                raise NumericError(
                    f"{name} table shape {tbl.shape} incompatible with width {config.d}"
                )
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.object_text = Tensor(object_table.copy(), requires_grad=config.train_text)
        self.verb_text = Tensor(verb_table.copy(), requires_grad=config.train_text)
        # Learnable copy of the category table; the refinement residual lands
        # here, keeping the prompt embeddings themselves untouched.
        self.verb_w = Tensor(verb_table.copy(), requires_grad=True)
        self.interaction = InteractionModule(
            config.d,
            config.heads,
            config.ffn_hidden,
            rng,
            layers=config.if_layers,
            use_global=config.use_global,
            use_roi=config.use_roi,
            use_objtext=config.use_objtext,
        )
        self.verbsem = VerbSemanticModule(
            config.d,
            config.heads,
            config.ffn_hidden,
            rng,
            layers=config.vsi_layers,
            mu=config.mu,
            use_gate=config.vsi_gate,
            use_backbone=config.vsi_backbone,
            use_patches=config.vsi_patches,
        )

    @property
    def num_categories(self) -> int:
        return self.verb_text.shape[0]

    def __call__(self, inputs: ImageInputs) -> Tensor:
        """Per-pair category probabilities, (len(pairs) x num_categories)."""
        pairs = inputs.pairs
        d = self.config.d
        appearance = Tensor(
            np.stack([p.appearance for p in pairs]) if pairs else np.zeros((0, 2 * d))
        )
        spatial = Tensor(
            np.stack([p.spatial_raw for p in pairs])
            if pairs
            else np.zeros((0, SPATIAL_RAW_DIM))
        )
        roi = Tensor(np.stack([p.roi for p in pairs]) if pairs else np.zeros((0, d)))
        classes = np.array([p.object_class for p in pairs], dtype=np.int64)
        global_token = Tensor(np.asarray(inputs.global_token, dtype=np.float64))
        memory = Tensor(np.asarray(inputs.feature_map, dtype=np.float64))
        patches = Tensor(np.asarray(inputs.patch_tokens, dtype=np.float64))

        obj_text = lookup_object_text(self.object_text, classes)
        interactions = self.interaction(
            appearance,
            spatial,
            global_token if self.config.use_global else None,
            roi if self.config.use_roi else None,
            obj_text,
            memory,
        )
        refined = self.verbsem(self.verb_text, self.verb_w, global_token, memory, patches)
        return verb_scores(interactions, refined, temperature=self.config.temperature)

    def named_state(self) -> list[tuple[str, Tensor]]:
        """All persistent tensors, trainable or not, in a stable order."""
        out = [
            ("object_text", self.object_text),
            ("verb_text", self.verb_text),
            ("verb_w", self.verb_w),
        ]
        for prefix, mod in (("interaction", self.interaction), ("verbsem", self.verbsem)):
            out.extend((f"{prefix}.{n}", t) for n, t in mod.named_parameters())
        return out


def save_checkpoint(path, model: HOIModel) -> None:
    tensors = {name: t.data for name, t in model.named_state()}
    write_isaf(path, "checkpoint", tensors, {"config": asdict(model.config)})


def load_checkpoint(path) -> HOIModel:
    kind, tensors, meta = read_isaf(path)
    if kind != "checkpoint":
        raise FixtureError(f"{path}: expected a checkpoint, found kind {kind!r}")
    config = ModelConfig(**meta["config"])
    model = HOIModel(config, tensors["object_text"], tensors["verb_text"])
    state = dict(model.named_state())
    if set(state) != set(tensors):
        missing = sorted(set(state) - set(tensors))
        extra = sorted(set(tensors) - set(state))
        raise FixtureError(f"{path}: state mismatch, missing {missing}, unexpected {extra}")
    for name, t in state.items():
        if t.data.shape != tensors[name].shape:
            raise FixtureError(
                f"{path}: {name} has shape {tensors[name].shape}, expected {t.data.shape}"
            )
        t.data = tensors[name]
    return model
