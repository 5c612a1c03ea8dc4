"""Image-conditioned refinement of the category embedding table.

Verb text embeddings are generic: "holding" looks the same in every image.
This module builds one query per category by gating its prompt embedding
with the image's context token, refines the queries over two image memories
(the backbone feature map and the patch-token grid), and lands the result
as a residual of strength mu on a second, learnable copy of the table. With
zero layers the learnable table passes through untouched.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import (
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    broadcast_rows,
)
from .tensor import NumericError, Tensor

MAX_REFINE_LAYERS = 3


def build_verb_queries(verb_table: Tensor, gate: Tensor) -> Tensor:
    """Per-verb query block: each row is [e * g, e], width 2d.

    ``gate`` is the (1 x d) image context token, broadcast across the C verb
    rows before the elementwise product.
    """
    c = verb_table.shape[0]
    if gate.shape != (1, verb_table.shape[1]):
        raise NumericError(
            f"gate shape {gate.shape} incompatible with table {verb_table.shape}"
        )
    gated = T.hadamard(verb_table, broadcast_rows(gate, c))
    return T.concat([gated, verb_table], axis=1)


class DualCrossAttention(Module):
    """Cross-attention over two memory streams with a shared query map.

    Each stream keeps its own key/value/output projections; the branch
    outputs are summed. Either stream can be disabled, but not both.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        use_backbone: bool = True,
        use_patches: bool = True,
    ):
        if not (use_backbone or use_patches):
            raise NumericError("at least one memory stream must stay enabled")
        self.q_proj = Linear(d, d, rng)
        if use_backbone:
            self.backbone_attn = MultiHeadAttention(d, heads, rng, project_q=False)
        if use_patches:
            self.patch_attn = MultiHeadAttention(d, heads, rng, project_q=False)
        self.use_backbone = use_backbone
        self.use_patches = use_patches

    def __call__(self, x: Tensor, mem_backbone: Tensor, mem_patches: Tensor) -> Tensor:
        q = self.q_proj(x)
        out = None
        if self.use_backbone:
            out = self.backbone_attn(q, mem_backbone, mem_backbone)
        if self.use_patches:
            patch_out = self.patch_attn(q, mem_patches, mem_patches)
            out = patch_out if out is None else out + patch_out
        return out


class VerbSemanticModule(Module):
    """Refines the category embedding table against a specific image.

    Queries are built from the frozen prompt embeddings; the refinement
    stack's output U lands as a residual on a separate learnable table:
    V = W + mu * U. ``layers`` may be 0..3; at 0 the learnable table is
    returned unchanged, bit for bit, so downstream scores depend only on W.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        ffn_hidden: int,
        rng: np.random.Generator,
        layers: int = 2,
        mu: float = 0.5,
        use_gate: bool = True,
        use_backbone: bool = True,
        use_patches: bool = True,
    ):
        if not 0 <= layers <= MAX_REFINE_LAYERS:
            raise NumericError(
                f"refinement depth {layers} outside supported range 0..{MAX_REFINE_LAYERS}"
            )
        self.d = d
        self.mu = mu
        self.use_gate = use_gate
        if layers > 0:
            self.query_proj = Linear(2 * d, d, rng)
            self.self_attns = [MultiHeadAttention(d, heads, rng) for _ in range(layers)]
            self.cross_attns = [
                DualCrossAttention(d, heads, rng, use_backbone, use_patches)
                for _ in range(layers)
            ]
            self.ffns = [FeedForward(d, ffn_hidden, rng) for _ in range(layers)]
            self.norms1 = [LayerNorm(d) for _ in range(layers)]
            self.norms2 = [LayerNorm(d) for _ in range(layers)]
            self.norms3 = [LayerNorm(d) for _ in range(layers)]
        self.layers = layers

    def __call__(
        self,
        embeddings: Tensor,
        residual_table: Tensor,
        gate: Tensor,
        mem_backbone: Tensor,
        mem_patches: Tensor,
    ) -> Tensor:
        if embeddings.shape != residual_table.shape:
            raise NumericError(
                f"prompt embeddings {embeddings.shape} and learnable table "
                f"{residual_table.shape} must align row for row"
            )
        if self.layers == 0:
            return residual_table
        if not self.use_gate:
            gate = Tensor(np.ones((1, self.d)))
        x = self.query_proj(build_verb_queries(embeddings, gate))
        for i in range(self.layers):
            x = self.norms1[i](x + self.self_attns[i](x, x, x))
            x = self.norms2[i](x + self.cross_attns[i](x, mem_backbone, mem_patches))
            x = self.norms3[i](x + self.ffns[i](x))
        return residual_table + T.scale(x, self.mu)
