"""Pair-query construction and the interaction decoder.

A detected human-object pair is summarized by four feature groups: the two
appearance vectors, a geometric descriptor of the box pair, the image-level
context token, and a pooled feature of the union region. Each group is
normalized on its own scale, fused into a single query vector per pair, and
the queries are then refined by a small decoder that attends over the
backbone feature map while being conditioned on the object-category text
embedding of each pair.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import SPATIAL_RAW_DIM
from .layers import (
    FeedForward,
    FusionMLP,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    broadcast_rows,
)
from .tensor import NumericError, Tensor


def lookup_object_text(table: Tensor, object_classes: np.ndarray) -> Tensor:
    """Gather one text-embedding row per pair from the object table.

    ``table`` is (num_objects x d); ``object_classes`` holds one class id per
    pair. Gradients accumulate on rows that several pairs share.
    """
    idx = np.asarray(object_classes, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise NumericError(f"object class id {bad} outside the {n}-row text table")
    return T.gather_rows(table, idx)


class QueryBuilder(Module):
    """Fuses per-pair feature groups into one query vector per pair.

    Groups are normalized independently before fusion so that no single
    group dominates by raw scale. The geometric descriptor is first lifted
    from its raw width to the model width. The context and union-region
    groups can be disabled, which narrows the fusion input accordingly.
    """

    def __init__(
        self,
        d: int,
        rng: np.random.Generator,
        use_global: bool = True,
        use_roi: bool = True,
    ):
        self.d = d
        self.use_global = use_global
        self.use_roi = use_roi
        self.appearance_norm = LayerNorm(2 * d)
        self.spatial_proj = Linear(SPATIAL_RAW_DIM, d, rng)
        self.spatial_norm = LayerNorm(d)
        if use_global:
            self.global_norm = LayerNorm(d)
        if use_roi:
            self.roi_norm = LayerNorm(d)
        width = 3 * d + (d if use_global else 0) + (d if use_roi else 0)
        self.fuse = FusionMLP(width, d, rng)

    def __call__(
        self,
        appearance: Tensor,
        spatial_raw: Tensor,
        global_token: Tensor | None = None,
        roi: Tensor | None = None,
    ) -> Tensor:
        n = appearance.shape[0]
        if appearance.shape[1] != 2 * self.d:
            raise NumericError(
                f"appearance width {appearance.shape[1]} != {2 * self.d}"
            )
        if spatial_raw.shape != (n, SPATIAL_RAW_DIM):
            raise NumericError(
                f"geometric descriptor shape {spatial_raw.shape} != ({n}, {SPATIAL_RAW_DIM})"
            )
        groups = [
            self.appearance_norm(appearance),
            self.spatial_norm(self.spatial_proj(spatial_raw)),
        ]
        if self.use_global:
            if global_token is None:
                raise NumericError("context token required but missing")
            groups.append(broadcast_rows(self.global_norm(global_token), n))
        if self.use_roi:
            if roi is None:
                raise NumericError("union-region feature required but missing")
            groups.append(self.roi_norm(roi))
        return self.fuse(T.concat(groups, axis=1))


class InteractionDecoder(Module):
    """Refines pair queries against the backbone feature map.

    Each layer runs, in order and with a residual LayerNorm after each step:
    self-attention where the object-text embedding is added to queries and
    keys (but not values), cross-attention whose query is the pair state
    concatenated with the object text and reprojected to model width, and a
    position-wise feed-forward. The reprojection is shared across layers.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        ffn_hidden: int,
        rng: np.random.Generator,
        layers: int = 2,
    ):
        self.d = d
        self.in_proj = Linear(2 * d, d, rng)
        self.self_attns = [MultiHeadAttention(d, heads, rng) for _ in range(layers)]
        self.cross_attns = [MultiHeadAttention(d, heads, rng) for _ in range(layers)]
        self.ffns = [FeedForward(d, ffn_hidden, rng) for _ in range(layers)]
        self.norms1 = [LayerNorm(d) for _ in range(layers)]
        self.norms2 = [LayerNorm(d) for _ in range(layers)]
        self.norms3 = [LayerNorm(d) for _ in range(layers)]

    def __call__(self, x: Tensor, obj_text: Tensor, memory: Tensor) -> Tensor:
        if x.shape[0] == 0:
            return x
        if obj_text.shape != x.shape:
            raise NumericError(
                f"object text shape {obj_text.shape} does not match queries {x.shape}"
            )
        for i in range(len(self.self_attns)):
            qk = x + obj_text
            x = self.norms1[i](x + self.self_attns[i](qk, qk, x))
            joint = self.in_proj(T.concat([x, obj_text], axis=1))
            x = self.norms2[i](x + self.cross_attns[i](joint, memory, memory))
            x = self.norms3[i](x + self.ffns[i](x))
        return x


class InteractionModule(Module):
    """Query construction plus decoding; emits one interaction vector per pair."""

    def __init__(
        self,
        d: int,
        heads: int,
        ffn_hidden: int,
        rng: np.random.Generator,
        layers: int = 2,
        use_global: bool = True,
        use_roi: bool = True,
        use_objtext: bool = True,
    ):
        self.use_objtext = use_objtext
        self.queries = QueryBuilder(d, rng, use_global=use_global, use_roi=use_roi)
        self.decoder = InteractionDecoder(d, heads, ffn_hidden, rng, layers=layers)

    def __call__(
        self,
        appearance: Tensor,
        spatial_raw: Tensor,
        global_token: Tensor | None,
        roi: Tensor | None,
        obj_text: Tensor,
        memory: Tensor,
    ) -> Tensor:
        q = self.queries(appearance, spatial_raw, global_token, roi)
        if not self.use_objtext:
            obj_text = Tensor(np.zeros_like(obj_text.data))
        return self.decoder(q, obj_text, memory)
