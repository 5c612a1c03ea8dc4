"""Parameterized layers: linear projections, multi-head attention, MLPs.

All parameters are float64 tensors created from a caller-supplied seeded
generator, so identical seeds give bit-identical parameters. Weights are
uniform in +/- 1/sqrt(d_in), biases start at zero, layer-norm affines at
identity.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import NumericError, Tensor


class Module:
    """Base with recursive, insertion-ordered parameter discovery."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for attr, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out.append((attr, val))
            elif isinstance(val, Module):
                out.extend((f"{attr}.{n}", t) for n, t in val.named_parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{attr}.{i}.{n}", t) for n, t in item.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def init_weight(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    bound = 1.0 / np.sqrt(d_in)
    return Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)


def broadcast_rows(row: Tensor, n: int) -> Tensor:
    """Repeat a (1 x d) tensor to (n x d) differentiably."""
    if row.shape[0] != 1:
        raise NumericError(f"expected a single row to broadcast, got {row.shape}")
    return T.matmul(Tensor(np.ones((n, 1))), row)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = init_weight(rng, d_in, d_out)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, eps=self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head splits and output projection.

    No positional encodings and no dropout, so the layer is permutation
    equivariant in query rows and permutation invariant in key/value order.
    """

    def __init__(
        self,
        d: int,
        heads: int,
        rng: np.random.Generator,
        d_q: int | None = None,
        d_k: int | None = None,
        d_v: int | None = None,
        project_q: bool = True,
    ):
        if d % heads != 0:
            raise NumericError(f"model dim {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        # With project_q=False the caller supplies already-projected queries,
        # letting several attention blocks share one query map.
        self.q_proj = Linear(d_q or d, d, rng) if project_q else None
        # A key bias shifts every logit in a softmax row by the same amount, so it
        # can never affect the output; omit the dead parameter.
        self.k_proj = Linear(d_k or d, d, rng, bias=False)
        self.v_proj = Linear(d_v or d, d, rng)
        self.out_proj = Linear(d, d, rng)

    def _split(self, x: Tensor, n: int) -> Tensor:
        dh = self.d // self.heads
        return T.transpose(T.reshape(x, (n, self.heads, dh)), (1, 0, 2))

    def _project_q(self, q: Tensor) -> Tensor:
        return self.q_proj(q) if self.q_proj is not None else q

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        nq, nk = q.shape[0], k.shape[0]
        if nk < 1:
            raise NumericError("attention requires at least one key/value row")
        dh = self.d // self.heads
        qh = self._split(self._project_q(q), nq)
        kh = self._split(self.k_proj(k), nk)
        vh = self._split(self.v_proj(v), nk)
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, vh)  # heads x nq x dh
        merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (nq, self.d))
        return self.out_proj(merged)

    def weights(self, q: Tensor, k: Tensor) -> np.ndarray:
        """Row-stochastic attention matrices (heads x Nq x Nk), for inspection."""
        nq, nk = q.shape[0], k.shape[0]
        dh = self.d // self.heads
        qh = self._split(self._project_q(q), nq)
        kh = self._split(self.k_proj(k), nk)
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
        return T.softmax(scores, axis=-1).data


class FeedForward(Module):
    """Two-layer position-wise MLP (d -> hidden -> d) with a rectifier."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class FusionMLP(Module):
    """Fuses a concatenated feature block down to the model width."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_out, rng)
        self.fc2 = Linear(d_out, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))
