"""Optimization loop, dataset access, and batch prediction.

Training walks the image set in a seeded per-epoch order, accumulates
per-image focal-loss gradients over small batches, and steps a decoupled
weight-decay optimizer with a single late learning-rate drop. Zero-shot
splits train with the withheld categories masked out entirely, so their
embedding rows receive no gradient. Setting the ISA_THREADS environment
variable computes per-image gradients on a thread pool; the reduction
stays in image order, so results are bit-identical to the serial run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    HOITable,
    ImageAnnotation,
    assign_labels,
    load_annotations,
    load_fixture,
)
from .isaf import FixtureError
from .model import HOIModel, ImageInputs, ModelConfig, build_image_inputs, save_checkpoint
from .scoring import assemble_triplets, focal_loss, fuse_scores, triplet_records
from .splits import SplitSpec
from .tensor import NumericError, Tensor
from . import tensor as T


class TrainError(Exception):
    """Optimization aborted or misconfigured."""


@dataclass
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-4
    lr_drop_epoch: int = 10  # 1-indexed epoch at which the drop applies
    lr_drop_factor: float = 0.2
    batch_size: int = 4
    seed: int = 0
    alpha: float = 0.5
    gamma: float = 0.1
    lam: float = 0.26
    score_threshold: float = 0.2
    max_pairs: int | None = None
    top_k: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainError(f"batch size must be at least 1, got {self.batch_size}")
        if not self.lr > 0:
            raise TrainError(f"learning rate must be positive, got {self.lr}")
        if not 1 <= self.lr_drop_epoch < self.epochs:
            raise TrainError(
                f"the learning-rate drop epoch ({self.lr_drop_epoch}) must fall "
                f"inside the run (1..{self.epochs - 1})"
            )


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule over 1-indexed epochs."""
    if epoch >= config.lr_drop_epoch:
        return config.lr * config.lr_drop_factor
    return config.lr


class AdamW:
    """Adam with decoupled weight decay on the raw parameters."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1**t)
            v_hat = self._v[i] / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            )


# ---------------------------------------------------------------------------
# dataset access


@dataclass
class LoadedDataset:
    """A fully materialized dataset: fixtures, annotations, and tables."""

    table: HOITable
    object_matrix: np.ndarray
    category_matrix: np.ndarray  # one row per verb, or per composition
    images: list[ImageInputs]
    annotations: dict[str, ImageAnnotation] = field(default_factory=dict)
    hoi_categories: bool = False

    def annotation(self, image_id: str) -> ImageAnnotation:
        return self.annotations.get(image_id, ImageAnnotation(image_id, []))


def load_dataset(
    root,
    hoi_categories: bool = False,
    score_threshold: float = 0.2,
    max_pairs: int | None = None,
) -> LoadedDataset:
    """Reads the on-disk layout:

    root/hoi_table.json, root/annotations.jsonl, root/tables/objects.isaf,
    root/tables/{verbs|hois}.isaf, root/detections/<id>.isaf,
    root/clip/<id>.isaf.
    """
    root = Path(root)
    table = HOITable.load(root / "hoi_table.json")
    objects = load_fixture(root / "tables" / "objects.isaf", dim=None)
    dim = objects.matrix.shape[1]
    category_file = "hois.isaf" if hoi_categories else "verbs.isaf"
    categories = load_fixture(root / "tables" / category_file, dim=dim)
    expected_rows = len(table) if hoi_categories else table.num_verbs
    if categories.matrix.shape[0] != expected_rows:
        raise FixtureError(
            f"{category_file} has {categories.matrix.shape[0]} rows, expected {expected_rows}"
        )
    if objects.matrix.shape[0] < table.num_objects:
        raise FixtureError(
            f"objects table has {objects.matrix.shape[0]} rows but compositions "
            f"reference object ids up to {table.num_objects - 1}"
        )

    annotations = {}
    ann_path = root / "annotations.jsonl"
    if ann_path.exists():
        annotations = {a.image_id: a for a in load_annotations(ann_path)}

    images = []
    for det_path in sorted((root / "detections").glob("*.isaf")):
        clip_path = root / "clip" / det_path.name
        if not clip_path.exists():
            raise FixtureError(f"missing token fixture for image {det_path.stem!r}")
        det = load_fixture(det_path, dim=dim)
        clip = load_fixture(clip_path, dim=dim)
        images.append(
            build_image_inputs(det, clip, score_threshold=score_threshold, max_pairs=max_pairs)
        )
    if not images:
        raise FixtureError(f"no detection fixtures under {root / 'detections'}")
    return LoadedDataset(
        table=table,
        object_matrix=objects.matrix,
        category_matrix=categories.matrix,
        images=images,
        annotations=annotations,
        hoi_categories=hoi_categories,
    )


# ---------------------------------------------------------------------------
# training


def _prepare_targets(
    dataset: LoadedDataset, split: SplitSpec | None
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-image (labels, mask), with withheld categories fully masked out."""
    unseen = np.array(split.unseen, dtype=np.int64) if split else np.zeros(0, dtype=np.int64)
    out = []
    for inputs in dataset.images:
        labels, mask = assign_labels(
            inputs.pairs,
            dataset.annotation(inputs.image_id),
            dataset.table,
            hoi_categories=dataset.hoi_categories,
        )
        if unseen.size:
            labels = labels.copy()
            mask = mask.copy()
            labels[:, unseen] = 0.0
            mask[:, unseen] = 0.0
        out.append((labels, mask))
    return out


def _thread_count() -> int:
    raw = os.environ.get("ISA_THREADS", "").strip()
    if not raw:
        return 0
    try:
        return max(0, int(raw))
    except ValueError as err:
        raise TrainError(f"ISA_THREADS must be an integer, got {raw!r}") from err


def train(
    dataset: LoadedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    split: SplitSpec | None = None,
    checkpoint_path=None,
    log=None,
) -> tuple[HOIModel, list[float]]:
    """Trains a fresh model on the dataset; returns it with per-batch losses."""
    if split is not None and split.unseen and not model_config.hoi_categories:
        raise TrainError("splits with unseen categories require composition columns")
    if model_config.hoi_categories != dataset.hoi_categories:
        raise TrainError("model and dataset disagree about the category axis")
    model = HOIModel(model_config, dataset.object_matrix, dataset.category_matrix)
    params = model.parameters()
    optimizer = AdamW(params, lr=train_config.lr)
    targets = _prepare_targets(dataset, split)
    threads = _thread_count()

    def image_loss(index: int, batch_size: int, into: dict | None):
        inputs = dataset.images[index]
        labels, mask = targets[index]
        scores = model(inputs)
        loss = focal_loss(scores, labels, mask, alpha=train_config.alpha, gamma=train_config.gamma)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"loss for image {inputs.image_id!r} is not finite")
        T.backward(T.scale(loss, 1.0 / batch_size), into=into)
        return value

    losses: list[float] = []
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        optimizer.lr = learning_rate(train_config, epoch)
        order = np.random.default_rng([train_config.seed, epoch]).permutation(len(dataset.images))
        epoch_losses = []
        for start in range(0, len(order), train_config.batch_size):
            batch = [int(i) for i in order[start : start + train_config.batch_size]]
            optimizer.zero_grad()
            try:
                if threads > 1:
                    grad_dicts = [dict() for _ in batch]
                    with ThreadPoolExecutor(max_workers=threads) as pool:
                        futures = [
                            pool.submit(image_loss, idx, len(batch), grad_dicts[pos])
                            for pos, idx in enumerate(batch)
                        ]
                        batch_losses = [f.result() for f in futures]
                    # reduce in image order for bit-identical results
                    for grads in grad_dicts:
                        for p in params:
                            g = grads.get(id(p))
                            if g is not None:
                                p.grad = g if p.grad is None else p.grad + g
                else:
                    batch_losses = [image_loss(idx, len(batch), None) for idx in batch]
            except NumericError as err:
                raise TrainError(f"aborted at optimization step {step}: {err}") from err
            optimizer.step()
            step += 1
            batch_mean = float(np.mean(batch_losses))
            losses.append(batch_mean)
            epoch_losses.append(batch_mean)
            if log is not None:
                log(f"step {step:5d}  epoch {epoch:3d}  loss {batch_mean:.6f}  lr {optimizer.lr:g}")
        if log is not None:
            log(f"epoch {epoch:3d} done  mean loss {np.mean(epoch_losses):.6f}")
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model)
    return model, losses


# ---------------------------------------------------------------------------
# prediction


def predict(
    model: HOIModel,
    dataset: LoadedDataset,
    lam: float = 0.26,
    top_k: int = 100,
) -> list[dict]:
    """Scored triplet records for every image, ready for evaluation."""
    if model.config.hoi_categories != dataset.hoi_categories:
        raise TrainError("model and dataset disagree about the category axis")
    records = []
    for inputs in dataset.images:
        probs = model(inputs)
        _, mask = assign_labels(
            inputs.pairs,
            ImageAnnotation(inputs.image_id, []),
            dataset.table,
            hoi_categories=dataset.hoi_categories,
        )
        conf = np.array([p.confidence for p in inputs.pairs], dtype=np.float64)
        fused = fuse_scores(conf, probs.data, lam)
        triplets = assemble_triplets(fused, mask, top_k=top_k)
        records.extend(
            triplet_records(
                inputs.image_id,
                inputs.pairs,
                triplets,
                table=dataset.table if dataset.hoi_categories else None,
            )
        )
    return records
