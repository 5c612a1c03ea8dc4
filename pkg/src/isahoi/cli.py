"""Command-line driver: train, predict, eval, split, and selfcheck.

Exit codes follow the usual convention: 0 on success, 1 for runtime
failures (missing files, bad fixtures, aborted optimization), 2 for usage
errors (argparse handles those). The ISA_THREADS environment variable caps
the number of worker threads used during training.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from .data import HOITable, load_annotations
from .evalmap import EvalError, evaluate, format_report, summarize, write_report
from .model import ModelConfig, load_checkpoint
from .scoring import read_triplets, write_triplets
from .splits import (
    SplitError,
    SplitSpec,
    hoi_counts,
    make_regular,
    make_uc,
    make_uo,
    make_uv,
)
from .tensor import NumericError
from .train import TrainConfig, TrainError, load_dataset, predict, train

RUNTIME_ERRORS = (ValueError, NumericError, SplitError, EvalError, TrainError, OSError)


def _id_list(raw: str) -> list[int]:
    """Comma-separated non-negative integers, e.g. ``"0,3,17"``."""
    try:
        return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--mu", type=float, default=0.5, help="refinement residual weight")
    sub.add_argument("--temperature", type=float, default=1.0, help="similarity temperature")
    sub.add_argument("--heads", type=int, default=8, help="attention heads")
    sub.add_argument("--ffn-hidden", type=int, default=2048, help="feed-forward width")
    sub.add_argument("--if-layers", type=int, default=2, help="interaction decoder depth")
    sub.add_argument("--vsi-layers", type=int, default=2, help="refinement decoder depth")
    boolean = argparse.BooleanOptionalAction
    sub.add_argument("--use-global", action=boolean, default=True,
                     help="feed the image context token into pair queries")
    sub.add_argument("--use-roi", action=boolean, default=True,
                     help="feed pooled union-box features into pair queries")
    sub.add_argument("--use-objtext", action=boolean, default=True,
                     help="add object prompt rows to the pair queries")
    sub.add_argument("--vsi-gate", action=boolean, default=True,
                     help="gate category queries with the context token")
    sub.add_argument("--vsi-backbone", action=boolean, default=True,
                     help="attend categories over backbone features")
    sub.add_argument("--vsi-patches", action=boolean, default=True,
                     help="attend categories over patch tokens")
    sub.add_argument("--train-text", action="store_true",
                     help="unfreeze the prompt embedding tables")
    sub.add_argument("--hoi-categories", action="store_true",
                     help="score composition columns instead of verb columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isahoi",
        description="Human-object interaction recognition over embedding fixtures.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="fit a model and write a checkpoint")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--epochs", type=int, default=15)
    p_train.add_argument("--lr", type=float, default=1e-4)
    p_train.add_argument("--lr-drop-epoch", type=int, default=10)
    p_train.add_argument("--lr-drop-factor", type=float, default=0.2)
    p_train.add_argument("--batch", type=int, default=4, help="images per optimization step")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--alpha", type=float, default=0.5, help="focal class balance")
    p_train.add_argument("--gamma", type=float, default=0.1, help="focal focusing exponent")
    p_train.add_argument("--lambda", dest="lam", type=float, default=0.26,
                         help="geometric fusion weight on the verb score")
    p_train.add_argument("--split", help="split file; zero-shot kinds force composition columns")
    p_train.add_argument("--score-threshold", type=float, default=0.2,
                         help="minimum detector confidence for a proposal")
    _add_model_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_pred = subs.add_parser("predict", help="score a dataset with a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", required=True, help="dataset directory")
    p_pred.add_argument("--out", required=True, help="output JSONL path")
    p_pred.add_argument("--lambda", dest="lam", type=float, default=0.26)
    p_pred.add_argument("--top-k", type=int, default=100, help="triplets kept per image")
    p_pred.add_argument("--score-threshold", type=float, default=0.2)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = subs.add_parser("eval", help="mean average precision of a score file")
    p_eval.add_argument("--scores", required=True, help="triplet JSONL from predict")
    p_eval.add_argument("--data", required=True, help="directory with table + annotations")
    p_eval.add_argument("--split", help="split file; adds seen/unseen rows to the report")
    p_eval.add_argument("--out", help="directory for report.json and report.txt")
    p_eval.set_defaults(func=cmd_eval)

    p_split = subs.add_parser("split", help="write a category split file")
    p_split.add_argument("--kind", required=True,
                         choices=["regular", "nf-uc", "rf-uc", "uo", "uv"])
    p_split.add_argument("--data", required=True, help="directory with table + counts")
    p_split.add_argument("--out", required=True, help="output JSON path")
    p_split.add_argument("--target", type=int, default=120,
                         help="compositions to withhold for the uc kinds")
    p_split.add_argument("--unseen-objects", type=_id_list, default=None,
                         help="object ids to withhold (kind uo)")
    p_split.add_argument("--unseen-verbs", type=_id_list, default=None,
                         help="verb ids to withhold (kind uv)")
    p_split.set_defaults(func=cmd_split)

    p_check = subs.add_parser("selfcheck", help="gradient checks and fixture round-trips")
    p_check.set_defaults(func=cmd_selfcheck)

    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    split = SplitSpec.load(args.split) if args.split else None
    hoi_categories = args.hoi_categories
    if split is not None and split.kind != "regular":
        hoi_categories = True  # zero-shot kinds train on composition columns
    dataset = load_dataset(
        args.data, hoi_categories=hoi_categories, score_threshold=args.score_threshold
    )
    model_config = ModelConfig(
        d=dataset.object_matrix.shape[1],
        heads=args.heads,
        ffn_hidden=args.ffn_hidden,
        if_layers=args.if_layers,
        vsi_layers=args.vsi_layers,
        mu=args.mu,
        temperature=args.temperature,
        use_global=args.use_global,
        use_roi=args.use_roi,
        use_objtext=args.use_objtext,
        vsi_gate=args.vsi_gate,
        vsi_backbone=args.vsi_backbone,
        vsi_patches=args.vsi_patches,
        hoi_categories=hoi_categories,
        train_text=args.train_text,
        seed=args.seed,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        lr_drop_epoch=args.lr_drop_epoch,
        lr_drop_factor=args.lr_drop_factor,
        batch_size=args.batch,
        seed=args.seed,
        alpha=args.alpha,
        gamma=args.gamma,
        lam=args.lam,
        score_threshold=args.score_threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "checkpoint.isaf"
    _, losses = train(
        dataset, model_config, train_config, split=split, checkpoint_path=checkpoint, log=print
    )
    curve = out / "losses.json"
    curve.write_text(json.dumps(losses) + "\n")
    print(f"wrote {checkpoint} and {curve}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(
        args.data,
        hoi_categories=model.config.hoi_categories,
        score_threshold=args.score_threshold,
    )
    records = predict(model, dataset, lam=args.lam, top_k=args.top_k)
    write_triplets(args.out, records)
    print(f"wrote {len(records)} triplets for {len(dataset.images)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    records = read_triplets(args.scores)
    data = Path(args.data)
    table = HOITable.load(data / "hoi_table.json")
    annotations = load_annotations(data / "annotations.jsonl")
    per_category = evaluate(records, annotations, table)
    groups = {"full": list(range(len(table)))}
    if args.split:
        split = SplitSpec.load(args.split)
        if split.unseen:
            groups["seen"] = split.seen
            groups["unseen"] = split.unseen
    summary = summarize(per_category, groups)
    text = format_report(summary)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "report.json", summary, per_category)
        (out / "report.txt").write_text(text + "\n")
        print(f"wrote {out / 'report.json'} and {out / 'report.txt'}")
    return 0


def _load_counts(data: Path, table: HOITable) -> dict[int, int]:
    counts_path = data / "counts.json"
    if counts_path.exists():
        raw = json.loads(counts_path.read_text())
        return {int(k): int(v) for k, v in raw.items()}
    ann_path = data / "annotations.jsonl"
    if ann_path.exists():
        return hoi_counts(load_annotations(ann_path), table)
    raise SplitError(f"{data}: need counts.json or annotations.jsonl to rank categories")


def cmd_split(args) -> int:
    data = Path(args.data)
    table = HOITable.load(data / "hoi_table.json")
    if args.kind == "regular":
        spec = make_regular(table)
    elif args.kind in ("nf-uc", "rf-uc"):
        counts = _load_counts(data, table)
        spec = make_uc(table, counts, args.kind.split("-")[0], target=args.target)
    elif args.kind == "uo":
        if not args.unseen_objects:
            raise SplitError("kind uo needs --unseen-objects")
        spec = make_uo(table, args.unseen_objects)
    else:
        if not args.unseen_verbs:
            raise SplitError("kind uv needs --unseen-verbs")
        spec = make_uv(table, args.unseen_verbs)
    spec.save(args.out)
    print(f"wrote {args.out}: kind {spec.kind}, {len(spec.unseen)} unseen, {len(spec.seen)} seen")
    return 0


# ---------------------------------------------------------------------------
# selfcheck


def _check_gradients() -> None:
    from .scoring import focal_loss
    from .synth import make_synthetic_dataset
    from .tensor import finite_diff_check_params
    from .train import _prepare_targets

    with tempfile.TemporaryDirectory() as tmp:
        make_synthetic_dataset(
            tmp, num_images=2, num_objects=3, num_verbs=3, seed=3,
            d=16, grid=(2, 2), num_patches=4,
        )
        dataset = load_dataset(tmp)
        config = ModelConfig(
            d=16, heads=2, ffn_hidden=24, if_layers=1, vsi_layers=1, seed=1, temperature=0.5
        )
        from .model import HOIModel

        model = HOIModel(config, dataset.object_matrix, dataset.category_matrix)
        inputs = dataset.images[0]
        labels, mask = _prepare_targets(dataset, None)[0]

        def loss():
            return focal_loss(model(inputs), labels, mask)

        err = finite_diff_check_params(
            loss, model.parameters(), max_coords=2, rng=np.random.default_rng(0)
        )
        if not err < 1e-4:
            raise NumericError(f"gradient check error {err:.3e} exceeds 1e-4")


def _check_fixture_round_trips() -> None:
    from .data import load_fixture, save_clip_fixture, save_detection_fixture
    from .synth import make_synthetic_dataset

    with tempfile.TemporaryDirectory() as tmp:
        table = make_synthetic_dataset(
            tmp, num_images=2, num_objects=3, num_verbs=3, seed=5,
            d=16, grid=(2, 2), num_patches=4,
        )
        root = Path(tmp)
        det = load_fixture(root / "detections" / "img000.isaf", dim=16)
        clip = load_fixture(root / "clip" / "img000.isaf", dim=16)
        save_detection_fixture(root / "det2.isaf", det)
        save_clip_fixture(root / "clip2.isaf", clip)
        det2 = load_fixture(root / "det2.isaf", dim=16)
        clip2 = load_fixture(root / "clip2.isaf", dim=16)
        if not (
            np.array_equal(det.boxes, det2.boxes)
            and np.array_equal(det.appearance, det2.appearance)
            and np.array_equal(det.feature_map, det2.feature_map)
            and np.array_equal(clip.global_token, clip2.global_token)
            and np.array_equal(clip.patch_tokens, clip2.patch_tokens)
        ):
            raise NumericError("fixture round trip altered tensor payloads")

        table.save(root / "table2.json")
        if HOITable.load(root / "table2.json").pairs != table.pairs:
            raise NumericError("category table round trip altered the pair list")

        spec = SplitSpec("nf-uc", sorted(set(range(len(table))) - {1, 2}), [1, 2])
        spec.save(root / "split2.json")
        loaded = SplitSpec.load(root / "split2.json")
        if loaded.unseen != spec.unseen or loaded.seen != spec.seen:
            raise NumericError("split file round trip altered the id sets")


def _check_checkpoint_round_trip() -> None:
    from .model import HOIModel, save_checkpoint
    from .synth import make_synthetic_dataset

    with tempfile.TemporaryDirectory() as tmp:
        make_synthetic_dataset(
            tmp, num_images=2, num_objects=3, num_verbs=3, seed=9,
            d=16, grid=(2, 2), num_patches=4,
        )
        dataset = load_dataset(tmp)
        config = ModelConfig(d=16, heads=2, ffn_hidden=24, if_layers=1, vsi_layers=1, seed=2)
        model = HOIModel(config, dataset.object_matrix, dataset.category_matrix)
        path = Path(tmp) / "model.isaf"
        save_checkpoint(path, model)
        reloaded = load_checkpoint(path)
        for (name, a), (_, b) in zip(model.named_state(), reloaded.named_state()):
            # the container stores float32, so compare at storage precision
            stored = a.data.astype(np.float32).astype(np.float64)
            if not np.array_equal(stored, b.data):
                raise NumericError(f"checkpoint round trip altered {name}")


def cmd_selfcheck(args) -> int:
    checks = [
        ("gradients", _check_gradients),
        ("fixture round trips", _check_fixture_round_trips),
        ("checkpoint round trip", _check_checkpoint_round_trip),
    ]
    failures = 0
    for name, fn in checks:
        try:
            fn()
        except Exception as err:  # report every failing check before exiting
            failures += 1
            print(f"FAIL  {name}: {err}")
        else:
            print(f"ok    {name}")
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
