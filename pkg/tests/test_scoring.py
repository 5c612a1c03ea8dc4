"""Tests for similarity scoring, the focal objective, and score fusion."""

import mpmath as mp
import numpy as np
import pytest

from isahoi import tensor as T
from isahoi.data import HOIPair, HOITable
from isahoi.scoring import (
    assemble_triplets,
    focal_loss,
    fuse_scores,
    read_triplets,
    triplet_records,
    verb_scores,
    write_triplets,
)
from isahoi.tensor import NumericError, Tensor, finite_diff_check_params

mp.mp.dps = 50


def sigmoid_oracle(x) -> float:
    return float(1 / (1 + mp.exp(-mp.mpf(x))))


def focal_oracle(p, y, alpha=0.5, gamma=0.1) -> float:
    p = mp.mpf(p)
    p_t = p if y == 1 else 1 - p
    a_t = mp.mpf(alpha) if y == 1 else 1 - mp.mpf(alpha)
    return float(-a_t * (1 - p_t) ** mp.mpf(gamma) * mp.log(p_t))


class TestVerbScores:
    def test_identical_direction(self):
        out = verb_scores(Tensor(np.array([[3.0, 4.0]])), Tensor(np.array([[6.0, 8.0]])))
        assert abs(out.data[0, 0] - sigmoid_oracle(1)) < 1e-12

    def test_orthogonal_is_half(self):
        out = verb_scores(Tensor(np.array([[1.0, 0.0]])), Tensor(np.array([[0.0, 5.0]])))
        assert out.data[0, 0] == 0.5

    def test_opposite_direction(self):
        out = verb_scores(Tensor(np.array([[1.0, 0.0]])), Tensor(np.array([[-2.0, 0.0]])))
        assert abs(out.data[0, 0] - sigmoid_oracle(-1)) < 1e-12

    def test_temperature_sharpens(self):
        i = Tensor(np.array([[1.0, 0.0]]))
        v = Tensor(np.array([[1.0, 0.0]]))
        out = verb_scores(i, v, temperature=0.5)
        assert abs(out.data[0, 0] - sigmoid_oracle(2)) < 1e-12

    @pytest.mark.parametrize("temp", [0.0, -1.0])
    def test_bad_temperature(self, temp):
        i = Tensor(np.zeros((1, 2)))
        with pytest.raises(NumericError):
            verb_scores(i, i, temperature=temp)

    def test_row_scale_invariance(self):
        r = np.random.default_rng(0)
        i = Tensor(r.normal(size=(3, 8)))
        v = Tensor(r.normal(size=(5, 8)))
        a = verb_scores(i, v).data
        b = verb_scores(Tensor(7.0 * i.data), Tensor(0.25 * v.data)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_shape_and_range(self):
        r = np.random.default_rng(1)
        out = verb_scores(Tensor(r.normal(size=(3, 8))), Tensor(r.normal(size=(4, 8))))
        assert out.shape == (3, 4)
        assert np.all((out.data > 0) & (out.data < 1))

    def test_width_mismatch(self):
        with pytest.raises(NumericError):
            verb_scores(Tensor(np.zeros((2, 8))), Tensor(np.zeros((3, 4))))


class TestFocalLoss:
    def test_positive_cell(self):
        loss = focal_loss(Tensor(np.array([[0.9]])), np.array([[1]]), np.array([[1]]))
        assert abs(loss.data - focal_oracle(0.9, 1)) < 1e-12

    def test_negative_cell(self):
        loss = focal_loss(Tensor(np.array([[0.9]])), np.array([[0]]), np.array([[1]]))
        assert abs(loss.data - focal_oracle(0.9, 0)) < 1e-12

    def test_masked_cell_contributes_exactly_zero(self):
        wide = focal_loss(
            Tensor(np.array([[0.9, 0.001]])), np.array([[1, 0]]), np.array([[1, 0]])
        )
        narrow = focal_loss(Tensor(np.array([[0.9]])), np.array([[1]]), np.array([[1]]))
        assert wide.data == narrow.data

    def test_sum_over_positives_normalization(self):
        one = focal_loss(Tensor(np.array([[0.7]])), np.array([[1]]), np.array([[1]]))
        two = focal_loss(
            Tensor(np.array([[0.7, 0.7]])), np.array([[1, 1]]), np.array([[1, 1]])
        )
        assert abs(two.data - one.data) < 1e-15

    def test_no_positives_divides_by_one(self):
        loss = focal_loss(Tensor(np.array([[0.3, 0.6]])), np.array([[0, 0]]), np.array([[1, 1]]))
        expected = focal_oracle(0.3, 0) + focal_oracle(0.6, 0)
        assert abs(loss.data - expected) < 1e-12

    def test_alpha_weighting(self):
        loss = focal_loss(
            Tensor(np.array([[0.9]])), np.array([[1]]), np.array([[1]]), alpha=0.25
        )
        assert abs(loss.data - focal_oracle(0.9, 1, alpha=0.25)) < 1e-12

    def test_label_outside_mask_rejected(self):
        with pytest.raises(NumericError):
            focal_loss(Tensor(np.array([[0.9]])), np.array([[1]]), np.array([[0]]))

    def test_non_binary_rejected(self):
        with pytest.raises(NumericError):
            focal_loss(Tensor(np.array([[0.9]])), np.array([[0.5]]), np.array([[1]]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(NumericError):
            focal_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)), np.ones((2, 2)))

    @pytest.mark.parametrize("kwargs", [{"alpha": -0.1}, {"alpha": 1.5}, {"gamma": -1.0}])
    def test_bad_hyperparameters(self, kwargs):
        with pytest.raises(NumericError):
            focal_loss(Tensor(np.array([[0.9]])), np.array([[1]]), np.array([[1]]), **kwargs)

    def test_gradient_through_sigmoid(self):
        r = np.random.default_rng(2)
        logits = Tensor(r.normal(size=(2, 3)), requires_grad=True)
        labels = np.array([[1, 0, 0], [0, 1, 0]])
        mask = np.array([[1, 1, 0], [1, 1, 1]])

        def loss():
            return focal_loss(T.sigmoid(logits), labels, mask)

        assert finite_diff_check_params(loss, [logits]) < 1e-4


class TestFuseScores:
    def test_oracle_value(self):
        out = fuse_scores(np.array([0.8]), np.array([[0.5]]), 0.26)
        expected = float(mp.mpf(0.8) ** (1 - mp.mpf(0.26)) * mp.mpf(0.5) ** mp.mpf(0.26))
        assert abs(out[0, 0] - expected) < 1e-12

    def test_lam_zero_passes_pair_confidence(self):
        s_c = np.array([0.8, 0.3])
        s_v = np.random.default_rng(3).uniform(size=(2, 4))
        out = fuse_scores(s_c, s_v, 0.0)
        assert np.array_equal(out, np.repeat(s_c[:, None], 4, axis=1))

    def test_lam_one_passes_verb_scores(self):
        s_v = np.random.default_rng(4).uniform(size=(2, 4))
        out = fuse_scores(np.array([0.8, 0.3]), s_v, 1.0)
        assert np.array_equal(out, s_v)

    @pytest.mark.parametrize("lam", [-0.1, 1.1])
    def test_lam_out_of_range(self, lam):
        with pytest.raises(NumericError):
            fuse_scores(np.array([0.5]), np.array([[0.5]]), lam)

    def test_shape_mismatch(self):
        with pytest.raises(NumericError):
            fuse_scores(np.array([0.5, 0.5]), np.array([[0.5]]), 0.5)

    @pytest.mark.parametrize("bad", [1.5, -0.2, np.nan])
    def test_bad_probabilities(self, bad):
        with pytest.raises(NumericError):
            fuse_scores(np.array([0.5]), np.array([[bad]]), 0.5)


class TestAssembleTriplets:
    def test_ordering_and_ties(self):
        fused = np.array([[0.9, 0.2, 0.5], [0.9, 0.7, 0.1]])
        mask = np.array([[1, 0, 1], [1, 1, 1]])
        got = assemble_triplets(fused, mask, top_k=10)
        assert got == [
            (0, 0, 0.9),
            (1, 0, 0.9),
            (1, 1, 0.7),
            (0, 2, 0.5),
            (1, 2, 0.1),
        ]

    def test_masked_cells_never_emitted(self):
        fused = np.array([[0.9, 0.95]])
        mask = np.array([[1, 0]])
        got = assemble_triplets(fused, mask)
        assert got == [(0, 0, 0.9)]

    def test_top_k_truncates(self):
        fused = np.tile(np.linspace(0.9, 0.1, 5), (2, 1))
        mask = np.ones((2, 5))
        got = assemble_triplets(fused, mask, top_k=3)
        assert len(got) == 3
        assert [g[2] for g in got] == [0.9, 0.9, 0.7]

    def test_zero_top_k(self):
        assert assemble_triplets(np.ones((1, 1)), np.ones((1, 1)), top_k=0) == []

    def test_validation(self):
        with pytest.raises(NumericError):
            assemble_triplets(np.ones((1, 2)), np.ones((1, 3)))
        with pytest.raises(NumericError):
            assemble_triplets(np.ones((1, 1)), np.ones((1, 1)), top_k=-1)


def make_pair(object_class=7):
    return HOIPair(
        human_index=0,
        target_index=1,
        human_box=np.array([0.0, 0.0, 10.0, 10.0]),
        target_box=np.array([5.0, 5.0, 20.0, 20.0]),
        confidence=0.8,
        object_class=object_class,
        appearance=np.zeros(4),
        spatial_raw=np.zeros(36),
        roi=np.zeros(2),
    )


class TestTripletRecords:
    def test_verb_columns(self):
        recs = triplet_records("im1", [make_pair()], [(0, 3, 0.6)])
        assert recs == [
            {
                "image_id": "im1",
                "human_box": [0.0, 0.0, 10.0, 10.0],
                "object_box": [5.0, 5.0, 20.0, 20.0],
                "object_class": 7,
                "verb": 3,
                "score": 0.6,
            }
        ]

    def test_composition_columns(self):
        table = HOITable([(0, 0), (7, 3)])
        recs = triplet_records("im1", [make_pair()], [(0, 1, 0.6)], table=table)
        assert recs[0]["object_class"] == 7
        assert recs[0]["verb"] == 3

    def test_composition_object_mismatch(self):
        table = HOITable([(0, 0), (5, 3)])
        with pytest.raises(NumericError):
            triplet_records("im1", [make_pair()], [(0, 1, 0.6)], table=table)

    def test_jsonl_round_trip(self, tmp_path):
        recs = triplet_records("im1", [make_pair()], [(0, 3, 0.6), (0, 1, 0.4)])
        path = tmp_path / "preds.jsonl"
        write_triplets(path, recs)
        assert read_triplets(path) == recs

    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        write_triplets(path, [])
        assert read_triplets(path) == []
