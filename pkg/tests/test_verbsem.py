"""Tests for the verb-table refinement module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isahoi import tensor as T
from isahoi.tensor import NumericError, Tensor, finite_diff_check_params
from isahoi.verbsem import DualCrossAttention, VerbSemanticModule, build_verb_queries


def rng(seed=0):
    return np.random.default_rng(seed)


def make_inputs(r, c, d, mb=5, mc=3):
    emb = Tensor(r.normal(size=(c, d)))
    learned = Tensor(r.normal(size=(c, d)))
    gate = Tensor(r.normal(size=(1, d)))
    mem_b = Tensor(r.normal(size=(mb, d)))
    mem_c = Tensor(r.normal(size=(mc, d)))
    return emb, learned, gate, mem_b, mem_c


class TestBuildVerbQueries:
    def test_exact_small_case(self):
        table = Tensor(np.array([[1.0, 2.0]]))
        gate = Tensor(np.array([[3.0, 4.0]]))
        out = build_verb_queries(table, gate)
        assert np.array_equal(out.data, np.array([[3.0, 8.0, 1.0, 2.0]]))

    def test_width_doubles(self):
        table, _, gate, _, _ = make_inputs(rng(1), 7, 16)
        assert build_verb_queries(table, gate).shape == (7, 32)

    def test_gate_shape_mismatch(self):
        table, _, _, _, _ = make_inputs(rng(1), 7, 16)
        with pytest.raises(NumericError):
            build_verb_queries(table, Tensor(np.zeros((1, 8))))
        with pytest.raises(NumericError):
            build_verb_queries(table, Tensor(np.zeros((2, 16))))

    def test_gradient_through_gate(self):
        table = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
        gate = Tensor(np.array([[5.0, 6.0]]), requires_grad=True)
        T.backward(T.tsum(build_verb_queries(table, gate)))
        # d/dW sum([W*g, W]) = g + 1 per row; d/dg = column sums of W
        assert np.array_equal(table.grad, np.array([[6.0, 7.0], [6.0, 7.0]]))
        assert np.array_equal(gate.grad, np.array([[4.0, 6.0]]))


class TestDualCrossAttention:
    def test_single_shared_query_map(self):
        dual = DualCrossAttention(16, 4, rng(2))
        names = [n for n, _ in dual.named_parameters()]
        assert names.count("q_proj.weight") == 1
        assert not any("attn.q_proj" in n for n in names)
        assert any(n.startswith("backbone_attn.") for n in names)
        assert any(n.startswith("patch_attn.") for n in names)

    def test_branch_sum(self):
        d = 16
        dual = DualCrossAttention(d, 4, rng(2))
        x = Tensor(rng(3).normal(size=(3, d)))
        _, _, _, mem_b, mem_c = make_inputs(rng(4), 0, d)
        both = dual(x, mem_b, mem_c).data
        only_b = DualCrossAttention(d, 4, rng(2), use_patches=False)
        only_c = DualCrossAttention(d, 4, rng(2), use_backbone=False)
        assert not np.allclose(both, only_b(x, mem_b, mem_c).data)
        assert not np.allclose(both, only_c(x, mem_b, mem_c).data)

    def test_both_streams_off_rejected(self):
        with pytest.raises(NumericError):
            DualCrossAttention(16, 4, rng(2), use_backbone=False, use_patches=False)


class TestVerbSemanticModule:
    def test_zero_layers_passes_learnable_table(self):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(5), layers=0)
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        out = mod(emb, learned, gate, mem_b, mem_c)
        assert np.array_equal(out.data, learned.data)
        assert not np.array_equal(out.data, emb.data)

    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_output_shape(self, layers):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(5), layers=layers)
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        assert mod(emb, learned, gate, mem_b, mem_c).shape == (5, d)

    def test_table_shape_mismatch_rejected(self):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(5), layers=1)
        emb, _, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        with pytest.raises(NumericError):
            mod(emb, Tensor(np.zeros((4, d))), gate, mem_b, mem_c)

    @pytest.mark.parametrize("layers", [-1, 4])
    def test_depth_out_of_range(self, layers):
        with pytest.raises(NumericError):
            VerbSemanticModule(16, 4, 32, rng(5), layers=layers)

    def test_zero_mu_returns_learnable_table_bitwise(self):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(5), layers=2, mu=0.0)
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        out = mod(emb, learned, gate, mem_b, mem_c)
        assert np.array_equal(out.data, learned.data)

    def test_mu_scales_residual(self):
        d = 16
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        full = VerbSemanticModule(d, 4, 32, rng(5), layers=2, mu=0.5)
        half = VerbSemanticModule(d, 4, 32, rng(5), layers=2, mu=0.25)
        r_full = full(emb, learned, gate, mem_b, mem_c).data - learned.data
        r_half = half(emb, learned, gate, mem_b, mem_c).data - learned.data
        assert np.allclose(r_full, 2.0 * r_half, atol=1e-12)
        assert not np.allclose(r_full, 0.0)

    def test_gate_toggle_equals_unit_gate(self):
        d = 16
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        gated = VerbSemanticModule(d, 4, 32, rng(5), layers=2, use_gate=False)
        plain = VerbSemanticModule(d, 4, 32, rng(5), layers=2, use_gate=True)
        ones = Tensor(np.ones((1, d)))
        assert np.array_equal(
            gated(emb, learned, gate, mem_b, mem_c).data,
            plain(emb, learned, ones, mem_b, mem_c).data,
        )

    def test_stream_toggles_change_output(self):
        d = 16
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 5, d)
        base = VerbSemanticModule(d, 4, 32, rng(5), layers=1)
        no_b = VerbSemanticModule(d, 4, 32, rng(5), layers=1, use_backbone=False)
        no_c = VerbSemanticModule(d, 4, 32, rng(5), layers=1, use_patches=False)
        out = base(emb, learned, gate, mem_b, mem_c).data
        assert not np.allclose(out, no_b(emb, learned, gate, mem_b, mem_c).data)
        assert not np.allclose(out, no_c(emb, learned, gate, mem_b, mem_c).data)

    def test_category_row_permutation_equivariance(self):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(5), layers=2)
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(6), 6, d)
        out = mod(emb, learned, gate, mem_b, mem_c).data
        perm = np.array([5, 3, 0, 4, 1, 2])
        out_p = mod(
            Tensor(emb.data[perm]), Tensor(learned.data[perm]), gate, mem_b, mem_c
        ).data
        assert np.allclose(out_p, out[perm], atol=1e-12)

    def test_gradients(self):
        d = 16
        mod = VerbSemanticModule(d, 4, 32, rng(7), layers=2)
        r = rng(8)
        emb = Tensor(r.normal(size=(4, d)), requires_grad=True)
        learned = Tensor(r.normal(size=(4, d)), requires_grad=True)
        gate = Tensor(r.normal(size=(1, d)), requires_grad=True)
        mem_b = Tensor(r.normal(size=(5, d)))
        mem_c = Tensor(r.normal(size=(3, d)))
        weights = Tensor(r.normal(size=(4, d)))

        def loss():
            return T.tsum(T.hadamard(mod(emb, learned, gate, mem_b, mem_c), weights))

        params = mod.parameters() + [emb, learned, gate]
        err = finite_diff_check_params(loss, params, max_coords=4, rng=rng(9))
        assert err < 1e-4

    @settings(max_examples=20, deadline=None)
    @given(c=st.integers(min_value=1, max_value=6), seed=st.integers(0, 50))
    def test_finite_outputs(self, c, seed):
        d = 8
        mod = VerbSemanticModule(d, 2, 16, rng(10), layers=1)
        emb, learned, gate, mem_b, mem_c = make_inputs(rng(seed), c, d, mb=3, mc=2)
        out = mod(emb, learned, gate, mem_b, mem_c)
        assert out.shape == (c, d)
        assert np.all(np.isfinite(out.data))
