import numpy as np
import pytest

from batchspec.quant import (
    GroupAxis,
    QuantTensor,
    dequantize,
    fake_quant_per_head,
    int_gemm_dequant,
    quantize_activations_per_token,
    quantize_kqv_per_head,
    quantize_weights_per_channel,
)


class TestPerChannelWeights:
    def test_hand_computed_channel(self):
        w = np.array([[1.0], [-2.0], [0.5]])
        qt = quantize_weights_per_channel(w)
        assert qt.scales[0] == pytest.approx(2.0 / 127)
        assert qt.payload[:, 0].tolist() == [64, -127, 32]
        assert qt.axis is GroupAxis.PER_CHANNEL

    def test_all_zero_channel(self):
        qt = quantize_weights_per_channel(np.zeros((4, 2)))
        assert (qt.scales == 1.0).all()
        assert (qt.payload == 0).all()

    def test_max_entry_roundtrips(self):
        rng = np.random.default_rng(42)
        w = rng.standard_normal((16, 8))
        qt = quantize_weights_per_channel(w)
        deq = dequantize(qt)
        idx = np.abs(w).argmax(axis=0)
        for c in range(8):
            np.testing.assert_allclose(deq[idx[c], c], w[idx[c], c],
                                       rtol=3e-16)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            quantize_weights_per_channel(np.array([[1.0], [np.inf]]))


class TestPerTokenActivations:
    def test_single_row_matches_channel_formula(self):
        row = np.array([1.0, -2.0, 0.5])
        qa = quantize_activations_per_token(row[None, :])
        qw = quantize_weights_per_channel(row[:, None])
        assert qa.payload[0].tolist() == qw.payload[:, 0].tolist()
        assert qa.scales[0] == qw.scales[0]

    def test_distinct_scales_per_token(self):
        a = np.array([[1.0, 0.5], [100.0, 50.0]])
        qt = quantize_activations_per_token(a)
        assert qt.scales[0] != qt.scales[1]
        assert qt.scales[1] == pytest.approx(100.0 / 127)

    def test_roundtrip_error_bounded_by_half_scale(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.standard_normal((6, 32)) * rng.uniform(0.01, 100)
            qt = quantize_activations_per_token(a)
            err = np.abs(dequantize(qt) - a)
            bound = qt.scales[:, None] / 2 * (1 + 1e-12)
            assert (err <= bound).all()


class TestPerHeadKqv:
    def test_single_head_equals_per_token(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((5, 16))
        qh = quantize_kqv_per_head(t, 1)
        qt = quantize_activations_per_token(t)
        assert np.array_equal(qh.payload, qt.payload)
        np.testing.assert_allclose(qh.scales[:, 0], qt.scales)

    def test_disjoint_head_magnitudes_get_independent_scales(self):
        t = np.concatenate([np.full((3, 4), 0.01), np.full((3, 4), 50.0)],
                           axis=1)
        qt = quantize_kqv_per_head(t, 2)
        assert qt.scales.shape == (3, 2)
        assert (qt.scales[:, 0] == pytest.approx(0.01 / 127))
        assert (qt.scales[:, 1] == pytest.approx(50.0 / 127))

    def test_roundtrip_error_bounded_by_group_scale(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((7, 24)) * 3
        qt = quantize_kqv_per_head(t, 4)
        err = np.abs(dequantize(qt) - t).reshape(7, 4, 6)
        bound = qt.scales[:, :, None] / 2 * (1 + 1e-12)
        assert (err <= bound).all()

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError):
            quantize_kqv_per_head(np.zeros((2, 10)), 3)

    def test_fake_quant_is_idempotent(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal((4, 16))
        once = fake_quant_per_head(t, 2)
        twice = fake_quant_per_head(once, 2)
        np.testing.assert_allclose(once, twice, atol=1e-12)


class TestIntGemm:
    def test_one_by_one_case(self):
        aq = QuantTensor(np.array([[3]], dtype=np.int8), np.array([0.5]),
                         GroupAxis.PER_TOKEN)
        wq = QuantTensor(np.array([[-2]], dtype=np.int8), np.array([0.25]),
                         GroupAxis.PER_CHANNEL)
        out = int_gemm_dequant(aq, wq, bias=np.array([1.0]))
        assert out[0, 0] == pytest.approx(3 * -2 * 0.5 * 0.25 + 1.0)

    def test_factorization_exactness(self):
        # integer accumulation then scaling equals the float GEMM of the
        # dequantized operands, to float64 rounding
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = rng.standard_normal((8, 16)) * rng.uniform(0.1, 10)
            w = rng.standard_normal((16, 8)) * rng.uniform(0.1, 10)
            aq = quantize_activations_per_token(a)
            wq = quantize_weights_per_channel(w)
            got = int_gemm_dequant(aq, wq)
            ref = dequantize(aq) @ dequantize(wq)
            denom = max(np.abs(ref).max(), 1e-30)
            assert np.abs(got - ref).max() / denom <= 1e-6

    def test_close_to_unquantized_gemm(self):
        rng = np.random.default_rng(5)
        errs = []
        for _ in range(20):
            a = rng.standard_normal((8, 64))
            w = rng.standard_normal((64, 32))
            got = int_gemm_dequant(quantize_activations_per_token(a),
                                   quantize_weights_per_channel(w))
            ref = a @ w
            errs.append(np.linalg.norm(got - ref) / np.linalg.norm(ref))
        assert max(errs) <= 0.02

    def test_bias_and_residual_fused(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((3, 8))
        w = rng.standard_normal((8, 5))
        bias = rng.standard_normal(5)
        residual = rng.standard_normal((3, 5))
        aq = quantize_activations_per_token(a)
        wq = quantize_weights_per_channel(w)
        plain = int_gemm_dequant(aq, wq)
        fused = int_gemm_dequant(aq, wq, bias=bias, residual=residual)
        np.testing.assert_allclose(fused, plain + bias + residual,
                                   atol=1e-12)

    def test_axis_and_dim_validation(self):
        rng = np.random.default_rng(7)
        aq = quantize_activations_per_token(rng.standard_normal((2, 4)))
        wq = quantize_weights_per_channel(rng.standard_normal((4, 3)))
        with pytest.raises(ValueError):
            int_gemm_dequant(wq, wq)
        with pytest.raises(ValueError):
            int_gemm_dequant(aq, aq)
        bad_w = quantize_weights_per_channel(rng.standard_normal((5, 3)))
        with pytest.raises(ValueError):
            int_gemm_dequant(aq, bad_w)


class TestInvariants:
    def test_scale_invariance_of_payloads(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((12, 6))
        base = quantize_weights_per_channel(w)
        for c in (0.5, 3.0, 1000.0):
            scaled = quantize_weights_per_channel(c * w)
            np.testing.assert_allclose(scaled.scales, c * base.scales,
                                       rtol=1e-12)
            # payloads match except where rounding sits exactly on a tie
            assert np.abs(scaled.payload.astype(int)
                          - base.payload.astype(int)).max() <= 1

    def test_payload_bounds_for_wild_inputs(self):
        rng = np.random.default_rng(9)
        for scale in (1e-30, 1.0, 1e30):
            x = rng.standard_normal((5, 8)) * scale
            for qt in (quantize_activations_per_token(x),
                       quantize_weights_per_channel(x),
                       quantize_kqv_per_head(x, 2)):
                assert np.abs(qt.payload.astype(int)).max() <= 127
                assert (qt.scales > 0).all()


class TestQuantizedInference:
    def test_greedy_token_match_rate_small_run(self):
        from batchspec.engine import GenerationRequest, decode_regular
        from batchspec.model import MainModel, desk_config, init_model
        cfg = desk_config(n_layer=2, n_head=4, d_model=64, vocab_size=96,
                          max_seq_len=256)
        w = init_model(cfg, 31)
        req = GenerationRequest(prompts=[[5, 6, 7], [8, 9]],
                                max_new_tokens=64, temperature=0.0)
        fp = decode_regular(MainModel(w, 2), req)
        q = decode_regular(MainModel(w, 2, quantized=True), req)
        matches = sum(a == b for fa, qa in zip(fp.tokens, q.tokens)
                      for a, b in zip(fa, qa))
        total = sum(len(t) for t in fp.tokens)
        assert matches / total >= 0.97
