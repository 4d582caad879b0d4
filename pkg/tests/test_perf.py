import numpy as np
import pytest

from batchspec.perf import (
    A100_40GB,
    GEOMETRY_310M,
    GEOMETRY_7_8B,
    MODE_BATCHED_SPEC,
    MODE_REGULAR,
    MODE_SINGLE_SPEC,
    AcceptanceModel,
    CostGeometry,
    HardwareProfile,
    cost_regular_step,
    cost_speculative_step,
    expected_tokens_naive_batch,
    expected_tokens_per_seq,
    geometry_from_model_config,
    simulate_from_trace,
    simulate_run,
)


class TestAcceptanceMath:
    def test_worked_single_sequence_value(self):
        assert expected_tokens_naive_batch(0.8, 1) == pytest.approx(5.0,
                                                                    abs=1e-12)

    def test_worked_batch_five_value(self):
        # brute force the same quantity: acceptance per position 0.8^5,
        # unbounded geometric mean 1/(1 - q)
        q = 1.0
        for _ in range(5):
            q *= 0.8
        assert expected_tokens_naive_batch(0.8, 5) == pytest.approx(
            1.0 / (1.0 - q), abs=1e-12)
        assert expected_tokens_naive_batch(0.8, 5) == pytest.approx(1.488,
                                                                    abs=1e-3)

    def test_zero_acceptance_gives_one_token(self):
        for b in (1, 3, 8):
            assert expected_tokens_naive_batch(0.0, b) == 1.0

    def test_p_one_rejected(self):
        with pytest.raises(ValueError):
            expected_tokens_naive_batch(1.0, 2)

    def test_strictly_decreasing_in_batch(self):
        for p in (0.3, 0.8, 0.95):
            vals = [expected_tokens_naive_batch(p, b) for b in range(1, 12)]
            assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_per_seq_degenerate_cases(self):
        assert expected_tokens_per_seq(0.0, 5) == 1.0
        assert expected_tokens_per_seq(1.0, 7) == 8.0

    def test_per_seq_matches_brute_force_sum(self):
        # oracle: sum_{j=0..k-1} p^j (first rejection at j) + p^k (bonus)
        for p in (0.25, 0.8, 0.97):
            for k in (1, 4, 7, 12):
                brute = sum(p ** j for j in range(k)) + p ** k
                assert expected_tokens_per_seq(p, k) == pytest.approx(
                    brute, rel=1e-12)

    def test_acceptance_model_wraps_both_forms(self):
        model = AcceptanceModel(p=0.8, b=5, k=7)
        assert model.tokens_per_draft_naive() == \
            expected_tokens_naive_batch(0.8, 5)
        assert model.tokens_per_step() == expected_tokens_per_seq(0.8, 7)
        with pytest.raises(ValueError):
            AcceptanceModel(p=1.2)
        with pytest.raises(ValueError):
            AcceptanceModel(p=0.5, b=0)

    def test_per_seq_matches_truncated_geometric_simulation(self):
        rng = np.random.default_rng(42)
        p, k = 0.8, 7
        n = 100_000
        draws = rng.random((n, k))
        accepted = (draws < p).argmin(axis=1)
        accepted[np.all(draws < p, axis=1)] = k
        committed = accepted + 1
        assert committed.mean() == pytest.approx(
            expected_tokens_per_seq(p, k), rel=0.01)


class TestRooflineCosts:
    def test_memory_bound_single_sequence_underutilizes(self):
        cost = cost_regular_step(A100_40GB, GEOMETRY_7_8B, 1)
        assert cost.utilization < 0.01

    def test_utilization_grows_with_batch(self):
        utils = [cost_regular_step(A100_40GB, GEOMETRY_7_8B, b).utilization
                 for b in (1, 2, 4, 8, 16)]
        assert all(a < b for a, b in zip(utils, utils[1:]))

    def test_memory_bound_time_tracks_bytes(self):
        cost = cost_regular_step(A100_40GB, GEOMETRY_7_8B, 1)
        mem_time = cost.bytes_moved / A100_40GB.mem_bandwidth
        launch_time = cost.launches * A100_40GB.launch_overhead
        assert cost.time_s == pytest.approx(mem_time + launch_time, rel=1e-12)

    def test_utilization_never_exceeds_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            geom = CostGeometry(
                n_layer=int(rng.integers(1, 48)),
                d_model=int(rng.integers(1, 64)) * 64,
                n_head=8, vocab_size=int(rng.integers(100, 60000)))
            b = int(rng.integers(1, 64))
            cost = cost_regular_step(A100_40GB, geom, b,
                                     int(rng.integers(1, 4096)))
            assert 0.0 < cost.utilization <= 1.0

    def test_speculative_flops_scale_with_positions(self):
        # with a negligible draft, one step at draft length 1 verifies two
        # positions per sequence: twice the regular token work
        tiny_draft = CostGeometry(n_layer=1, d_model=64, n_head=1,
                                  vocab_size=1, params_override=0)
        reg = cost_regular_step(A100_40GB, GEOMETRY_7_8B, 4, 512)
        spec = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, tiny_draft,
                                     4, 1, context_lens=512)
        assert spec.flops == pytest.approx(2 * reg.flops, rel=0.02)

    def test_batched_speculation_beats_regular_utilization(self):
        best_regular = max(
            cost_regular_step(A100_40GB, GEOMETRY_7_8B, b).utilization
            for b in (1, 2, 4, 8))
        spec = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                     8, 7)
        assert spec.utilization >= 3 * best_regular

    def test_single_sequence_speculation_beats_regular(self):
        reg = cost_regular_step(A100_40GB, GEOMETRY_7_8B, 1)
        spec = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                     1, 7)
        assert spec.utilization > reg.utilization

    def test_equal_lengths_strategies_differ_only_by_launches(self):
        pad = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                    4, 7, split=False, context_lens=512)
        split = cost_speculative_step(A100_40GB, GEOMETRY_7_8B,
                                      GEOMETRY_310M, 4, 7, split=True,
                                      context_lens=512)
        assert pad.flops == split.flops  # zero padding waste
        assert pad.bytes_moved == split.bytes_moved
        launch_gap = (split.launches - pad.launches) \
            * A100_40GB.launch_overhead
        assert split.time_s - pad.time_s == pytest.approx(launch_gap,
                                                          rel=1e-9)

    def test_ragged_lengths_add_pad_waste(self):
        ragged = [64, 512, 128, 300]
        pad = cost_speculative_step(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                    4, 7, split=False, context_lens=ragged)
        split = cost_speculative_step(A100_40GB, GEOMETRY_7_8B,
                                      GEOMETRY_310M, 4, 7, split=True,
                                      context_lens=ragged)
        assert pad.flops > split.flops

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            HardwareProfile(mem_bandwidth=0)

    def test_desk_geometry_param_count_is_exact(self):
        from batchspec.model import desk_config, init_model
        cfg = desk_config(n_layer=2, n_head=2, d_model=32, vocab_size=48,
                          max_seq_len=64)
        w = init_model(cfg, 0)
        counted = w.token_emb.size + w.pos_emb.size + w.head.size \
            + w.ln_f_gain.size + w.ln_f_bias.size
        for blk in w.blocks:
            counted += sum(getattr(blk, n).size for n in (
                "ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo",
                "ln2_gain", "ln2_bias", "w_fc", "w_proj"))
        assert geometry_from_model_config(cfg).n_params == counted


class TestSimulatedLatency:
    def test_single_sequence_first_equals_last(self):
        sim = simulate_run(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                           MODE_SINGLE_SPEC, 1, 128)
        assert sim.first_latency == sim.last_latency == sim.all_latency

    def test_order_statistics_hold(self):
        sim = simulate_run(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                           MODE_BATCHED_SPEC, 8, 128, seed=3)
        assert sim.first_latency <= sim.all_latency <= sim.last_latency

    def test_divergence_grows_with_batch(self):
        def mean_divergence(b):
            gaps = []
            for seed in range(30):
                sim = simulate_run(A100_40GB, GEOMETRY_7_8B, GEOMETRY_310M,
                                   MODE_BATCHED_SPEC, b, 128, seed=seed)
                gaps.append(sim.last_latency - sim.first_latency)
            return float(np.mean(gaps))

        d2, d4, d8 = (mean_divergence(b) for b in (2, 4, 8))
        assert d2 < d4 < d8

    def test_regular_mode_has_uniform_finish(self):
        sim = simulate_run(A100_40GB, GEOMETRY_7_8B, None, MODE_REGULAR,
                           4, 64)
        assert sim.steps == 64
        assert len(set(sim.finish_time_s)) == 1

    def test_trace_attribution_matches_engine_completion(self):
        from batchspec.draft_control import AdaptiveDraftController
        from batchspec.engine import GenerationRequest, decode_speculative
        from batchspec.model import (
            MainModel,
            SyntheticAlignedDraft,
            desk_config,
            init_model,
        )
        cfg = desk_config(n_layer=2, n_head=2, d_model=32, vocab_size=64,
                          max_seq_len=256)
        w = init_model(cfg, 2)
        req = GenerationRequest(prompts=[[1, 2], [3, 4, 5]],
                                max_new_tokens=24, temperature=0.5, seed=1)
        result = decode_speculative(
            MainModel(w, 2), SyntheticAlignedDraft(w, 0.7, 3, 2), req,
            AdaptiveDraftController())
        geom = geometry_from_model_config(cfg)
        sim = simulate_from_trace(A100_40GB, geom, geom, result.steps, 2,
                                  [len(t) for t in result.tokens])
        assert all(t > 0 for t in sim.finish_time_s)
        assert sim.total_time_s >= max(sim.finish_time_s)
        # the later finisher in steps is the later finisher in sim time
        order_steps = np.argsort(result.completion_step)
        order_sim = np.argsort(sim.finish_time_s)
        assert list(order_steps) == list(order_sim)
