import numpy as np
import pytest

from batchspec.draft_control import (
    AdaptiveDraftController,
    DraftLengthParams,
    DraftLengthState,
    FixedDraftController,
    init_state,
    update,
)


class TestInit:
    def test_defaults(self):
        state = init_state()
        assert (state.l_draft, state.s) == (7, 0)
        assert (state.params.incre, state.params.mod,
                state.params.limit) == (2, 10, 32)

    def test_l0_at_limit(self):
        state = init_state(DraftLengthParams(l0=32))
        assert (state.l_draft, state.s) == (32, 0)

    def test_l0_zero_rejected(self):
        with pytest.raises(ValueError):
            DraftLengthParams(l0=0)

    def test_l0_above_limit_rejected(self):
        with pytest.raises(ValueError):
            DraftLengthParams(l0=40, limit=32)


class TestUpdate:
    def test_full_acceptance_grows(self):
        state = DraftLengthState(7, 0, DraftLengthParams())
        out = update(state, (7, 3))
        assert (out.l_draft, out.s) == (9, 0)

    def test_first_decrease(self):
        state = DraftLengthState(9, 0, DraftLengthParams())
        out = update(state, (3, 1))
        # 9 - ceil(9/10) - 0 = 8; max(1, 3, 1, 8) = 8
        assert (out.l_draft, out.s) == (8, 1)

    def test_consecutive_decrease_is_faster(self):
        state = DraftLengthState(8, 1, DraftLengthParams())
        out = update(state, (2, 2))
        # 8 - ceil(8/10) - 1 = 6
        assert (out.l_draft, out.s) == (6, 1)

    def test_lower_clamp_at_one(self):
        state = DraftLengthState(1, 1, DraftLengthParams())
        out = update(state, (0,))
        assert (out.l_draft, out.s) == (1, 1)

    def test_growth_clamped_at_limit(self):
        state = DraftLengthState(31, 0, DraftLengthParams())
        out = update(state, (31,))
        assert out.l_draft == 32

    def test_accept_above_draft_length_rejected(self):
        state = DraftLengthState(6, 1, DraftLengthParams())
        with pytest.raises(ValueError):
            update(state, (9, 2))

    def test_empty_accepts_rejected(self):
        with pytest.raises(ValueError):
            update(init_state(), ())


class TestProperties:
    def test_clamp_bounds_over_random_trajectories(self):
        # l_draft always lands in [max(1, max accepts), limit]
        rng = np.random.default_rng(42)
        state = init_state()
        for _ in range(2000):
            b = int(rng.integers(1, 9))
            accepts = tuple(int(rng.integers(0, state.l_draft + 1))
                            for _ in range(b))
            state = update(state, accepts)
            assert max(1, max(accepts)) <= state.l_draft <= 32

    def test_growth_only_on_full_acceptance(self):
        rng = np.random.default_rng(0)
        state = init_state()
        for _ in range(2000):
            before = state.l_draft
            accepts = tuple(int(rng.integers(0, before + 1))
                            for _ in range(4))
            state = update(state, accepts)
            if max(accepts) == before:
                assert state.l_draft >= before
                assert state.s == 0
            else:
                assert state.l_draft <= before
                assert state.s == 1
                if state.l_draft == before:
                    # only the max-clamp can hold the line on a shrink step
                    assert max(accepts) >= state.l_draft or before == 1

    def test_consecutive_shrink_removes_at_least_one_more(self):
        # with identical below-length accepts, the s=1 form drops at least
        # one token more than the s=0 form unless the clamp binds
        params = DraftLengthParams()
        for l_draft in range(2, 33):
            accepts = (0,)
            fresh = update(DraftLengthState(l_draft, 0, params), accepts)
            repeat = update(DraftLengthState(l_draft, 1, params), accepts)
            assert repeat.l_draft <= max(fresh.l_draft - 1, 1)


class TestControllers:
    def test_adaptive_tracks_state(self):
        ctl = AdaptiveDraftController()
        assert ctl.length == 7
        assert ctl.max_length == 32
        ctl.observe([7, 3])
        assert ctl.length == 9

    def test_fixed_never_moves(self):
        ctl = FixedDraftController(6)
        ctl.observe([6, 6])
        ctl.observe([0])
        assert ctl.length == 6
        assert ctl.max_length == 6

    def test_fixed_validates(self):
        with pytest.raises(ValueError):
            FixedDraftController(0)
