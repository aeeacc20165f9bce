import numpy as np
import pytest

from celldiff import diffusion
from celldiff.sampler import (CompatibilityError, GenerationResult, Schedule,
                              ScheduleError, generate, one_step_infer,
                              reconstruct_eval, target_masked_count)
from celldiff.serialization import MASK_ID, N_SPECIAL
from celldiff.trainer import collate
from conftest import random_cells


class TestSchedule:
    def test_linear_times(self):
        s = Schedule.linear(4)
        np.testing.assert_allclose(s.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert s.n_steps == 4

    def test_cosine_times(self):
        s = Schedule.cosine(4)
        k = np.arange(5)
        np.testing.assert_allclose(s.times, (1 - np.cos(np.pi * k / 4)) / 2)
        assert s.times[0] == 0.0 and s.times[-1] == 1.0

    def test_validation(self):
        with pytest.raises(ScheduleError):
            Schedule([0.0, 0.5, 0.4, 1.0])
        with pytest.raises(ScheduleError):
            Schedule([0.1, 1.0])
        with pytest.raises(ScheduleError):
            Schedule([0.0, 0.9])

    def test_target_counts_linear_k4_l100(self):
        s = Schedule.linear(4)
        levels = list(reversed(s.times))
        counts = [target_masked_count(t, 100) for t in levels[1:]]
        assert counts == [75, 50, 25, 0]


class TestGenerate:
    @pytest.mark.parametrize("schedule_fn", [Schedule.linear, Schedule.cosine])
    @pytest.mark.parametrize("k", [1, 4, 8])
    def test_count_exact_and_nested(self, tiny_model, schedule_fn, k):
        length = 7
        schedule = schedule_fn(k)
        result = generate(tiny_model, length, schedule, seed=3)
        levels = list(reversed(schedule.times))
        expected = [target_masked_count(t, length) for t in levels[1:]]
        assert result.masked_after_step == expected
        assert result.masked_after_step[-1] == 0
        # monotone shrinkage of the masked count
        counts = [length] + result.masked_after_step
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_output_is_genes_only(self, tiny_model):
        result = generate(tiny_model, 6, Schedule.linear(4), seed=1)
        assert result.tokens.shape == (6,)
        assert (result.tokens >= N_SPECIAL).all()
        assert (result.tokens < tiny_model.config.vocab_size).all()
        assert np.isfinite(result.values).all()

    def test_deterministic_per_seed(self, tiny_model):
        a = generate(tiny_model, 6, Schedule.linear(4), seed=5)
        b = generate(tiny_model, 6, Schedule.linear(4), seed=5)
        np.testing.assert_array_equal(a.tokens, b.tokens)
        np.testing.assert_array_equal(a.values, b.values)

    def test_remask_off_also_count_exact(self, tiny_model):
        result = generate(tiny_model, 7, Schedule.linear(4), seed=2,
                          remask=False)
        assert result.masked_after_step[-1] == 0
        counts = [7] + result.masked_after_step
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_argmax_mode_runs(self, tiny_model):
        result = generate(tiny_model, 5, Schedule.cosine(3), seed=0,
                          argmax=True)
        assert isinstance(result, GenerationResult)
        assert result.masked_after_step[-1] == 0


class TestOneStepInfer:
    def test_fills_masked_keeps_visible(self, rng, tiny_model):
        cells = random_cells(rng, 3, tiny_model.config.vocab_size)
        batch = collate(cells, tiny_model.config.max_len)
        cor = diffusion.forward_mask(batch, 0.6, seed=4)
        tokens, values = one_step_infer(tiny_model, cor)
        assert not (tokens == MASK_ID).any()
        keep = ~cor.mask
        np.testing.assert_array_equal(tokens[keep], cor.tokens[keep])
        np.testing.assert_array_equal(values[keep], cor.values[keep])
        assert (tokens[cor.mask] >= N_SPECIAL).all()


class TestReconstructEval:
    def test_records_align_with_truth(self, rng, tiny_model):
        cells = random_cells(rng, 5, tiny_model.config.vocab_size)
        records = reconstruct_eval(tiny_model, cells, t=0.5, seed=1)
        assert [r.cell_id for r in records] == [c.cell_id for c in cells]
        for rec, cell in zip(records, cells):
            assert rec.truth_tokens == cell.tokens
            assert len(rec.pred_tokens) == len(cell.tokens)
            assert all(0 <= i < len(cell) for i in rec.masked_positions)
            # unmasked positions pass through exactly
            for i in range(len(cell)):
                if i not in rec.masked_positions:
                    assert rec.pred_tokens[i] == cell.tokens[i]

    def test_schedule_mode_runs(self, rng, tiny_model):
        cells = random_cells(rng, 3, tiny_model.config.vocab_size)
        records = reconstruct_eval(tiny_model, cells, t=0.7, mode="schedule",
                                   steps=4, seed=2)
        assert len(records) == 3
        assert all(N_SPECIAL <= t for r in records for t in r.pred_tokens)

    def test_deterministic(self, rng, tiny_model):
        cells = random_cells(rng, 3, tiny_model.config.vocab_size)
        a = reconstruct_eval(tiny_model, cells, t=0.5, seed=9)
        b = reconstruct_eval(tiny_model, cells, t=0.5, seed=9)
        assert [r.pred_tokens for r in a] == [r.pred_tokens for r in b]

    def test_fingerprint_mismatch_rejected(self, rng, tiny_model):
        cells = random_cells(rng, 2, tiny_model.config.vocab_size)
        with pytest.raises(CompatibilityError):
            reconstruct_eval(tiny_model, cells, t=0.3, seed=0,
                             fingerprint="aaa", expected_fingerprint="bbb")

    def test_unknown_mode_rejected(self, rng, tiny_model):
        cells = random_cells(rng, 2, tiny_model.config.vocab_size)
        with pytest.raises(ScheduleError):
            reconstruct_eval(tiny_model, cells, t=0.3, mode="warp", seed=0)
