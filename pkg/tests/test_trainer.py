"""Two-phase training: freezing, determinism, logging and resumable checkpoints."""
import io
import re

import numpy as np
import pytest

from dualstream import trainer as TR
from dualstream.checkpoint import decode, encode
from dualstream.errors import ConfigError, FormatError, StateError

from conftest import tiny_config


def snapshot(params):
    return [p.data.copy() for p in params]


def pretrained(tiny_state):
    state, data = tiny_state
    TR.calibrate_motion_scale(state.model.ops, data.latents)
    TR.pretrain_base(state, data)
    return state, data


def test_sub_seeds_are_distinct_and_stable():
    seeds = {TR.sub_seed(0, k) for k in range(8)}
    assert len(seeds) == 8 and TR.sub_seed(0, 3) == TR.sub_seed(0, 3)


def test_calibration_gives_unit_scale(tiny_state):
    state, data = tiny_state
    TR.calibrate_motion_scale(state.model.ops, data.latents)
    from dualstream.motion import decompose
    assert decompose(data.latents, state.model.ops).data.std() == pytest.approx(1.0, rel=1e-4)


def test_joint_phase_needs_a_pretrained_base(tiny_state):
    state, data = tiny_state
    with pytest.raises(StateError):
        TR.configure_trainable(state)
    with pytest.raises(StateError):
        TR.train_step(state, data)


def test_base_cannot_be_pretrained_twice(tiny_state):
    state, data = pretrained(tiny_state)
    with pytest.raises(StateError):
        TR.pretrain_base(state, data, steps=1)


def test_base_phase_changes_only_base_and_text(tiny_state):
    state, data = tiny_state
    model = state.model
    frozen = model.content.adapter_parameters() + model.motion.parameters() + model.exchange_parameters()
    before = snapshot(frozen)
    base_before = snapshot(model.content.base_parameters())
    TR.pretrain_base(state, data)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, frozen))
    assert any(not np.array_equal(a, p.data) for a, p in zip(base_before, model.content.base_parameters()))


def test_joint_phase_keeps_base_and_codec_bit_identical(tiny_state):
    state, data = pretrained(tiny_state)
    fixed = state.model.content.base_parameters() + state.codec.parameters()
    before = snapshot(fixed)
    TR.train(state, data, 3)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, fixed))
    assert all(not p.requires_grad for p in fixed)


def test_every_trainable_parameter_receives_gradient(tiny_state):
    state, data = pretrained(tiny_state)
    # zero-initialised outputs (motion head, then exchange projections) open up one layer
    # per step, so after three steps every path carries gradient
    TR.train(state, data, 3)
    rng = np.random.default_rng(0)
    z0, ids, t = TR._batch(state, data, rng)
    state.optimizer.zero_grad()
    lc, lm, lb = TR.joint_losses(state, z0, ids, t, rng)
    (lc + lm + lb).backward()
    silent = [i for i, p in enumerate(state.trainable()) if p.grad is None or not np.abs(p.grad).sum() > 0]
    assert silent == []


def test_motion_stream_can_be_frozen(tiny_codec_trained):
    state = TR.build_state(tiny_config(freeze_motion_stream=True), tiny_codec_trained)
    data = TR.prepare_data(state)
    TR.pretrain_base(state, data)
    motion = state.model.motion.parameters()
    before = snapshot(motion)
    TR.train(state, data, 2)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, motion))


def test_training_is_deterministic(tiny_codec_trained):
    runs = []
    for _ in range(2):
        state = TR.build_state(tiny_config(), tiny_codec_trained)
        data = TR.prepare_data(state)
        TR.calibrate_motion_scale(state.model.ops, data.latents)
        TR.pretrain_base(state, data)
        runs.append((TR.train(state, data, 2), state.model.state_dict()))
    (log_a, sd_a), (log_b, sd_b) = runs
    assert [r.line() for r in log_a] == [r.line() for r in log_b]
    assert all(np.array_equal(sd_a[k], sd_b[k]) for k in sd_a)


def test_log_line_format(tiny_state):
    state, data = pretrained(tiny_state)
    stream = io.StringIO()
    records = TR.train(state, data, 2, log_stream=stream)
    lines = stream.getvalue().splitlines()
    assert len(lines) == 2
    for k, (line, rec) in enumerate(zip(lines, records)):
        assert re.fullmatch(r"\d+ \d+\.\d{8} \d+\.\d{8} \d+\.\d{8}", line)
        step, con, mot, total = line.split()
        assert int(step) == k
        assert float(total) == pytest.approx(float(con) + float(mot), abs=1e-7)
        assert rec.total == pytest.approx(rec.loss_con + rec.loss_mot, rel=1e-6)


def test_losses_are_finite_and_positive(tiny_trained):
    state, _ = tiny_trained
    for rec in state.history:
        assert np.isfinite([rec.loss_con, rec.loss_mot, rec.loss_comb]).all()
        assert min(rec.loss_con, rec.loss_mot, rec.loss_comb) > 0


def test_window_means():
    recs = [TR.StepLog(i, 0, 0, 0, float(i)) for i in range(10)]
    assert TR.window_means(recs, 3) == (1.0, 8.0)
    with pytest.raises(ConfigError):
        TR.window_means(recs, 11)


def test_checkpoint_round_trip(tiny_trained, tmp_path):
    state, _ = tiny_trained
    TR.save_checkpoint(state, tmp_path / "m.dsdn")
    back = TR.load_checkpoint(tmp_path / "m.dsdn")
    assert back.config == state.config and back.step == state.step
    assert [r.line() for r in back.history] == [r.line() for r in state.history]
    a, b = state.model.state_dict(), back.model.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    TR.save_checkpoint(back, tmp_path / "again.dsdn")
    assert (tmp_path / "m.dsdn").read_bytes() == (tmp_path / "again.dsdn").read_bytes()


def test_resume_matches_uninterrupted_training(tiny_codec_trained, tmp_path):
    def fresh():
        state = TR.build_state(tiny_config(), tiny_codec_trained)
        data = TR.prepare_data(state)
        TR.calibrate_motion_scale(state.model.ops, data.latents)
        TR.pretrain_base(state, data)
        return state, data

    straight, data = fresh()
    TR.train(straight, data, 4)
    first, data = fresh()
    TR.train(first, data, 2, checkpoint_path=tmp_path / "c.dsdn", checkpoint_every=2)
    resumed = TR.load_checkpoint(tmp_path / "c.dsdn")
    TR.train(resumed, data, 2)
    a, b = straight.model.state_dict(), resumed.model.state_dict()
    assert max(np.max(np.abs(a[k] - b[k])) for k in a) <= 1e-6
    assert [r.line() for r in straight.history] == [r.line() for r in resumed.history]


def test_checkpoint_missing_meta_entry(tiny_trained):
    state, _ = tiny_trained
    entries = decode(encode(TR.state_entries(state)))
    del entries["meta.config"]
    with pytest.raises(FormatError, match="meta.config"):
        TR.state_from_entries(entries)


def test_codec_channel_mismatch(tiny_codec_trained):
    with pytest.raises(ConfigError):
        TR.build_state(tiny_config(latent_channels=4), tiny_codec_trained)
