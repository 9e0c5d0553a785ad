import logging

import numpy as np
import pytest
import torch

from dualvc.corpus import CHI
from dualvc.framing import SamplingPolicy
from dualvc.model import ModelConfig
from dualvc.phonetics import PhoneTranscript, PseudoRecord
from dualvc.training import (
    FrameSet, NewBob, OptimConfig, RunRecord, cross_validate, dev_split, newbob_plan,
    sample_indices, score, train_fold,
)

STUB = {"type": "stub", "seed": 0, "num_layers": 2, "hidden_dim": 16}


@pytest.fixture(scope="module")
def small_set(sessions):
    cfg = ModelConfig(STUB)
    full = FrameSet.from_sessions(sessions[:1], cfg.tiers)
    return cfg, full.subset(np.arange(0, len(full), len(full) // 12)[:12])


def test_newbob_halves_after_a_drop():
    assert newbob_plan([0.50, 0.60, 0.58]) == [1.0, 1.0, 1.0, 0.5]


def test_newbob_minimise_mode():
    assert newbob_plan([30.0, 20.0, 25.0, 19.0], mode="min") == [1.0, 1.0, 1.0, 0.5, 0.5]


def test_newbob_threshold_counts_tiny_gains_as_stalls():
    assert newbob_plan([0.5, 0.5001], threshold=0.0025) == [1.0, 1.0, 0.5]


def test_newbob_patience():
    assert newbob_plan([1, 0.9, 0.9, 0.9, 0.9], patience=2) == [1, 1, 1, 0.5, 0.5, 0.25]


def test_newbob_state_round_trip():
    a = NewBob()
    for m in (0.1, 0.3, 0.2):
        a.step(m)
    b = NewBob()
    b.load_state_dict(a.state_dict())
    assert b.step(0.25) == a.step(0.25)


@pytest.mark.parametrize("seq", [np.random.default_rng(s).uniform(0, 1, 12).tolist() for s in range(5)])
def test_lr_trajectory_non_increasing_in_factor_steps(seq):
    scales = newbob_plan(seq, factor=0.5)
    for a, b in zip(scales, scales[1:]):
        assert b == a or b == a * 0.5


def test_optim_validation():
    with pytest.raises(ValueError):
        OptimConfig(lr_head=0)
    with pytest.raises(ValueError):
        OptimConfig(newbob_factor=1.0)
    with pytest.raises(ValueError):
        OptimConfig(lr_encoder=-1e-5)
    OptimConfig(lr_encoder=0.0)


def test_train_fold_record(small_set):
    cfg, fs = small_set
    opt = OptimConfig(lr_head=1e-2, lr_encoder=1e-3, epochs=3, batch_size=4, selection_metric="mean_f1")
    rec, _ = train_fold(cfg, opt, fs, fs, seed=0)
    assert rec.completed and len(rec.epochs) == 3
    seq = rec.metric_sequence
    assert rec.best_metric == max(seq) and seq[rec.best_epoch] == rec.best_metric
    lrs = [h for h, _ in rec.lr_trajectory]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_frozen_encoder_stays_bit_identical(small_set):
    cfg, fs = small_set
    torch.manual_seed(0)
    from dualvc.model import DualChannelClassifier

    before = DualChannelClassifier(cfg).encoder.state_dict()
    opt = OptimConfig(lr_head=1e-2, lr_encoder=0.0, epochs=2, batch_size=4)
    _, model = train_fold(cfg, opt, fs, fs, seed=0)
    for k, v in model.encoder.state_dict().items():
        assert torch.equal(v, before[k])


def test_resume_matches_uninterrupted(small_set, tmp_path):
    cfg, fs = small_set
    full = OptimConfig(lr_head=1e-2, lr_encoder=1e-3, epochs=4, batch_size=4)
    ref, _ = train_fold(cfg, full, fs, fs, seed=3, out_dir=tmp_path / "a")
    part = OptimConfig(lr_head=1e-2, lr_encoder=1e-3, epochs=4, batch_size=4)
    # stop after two epochs by running a 2-epoch job under the same config hash
    h = ref.config_hash
    train_fold(cfg, OptimConfig(**{**part.to_dict(), "epochs": 2}), fs, fs, seed=3,
               out_dir=tmp_path / "b", config_hash=h)
    got, _ = train_fold(cfg, part, fs, fs, seed=3, out_dir=tmp_path / "b", resume=True, config_hash=h)
    assert got.metric_sequence == ref.metric_sequence
    assert [e["train_loss"] for e in got.epochs] == [e["train_loss"] for e in ref.epochs]


def test_resume_rejects_other_config(small_set, tmp_path):
    cfg, fs = small_set
    opt = OptimConfig(lr_head=1e-2, epochs=1, batch_size=4)
    train_fold(cfg, opt, fs, fs, out_dir=tmp_path, config_hash="aaa")
    with pytest.raises(ValueError):
        train_fold(cfg, opt, fs, fs, out_dir=tmp_path, config_hash="bbb", resume=True)


def test_dev_protocol_scores_test_set_once(small_set):
    cfg, fs = small_set
    opt = OptimConfig(lr_head=1e-2, lr_encoder=1e-3, epochs=2, batch_size=4)
    rec, _ = train_fold(cfg, opt, fs, fs, protocol="dev-selection", test_set=fs.subset([0, 1, 2]))
    assert rec.test_metrics is not None and rec.final_metrics() is rec.test_metrics


def test_unknown_selection_metric_raises(small_set):
    cfg, fs = small_set
    with pytest.raises(ValueError, match="selection metric"):
        train_fold(cfg, OptimConfig(epochs=1, selection_metric="uar_BABBLE"), fs, fs)


def _record(fold, der, f1a=50.0, f1c=40.0):
    r = RunRecord(fold_id=fold, config_hash="h", selection_metric="der")
    r.epochs = [{"metrics": {"der": der, "f1_ADU": f1a, "f1_CHI": f1c, "mean_f1": (f1a + f1c) / 2}}]
    r.best_epoch, r.completed = 0, True
    return r


def test_cross_validate_arithmetic():
    recs = [_record(i, d) for i, d in enumerate((10.0, 20.0, 30.0))]
    rep = cross_validate(recs)
    assert rep["mean"]["der"] == 20.0 and rep["std_dev"]["der"] == 10.0
    pop = cross_validate(recs, sample_std=False)
    assert pop["std_dev"]["der"] == pytest.approx(np.sqrt(200 / 3))
    assert cross_validate(recs) == rep


def test_cross_validate_single_fold_warns(caplog):
    with caplog.at_level(logging.WARNING):
        rep = cross_validate([_record(0, 12.0)])
    assert rep["std_dev"]["der"] == 0.0 and "single fold" in caplog.text


def test_run_record_json_round_trip(tmp_path):
    r = _record(1, 5.0)
    r.save(tmp_path / "r.json")
    assert RunRecord.load(tmp_path / "r.json") == r


def test_score_on_perfect_predictions(sessions):
    cfg = ModelConfig(STUB)
    fs = FrameSet.from_sessions(sessions[:1], cfg.tiers)
    m = score(fs, fs.labels, cfg.tiers)
    assert m["der"] == 0.0 and m["f1_ADU"] == 100.0 and m["f1_CHI"] == 100.0


def test_frame_ctc_targets_follow_center_window(sessions):
    cfg = ModelConfig(STUB)
    s = sessions[0]
    segs = s.tier_segments("child")
    pseudo = [PseudoRecord(f"{s.session_id}:{k:04d}", g.start_s, g.end_s, PhoneTranscript((k,), "pseudo"))
              for k, g in enumerate(segs)]
    fs = FrameSet.from_sessions([s], cfg.tiers, pseudo=pseudo)
    sil = CHI.silence_index
    for i in range(len(fs)):
        if fs.labels["CHI"][i] == sil:
            continue
        assert len(fs.ctc[i]) == 1
    assert any(t == () for t, lab in zip(fs.ctc, fs.labels["CHI"]) if lab == sil)


def test_sampling_caps_and_minimums():
    labels = {"CHI": np.array([0] * 50 + [1] * 10 + [4] * 2)}
    pol = SamplingPolicy(caps={"CHI": {"SIL": 20}}, minimums={"CHI": {"CRY": 5}})
    idx = sample_indices(labels, pol, seed=0)
    lab = labels["CHI"][idx]
    assert (lab == 0).sum() == 20 and (lab == 1).sum() == 10 and (lab == 4).sum() == 5
    assert np.array_equal(idx, sample_indices(labels, pol, seed=0))


def test_dev_split_holds_out_children():
    class Item:
        def __init__(self, c):
            self.child_id = c

    items = [Item(c) for c in "aabbccddee"]
    train, dev = dev_split(items, 0.2, seed=0)
    assert {x.child_id for x in train}.isdisjoint({x.child_id for x in dev})
    assert len(train) + len(dev) == len(items)
