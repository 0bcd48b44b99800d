"""Heads and losses: framewise CE against direct arithmetic, the CTC
lattice against exhaustive path enumeration, and loss weighting rules."""

import numpy as np
import pytest

import oracles
from vadkit import heads
from vadkit import tensor as tz
from vadkit.config import HeadConfig
from vadkit.encoders.common import materialize
from vadkit.errors import ConfigError, ContractError, InfeasibleError, LabelError
from vadkit.tensor import Tensor


def normalized_log_probs(rng, n_frames, n_classes) -> Tensor:
    logits = rng.uniform(-2, 2, (n_frames, n_classes))
    return tz.log_softmax(Tensor(logits), axis=-1)


# ---------------------------------------------------------------------------
# posteriors and CE
# ---------------------------------------------------------------------------


def test_vad_classify_is_binary_softmax_column_one():
    cfg = HeadConfig(vocab_size=5)
    params = materialize(heads.param_specs(8, cfg), seed=0)
    rng = np.random.default_rng(1)
    hidden = Tensor(rng.standard_normal((6, 8)))
    with tz.no_grad():
        post = heads.vad_classify(params, hidden, frame_shift_ms=20)
    logits = hidden.data @ params["heads.vad.w"].data.astype(np.float64) + params["heads.vad.b"].data
    shifted = logits - logits.max(axis=1, keepdims=True)
    want = np.exp(shifted)[:, 1] / np.exp(shifted).sum(axis=1)
    np.testing.assert_allclose(post.probs, want, atol=1e-9)
    assert post.frame_shift_ms == 20
    assert post.probs.dtype == np.float64


def test_vad_classify_empty_hidden():
    cfg = HeadConfig()
    params = materialize(heads.param_specs(8, cfg), seed=0)
    post = heads.vad_classify(params, Tensor(np.zeros((0, 8), dtype=np.float32)), 20)
    assert len(post) == 0


def test_frame_posteriors_validate_range():
    with pytest.raises(ContractError):
        heads.FramePosteriors(np.array([0.5, 1.2]), 20)
    with pytest.raises(ContractError):
        heads.FramePosteriors(np.array([np.nan]), 20)


def test_ce_loss_matches_direct_arithmetic():
    rng = np.random.default_rng(2)
    logits = Tensor(rng.uniform(-3, 3, (7, 4)))
    labels = rng.integers(0, 4, 7)
    got = heads.ce_loss(logits, labels).item()
    lp = logits.data - logits.data.max(axis=1, keepdims=True)
    lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
    want = -lp[np.arange(7), labels].mean()
    assert got == pytest.approx(want, abs=1e-9)


def test_ce_loss_rejects_bad_labels():
    logits = Tensor(np.zeros((3, 4)))
    with pytest.raises(LabelError):
        heads.ce_loss(logits, np.array([0, 1, 4]))
    with pytest.raises(LabelError):
        heads.ce_loss(logits, np.array([0, -1, 2]))
    with pytest.raises(ContractError):
        heads.ce_loss(logits, np.array([0, 1]))
    with pytest.raises(ContractError):
        heads.ce_loss(Tensor(np.zeros((0, 4))), np.zeros(0, dtype=np.int64))


def test_ce_loss_gradients():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, 5)
    assert tz.finite_difference_check(lambda: heads.ce_loss(logits, labels), [logits]) < 1e-6


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------


def test_ctc_min_frames_counts_forced_blanks():
    assert heads.ctc_min_frames(np.array([], dtype=np.int64)) == 0
    assert heads.ctc_min_frames(np.array([1, 2, 3])) == 3
    assert heads.ctc_min_frames(np.array([1, 1])) == 3
    assert heads.ctc_min_frames(np.array([2, 2, 2])) == 5


def test_ctc_matches_enumeration_on_small_cases():
    rng = np.random.default_rng(4)
    for n_frames, n_labels, vocab in [(2, 1, 2), (3, 2, 2), (4, 2, 3), (5, 3, 2), (4, 3, 3)]:
        log_probs = normalized_log_probs(rng, n_frames, vocab + 1)
        by_sequence = oracles.ctc_alignment_scores(log_probs.data)
        for labels in [tuple(rng.integers(1, vocab + 1, n_labels)) for _ in range(3)]:
            arr = np.array(labels, dtype=np.int64)
            if heads.ctc_min_frames(arr) > n_frames:
                with pytest.raises(InfeasibleError):
                    heads.ctc_loss(log_probs, arr)
                continue
            want = -by_sequence[labels]
            assert heads.ctc_loss(log_probs, arr).item() == pytest.approx(want, abs=1e-6)


def test_ctc_empty_label_sequence_scores_all_blanks():
    rng = np.random.default_rng(5)
    log_probs = normalized_log_probs(rng, 4, 3)
    got = heads.ctc_loss(log_probs, np.zeros(0, dtype=np.int64)).item()
    want = -float(log_probs.data[:, 0].sum())
    assert got == pytest.approx(want, abs=1e-9)


def test_ctc_rejects_unnormalized_rows():
    with pytest.raises(ContractError, match="normalized"):
        heads.ctc_loss(Tensor(np.full((3, 4), -0.5)), np.array([1]))


def test_ctc_rejects_out_of_vocab_labels():
    rng = np.random.default_rng(6)
    log_probs = normalized_log_probs(rng, 4, 3)
    with pytest.raises(LabelError):
        heads.ctc_loss(log_probs, np.array([3]))  # classes are {0 blank, 1, 2}
    with pytest.raises(LabelError):
        heads.ctc_loss(log_probs, np.array([0]))  # blank is not a label


def test_ctc_infeasible_when_too_few_frames():
    rng = np.random.default_rng(7)
    log_probs = normalized_log_probs(rng, 2, 3)
    with pytest.raises(InfeasibleError):
        heads.ctc_loss(log_probs, np.array([1, 1]))  # repeat needs 3 frames


def test_ctc_gradients():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.uniform(-1, 1, (6, 4)), requires_grad=True)
    labels = np.array([2, 1, 1])

    def f():
        return heads.ctc_loss(tz.log_softmax(logits, axis=-1), labels)

    assert tz.finite_difference_check(f, [logits]) < 1e-6


def test_greedy_decode_collapse_rules():
    neg = -10.0
    # path: 1 1 0 1 2 2 -> collapse to 1 1 2
    frames = np.full((6, 3), neg)
    for t, c in enumerate([1, 1, 0, 1, 2, 2]):
        frames[t, c] = 0.0
    assert heads.ctc_greedy_decode(frames) == [1, 1, 2]
    assert heads.ctc_greedy_decode(np.full((3, 2), neg) + np.array([0.0, neg])) == []


# ---------------------------------------------------------------------------
# multitask weighting
# ---------------------------------------------------------------------------


def scalar(value: float) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64))


def test_multitask_loss_weighted_sum():
    cfg = HeadConfig(lambda_vad=1.0, lambda_asr=0.5, lambda_punct=0.25)
    got = heads.multitask_loss(scalar(2.0), scalar(4.0), scalar(8.0), cfg).item()
    assert got == pytest.approx(2.0 + 2.0 + 2.0)


def test_multitask_loss_skips_zero_weight_and_missing():
    cfg = HeadConfig(lambda_vad=1.0, lambda_asr=0.0, lambda_punct=0.5)
    assert heads.multitask_loss(scalar(3.0), None, scalar(2.0), cfg).item() == pytest.approx(4.0)
    cfg = HeadConfig(lambda_vad=1.0, lambda_asr=0.5, lambda_punct=0.5)
    assert heads.multitask_loss(scalar(3.0), None, None, cfg).item() == pytest.approx(3.0)


def test_multitask_loss_weight_validation():
    with pytest.raises(ConfigError):
        heads.multitask_loss(scalar(1.0), None, None, HeadConfig(lambda_vad=-1.0))
    with pytest.raises(ConfigError):
        heads.multitask_loss(scalar(1.0), None, None, HeadConfig(lambda_vad=0.0, lambda_asr=0.0, lambda_punct=0.0))
    with pytest.raises(ContractError):
        heads.multitask_loss(None, None, None, HeadConfig(lambda_vad=1.0))


def test_multitask_gradient_flows_to_all_heads():
    cfg = HeadConfig(vocab_size=3, lambda_vad=1.0, lambda_asr=0.5, lambda_punct=0.5)
    params = materialize(heads.param_specs(6, cfg), seed=9)
    rng = np.random.default_rng(10)
    hidden = Tensor(rng.standard_normal((8, 6)), requires_grad=True)
    vad_labels = rng.integers(0, 2, 8)
    punct_labels = rng.integers(0, cfg.punct_classes, 8)
    ctc_labels = np.array([1, 3])

    def f():
        vad_ce = heads.ce_loss(heads.vad_logits(params, hidden), vad_labels)
        ctc = heads.ctc_loss(heads.asr_log_probs(params, hidden), ctc_labels)
        punct = heads.ce_loss(heads.punct_logits(params, hidden), punct_labels)
        return heads.multitask_loss(vad_ce, ctc, punct, cfg)

    checked = [hidden] + [t for t in params.values() if t.requires_grad]
    assert tz.finite_difference_check(f, checked, max_coords_per_tensor=8) < 1e-6
