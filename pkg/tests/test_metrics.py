"""Scoring checks: frame alignment and DCF against brute-force counting,
edit distance against a recursive reference, and report parsing."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from vadkit import metrics
from vadkit.audio import Segment
from vadkit.errors import BoundsError, ParseError, UndefinedMetricError


def random_segments(rng, duration_ms, max_n=3):
    """Non-overlapping sorted segments leaving some silence behind."""
    out = []
    cursor = 0
    for _ in range(rng.integers(0, max_n + 1)):
        start = cursor + int(rng.integers(10, 200))
        end = start + int(rng.integers(20, 300))
        if end >= duration_ms - 10:
            break
        out.append(Segment(start, end))
        cursor = end
    return out


# ---------------------------------------------------------------------------
# frame alignment and DCF
# ---------------------------------------------------------------------------


def test_align_frames_hand_case():
    ref = [Segment(0, 100)]
    hyp = [Segment(50, 150)]
    a = metrics.align_frames(ref, hyp, duration_ms=200)
    assert a.ref.sum() == 10 and a.hyp.sum() == 10
    assert (a.n_miss, a.n_fa) == (5, 5)
    assert (a.n_speech_ref, a.n_nonspeech_ref) == (10, 10)


def test_align_frames_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        duration = int(rng.integers(400, 2000))
        ref = random_segments(rng, duration)
        hyp = random_segments(rng, duration)
        a = metrics.align_frames(ref, hyp, duration)
        np.testing.assert_array_equal(a.ref, oracles.frames_in_segments(ref, duration // 10, 10))
        np.testing.assert_array_equal(a.hyp, oracles.frames_in_segments(hyp, duration // 10, 10))


def test_align_frames_respects_grid_argument():
    a = metrics.align_frames([Segment(0, 40)], [], duration_ms=80, grid_ms=20)
    np.testing.assert_array_equal(a.ref, [True, True, False, False])


def test_align_frames_rejects_out_of_range_segments():
    with pytest.raises(BoundsError):
        metrics.align_frames([Segment(0, 300)], [], duration_ms=200)
    with pytest.raises(BoundsError):
        metrics.align_frames([], [Segment(-10, 50)], duration_ms=200)


def test_dcf_hand_case():
    a = metrics.align_frames([Segment(0, 100)], [Segment(50, 150)], 200)
    assert metrics.dcf([a]) == pytest.approx(100.0 * (0.75 * 0.5 + 0.25 * 0.5))
    assert metrics.miss_fa_rates([a]) == (pytest.approx(50.0), pytest.approx(50.0))


def test_dcf_pools_counts_across_files():
    # each file alone lacks one reference class; pooled they are scoreable
    all_speech = metrics.FrameAlignment(np.ones(10, bool), np.zeros(10, bool))
    all_noise = metrics.FrameAlignment(np.zeros(10, bool), np.ones(10, bool))
    with pytest.raises(UndefinedMetricError):
        metrics.dcf([all_speech])
    assert metrics.dcf([all_speech, all_noise]) == pytest.approx(100.0)


def test_dcf_matches_counting_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        corpus = []
        for _ in range(int(rng.integers(1, 5))):
            duration = int(rng.integers(500, 1500))
            corpus.append((random_segments(rng, duration), random_segments(rng, duration), duration))
        if not any(ref for ref, _, _ in corpus):
            continue
        aligned = [metrics.align_frames(r, h, d) for r, h, d in corpus]
        assert metrics.dcf(aligned) == pytest.approx(oracles.detection_cost(corpus), abs=1e-9)


def test_rates_undefined_without_both_classes():
    with pytest.raises(UndefinedMetricError):
        metrics.miss_fa_rates([metrics.FrameAlignment(np.ones(4, bool), np.ones(4, bool))])


# ---------------------------------------------------------------------------
# noise rejection
# ---------------------------------------------------------------------------


def test_nrr_counts_clean_files():
    segs = [[], [Segment(0, 100)], []]
    assert metrics.nrr(segs) == pytest.approx(200.0 / 3.0)


def test_nrr_boundaries_are_exact():
    assert metrics.nrr([[], [], []]) == 100.0
    assert metrics.nrr([[Segment(0, 50)]]) == 0.0
    with pytest.raises(UndefinedMetricError):
        metrics.nrr([])


# ---------------------------------------------------------------------------
# edit distance and CER
# ---------------------------------------------------------------------------


def test_levenshtein_known_values():
    assert metrics.levenshtein("kitten", "sitting") == 3
    assert metrics.levenshtein("", "abc") == 3
    assert metrics.levenshtein("same", "same") == 0
    assert metrics.levenshtein("café", "cafe") == 1


def test_levenshtein_matches_recursive_reference():
    rng = np.random.default_rng(2)
    alphabet = "abc"
    for _ in range(60):
        a = "".join(rng.choice(list(alphabet), rng.integers(0, 8)))
        b = "".join(rng.choice(list(alphabet), rng.integers(0, 8)))
        assert metrics.levenshtein(a, b) == oracles.edit_distance(a, b)


@given(st.text(alphabet="abcd", max_size=10), st.text(alphabet="abcd", max_size=10))
def test_levenshtein_axioms(a, b):
    d = metrics.levenshtein(a, b)
    assert d == metrics.levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


def test_cer_hand_values():
    assert metrics.cer("abcd", "abxd") == pytest.approx(25.0)
    assert metrics.cer("ab", "") == pytest.approx(100.0)
    assert metrics.cer("a", "abc") == pytest.approx(200.0)  # can exceed 100


def test_cer_ignores_whitespace():
    assert metrics.cer("a b\tc", "abc") == 0.0


def test_cer_needs_reference_text():
    with pytest.raises(UndefinedMetricError):
        metrics.cer("", "abc")
    with pytest.raises(UndefinedMetricError):
        metrics.cer("  \t ", "abc")


def test_corpus_cer_pools_rather_than_averages():
    pairs = [("a", ""), ("aaaa", "aaaa")]
    assert metrics.corpus_cer(pairs) == pytest.approx(20.0)  # 1 edit over 5 chars
    per_file_mean = (metrics.cer(*pairs[0]) + metrics.cer(*pairs[1])) / 2
    assert metrics.corpus_cer(pairs) != pytest.approx(per_file_mean)
    with pytest.raises(UndefinedMetricError):
        metrics.corpus_cer([("", "x")])


# ---------------------------------------------------------------------------
# relative change
# ---------------------------------------------------------------------------


def test_relative_change_rounds_half_away_from_zero():
    # 100 * 1 / 400 is exactly 0.25 in binary floating point
    assert metrics.relative_change(400.0, 401.0) == 0.3
    assert metrics.relative_change(400.0, 399.0) == -0.3


def test_relative_change_plain_values():
    assert metrics.relative_change(200.0, 199.7) == -0.2
    assert metrics.relative_change(200.0, 200.3) == 0.2
    assert metrics.relative_change(8.33, 6.16) == -26.1
    with pytest.raises(UndefinedMetricError):
        metrics.relative_change(0.0, 1.0)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def sample_report(with_baseline=False):
    rows = {
        "clean": {"cer": 2.53, "dcf": 5.13},
        "noisy": {"cer": 4.31, "dcf": 1.5, "nrr": 85.0},
    }
    baseline = None
    if with_baseline:
        baseline = metrics.build_report({"clean": {"cer": 4.0, "dcf": 8.0}})
    return metrics.build_report(rows, baseline)


def test_build_report_averages_are_unweighted_means():
    report = sample_report()
    assert report.averages["cer"] == pytest.approx((2.53 + 4.31) / 2)
    assert report.averages["dcf"] == pytest.approx((5.13 + 1.5) / 2)
    assert report.averages["nrr"] == pytest.approx(85.0)  # only one row has it
    assert report.relative == {}
    with pytest.raises(UndefinedMetricError):
        metrics.build_report({})


def test_build_report_relative_against_baseline():
    report = sample_report(with_baseline=True)
    assert report.relative["cer"] == metrics.relative_change(4.0, report.averages["cer"])
    assert report.relative["dcf"] == metrics.relative_change(8.0, report.averages["dcf"])
    assert "nrr" not in report.relative  # baseline lacks it


def test_report_text_round_trip():
    report = sample_report(with_baseline=True)
    report_text = metrics.report_to_text(report)
    back = metrics.parse_report(report_text)
    assert set(back.rows) == {"clean", "noisy"}
    for name, vals in report.rows.items():
        for key, value in vals.items():
            assert back.rows[name][key] == pytest.approx(value, abs=0.005)
    for key, value in report.averages.items():
        assert back.averages[key] == pytest.approx(value, abs=0.005)
    assert back.relative["cer"] == report.relative["cer"]
    assert "[avg]" in report_text


def test_report_tsv_layout():
    report = metrics.build_report({"t1": {"cer": 1.0, "dcf": 2.5}, "t2": {"cer": 3.0}})
    want = "set\tcer\tdcf\nt1\t1.00\t2.50\nt2\t3.00\t-\nAVG\t2.00\t2.50\n"
    assert metrics.report_to_tsv(report) == want


def test_parse_report_errors_carry_line_numbers():
    with pytest.raises(ParseError, match="unknown metric"):
        metrics.parse_report("[set:a]\nbogus = 1.0\n")
    with pytest.raises(ParseError, match="bad metric value"):
        metrics.parse_report("[set:a]\ncer = wat\n")
    with pytest.raises(ParseError, match="unparseable"):
        metrics.parse_report("cer = 1.0\n")  # metric line before any section
    with pytest.raises(ParseError, match="no sections"):
        metrics.parse_report("\n\n")
