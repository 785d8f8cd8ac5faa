from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import majority
from textforge.errors import EmptyAfterFilter, EmptyInput, LengthMismatch
from textforge.evalkit import (
    EvalConfig, EvalRow, micro_average, normalize_text, read_predictions, read_rows, vote,
    word_accuracy, write_predictions,
)

TEST_SIZES = [3000, 647, 860, 1015, 1811, 645, 288, 2201, 3000]
TABLE = Path(__file__).resolve().parents[1] / "src" / "textforge" / "data" / "real_ratio_table.csv"


# ---------------------------------------------------------------- word accuracy


def test_perfect_predictions_score_one():
    gts = ["alpha", "Beta", "g4mma"]
    assert word_accuracy(gts, gts) == 1.0


def test_case_flag():
    assert word_accuracy(["Hello"], ["hello"], EvalConfig(case_sensitive=False)) == 1.0
    assert word_accuracy(["Hello"], ["hello"], EvalConfig(case_sensitive=True)) == 0.0


def test_min_length_filter_drops_short_ground_truths():
    cfg = EvalConfig(min_len_filter=3)
    assert word_accuracy(["xx", "abc"], ["ab", "abc"], cfg) == 1.0
    assert word_accuracy(["ab", "abd"], ["ab", "abc"], cfg) == 0.0


def test_min_length_counts_alphanumerics_only():
    # "a-b" has two alphanumerics, so it is dropped at min length 3
    assert word_accuracy(["zzz", "abc"], ["a-b", "abc"], EvalConfig(min_len_filter=3)) == 1.0
    keep = EvalConfig(alnum_only=False, min_len_filter=3)
    assert word_accuracy(["zzz", "abc"], ["a-b", "abc"], keep) == 0.5


def test_punctuation_is_ignored_by_default():
    assert word_accuracy(["it's"], ["its"]) == 1.0
    assert word_accuracy(["it's"], ["its"], EvalConfig(alnum_only=False)) == 0.0
    assert normalize_text("Café-2!", EvalConfig()) == "café2"


def test_accuracy_errors():
    with pytest.raises(LengthMismatch):
        word_accuracy(["a"], ["a", "b"])
    with pytest.raises(EmptyAfterFilter):
        word_accuracy(["a"], ["a"], EvalConfig(min_len_filter=3))
    with pytest.raises(ValueError):
        EvalConfig(min_len_filter=-1)


words = st.text(alphabet="abcAB1-", max_size=5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=20), st.randoms())
def test_accuracy_is_bounded_and_order_free(pairs, rnd):
    preds, gts = zip(*pairs)
    acc = word_accuracy(preds, gts)
    assert 0.0 <= acc <= 1.0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p2, g2 = zip(*shuffled)
    assert word_accuracy(p2, g2) == pytest.approx(acc)


# ---------------------------------------------------------------- micro average


def test_micro_average_of_bundled_table():
    groups = read_rows(TABLE)
    for rows in groups.values():
        assert [r.size for r in rows] == TEST_SIZES
    assert micro_average(groups["ratio_00"]) == pytest.approx(0.834, abs=5e-4)
    assert micro_average(groups["ratio_15"]) == pytest.approx(0.869, abs=5e-4)


def test_micro_average_single_row():
    assert micro_average([EvalRow("x", 17, 0.42)]) == pytest.approx(0.42)


def test_micro_average_empty_raises():
    with pytest.raises(EmptyInput):
        micro_average([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5000), st.floats(0, 1)), min_size=1, max_size=12),
       st.integers(2, 50))
def test_micro_average_properties(rows, k):
    rs = [EvalRow(str(i), n, a) for i, (n, a) in enumerate(rows)]
    avg = micro_average(rs)
    accs = [a for _, a in rows]
    assert min(accs) - 1e-12 <= avg <= max(accs) + 1e-12
    scaled = [EvalRow(r.dataset, r.size * k, r.accuracy) for r in rs]
    assert micro_average(scaled) == pytest.approx(avg, abs=1e-12)


def test_eval_row_validation():
    with pytest.raises(ValueError):
        EvalRow("x", 0, 0.5)
    with pytest.raises(ValueError):
        EvalRow("x", 1, 1.5)


# ---------------------------------------------------------------- voting


def test_vote_unanimous():
    assert vote(["cat"] * 4) == "cat"


def test_vote_majority():
    assert vote(["cat", "cat", "dog", "cat"]) == "cat"


def test_vote_tie_goes_to_first_listed():
    assert vote(["cat", "dog", "dog", "cat"]) == "cat"
    assert vote(["dog", "cat", "cat", "dog"]) == "dog"


def test_vote_empty_raises():
    with pytest.raises(EmptyInput):
        vote([])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "A", ""]), min_size=1, max_size=7))
def test_vote_matches_oracle_and_respects_majorities(preds):
    out = vote(preds)
    assert out in preds
    assert out == majority(preds)
    for cand in set(preds):
        if preds.count(cand) > len(preds) / 2:
            assert out == cand


# ---------------------------------------------------------------- files


def test_prediction_files_round_trip(tmp_path):
    preds = {"001": "hello", "002": "", "003": "wörld"}
    path = tmp_path / "p.tsv"
    write_predictions(path, preds)
    assert read_predictions(path) == preds


def test_read_rows_without_group_column(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("dataset,size,accuracy\nA,10,0.5\nB,30,0.9\n")
    groups = read_rows(path)
    assert list(groups) == [""]
    assert micro_average(groups[""]) == pytest.approx(0.8)


def test_read_rows_missing_column(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("dataset,accuracy\nA,0.5\n")
    with pytest.raises(ValueError):
        read_rows(path)


def test_random_votes_against_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        preds = list(rng.choice(["x", "y", "z"], size=4))
        assert vote(preds) == majority(preds)
