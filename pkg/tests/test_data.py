import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcf.data import (
    ColumnSpec,
    ParseError,
    RatingScale,
    ScoreRangeError,
    dataset_from_records,
    feedback_histogram,
    load_dataset,
    normalize_score,
    parse_ratings,
    save_dataset,
    serialize_ratings,
    split_train_test,
    synthetic_ratings,
    write_histogram_csv,
)


def test_normalize_endpoints_and_midpoint():
    s = RatingScale(1, 5)
    assert normalize_score(1, s) == 0.0
    assert normalize_score(5, s) == 1.0
    assert normalize_score(3, s) == 0.5


def test_normalize_rejects_out_of_range():
    with pytest.raises(ScoreRangeError):
        normalize_score(6, RatingScale(1, 5))
    with pytest.raises(ScoreRangeError):
        normalize_score(np.array([1, 0]), RatingScale(1, 5))


def test_scale_needs_max_above_min():
    with pytest.raises(ValueError):
        RatingScale(3, 3)


@given(st.integers(1, 10), st.integers(1, 10))
def test_normalize_is_monotone(a, b):
    s = RatingScale(1, 10)
    if a < b:
        assert normalize_score(a, s) < normalize_score(b, s)


def test_parse_two_lines():
    ds = parse_ratings(["u1,i1,5", "u2,i1,3"])
    assert (ds.n_users, ds.n_items, len(ds)) == (2, 1, 2)
    assert ds.user_ids == ("u1", "u2")
    assert list(ds.score) == [1.0, 0.5]


def test_parse_empty_stream():
    with pytest.raises(ParseError, match="no records"):
        parse_ratings(io.StringIO(""))


def test_parse_out_of_scale_rating():
    with pytest.raises(ScoreRangeError, match="line 1"):
        parse_ratings(["u1,i1,9"])


def test_parse_reports_line_number_of_malformed_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_ratings(["a,b,1", "broken"])
    with pytest.raises(ParseError, match="line 1"):
        parse_ratings(["a,b,x"])


def test_parse_duplicates_keep_last_and_first_seen_ids():
    ds = parse_ratings(["b,x,1", "a,y,2", "b,x,4"])
    assert ds.user_ids == ("b", "a")
    assert len(ds) == 2
    assert dict(zip(zip(ds.users.tolist(), ds.items.tolist()), ds.raw.tolist()))[(0, 0)] == 4


def test_parse_movielens_format():
    ds = parse_ratings(["1::10::5::978300760", "2::10::1::978300761"], ColumnSpec.movielens())
    assert (ds.n_users, ds.n_items) == (2, 1)


def test_parse_serialize_roundtrip():
    ds = synthetic_ratings(20, 30, 200, seed=2)
    again = parse_ratings(serialize_ratings(ds))
    assert again == parse_ratings(serialize_ratings(again))
    assert len(again) == len(ds)
    assert sorted(zip(*map(list, (again.users, again.items, again.raw)))) == sorted(
        zip(
            [again.user_ids.index(ds.user_ids[u]) for u in ds.users],
            [again.item_ids.index(ds.item_ids[i]) for i in ds.items],
            ds.raw.tolist(),
        )
    )


def test_single_rating_user_lands_in_train():
    records = [(0, i, 3) for i in range(10)] + [(1, 0, 4)] + [(u, i, 2) for u in range(2, 6) for i in range(10)]
    ds = dataset_from_records(records)
    for seed in range(20):
        split = split_train_test(ds, 0.8, seed)
        assert 1 in set(split.train.users.tolist())
        assert 1 not in set(split.test.users.tolist())


def test_split_fraction_and_coverage_at_scale():
    ds = synthetic_ratings(seed=0)
    split = split_train_test(ds, 0.8, seed=0)
    assert 79_000 <= len(split.train) <= 81_000
    assert len(split.train) + len(split.test) == len(ds)
    assert set(split.test.users.tolist()) <= set(split.train.users.tolist())
    assert set(split.test.items.tolist()) <= set(split.train.items.tolist())
    train_pairs = set(zip(split.train.users.tolist(), split.train.items.tolist()))
    test_pairs = set(zip(split.test.users.tolist(), split.test.items.tolist()))
    assert not train_pairs & test_pairs
    assert train_pairs | test_pairs == set(zip(ds.users.tolist(), ds.items.tolist()))


def test_split_is_deterministic():
    ds = synthetic_ratings(50, 50, 600, seed=4)
    a, b = split_train_test(ds, 0.7, 9), split_train_test(ds, 0.7, 9)
    assert a.train == b.train and a.test == b.test


def test_split_infeasible_fraction_warns_and_relaxes():
    ds = dataset_from_records([(u, u, 3) for u in range(10)])
    with pytest.warns(UserWarning, match="coverage"):
        split = split_train_test(ds, 0.5, 0)
    assert len(split.test) == 0 and split.achieved_fraction == 1.0


def test_split_rejects_bad_fraction():
    ds = dataset_from_records([(0, 0, 1)])
    for f in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            split_train_test(ds, f, 0)


def test_histogram_two_users_three_ratings():
    ds = dataset_from_records([(u, i, 4) for u in range(2) for i in range(3)])
    assert feedback_histogram(ds, "user") == {3: 2}
    assert feedback_histogram(ds, "item") == {2: 3}


def test_histogram_of_empty_dataset():
    ds = dataset_from_records([], n_users=7, n_items=3)
    assert feedback_histogram(ds, "user") == {0: 7}


def test_histogram_matches_brute_force_count(tmp_path):
    ds = synthetic_ratings(200, 300, 5000, seed=8)
    hist = feedback_histogram(ds, "item")
    counts = {}
    for i in range(ds.n_items):
        c = sum(1 for x in ds.items.tolist() if x == i)
        counts[c] = counts.get(c, 0) + 1
    assert hist == counts
    assert sum(hist.values()) == ds.n_items
    path = tmp_path / "hist.csv"
    write_histogram_csv(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "count,frequency"
    assert {int(a): int(b) for a, b in (l.split(",") for l in lines[1:])} == hist


def test_save_load_roundtrip(tmp_path):
    ds = synthetic_ratings(30, 40, 300, seed=6)
    save_dataset(ds, tmp_path / "ds.txt")
    back = load_dataset(tmp_path / "ds.txt")
    assert back == ds
    assert back.user_ids == ds.user_ids and back.item_ids == ds.item_ids


def test_synthetic_dataset_shape():
    ds = synthetic_ratings(100, 150, 3000, seed=1)
    assert len(ds) == 3000
    assert ds.raw.min() >= 1 and ds.raw.max() <= 5
    assert len(set(zip(ds.users.tolist(), ds.items.tolist()))) == len(ds)
    assert np.bincount(ds.users, minlength=100).min() >= 3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 5)), min_size=1, max_size=60),
       st.integers(0, 1000))
def test_split_invariants_on_random_datasets(records, seed):
    dedup = {(u, i): r for u, i, r in records}
    ds = dataset_from_records([(u, i, r) for (u, i), r in dedup.items()], n_users=9, n_items=9)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        split = split_train_test(ds, 0.8, seed)
    assert len(split.train) + len(split.test) == len(ds)
    assert set(split.test.users.tolist()) <= set(split.train.users.tolist())
    assert set(split.test.items.tolist()) <= set(split.train.items.tolist())
