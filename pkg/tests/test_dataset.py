import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ids4nr.dataset import (Interaction, InteractionLog, build_dataset, compute_novelty_scores,
                            epoch_examples, load_attributes, load_interactions,
                            load_split_manifest, make_batches, sample_negatives,
                            save_split_manifest, select_cold_items, Split, split_train_test)
from ids4nr.errors import (EmptyAfterFiltering, InsufficientCandidates, MissingFile,
                           ParseError)


def _log(rows):
    return InteractionLog(tuple(Interaction(str(u), str(v), 1.0, int(t)) for u, v, t in rows))


def _pairs(rows):
    return np.array([(u, v) for u, v, _ in rows], dtype=np.int64)


def _grid_log(n_users, n_items, t=lambda u, v: u + v):
    return _log([(u, v, t(u, v)) for u in range(n_users) for v in range(n_items)])


def test_load_dedups_to_latest(tmp_path):
    p = tmp_path / "i.tsv"
    p.write_text("a\tx\t5\t10\na\tx\t3\t20\nb\ty\t1\t5\n")
    log = load_interactions(p)
    assert len(log) == 2
    rec = [r for r in log.records if r.user == "a"][0]
    assert rec.timestamp == 20 and rec.rating == 3.0


def test_load_csv_and_errors(tmp_path):
    p = tmp_path / "i.csv"
    p.write_text("a,x,5,10\n")
    assert len(load_interactions(p, format="csv")) == 1
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tx\t5\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(bad)
    assert ":1:" in str(exc.value)
    bad.write_text("a\tx\tfive\t1\n")
    with pytest.raises(ParseError):
        load_interactions(bad)
    with pytest.raises(MissingFile):
        load_interactions(tmp_path / "nope.tsv")


def test_kcore_fixpoint_and_reindex():
    # user 9 has a single interaction; dropping it leaves item 7 with 4 users < 5
    rows = [(u, v, 0) for u in range(5) for v in range(5)]
    rows += [(u, 7, 0) for u in range(4)] + [(9, 7, 0)]
    ds = build_dataset(_log(rows), k_core=5)
    assert ds.num_users == 5 and ds.num_items == 5 and ds.num_interactions == 25
    assert ds.user_ids == ("0", "1", "2", "3", "4")


def test_kcore_can_empty():
    with pytest.raises(EmptyAfterFiltering):
        build_dataset(_log([(0, 0, 0), (1, 1, 0)]), k_core=2)


def test_natural_id_order():
    ds = build_dataset(_log([(10, "b", 0), (2, "a", 0), (1, "a10", 0), (1, "a2", 0)]), k_core=1)
    assert ds.user_ids == ("1", "2", "10")
    assert ds.item_ids == ("a", "a10", "a2", "b")


def test_attributes(tmp_path):
    p = tmp_path / "attrs.tsv"
    p.write_text("x\tgenre\tdrama\nx\tgenre\tcomedy\nx\tyear\t1990s\ny\tyear\t1980s\nzz\tyear\t1\n")
    table = load_attributes(p, {"x": 0, "y": 1, "w": 2})
    assert table.field_names == ("genre", "year")
    assert table.counts().tolist() == [3, 1, 0]
    idx, w = table.padded()
    assert idx.shape == (3, 2, 2)
    np.testing.assert_allclose(w[0, 0], [0.5, 0.5])
    np.testing.assert_allclose(w[0, 1], [1.0, 0.0])
    assert w[2].sum() == 0
    assert {f for f, _ in table.of(0)} == {0, 1}


def test_missing_attr_file_names_path(tmp_path):
    with pytest.raises(MissingFile) as exc:
        build_dataset(_grid_log(2, 2), item_attr_path=tmp_path / "items.tsv", k_core=1)
    assert "items.tsv" in str(exc.value)


def test_cold_items_latest_mean_with_ties():
    # items 0..9, mean timestamp = item index except items 8 and 9 tie
    ds = build_dataset(_grid_log(3, 10, lambda u, v: min(v, 8)), k_core=1)
    assert select_cold_items(ds, fraction=0.2).tolist() == [8, 9]
    assert select_cold_items(ds, fraction=0.1).tolist() == [9]
    assert select_cold_items(ds, fraction=0.15).tolist() == [8, 9]
    assert len(select_cold_items(ds, fraction=0.25)) == 3


def test_cold_count_is_ceiling():
    ds = build_dataset(_grid_log(2, 1682), k_core=1)
    assert len(select_cold_items(ds)) == 337


def test_holdout_counts():
    ds = build_dataset(_grid_log(4, 17), k_core=1)
    cold = [15, 16]
    split = split_train_test(ds, cold, seed=1)
    deg = np.bincount(split.test[:, 0], minlength=4)
    # 15 warm items per user -> 1 held out, plus the 2 cold ones
    assert deg.tolist() == [3, 3, 3, 3]
    assert split.item_train_degree[cold].sum() == 0


def test_small_users_keep_single_interaction():
    ds = build_dataset(_log([(0, 0, 0), (1, 0, 0), (1, 1, 0), (2, 1, 0)]), k_core=1)
    split = split_train_test(ds, [], seed=0)
    assert split.test[:, 0].tolist() == [1]


def test_novelty_scores_hand_example():
    # item degrees 4, 2, 1 among 4 users; item 3 cold
    rows = [(u, 0, 0) for u in range(4)] + [(0, 1, 0), (1, 1, 0), (2, 2, 0), (3, 3, 9)]
    ds = build_dataset(_log(rows), k_core=1)
    split = Split(4, 4, _pairs(rows[:-1]), _pairs(rows[-1:]), np.array([3]), np.zeros(4), 0)
    alpha = compute_novelty_scores(split, 4)
    raw = np.log([4 / 4, 4 / 2, 4 / 1])
    np.testing.assert_allclose(alpha[:3], (raw - raw.min()) / (raw.max() - raw.min()))
    assert alpha[3] == 1.0


@given(st.integers(0, 2**31), st.integers(3, 15), st.integers(4, 20))
def test_split_properties(seed, n_users, n_items):
    rng = np.random.default_rng(seed)
    rows = [(u, v, int(rng.integers(0, 100))) for u in range(n_users) for v in range(n_items)
            if rng.random() < 0.5]
    if not rows:
        return
    ds = build_dataset(_log(rows), k_core=1)
    cold = select_cold_items(ds)
    split = split_train_test(ds, cold, seed=seed)
    train = set(map(tuple, split.train.tolist()))
    test = set(map(tuple, split.test.tolist()))
    assert not train & test
    assert train | test == ds.interactions
    assert all(v not in set(cold.tolist()) for _, v in train)
    alpha = split.novelty_alpha
    assert ((alpha >= 0) & (alpha <= 1)).all()
    deg = split.item_train_degree
    warm = np.flatnonzero(deg > 0)
    for a in warm:
        for b in warm:
            if deg[a] < deg[b]:
                assert alpha[a] >= alpha[b]
    again = split_train_test(ds, cold, seed=seed)
    np.testing.assert_array_equal(split.test, again.test)


def test_negatives(synthetic_split, rng):
    s = synthetic_split
    for u in range(s.num_users):
        negs = sample_negatives(s, u, 4, rng)
        assert len(set(negs)) == 4
        assert not set(negs) & set(s.train_items(u).tolist())
        assert not s.cold_mask[negs].any()


def test_negatives_insufficient():
    # 5 items, one held out per user: a single candidate remains
    ds = build_dataset(_grid_log(2, 5), k_core=1)
    split = split_train_test(ds, [], seed=0)
    assert len(sample_negatives(split, 0, 1)) == 1
    with pytest.raises(InsufficientCandidates):
        sample_negatives(split, 0, 2)


def test_epoch_shapes(synthetic_split, rng):
    s = synthetic_split
    P = len(s.train)
    u, i, labels = epoch_examples(s, "pointwise", rng)
    assert len(u) == 5 * P and labels.sum() == P
    u, i, n = epoch_examples(s, "pairwise", rng)
    assert len(u) == 4 * P
    batches = list(make_batches(s, "pairwise", 128, rng))
    assert sum(len(b) for b in batches) == 4 * P
    assert all(len(b) <= 128 for b in batches)
    np.testing.assert_array_equal(batches[0].alpha_neg, s.novelty_alpha[batches[0].neg_items])


def test_manifest_round_trip(tmp_path, synthetic_dataset, synthetic_split):
    p = tmp_path / "split.tsv"
    save_split_manifest(synthetic_split, synthetic_dataset, p)
    back = load_split_manifest(p, synthetic_dataset)
    np.testing.assert_array_equal(back.train, synthetic_split.train)
    np.testing.assert_array_equal(back.test, synthetic_split.test)
    np.testing.assert_array_equal(back.cold_items, synthetic_split.cold_items)
    np.testing.assert_array_equal(back.novelty_alpha, synthetic_split.novelty_alpha)
    save_split_manifest(back, synthetic_dataset, tmp_path / "again.tsv")
    assert (tmp_path / "again.tsv").read_bytes() == p.read_bytes()


def test_sparsity():
    ds = build_dataset(_grid_log(3, 4), k_core=1)
    assert math.isclose(ds.sparsity, 0.0)
