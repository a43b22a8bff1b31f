import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ids4nr.backbones import BackboneConfig
from ids4nr.dataset import Split
from ids4nr.errors import ParseError
from ids4nr.evaluation import (TABLE_COLUMNS, MetricsReport, coverage_at_n, evaluate,
                               evaluate_scores, f1_at_n, head_items, item_collaborative,
                               novelty_at_n, popularity_histogram, rank_all, rank_items,
                               recall_at_n)
from ids4nr.selfsup import encode_content
from ids4nr.trainer import TrainConfig, gather_features, init_model, train

from .oracles import oracle_report, random_instance


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_brute_force(seed):
    scores, split = random_instance(seed)
    report = evaluate_scores(scores, split, Ns=(2, 3))
    for n in (2, 3):
        expect = oracle_report(scores, split, n)
        for m in ("rec", "cov", "nov", "f1"):
            assert abs(report.metrics[n][m] - expect[m]) <= 1e-12


def test_prefix_property():
    scores, split = random_instance(99)
    both = evaluate_scores(scores, split, Ns=(2, 3))
    alone = evaluate_scores(scores, split, Ns=(2,))
    assert both.metrics[2] == alone.metrics[2]


def test_recall_examples():
    assert recall_at_n({0: [1, 5]}, {0: [1, 2]}) == 0.5
    lists = {0: [1, 9], 1: [3, 4], 2: [5, 6]}
    test = {0: [1, 2], 1: [7], 2: [5, 6]}
    assert recall_at_n(lists, test) == pytest.approx(0.5)


def test_coverage_examples():
    assert coverage_at_n({0: [1, 2], 1: [2, 3], 2: [3, 4]}, 10) == 0.4
    assert coverage_at_n({u: [0, 1, 2, 3, 4] for u in range(7)}, 100) == 0.05


def test_novelty_examples():
    assert novelty_at_n({0: [0, 1, 2, 3, 4]}, {0, 1, 2}) == 0.6
    assert novelty_at_n({0: [1, 2], 1: [2, 1]}, {1, 2}) == 1.0


def test_head_cut():
    train = np.array([(u, 0) for u in range(9)] + [(u, 1) for u in range(7)]
                     + [(u, 2) for u in range(5)] + [(u, 3) for u in range(3)] + [(0, 4)])
    split = Split(9, 6, train, np.zeros((0, 2), np.int64), np.array([5]), np.zeros(6), 0)
    assert head_items(split).tolist() == [0]


def test_f1_examples():
    assert f1_at_n(0.5, 0.5, 0.5) == pytest.approx(0.25)
    assert f1_at_n(0.0, 0.3, 0.9) == 0.0
    assert f1_at_n(0, 0, 0) == 0.0
    assert round(f1_at_n(0.0752, 0.4296, 0.5519), 4) == 0.0506


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_f1_formula_and_range(r, n, c):
    f = f1_at_n(r, n, c)
    assert 0 <= f <= 1
    d = r + n + c
    assert f == (0.0 if d == 0 else 3 * r * n * c / d)


@given(st.integers(0, 10**6))
def test_metric_bounds(seed):
    scores, split = random_instance(seed)
    report = evaluate_scores(scores, split, Ns=(2, 3))
    for n, vals in report.metrics.items():
        for v in vals.values():
            assert 0 <= v <= 1
        assert vals["cov"] <= min(1.0, split.num_users * n / split.num_items)


def test_report_round_trip_and_table():
    scores, split = random_instance(5)
    report = evaluate_scores(scores, split, Ns=(5, 10), metadata={"backbone": "cml"})
    text = report.to_text()
    back = MetricsReport.from_text(text)
    assert back.metrics == report.metrics
    assert back.metadata == {"backbone": "cml"}
    assert back.to_text() == text
    row = report.table_row().split("\t")
    assert len(row) == 8
    assert float(row[TABLE_COLUMNS.index("Cov@10")]) == round(report.value("Cov@10"), 4)
    with pytest.raises(ParseError):
        MetricsReport.from_text("rec@5=abc\n")
    with pytest.raises(ParseError):
        MetricsReport.from_text("nonsense\n")


def test_model_ranking(synthetic_dataset, synthetic_split):
    cfg = TrainConfig(backbone=BackboneConfig("ncf"), dim=4, epochs=1)
    model, _ = train(init_model(synthetic_dataset, cfg, synthetic_split.cold_items),
                     synthetic_split)
    top = rank_all(model, synthetic_split, 5)
    for u in range(synthetic_split.num_users):
        assert not set(top[u].tolist()) & set(synthetic_split.train_items(u).tolist())
    u = 0
    n_cand = synthetic_split.num_items - len(synthetic_split.train_items(u))
    full = rank_items(model, synthetic_split, u, n_cand)
    assert sorted(full) == sorted(set(range(synthetic_split.num_items))
                                  - set(synthetic_split.train_items(u).tolist()))
    with pytest.raises(ValueError):
        rank_items(model, synthetic_split, u, n_cand + 1)
    report = evaluate(model, synthetic_split)
    assert evaluate(model, synthetic_split).to_text() == report.to_text()


def test_cold_items_use_latent_mean(synthetic_dataset, synthetic_split):
    model = init_model(synthetic_dataset, TrainConfig(dim=4), synthetic_split.cold_items)
    a0 = item_collaborative(model)
    cold = synthetic_split.cold_items
    x = gather_features(model, "item", cold, with_collab=False).reshape(len(cold), -1)
    np.testing.assert_allclose(a0[cold], encode_content(model.selfsup, x)[0], rtol=1e-6)
    warm = np.setdiff1d(np.arange(synthetic_split.num_items), cold)
    np.testing.assert_array_equal(a0[warm], model.item_emb[warm])


def test_fusion_knob(synthetic_dataset, synthetic_split):
    model = init_model(synthetic_dataset, TrainConfig(dim=4), synthetic_split.cold_items)
    tops = {f: rank_all(model.with_config(fusion=f), synthetic_split, 10) for f in
            ("mean", "pop", "pref")}
    assert not np.array_equal(tops["pop"], tops["pref"])


def test_popularity_histogram(synthetic_split):
    rows = popularity_histogram(synthetic_split, bins=5)
    assert sum(c for _, _, c in rows) == synthetic_split.num_items
    assert all(lo < hi for lo, hi, _ in rows)
