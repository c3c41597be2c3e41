import numpy as np
import pytest

from dualvae import data, evaluation as ev, model, tensor as T


def brute_force_metrics(order, test_set, n):
    """Set/loop arithmetic straight from the definitions."""
    hits = [r for r, item in enumerate(order[:n], start=1) if item in test_set]
    recall = len(hits) / min(n, len(test_set))
    dcg = sum(1.0 / np.log2(r + 1) for r in hits)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, min(n, len(test_set)) + 1))
    return recall, dcg / idcg


def test_recall_all_hits_and_no_hits():
    top = np.array([3, 1, 4, 0, 5])
    assert ev.recall_at_n(top, {3, 1, 4}, 5) == 1.0
    assert ev.recall_at_n(top, {9, 8}, 5) == 0.0


def test_recall_two_of_three_hits():
    top = np.arange(20)
    assert abs(ev.recall_at_n(top, {0, 5, 99}, 20) - 2 / 3) < 1e-12


def test_recall_capped_denominator():
    # more test items than the cutoff: denominator is N, not |test|
    top = np.arange(5)
    assert ev.recall_at_n(top, set(range(50)), 5) == 1.0


def test_ndcg_rank_one_and_rank_two():
    assert ev.ndcg_at_n(np.array([7, 3, 9]), {7}, 20) == 1.0
    got = ev.ndcg_at_n(np.concatenate([[3], [7], np.arange(100, 118)]), {7}, 20)
    assert abs(got - 1.0 / np.log2(3)) < 1e-12


def test_ndcg_perfect_prefix():
    for k in (1, 3, 5):
        top = np.arange(20)
        assert abs(ev.ndcg_at_n(top, set(range(k)), 20) - 1.0) < 1e-12


def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n_items = int(rng.integers(10, 60))
        cutoff = int(rng.integers(1, 25))
        order = rng.permutation(n_items)
        n_test = int(rng.integers(1, 8))
        test_set = set(int(x) for x in rng.choice(n_items, n_test, replace=False))
        want_r, want_n = brute_force_metrics(list(order), test_set, cutoff)
        assert abs(ev.recall_at_n(order, test_set, cutoff) - want_r) < 1e-12
        assert abs(ev.ndcg_at_n(order, test_set, cutoff) - want_n) < 1e-12


def test_metric_monotonicity_add_a_hit():
    rng = np.random.default_rng(9)
    for _ in range(100):
        order = rng.permutation(30)
        test_set = set(int(x) for x in rng.choice(30, 4, replace=False))
        in_top = [i for i in order[:10] if i in test_set]
        out_top = [i for i in order[:10] if i not in test_set]
        if not out_top:
            continue
        promoted = set(test_set) | {int(out_top[0])}
        assert ev.recall_at_n(order, promoted, 10) >= ev.recall_at_n(order, test_set, 10) - 1e-12
        assert ev.ndcg_at_n(order, promoted, 10) >= ev.ndcg_at_n(order, test_set, 10) - 1e-12


def test_ndcg_demotion_never_helps():
    order = list(range(20))
    for pos in range(19):
        better = ev.ndcg_at_n(np.array(order), {pos}, 20)
        worse = ev.ndcg_at_n(np.array(order), {pos + 1}, 20)
        assert better >= worse


def test_top_n_tie_break_by_index():
    scores = np.array([[0.5, 0.9, 0.5, 0.9]])
    np.testing.assert_array_equal(ev.top_n(scores, 4)[0], [1, 3, 0, 2])


def test_metrics_reject_empty_test_set():
    with pytest.raises(ValueError):
        ev.recall_at_n(np.arange(5), set(), 5)
    with pytest.raises(ValueError):
        ev.ndcg_at_n(np.arange(5), set(), 5)


# ---------------------------------------------------------------------------
# model-backed scoring

def scored_world(seed=0, m=12, n=15):
    rng = np.random.default_rng(seed)
    dense = (rng.random((m, n)) < 0.4).astype(float)
    dense[:, 0] = 1.0
    matrix = data.from_dense(dense)
    split = data.split(matrix, 0.7, 0.1, seed=seed)
    params = model.ModelParams(m, n, 2, 3, 4, T.RngState(seed))
    snap = model.bootstrap(matrix, params, temp=0.5)
    snap = model.refresh(split.train, params, snap.C, snap.P, temp=0.5)
    return matrix, split, params, snap


def test_scores_repeatable_and_in_range():
    _, split, params, snap = scored_world()
    users = np.arange(split.train.num_users)
    s1 = ev.score_block(params, snap, users)
    s2 = ev.score_block(params, snap, users)
    np.testing.assert_array_equal(s1, s2)
    assert np.all(s1 > 0.0) and np.all(s1 < 1.0)


def test_masked_items_never_ranked():
    _, split, params, snap = scored_world(seed=3)
    users = np.arange(split.train.num_users)
    scores = ev.score_all(params, snap, users, [split.train, split.valid])
    ranked = ev.top_n(scores, 5)
    for k, u in enumerate(users):
        banned = set(split.train.user_items[u]) | set(split.valid.user_items[u])
        ranked_positive = [i for i in ranked[k] if np.isfinite(scores[k, i])]
        assert banned.isdisjoint(ranked_positive)


def test_evaluate_ranking_shapes_and_bounds():
    _, split, params, snap = scored_world(seed=5)
    out = ev.evaluate_ranking(params, snap, split, target="test", cutoffs=(5, 10))
    assert out["n_users"] > 0
    for key in ("recall@5", "recall@10", "ndcg@5", "ndcg@10"):
        assert 0.0 <= out[key] <= 1.0


def test_metrics_tsv_format(tmp_path):
    _, split, params, snap = scored_world(seed=6)
    out = ev.evaluate_ranking(params, snap, split, cutoffs=(5, 10))
    path = tmp_path / "metrics.tsv"
    ev.write_metrics_tsv(path, out, cutoffs=(5, 10))
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["metric", "N", "value", "n_users"]
    assert len(lines) == 5
    assert lines[1].startswith("recall\t5\t")
