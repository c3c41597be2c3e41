"""Top-N ranking evaluation: capped Recall@N and NDCG@N.

Scores come from the evaluation-mode pair model (z = mu). Items the user
interacted with in masked splits are pushed to -inf before ranking so they
can never be recommended back. Ties are broken by ascending item index so
results reproduce across runs.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetSplit, InteractionMatrix
from .model import ModelParams, Snapshot


def score_block(params: ModelParams, snap: Snapshot, users) -> np.ndarray:
    """Pair scores g(u, i) for the given users against all items."""
    users = np.asarray(users, dtype=np.int64)
    n_items = snap.item_means.shape[0]
    out = np.zeros((len(users), n_items), dtype=np.float64)
    for a in range(params.n_aspects):
        zu = snap.user_means[users, a, :]
        fu = snap.user_decoded[users, a, :]
        skip = zu @ snap.item_means[:, a, :].T + fu @ snap.item_decoded[:, a, :].T
        sig = 1.0 / (1.0 + np.exp(-skip))
        out += snap.P[users, a][:, None] * snap.C[:, a][None, :] * sig
    return out


def score_all(params: ModelParams, snap: Snapshot, users, masks, block: int = 256) -> np.ndarray:
    """Scores with every masked (user, item) position set to -inf.

    ``masks`` is a list of InteractionMatrix; anything a user touched in any
    of them is removed from the ranking candidates.
    """
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((len(users), snap.item_means.shape[0]), dtype=np.float64)
    for start in range(0, len(users), block):
        chunk = users[start: start + block]
        scores = score_block(params, snap, chunk)
        for k, u in enumerate(chunk):
            for m in masks:
                scores[k, m.user_items[u]] = -np.inf
        out[start: start + len(chunk)] = scores
    return out


def top_n(score_rows: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n best scores per row, ties broken by item index."""
    order = np.argsort(-score_rows, axis=1, kind="stable")
    return order[:, :n]


def recall_at_n(topn_row, test_items, n: int) -> float:
    """|topN ∩ test| / min(N, |test|)."""
    test = set(int(i) for i in test_items)
    if not test:
        raise ValueError("recall undefined for a user with no test items")
    hits = sum(1 for i in topn_row[:n] if int(i) in test)
    return hits / min(n, len(test))


def ndcg_at_n(topn_row, test_items, n: int) -> float:
    """Position-discounted gain over the ideal prefix ordering."""
    test = set(int(i) for i in test_items)
    if not test:
        raise ValueError("ndcg undefined for a user with no test items")
    dcg = 0.0
    for rank, item in enumerate(topn_row[:n], start=1):
        if int(item) in test:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(n, len(test)) + 1))
    return dcg / ideal


def evaluate_ranking(params: ModelParams, snap: Snapshot, split: DatasetSplit,
                     target: str = "test", cutoffs=(20, 50)) -> dict:
    """Macro-averaged metrics on the validation or test split.

    Validation ranking masks only train items; test ranking additionally
    masks validation items. Users without target interactions are skipped.
    """
    if target == "valid":
        held, masks = split.valid, [split.train]
    elif target == "test":
        held, masks = split.test, [split.train, split.valid]
    else:
        raise ValueError(f"unknown target {target!r}")

    users = [u for u in range(held.num_users) if len(held.user_items[u]) > 0]
    result = {"n_users": len(users)}
    if not users:
        for n in cutoffs:
            result[f"recall@{n}"] = float("nan")
            result[f"ndcg@{n}"] = float("nan")
        return result

    scores = score_all(params, snap, users, masks)
    ranked = top_n(scores, max(cutoffs))
    for n in cutoffs:
        recalls, ndcgs = [], []
        for k, u in enumerate(users):
            recalls.append(recall_at_n(ranked[k], held.user_items[u], n))
            ndcgs.append(ndcg_at_n(ranked[k], held.user_items[u], n))
        result[f"recall@{n}"] = float(np.mean(recalls))
        result[f"ndcg@{n}"] = float(np.mean(ndcgs))
    return result


def write_metrics_tsv(path, result: dict, cutoffs=(20, 50)):
    """Line-oriented report: ``metric N value n_users``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric\tN\tvalue\tn_users\n")
        for n in cutoffs:
            fh.write(f"recall\t{n}\t{result[f'recall@{n}']:.6f}\t{result['n_users']}\n")
        for n in cutoffs:
            fh.write(f"ndcg\t{n}\t{result[f'ndcg@{n}']:.6f}\t{result['n_users']}\n")
