import numpy as np
import pytest

from dualvae import data
from dualvae.errors import ConfigError, DataError


def write(tmp_path, text, name="inter.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def brute_force_kcore(pairs, ku, ki):
    """Independent iterative-deletion oracle."""
    pairs = set(pairs)
    changed = True
    while changed:
        changed = False
        users = {}
        items = {}
        for u, i in pairs:
            users.setdefault(u, set()).add(i)
            items.setdefault(i, set()).add(u)
        bad_u = {u for u, s in users.items() if len(s) < ku}
        bad_i = {i for i, s in items.items() if len(s) < ki}
        if bad_u or bad_i:
            pairs = {(u, i) for u, i in pairs if u not in bad_u and i not in bad_i}
            changed = True
    return pairs


# ---------------------------------------------------------------------------
# ingest

def test_ingest_full_bipartite_survives_2core(tmp_path):
    lines = "\n".join(f"u{u}\ti{i}" for u in range(3) for i in range(3))
    m = data.ingest(write(tmp_path, lines), min_user_core=2, min_item_core=2)
    assert (m.num_users, m.num_items, m.nnz) == (3, 3, 9)


def test_ingest_dedups_pairs(tmp_path):
    m = data.ingest(write(tmp_path, "a\tx\na\tx\nb\tx\n"))
    assert m.nnz == 2


def test_ingest_chain_matches_kcore_oracle(tmp_path):
    text = "u1\ti1\nu2\ti1\nu2\ti2\n"
    raw = [("u1", "i1"), ("u2", "i1"), ("u2", "i2")]
    expect = brute_force_kcore(raw, 2, 2)
    got = data.kcore_filter(set(raw), 2, 2)
    assert got == expect
    if expect:
        m = data.ingest(write(tmp_path, text), min_user_core=2, min_item_core=2)
        assert m.nnz == len(expect)
    else:
        with pytest.raises(DataError):
            data.ingest(write(tmp_path, text), min_user_core=2, min_item_core=2)


def test_kcore_random_instances_match_oracle():
    rng = np.random.default_rng(99)
    for trial in range(25):
        nu, ni = rng.integers(3, 12), rng.integers(3, 12)
        pairs = {
            (int(u), int(i))
            for u, i in zip(rng.integers(0, nu, 40), rng.integers(0, ni, 40))
        }
        ku, ki = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        assert data.kcore_filter(set(pairs), ku, ki) == brute_force_kcore(pairs, ku, ki)


def test_ingest_header_detection(tmp_path):
    m = data.ingest(write(tmp_path, "user\titem\n1\t10\n2\t10\n"))
    assert m.num_users == 2 and m.nnz == 2


def test_ingest_csv_and_extra_columns(tmp_path):
    m = data.ingest(write(tmp_path, "1,5,4.0,t\n2,5,3.5,t\n", name="r.csv"))
    assert m.num_users == 2 and m.num_items == 1


def test_ingest_bad_line_reports_number(tmp_path):
    with pytest.raises(DataError, match=":2"):
        data.ingest(write(tmp_path, "1\t2\nonlyonecolumn\n"))


def test_ingest_missing_file():
    with pytest.raises(DataError):
        data.ingest("/nonexistent/file.tsv")


def test_ingest_roundtrip_via_id_maps(tmp_path):
    rng = np.random.default_rng(3)
    lines = {(f"user{u}", f"thing{i}") for u, i in zip(rng.integers(0, 9, 50), rng.integers(0, 9, 50))}
    m1 = data.ingest(write(tmp_path, "\n".join(f"{u}\t{i}" for u, i in sorted(lines))))
    # serialize using the retained id maps, re-ingest, expect identical matrix
    out = "\n".join(f"{m1.user_ids[u]}\t{m1.item_ids[i]}" for u, i in m1.pairs())
    m2 = data.ingest(write(tmp_path, out, name="again.tsv"))
    assert m1.digest() == m2.digest()
    m1.write_id_maps(tmp_path / "maps")
    lines = (tmp_path / "maps" / "user_ids.tsv").read_text().splitlines()
    assert lines[0].split("\t") == [m1.user_ids[0], "0"]


# ---------------------------------------------------------------------------
# split

def make_matrix(num_users=20, num_items=15, density=0.4, seed=0):
    rng = np.random.default_rng(seed)
    dense = (rng.random((num_users, num_items)) < density).astype(float)
    dense[:, 0] = 1.0  # avoid empty users
    return data.from_dense(dense)


def test_split_ratio_for_ten_interactions():
    m = data.from_dense(np.ones((1, 10)))
    s = data.split(m, 0.8, 0.0, seed=1)
    assert len(s.train.user_items[0]) == 8
    assert len(s.test.user_items[0]) + len(s.valid.user_items[0]) == 2


def test_split_single_interaction_user_goes_to_train():
    dense = np.zeros((2, 3))
    dense[0, 0] = 1.0
    dense[1, :] = 1.0
    s = data.split(data.from_dense(dense), 0.8, 0.1, seed=0)
    assert len(s.train.user_items[0]) == 1
    assert len(s.test.user_items[0]) == 0 and len(s.valid.user_items[0]) == 0


def test_split_deterministic_and_disjoint():
    m = make_matrix()
    s1 = data.split(m, 0.8, 0.1, seed=5)
    s2 = data.split(m, 0.8, 0.1, seed=5)
    assert s1.train.digest() == s2.train.digest()
    assert s1.valid.digest() == s2.valid.digest()
    assert s1.test.digest() == s2.test.digest()
    all_pairs = set(m.pairs())
    tr, va, te = set(s1.train.pairs()), set(s1.valid.pairs()), set(s1.test.pairs())
    assert tr | va | te == all_pairs
    assert tr & va == set() and tr & te == set() and va & te == set()
    assert s1.train.nnz + s1.valid.nnz + s1.test.nnz == m.nnz


def test_split_rejects_bad_ratio():
    with pytest.raises(ConfigError):
        data.split(make_matrix(), 1.5, 0.1, seed=0)


# ---------------------------------------------------------------------------
# batches

def test_batch_sizes_300_users():
    m = make_matrix(num_users=300, num_items=10, density=0.5)
    sizes = [len(b.indices) for b in data.make_batches(m, "user", 128, seed=0)]
    assert sizes == [128, 128, 44]


def test_batch_dense_matches_sparse_rows():
    m = make_matrix(seed=2)
    batch = next(data.make_batches(m, "user", 7, seed=3))
    slab = batch.dense()
    for k, u in enumerate(batch.indices):
        np.testing.assert_array_equal(np.nonzero(slab[k])[0], m.user_items[u])
    ib = next(data.make_batches(m, "item", 5, seed=3))
    islab = ib.dense()
    for k, i in enumerate(ib.indices):
        np.testing.assert_array_equal(np.nonzero(islab[k])[0], m.item_users[i])


def test_batch_shuffles_differ_by_epoch_but_reproduce():
    m = make_matrix(num_users=50)
    e0 = np.concatenate([b.indices for b in data.make_batches(m, "user", 16, seed=4, epoch=0)])
    e1 = np.concatenate([b.indices for b in data.make_batches(m, "user", 16, seed=4, epoch=1)])
    e0_again = np.concatenate([b.indices for b in data.make_batches(m, "user", 16, seed=4, epoch=0)])
    assert not np.array_equal(e0, e1)
    np.testing.assert_array_equal(e0, e0_again)


# ---------------------------------------------------------------------------
# neighbor sets

def test_neighbor_sets_single_pair():
    dense = np.zeros((2, 2))
    dense[0, 0] = 1.0
    ns = data.neighbor_sets(data.from_dense(dense))
    assert list(ns.user_neighbors[0]) == [0]
    assert list(ns.item_neighbors[0]) == [0]
    assert len(ns.user_neighbors[1]) == 0


def test_neighbor_sets_symmetry_and_counts():
    m = make_matrix(seed=11)
    ns = data.neighbor_sets(m)
    for u in range(m.num_users):
        for i in ns.user_neighbors[u]:
            assert u in ns.item_neighbors[i]
    for i in range(m.num_items):
        for u in ns.item_neighbors[i]:
            assert i in ns.user_neighbors[u]
    assert sum(len(v) for v in ns.user_neighbors) == m.nnz
    assert sum(len(v) for v in ns.item_neighbors) == m.nnz


def test_no_test_leakage_into_neighbors():
    m = make_matrix(seed=12)
    s = data.split(m, 0.8, 0.1, seed=1)
    ns = data.neighbor_sets(s.train)
    held_out = set(s.valid.pairs()) | set(s.test.pairs())
    for u, i in held_out:
        assert i not in ns.user_neighbors[u]


def test_split_proportions_within_one_interaction_per_user():
    m = make_matrix(num_users=40, num_items=30, density=0.5, seed=21)
    s = data.split(m, 0.8, 0.1, seed=3)
    for u in range(m.num_users):
        n_u = len(m.user_items[u])
        held = len(s.valid.user_items[u]) + len(s.test.user_items[u])
        assert abs(held - 0.2 * n_u) < 1.0
    pool = s.valid.nnz + s.test.nnz
    assert abs(s.valid.nnz - 0.1 * pool) <= 1.0
