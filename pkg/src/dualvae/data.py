"""Implicit-feedback data handling.

Builds the sparse user-item interaction matrix from delimited text, applies
iterative k-core filtering, produces per-user train/validation/test splits
and per-side minibatches, and exposes the train-split neighbor sets used by
the contrastive constraint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tensor import RngState

_DELIMS = {"tsv": "\t", "csv": ","}


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


class InteractionMatrix:
    """Binary user-item interactions held as paired row and column views.

    ``user_items[u]`` is the sorted array of item indices user ``u`` touched;
    ``item_users[i]`` the sorted array of users that touched item ``i``. The
    two views always encode the same pair set. Original string ids are kept
    so results can be reported in the input vocabulary.
    """

    def __init__(self, num_users, num_items, pairs, user_ids=None, item_ids=None):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.user_ids = list(user_ids) if user_ids is not None else [str(u) for u in range(num_users)]
        self.item_ids = list(item_ids) if item_ids is not None else [str(i) for i in range(num_items)]
        if len(self.user_ids) != self.num_users or len(self.item_ids) != self.num_items:
            raise DataError("id map sizes disagree with matrix dimensions")

        uniq = sorted(set((int(u), int(i)) for u, i in pairs))
        for u, i in uniq:
            if not (0 <= u < self.num_users and 0 <= i < self.num_items):
                raise DataError(f"pair ({u}, {i}) out of range")
        by_user = [[] for _ in range(self.num_users)]
        by_item = [[] for _ in range(self.num_items)]
        for u, i in uniq:
            by_user[u].append(i)
            by_item[i].append(u)
        self.user_items = [np.asarray(v, dtype=np.int64) for v in by_user]
        self.item_users = [np.asarray(v, dtype=np.int64) for v in by_item]
        self.nnz = len(uniq)

    def pairs(self):
        for u, items in enumerate(self.user_items):
            for i in items:
                yield u, int(i)

    def densify_users(self, users, dtype=np.float64) -> np.ndarray:
        """Dense slab of interaction rows, one per requested user."""
        out = np.zeros((len(users), self.num_items), dtype=dtype)
        for k, u in enumerate(users):
            out[k, self.user_items[u]] = 1.0
        return out

    def densify_items(self, items, dtype=np.float64) -> np.ndarray:
        """Dense slab of interaction columns, one row per requested item."""
        out = np.zeros((len(items), self.num_users), dtype=dtype)
        for k, i in enumerate(items):
            out[k, self.item_users[i]] = 1.0
        return out

    def digest(self) -> str:
        """Stable fingerprint of the pair set and id maps."""
        h = hashlib.sha256()
        h.update(f"{self.num_users},{self.num_items},{self.nnz};".encode())
        for u, i in self.pairs():
            h.update(f"{u}:{i};".encode())
        return h.hexdigest()[:16]

    def write_id_maps(self, out_dir):
        """Two-column ``original_id index`` text files for both sides."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, ids in (("user_ids.tsv", self.user_ids), ("item_ids.tsv", self.item_ids)):
            with open(out_dir / name, "w", encoding="utf-8") as fh:
                for idx, orig in enumerate(ids):
                    fh.write(f"{orig}\t{idx}\n")


@dataclass
class DatasetSplit:
    train: InteractionMatrix
    valid: InteractionMatrix
    test: InteractionMatrix
    seed: int


@dataclass
class NeighborSets:
    """Train-split adjacency in both directions."""

    user_neighbors: list  # per user: item index array
    item_neighbors: list  # per item: user index array


@dataclass
class Batch:
    side: str  # "user" or "item"
    indices: np.ndarray
    _matrix: InteractionMatrix = field(repr=False)

    def dense(self, dtype=np.float64) -> np.ndarray:
        if self.side == "user":
            return self._matrix.densify_users(self.indices, dtype)
        return self._matrix.densify_items(self.indices, dtype)


def read_pairs(path, fmt=None):
    """Parse ``user<delim>item[<delim>ignored...]`` lines into id pairs.

    The delimiter comes from ``fmt`` ("tsv"/"csv") or the file suffix. A
    single leading header line is skipped when its first two tokens are both
    non-numeric.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "tsv"
    if fmt not in _DELIMS:
        raise ConfigError(f"unknown format {fmt!r}; expected tsv or csv")
    delim = _DELIMS[fmt]

    with open(path, "r", encoding="utf-8") as fh:
        lines = [(n, ln.rstrip("\n").rstrip("\r")) for n, ln in enumerate(fh, start=1)]
    lines = [(n, ln) for n, ln in lines if ln]

    # header only when line 1 looks symbolic while line 2 looks like data;
    # all-string id files keep their first line
    if len(lines) >= 2:
        first, second = lines[0][1].split(delim), lines[1][1].split(delim)
        if (
            len(first) >= 2
            and len(second) >= 2
            and not _is_number(first[0].strip())
            and not _is_number(first[1].strip())
            and _is_number(second[0].strip())
            and _is_number(second[1].strip())
        ):
            lines = lines[1:]

    pairs = []
    for lineno, line in lines:
        toks = line.split(delim)
        if len(toks) < 2:
            raise DataError(f"{path}:{lineno}: expected at least 2 columns, got {len(toks)}")
        u, i = toks[0].strip(), toks[1].strip()
        if not u or not i:
            raise DataError(f"{path}:{lineno}: empty user or item token")
        pairs.append((u, i))
    return pairs


def kcore_filter(pairs, min_user_core: int, min_item_core: int):
    """Iteratively drop users/items below their degree threshold until stable."""
    pairs = set(pairs)
    while True:
        ucnt, icnt = {}, {}
        for u, i in pairs:
            ucnt[u] = ucnt.get(u, 0) + 1
            icnt[i] = icnt.get(i, 0) + 1
        keep = {
            (u, i)
            for u, i in pairs
            if ucnt[u] >= min_user_core and icnt[i] >= min_item_core
        }
        if len(keep) == len(pairs):
            return pairs
        pairs = keep


def ingest(path, fmt=None, min_user_core: int = 1, min_item_core: int = 1) -> InteractionMatrix:
    """Read interactions, dedup, k-core filter, and reindex contiguously."""
    raw = read_pairs(path, fmt)
    if not raw:
        raise DataError(f"{path}: no interactions parsed")
    kept = kcore_filter(set(raw), min_user_core, min_item_core)
    if not kept:
        raise DataError(
            f"{path}: empty after {min_user_core}/{min_item_core}-core filtering"
        )
    users = sorted({u for u, _ in kept})
    items = sorted({i for _, i in kept})
    umap = {u: k for k, u in enumerate(users)}
    imap = {i: k for k, i in enumerate(items)}
    pairs = [(umap[u], imap[i]) for u, i in kept]
    return InteractionMatrix(len(users), len(items), pairs, users, items)


def from_dense(matrix: np.ndarray, user_ids=None, item_ids=None) -> InteractionMatrix:
    us, its = np.nonzero(matrix)
    return InteractionMatrix(matrix.shape[0], matrix.shape[1], zip(us, its), user_ids, item_ids)


def split(
    matrix: InteractionMatrix,
    train_ratio: float = 0.8,
    valid_of_test: float = 0.1,
    seed: int = 0,
) -> DatasetSplit:
    """Per-user random split into train/validation/test.

    For each user, floor(n_u * (1 - train_ratio)) interactions go to a test
    pool (so a 1-interaction user trains on it); validation is then carved
    globally from that pool at ``valid_of_test`` and excluded from the final
    test set.
    """
    if not (0.0 < train_ratio < 1.0) or not (0.0 <= valid_of_test < 1.0):
        raise ConfigError("split ratios must lie in (0, 1)")
    rng = RngState(seed).derive(101)
    train_pairs, pool = [], []
    for u in range(matrix.num_users):
        items = matrix.user_items[u]
        # epsilon guards floor against float dust (10 * 0.2 -> 1.999...)
        n_test = int(np.floor(len(items) * (1.0 - train_ratio) + 1e-9))
        perm = rng.permutation(len(items))
        shuffled = items[perm]
        for i in shuffled[: len(items) - n_test]:
            train_pairs.append((u, int(i)))
        for i in shuffled[len(items) - n_test:]:
            pool.append((u, int(i)))

    n_valid = int(round(valid_of_test * len(pool)))
    vidx = set(map(int, rng.choice(len(pool), n_valid, replace=False))) if n_valid else set()
    valid_pairs = [p for k, p in enumerate(pool) if k in vidx]
    test_pairs = [p for k, p in enumerate(pool) if k not in vidx]

    def build(pairs):
        return InteractionMatrix(
            matrix.num_users, matrix.num_items, pairs, matrix.user_ids, matrix.item_ids
        )

    return DatasetSplit(build(train_pairs), build(valid_pairs), build(test_pairs), seed)


def make_batches(matrix: InteractionMatrix, side: str, batch_size: int, seed: int, epoch: int = 0):
    """Seeded shuffled minibatches over one side; the last batch may be short.

    Shuffles differ across epochs but are reproducible for a given
    (seed, epoch) pair. Dense slabs are materialized lazily via
    ``Batch.dense()``.
    """
    if side not in ("user", "item"):
        raise ConfigError(f"unknown side {side!r}")
    n = matrix.num_users if side == "user" else matrix.num_items
    order = RngState(seed).derive(7, epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield Batch(side, order[start: start + batch_size], matrix)


def neighbor_sets(train: InteractionMatrix) -> NeighborSets:
    """Train-split adjacency: items per user and users per item."""
    return NeighborSets(list(train.user_items), list(train.item_users))
