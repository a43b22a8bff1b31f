"""Interaction/attribute ingestion, k-core filtering, cold-start carving,
train/test splits, novelty scores and training batches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels
from .errors import (EmptyAfterFiltering, InsufficientCandidates, MissingFile,
                     ParseError)

SEPARATORS = {"tsv": "\t", "csv": ","}


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


@dataclass(frozen=True)
class InteractionLog:
    records: tuple[Interaction, ...]

    def __len__(self):
        return len(self.records)


def _separator(fmt):
    try:
        return SEPARATORS[fmt]
    except KeyError:
        raise ValueError(f"format must be one of {sorted(SEPARATORS)}, got {fmt!r}") from None


def _read_lines(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def load_interactions(path, format="tsv") -> InteractionLog:
    """Parse ``user<SEP>item<SEP>rating<SEP>timestamp`` lines.

    Duplicate (user, item) pairs collapse to the record with the latest
    timestamp (the later line wins a tie).
    """
    sep = _separator(format)
    latest: dict[tuple[str, str], Interaction] = {}
    for lineno, line in _read_lines(path):
        parts = line.split(sep)
        if len(parts) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(parts)}")
        user, item, rating, ts = (p.strip() for p in parts)
        try:
            rating_v = float(rating)
            ts_f = float(ts)
        except ValueError:
            raise ParseError(path, lineno, "rating/timestamp not numeric") from None
        if not math.isfinite(ts_f) or ts_f < 0 or ts_f != int(ts_f):
            raise ParseError(path, lineno, f"bad timestamp {ts!r}")
        if not user or not item:
            raise ParseError(path, lineno, "empty user or item id")
        rec = Interaction(user, item, rating_v, int(ts_f))
        prev = latest.get((user, item))
        if prev is None or rec.timestamp >= prev.timestamp:
            latest[(user, item)] = rec
    return InteractionLog(tuple(latest.values()))


def _natural_key(s):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


@dataclass(frozen=True)
class AttributeTable:
    """Categorical attributes of one side (users or items).

    Value ids are dense over distinct (field, value) pairs.  Per entity the
    value ids sit in a CSR layout sorted ascending.
    """

    field_names: tuple[str, ...]
    value_names: tuple[tuple[int, str], ...]  # value id -> (field id, raw value)
    indptr: np.ndarray
    value_ids: np.ndarray

    @property
    def num_fields(self):
        return len(self.field_names)

    @property
    def num_values(self):
        return len(self.value_names)

    @property
    def num_entities(self):
        return len(self.indptr) - 1

    def of(self, entity) -> list[tuple[int, int]]:
        ids = self.value_ids[self.indptr[entity]:self.indptr[entity + 1]]
        return [(self.value_names[v][0], int(v)) for v in ids]

    def counts(self):
        return np.diff(self.indptr)

    def padded(self):
        """Index/weight arrays of shape (entities, fields, max_values).

        ``weight`` averages the value embeddings of each field; empty slots
        (and fields an entity lacks) get weight 0 and index 0.
        """
        k = self.num_fields
        per_field = np.zeros((self.num_entities, max(k, 1)), dtype=np.int64)
        field_of = np.array([f for f, _ in self.value_names], dtype=np.int64)
        for e in range(self.num_entities):
            ids = self.value_ids[self.indptr[e]:self.indptr[e + 1]]
            if len(ids):
                per_field[e] += np.bincount(field_of[ids], minlength=max(k, 1))
        width = max(int(per_field.max()) if per_field.size else 0, 1)
        index = np.zeros((self.num_entities, k, width), dtype=np.int64)
        weight = np.zeros((self.num_entities, k, width), dtype=np.float64)
        fill = np.zeros((self.num_entities, max(k, 1)), dtype=np.int64)
        for e in range(self.num_entities):
            for v in self.value_ids[self.indptr[e]:self.indptr[e + 1]]:
                f = field_of[v]
                index[e, f, fill[e, f]] = v
                weight[e, f, fill[e, f]] = 1.0 / per_field[e, f]
                fill[e, f] += 1
        return index, weight

    @classmethod
    def empty(cls, num_entities):
        return cls((), (), np.zeros(num_entities + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64))


def load_attributes(path, id_index: dict[str, int], format="tsv") -> AttributeTable:
    """Read ``entity<SEP>field<SEP>value`` lines for entities in ``id_index``.

    Unknown entity ids are skipped (they were filtered out of the dataset).
    """
    n = len(id_index)
    if path is None:
        return AttributeTable.empty(n)
    sep = _separator(format)
    raw: list[tuple[int, str, str]] = []
    for lineno, line in _read_lines(path):
        parts = line.split(sep)
        if len(parts) != 3:
            raise ParseError(path, lineno, f"expected 3 fields, got {len(parts)}")
        ent, fld, val = (p.strip() for p in parts)
        if ent in id_index:
            raw.append((id_index[ent], fld, val))
    fields = sorted({fld for _, fld, _ in raw})
    field_id = {f: i for i, f in enumerate(fields)}
    pairs = sorted({(field_id[fld], val) for _, fld, val in raw})
    value_id = {p: i for i, p in enumerate(pairs)}
    per_entity: list[set[int]] = [set() for _ in range(n)]
    for ent, fld, val in raw:
        per_entity[ent].add(value_id[(field_id[fld], val)])
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(s) for s in per_entity])
    value_ids = np.array([v for s in per_entity for v in sorted(s)], dtype=np.int64)
    return AttributeTable(tuple(fields), tuple(pairs), indptr, value_ids)


@dataclass(frozen=True)
class Dataset:
    """Binarized implicit feedback with dense indices.

    ``users``/``items``/``timestamps`` are parallel arrays sorted by
    (user, item); membership means R_uv = 1.
    """

    name: str
    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_attrs: AttributeTable
    item_attrs: AttributeTable
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    @property
    def num_interactions(self):
        return len(self.users)

    @property
    def sparsity(self):
        return 1.0 - self.num_interactions / (self.num_users * self.num_items)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.item_ids)}

    @property
    def interactions(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def summary(self):
        return {
            "name": self.name,
            "users": self.num_users,
            "items": self.num_items,
            "interactions": self.num_interactions,
            "sparsity": self.sparsity,
            "user_fields": self.user_attrs.num_fields,
            "item_fields": self.item_attrs.num_fields,
        }


def build_dataset(log: InteractionLog, user_attr_path=None, item_attr_path=None,
                  k_core=5, format="tsv", name="dataset") -> Dataset:
    """Binarize, k-core filter to a fixpoint and densely re-index."""
    if k_core < 1:
        raise ValueError("k_core must be >= 1")
    for p in (user_attr_path, item_attr_path):
        if p is not None and not Path(p).is_file():
            raise MissingFile(p)
    if not log.records:
        raise EmptyAfterFiltering("interaction log is empty")
    u_raw = sorted({r.user for r in log.records}, key=_natural_key)
    i_raw = sorted({r.item for r in log.records}, key=_natural_key)
    u_of = {s: i for i, s in enumerate(u_raw)}
    i_of = {s: i for i, s in enumerate(i_raw)}
    users = np.array([u_of[r.user] for r in log.records], dtype=np.int64)
    items = np.array([i_of[r.item] for r in log.records], dtype=np.int64)
    stamps = np.array([r.timestamp for r in log.records], dtype=np.int64)

    keep = kernels.kcore_mask(users, items, len(u_raw), len(i_raw), k_core)
    if not keep.any():
        raise EmptyAfterFiltering(f"no interactions survive {k_core}-core filtering")
    users, items, stamps = users[keep], items[keep], stamps[keep]

    u_keep = np.unique(users)
    i_keep = np.unique(items)
    u_map = np.full(len(u_raw), -1, dtype=np.int64)
    i_map = np.full(len(i_raw), -1, dtype=np.int64)
    u_map[u_keep] = np.arange(len(u_keep))
    i_map[i_keep] = np.arange(len(i_keep))
    users, items = u_map[users], i_map[items]
    order = np.lexsort((items, users))
    users, items, stamps = users[order], items[order], stamps[order]

    user_ids = tuple(u_raw[i] for i in u_keep)
    item_ids = tuple(i_raw[i] for i in i_keep)
    uidx = {s: i for i, s in enumerate(user_ids)}
    iidx = {s: i for i, s in enumerate(item_ids)}
    return Dataset(
        name=name,
        num_users=len(user_ids),
        num_items=len(item_ids),
        users=users,
        items=items,
        timestamps=stamps,
        user_attrs=load_attributes(user_attr_path, uidx, format),
        item_attrs=load_attributes(item_attr_path, iidx, format),
        user_ids=user_ids,
        item_ids=item_ids,
    )


def select_cold_items(dataset: Dataset, log: InteractionLog | None = None,
                      fraction=0.2) -> np.ndarray:
    """The ceil(fraction * N) items with the latest mean interaction time.

    Ties go to the larger item index.  ``log`` may supply timestamps for the
    dataset's pairs; by default the dataset's own timestamps are used.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    stamps = dataset.timestamps.astype(np.float64)
    if log is not None:
        when = {(dataset.user_index.get(r.user), dataset.item_index.get(r.item)): r.timestamp
                for r in log.records}
        stamps = np.array([when[(u, v)] for u, v in
                           zip(dataset.users.tolist(), dataset.items.tolist())],
                          dtype=np.float64)
    n = dataset.num_items
    total = np.bincount(dataset.items, weights=stamps, minlength=n)
    count = np.bincount(dataset.items, minlength=n)
    mean = total / np.maximum(count, 1)
    n_cold = math.ceil(fraction * n - 1e-9)
    # descending mean, then descending index
    order = np.lexsort((-np.arange(n), -mean))
    return np.sort(order[:n_cold])


@dataclass(frozen=True)
class Split:
    num_users: int
    num_items: int
    train: np.ndarray  # (n, 2) pairs sorted by (user, item)
    test: np.ndarray
    cold_items: np.ndarray
    novelty_alpha: np.ndarray
    rng_seed: int

    @cached_property
    def train_csr(self):
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(self.train[:, 0], minlength=self.num_users))
        return indptr, self.train[:, 1].copy()

    @cached_property
    def test_csr(self):
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(self.test[:, 0], minlength=self.num_users))
        return indptr, self.test[:, 1].copy()

    @cached_property
    def cold_mask(self):
        mask = np.zeros(self.num_items, dtype=bool)
        mask[self.cold_items] = True
        return mask

    @cached_property
    def item_train_degree(self):
        return np.bincount(self.train[:, 1], minlength=self.num_items)

    def train_items(self, u):
        indptr, indices = self.train_csr
        return indices[indptr[u]:indptr[u + 1]]

    def test_items(self, u):
        indptr, indices = self.test_csr
        return indices[indptr[u]:indptr[u + 1]]


def _sorted_pairs(users, items):
    pairs = np.stack([np.asarray(users, dtype=np.int64),
                      np.asarray(items, dtype=np.int64)], axis=1).reshape(-1, 2)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def split_train_test(dataset: Dataset, cold_items, holdout=0.1, seed=0) -> Split:
    """All cold-item interactions go to test, then per user
    floor(holdout * remaining) of the rest (at least 1 when 2+ remain)."""
    cold = np.unique(np.asarray(cold_items, dtype=np.int64))
    if len(cold) and (cold.min() < 0 or cold.max() >= dataset.num_items):
        raise ValueError("cold item index out of range")
    is_cold = np.zeros(dataset.num_items, dtype=bool)
    is_cold[cold] = True
    to_test = is_cold[dataset.items]

    rng = np.random.default_rng(seed)
    starts = np.searchsorted(dataset.users, np.arange(dataset.num_users + 1))
    for u in range(dataset.num_users):
        rows = np.arange(starts[u], starts[u + 1])
        rows = rows[~is_cold[dataset.items[rows]]]
        d = len(rows)
        n_test = int(math.floor(holdout * d + 1e-9))
        if n_test == 0 and d >= 2:
            n_test = 1
        if n_test:
            to_test[rows[rng.choice(d, n_test, replace=False)]] = True

    split = Split(
        num_users=dataset.num_users,
        num_items=dataset.num_items,
        train=_sorted_pairs(dataset.users[~to_test], dataset.items[~to_test]),
        test=_sorted_pairs(dataset.users[to_test], dataset.items[to_test]),
        cold_items=cold,
        novelty_alpha=np.zeros(dataset.num_items),
        rng_seed=int(seed),
    )
    return replace(split, novelty_alpha=compute_novelty_scores(split, dataset.num_users))


def compute_novelty_scores(split: Split, M: int) -> np.ndarray:
    """Min-max normalized ln(M / |U_v|) over items with training users.

    Items without training users (cold items included) are pinned to 1.
    """
    n_users_of = np.bincount(split.train[:, 1], minlength=split.num_items)
    warm = (n_users_of > 0) & ~split.cold_mask
    alpha = np.ones(split.num_items, dtype=np.float64)
    if not warm.any():
        return alpha
    raw = np.log(M / n_users_of[warm])
    lo, hi = raw.min(), raw.max()
    alpha[warm] = (raw - lo) / (hi - lo) if hi > lo else 0.0
    return alpha


def negative_pool(split: Split, exclude_cold=True) -> np.ndarray:
    """Items eligible as training negatives (cold items stay unseen)."""
    allowed = np.ones(split.num_items, dtype=bool)
    if exclude_cold:
        allowed &= ~split.cold_mask
    return allowed


def _draw_seed(rng):
    return int(rng.integers(0, 2**63 - 1))


def sample_negatives(split: Split, u, count=4, rng=None, exclude_cold=True) -> list[int]:
    """``count`` distinct items, uniformly without replacement, outside u's train set."""
    rng = rng if rng is not None else np.random.default_rng()
    allowed = negative_pool(split, exclude_cold)
    seen = split.train_items(u)
    available = int(allowed.sum() - allowed[seen].sum())
    if available < count:
        raise InsufficientCandidates(
            f"user {u} has {available} candidate negatives, {count} requested")
    indptr, indices = split.train_csr
    out = kernels.sample_negatives(indptr, indices, [u], count, split.num_items,
                                   allowed, _draw_seed(rng))
    return out[0].tolist()


@dataclass
class TrainBatch:
    """One minibatch.  Point-wise: (users, items, labels).  Pair-wise:
    (users, items=positives, neg_items).  ``alpha``/``alpha_neg`` carry the
    novelty scores of ``items``/``neg_items``."""

    mode: str
    users: np.ndarray
    items: np.ndarray
    alpha: np.ndarray
    labels: np.ndarray | None = None
    neg_items: np.ndarray | None = None
    alpha_neg: np.ndarray | None = None

    def __len__(self):
        return len(self.users)

    def positive_items(self):
        if self.mode == "pairwise":
            return self.items
        return self.items[self.labels > 0.5]


def epoch_examples(split: Split, mode, rng, negatives=4, exclude_cold=True):
    """All examples of one epoch, shuffled: arrays (users, items, labels_or_negs)."""
    if mode not in ("pointwise", "pairwise"):
        raise ValueError(f"mode must be pointwise or pairwise, got {mode!r}")
    allowed = negative_pool(split, exclude_cold)
    indptr, indices = split.train_csr
    pos = split.train[rng.permutation(len(split.train))]
    users, items = pos[:, 0], pos[:, 1]
    degree = np.diff(indptr)[users]
    if (allowed.sum() - degree < negatives).any():
        raise InsufficientCandidates("some user has too few candidate negatives")
    negs = kernels.sample_negatives(indptr, indices, users, negatives, split.num_items,
                                    allowed, _draw_seed(rng))
    if mode == "pairwise":
        return (np.repeat(users, negatives), np.repeat(items, negatives),
                negs.reshape(-1))
    # each positive followed by its negatives, then the whole epoch is shuffled
    ex_users = np.repeat(users, negatives + 1)
    ex_items = np.concatenate([items[:, None], negs], axis=1).reshape(-1)
    labels = np.zeros((len(users), negatives + 1))
    labels[:, 0] = 1.0
    order = rng.permutation(len(ex_users))
    return ex_users[order], ex_items[order], labels.reshape(-1)[order]


def make_batches(split: Split, mode, batch_size=128, rng=None, negatives=4,
                 exclude_cold=True) -> Iterator[TrainBatch]:
    rng = rng if rng is not None else np.random.default_rng()
    users, items, third = epoch_examples(split, mode, rng, negatives, exclude_cold)
    alpha = split.novelty_alpha
    for start in range(0, len(users), batch_size):
        sl = slice(start, start + batch_size)
        if mode == "pairwise":
            yield TrainBatch(mode, users[sl], items[sl], alpha[items[sl]],
                             neg_items=third[sl], alpha_neg=alpha[third[sl]])
        else:
            yield TrainBatch(mode, users[sl], items[sl], alpha[items[sl]],
                             labels=third[sl])


# -- split manifest ---------------------------------------------------------

MANIFEST_HEADER = "# ids4nr split manifest"


def save_split_manifest(split: Split, dataset: Dataset, path):
    """Write seed, cold item ids and test pairs (raw ids) so the split replays."""
    lines = [MANIFEST_HEADER, "version\t1", f"dataset\t{dataset.name}",
             f"seed\t{split.rng_seed}", f"num_users\t{split.num_users}",
             f"num_items\t{split.num_items}", f"num_train\t{len(split.train)}",
             f"num_test\t{len(split.test)}"]
    lines += [f"cold\t{dataset.item_ids[v]}" for v in split.cold_items.tolist()]
    lines += [f"test\t{dataset.user_ids[u]}\t{dataset.item_ids[v]}"
              for u, v in split.test.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split_manifest(path, dataset: Dataset) -> Split:
    meta, cold, test = {}, [], []
    for lineno, line in _read_lines(path):
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "cold":
                cold.append(dataset.item_index[parts[1]])
            elif parts[0] == "test":
                test.append((dataset.user_index[parts[1]], dataset.item_index[parts[2]]))
            else:
                meta[parts[0]] = parts[1]
        except (KeyError, IndexError):
            raise ParseError(path, lineno, "unknown id or malformed manifest line") from None
    if (int(meta.get("num_users", -1)) != dataset.num_users
            or int(meta.get("num_items", -1)) != dataset.num_items):
        raise ParseError(path, 0, "manifest does not match the dataset dimensions")
    test_pairs = _sorted_pairs(*zip(*test)) if test else np.zeros((0, 2), dtype=np.int64)
    all_pairs = _sorted_pairs(dataset.users, dataset.items)
    keys = all_pairs[:, 0] * dataset.num_items + all_pairs[:, 1]
    in_test = np.isin(keys, test_pairs[:, 0] * dataset.num_items + test_pairs[:, 1])
    split = Split(
        num_users=dataset.num_users,
        num_items=dataset.num_items,
        train=all_pairs[~in_test],
        test=test_pairs,
        cold_items=np.array(sorted(cold), dtype=np.int64),
        novelty_alpha=np.zeros(dataset.num_items),
        rng_seed=int(meta.get("seed", 0)),
    )
    return replace(split, novelty_alpha=compute_novelty_scores(split, dataset.num_users))
