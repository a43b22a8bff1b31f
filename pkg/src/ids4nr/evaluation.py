"""Full-ranking evaluation: Rec@N, Cov@N, Nov@N and their F1 trade-off.

Every item a user has not interacted with in training is a candidate,
cold items included.  Ties rank the smaller item index first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .backbones import score_matrix
from .dataset import Split
from .errors import ColdItemWithoutAttributes, ParseError
from .selfsup import impute_cold_collaborative
from .trainer import ModelState, _represent, gather_features

METRICS = ("rec", "cov", "nov", "f1")
TABLE_COLUMNS = ("Rec@5", "Rec@10", "Cov@5", "Cov@10", "Nov@5", "Nov@10", "F1@5", "F1@10")
HEAD_FRACTION = 0.2


def item_collaborative(model: ModelState):
    """Collaborative slot of every item; cold rows are imputed from content."""
    a0 = np.array(model.item_emb, dtype=model.dtype)
    cold = np.flatnonzero(model.features.cold_mask)
    if len(cold):
        x = gather_features(model, "item", cold, with_collab=False)
        if not model.has_selfsup:
            raise ColdItemWithoutAttributes("cold items need item attributes to be imputed")
        a0[cold] = impute_cold_collaborative(model.selfsup, x.reshape(len(cold), -1))
    return a0


def representations(model: ModelState, chunk=4096):
    """(user_reps, item_reps): dicts intent -> float64 array."""
    def side(name, n, collab=None):
        parts = {}
        for s in range(0, n, chunk):
            ids = np.arange(s, min(s + chunk, n))
            c = None if collab is None else collab[ids]
            reps, _ = _represent(model, name, gather_features(model, name, ids, c))
            for k, r in reps.items():
                parts.setdefault(k, []).append(r.astype(np.float64))
        return {k: np.concatenate(v) for k, v in parts.items()}

    users = side("user", model.user_emb.shape[0])
    items = side("item", model.item_emb.shape[0], item_collaborative(model))
    return users, items


def _fused_scores(model, user_reps, item_reps, users):
    kind = model.config.backbone.kind
    ncf = None
    if model.ncf is not None:
        ncf = type(model.ncf)(*(_as64(a) for a in
                                (model.ncf.h_gmf, model.ncf.weights, model.ncf.biases,
                                 model.ncf.h_mlp)))
    if "mean" in user_reps:
        return score_matrix(kind, ncf, user_reps["mean"][users], item_reps["mean"])
    fusion = model.config.fusion
    if fusion in ("pop", "pref"):
        return score_matrix(kind, ncf, user_reps[fusion][users], item_reps[fusion])
    pop = score_matrix(kind, ncf, user_reps["pop"][users], item_reps["pop"])
    pref = score_matrix(kind, ncf, user_reps["pref"][users], item_reps["pref"])
    return 0.5 * (pop + pref)


def _as64(a):
    if isinstance(a, list):
        return [np.asarray(x, dtype=np.float64) for x in a]
    return np.asarray(a, dtype=np.float64)


def rank_all(model: ModelState, split: Split, n, users=None, chunk=512):
    """Top-``n`` item lists, shape (len(users), n), over every user by default."""
    users = np.arange(split.num_users) if users is None else np.asarray(users, dtype=np.int64)
    user_reps, item_reps = representations(model)
    indptr, indices = split.train_csr
    out = np.empty((len(users), n), dtype=np.int64)
    for s in range(0, len(users), chunk):
        sub = users[s:s + chunk]
        scores = _fused_scores(model, user_reps, item_reps, sub)
        out[s:s + chunk] = kernels.topn(scores, sub, indptr, indices, n)
    return out


def rank_items(model: ModelState, split: Split, u, n):
    candidates = split.num_items - len(split.train_items(u))
    if n > candidates:
        raise ValueError(f"N={n} exceeds the {candidates} candidates of user {u}")
    return rank_all(model, split, n, users=[u])[0].tolist()


# -- metrics ----------------------------------------------------------------

def recall_at_n(lists, test):
    """Mean over users with test items of |test_u & P_u| / |test_u|.

    ``lists`` and ``test`` map user -> item sequence.
    """
    scores = [len(set(lists[u]) & set(t)) / len(t) for u, t in test.items() if len(t)]
    return float(np.mean(scores)) if scores else 0.0


def coverage_at_n(lists, num_items):
    seen = set()
    for items in lists.values():
        seen.update(int(v) for v in items)
    return len(seen) / num_items


def novelty_at_n(lists, novel_set, n=None):
    if not lists:
        return 0.0
    n = n or max(len(v) for v in lists.values())
    novel = set(int(v) for v in novel_set)
    hits = sum(sum(int(v) in novel for v in items) for items in lists.values())
    return hits / (n * len(lists))


def f1_at_n(rec, nov, cov):
    denom = rec + nov + cov
    return 0.0 if denom == 0 else 3.0 * rec * nov * cov / denom


def head_items(split: Split, fraction=HEAD_FRACTION):
    """The ceil(fraction * #items with train interactions) most popular items."""
    degree = split.item_train_degree
    n_head = math.ceil(fraction * int(np.count_nonzero(degree)) - 1e-9)
    order = np.lexsort((np.arange(split.num_items), -degree))
    return np.sort(order[:n_head])


def novel_items(split: Split, fraction=HEAD_FRACTION):
    mask = np.ones(split.num_items, dtype=bool)
    mask[head_items(split, fraction)] = False
    return np.flatnonzero(mask)


def metrics_from_lists(lists, split: Split, n):
    """All four metrics for one N from per-user lists (prefix-sliced to N)."""
    indptr, indices = split.test_csr
    test = {u: indices[indptr[u]:indptr[u + 1]].tolist() for u in range(split.num_users)
            if indptr[u + 1] > indptr[u]}
    cut = {u: list(items)[:n] for u, items in lists.items()}
    rec = recall_at_n(cut, test)
    cov = coverage_at_n(cut, split.num_items)
    nov = novelty_at_n(cut, novel_items(split), n)
    return {"rec": rec, "cov": cov, "nov": nov, "f1": f1_at_n(rec, nov, cov)}


# -- report -----------------------------------------------------------------

@dataclass
class MetricsReport:
    metrics: dict[int, dict[str, float]]
    metadata: dict[str, str] = field(default_factory=dict)

    def value(self, name):
        """``value("Rec@10")`` style lookup."""
        metric, n = name.split("@")
        return self.metrics[int(n)][metric.lower()]

    def table_row(self, sep="\t"):
        return sep.join(f"{self.value(c):.4f}" for c in TABLE_COLUMNS)

    def to_text(self):
        lines = ["# ids4nr metrics report"]
        lines += [f"meta.{k}={v}" for k, v in sorted(self.metadata.items())]
        for n in sorted(self.metrics):
            for m in METRICS:
                lines.append(f"{m}@{n}={self.metrics[n][m]!r}")
        lines.append("table.header=" + "\t".join(TABLE_COLUMNS))
        lines.append("table.row=" + self.table_row())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, path="<report>"):
        metrics: dict[int, dict[str, float]] = {}
        meta = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ParseError(path, lineno, "expected key=value")
            if key.startswith("meta."):
                meta[key[5:]] = val
            elif key.startswith("table."):
                continue
            else:
                name, _, n = key.partition("@")
                if name not in METRICS or not n.isdigit():
                    raise ParseError(path, lineno, f"unknown metric {key!r}")
                try:
                    metrics.setdefault(int(n), {})[name] = float(val)
                except ValueError:
                    raise ParseError(path, lineno, f"bad value {val!r}") from None
        return cls(metrics, meta)


def _report(top, split, Ns, metadata):
    lists = {u: [v for v in top[u].tolist() if v >= 0] for u in range(split.num_users)}
    metrics = {n: metrics_from_lists(lists, split, n) for n in sorted(Ns)}
    return MetricsReport(metrics, dict(metadata or {}))


def evaluate(model: ModelState, split: Split, Ns=(5, 10), metadata=None) -> MetricsReport:
    """Rank once at max(Ns), then score every prefix."""
    return _report(rank_all(model, split, max(Ns)), split, Ns, metadata)


def evaluate_scores(scores, split: Split, Ns=(5, 10), metadata=None) -> MetricsReport:
    """Same protocol over a precomputed (users, items) score matrix."""
    indptr, indices = split.train_csr
    top = kernels.topn(scores, np.arange(split.num_users), indptr, indices, max(Ns))
    return _report(top, split, Ns, metadata)


def popularity_histogram(split: Split, bins=20):
    """Rows (lo, hi, items) over train degree; cold items land in the first bin."""
    degree = split.item_train_degree
    edges = np.unique(np.linspace(0, max(int(degree.max()), 1), bins + 1).astype(np.int64))
    counts, _ = np.histogram(degree, bins=edges)
    return [(int(lo), int(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
