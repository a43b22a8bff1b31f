"""Small random datasets in the on-disk formats, for tests and smoke runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

ITEM_FIELDS = {"genre": 6, "decade": 4}
USER_FIELDS = {"age": 4, "gender": 2}


def write_synthetic(directory, num_users=40, num_items=60, per_user=12, seed=0,
                    item_fields=ITEM_FIELDS, user_fields=USER_FIELDS):
    """Write interactions.tsv, user_attrs.tsv and item_attrs.tsv; return their paths.

    Item popularity is skewed (Zipf-like) so novelty scores spread out.  Each
    item carries one or two genres; every other field has exactly one value.
    """
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pop = 1.0 / np.arange(1, num_items + 1) ** 0.8
    pop /= pop.sum()
    lines = []
    for u in range(num_users):
        k = min(per_user + int(rng.integers(0, per_user)), num_items - 5)
        for v in rng.choice(num_items, size=k, replace=False, p=pop):
            ts = int(1_000_000 + 1000 * v + rng.integers(0, 5000))
            lines.append(f"u{u}\ti{v}\t{int(rng.integers(1, 6))}\t{ts}")
    inter = directory / "interactions.tsv"
    inter.write_text("\n".join(lines) + "\n", encoding="utf-8")

    rows = []
    for v in range(num_items):
        for name, n_values in item_fields.items():
            count = 1 + int(name == "genre" and rng.random() < 0.4)
            for val in rng.choice(n_values, size=min(count, n_values), replace=False):
                rows.append(f"i{v}\t{name}\t{name}{val}")
    items = directory / "item_attrs.tsv"
    items.write_text("\n".join(rows) + "\n", encoding="utf-8")

    rows = [f"u{u}\t{name}\t{name}{int(rng.integers(0, n))}"
            for u in range(num_users) for name, n in user_fields.items()]
    users = directory / "user_attrs.tsv"
    users.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return inter, users, items
