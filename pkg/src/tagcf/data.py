"""Interaction datasets: loading, k-core filtering and per-user splitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyCoreError, EmptyDatasetError, ParseError, SplitError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class InteractionDataset:
    """Implicit-feedback interactions over dense user and item indices.

    ``pairs`` is an ``(n, 2)`` int64 array of ``(user_idx, item_idx)`` rows;
    ``user_ids[k]`` / ``item_ids[k]`` hold the external id of index ``k``.
    """

    pairs: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    timestamps: np.ndarray | None = None
    _user_index: dict = field(default=None, repr=False, compare=False)
    _item_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "_user_index", {u: k for k, u in enumerate(self.user_ids)})
        object.__setattr__(self, "_item_index", {i: k for k, i in enumerate(self.item_ids)})
        if len(self._user_index) != len(self.user_ids) or len(self._item_index) != len(self.item_ids):
            raise ValueError("external ids must be unique")
        if len(pairs):
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.n_users:
                raise ValueError("user index out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.n_items:
                raise ValueError("item index out of range")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.pairs)

    def user_index(self, user_id: str) -> int:
        return self._user_index[user_id]

    def item_index(self, item_id: str) -> int:
        return self._item_index[item_id]

    def with_pairs(self, pairs) -> "InteractionDataset":
        """Same id space, different interaction rows (timestamps dropped)."""
        return InteractionDataset(np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
                                  self.user_ids, self.item_ids)

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 0], minlength=self.n_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 1], minlength=self.n_items)


def _split_row(line, fmt):
    if fmt == "tsv":
        return line.split("\t")
    if fmt == "whitespace":
        return line.split()
    raise ValueError(f"unknown interaction format {fmt!r}")


def load_interactions(path, format: str = "auto") -> InteractionDataset:
    """Read a ``user_id<TAB>item_id[<TAB>timestamp]`` file.

    ``format`` is ``"tsv"``, ``"whitespace"`` or ``"auto"`` (tab-separated when
    the row contains a tab, whitespace-separated otherwise). Lines starting with
    ``#`` are comments. Indices are assigned in first-appearance order and
    duplicate pairs keep their first occurrence.
    """
    path = Path(path)
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    pairs = []
    stamps = []
    has_ts = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fmt = format
            if fmt == "auto":
                fmt = "tsv" if "\t" in line else "whitespace"
            cols = [c.strip() for c in _split_row(line, fmt)]
            if len(cols) not in (2, 3) or not cols[0] or not cols[1]:
                raise ParseError(f"expected 2 or 3 columns, got {len(cols)}", path, lineno)
            ts = None
            if len(cols) == 3:
                try:
                    ts = int(cols[2])
                except ValueError:
                    raise ParseError(f"bad timestamp {cols[2]!r}", path, lineno) from None
            if has_ts is None:
                has_ts = ts is not None
            u = users.setdefault(cols[0], len(users))
            i = items.setdefault(cols[1], len(items))
            if (u, i) in seen:
                continue
            seen.add((u, i))
            pairs.append((u, i))
            stamps.append(ts if ts is not None else -1)
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions")
    return InteractionDataset(
        np.array(pairs, dtype=np.int64),
        list(users),
        list(items),
        np.array(stamps, dtype=np.int64) if has_ts else None,
    )


def save_interactions(ds: InteractionDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row, (u, i) in enumerate(ds.pairs):
            line = f"{ds.user_ids[u]}\t{ds.item_ids[i]}"
            if ds.timestamps is not None:
                line += f"\t{ds.timestamps[row]}"
            fh.write(line + "\n")


def kcore_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Maximal k-core of the user-item bipartite graph, densely reindexed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.ones(ds.n_interactions, dtype=bool)
    pairs = ds.pairs
    while True:
        live = pairs[keep]
        udeg = np.bincount(live[:, 0], minlength=ds.n_users)
        ideg = np.bincount(live[:, 1], minlength=ds.n_items)
        new_keep = keep & (udeg[pairs[:, 0]] >= k) & (ideg[pairs[:, 1]] >= k)
        if new_keep.sum() == keep.sum():
            break
        keep = new_keep
    if not keep.any():
        raise EmptyCoreError(f"{k}-core is empty")
    live = pairs[keep]
    # np.unique keeps ascending order, which preserves first-appearance order
    users = np.unique(live[:, 0])
    items = np.unique(live[:, 1])
    umap = np.full(ds.n_users, -1, dtype=np.int64)
    imap = np.full(ds.n_items, -1, dtype=np.int64)
    umap[users] = np.arange(len(users))
    imap[items] = np.arange(len(items))
    new_pairs = np.column_stack([umap[live[:, 0]], imap[live[:, 1]]])
    stamps = ds.timestamps[keep] if ds.timestamps is not None else None
    return InteractionDataset(
        new_pairs,
        [ds.user_ids[u] for u in users],
        [ds.item_ids[i] for i in items],
        stamps,
    )


@dataclass(frozen=True)
class SplitDataset:
    dataset: InteractionDataset
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int | None = None

    @property
    def n_users(self):
        return self.dataset.n_users

    @property
    def n_items(self):
        return self.dataset.n_items

    def part(self, name: str) -> InteractionDataset:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return self.dataset.with_pairs(getattr(self, name))

    def with_train(self, train) -> "SplitDataset":
        return SplitDataset(self.dataset, np.asarray(train, dtype=np.int64).reshape(-1, 2),
                            self.val, self.test, self.seed)


def split_counts(n: int, ratios=(3, 1, 1)) -> tuple[int, int, int]:
    """Per-user partition sizes; remainders go to train first, then validation."""
    total = sum(ratios)
    counts = [n * r // total for r in ratios]
    rem = n - sum(counts)
    slot = 0
    while rem > 0:
        counts[slot % 2] += 1
        rem -= 1
        slot += 1
    return tuple(counts)


def split_dataset(ds: InteractionDataset, ratios=(3, 1, 1), seed: int = 0) -> SplitDataset:
    """Shuffle each user's interactions and cut them by ``ratios``."""
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ValueError(f"bad split ratios {ratios!r}")
    rng = np.random.default_rng(seed)
    order = np.argsort(ds.pairs[:, 0], kind="stable")
    users = ds.pairs[order, 0]
    bounds = np.searchsorted(users, np.arange(ds.n_users + 1))
    parts = ([], [], [])
    for u in range(ds.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        if len(rows) == 0:
            continue
        if len(rows) < 3:
            raise SplitError(
                f"user {ds.user_ids[u]!r} has {len(rows)} interactions; at least 3 are required")
        rows = rows[rng.permutation(len(rows))]
        n_tr, n_va, _ = split_counts(len(rows), ratios)
        parts[0].append(rows[:n_tr])
        parts[1].append(rows[n_tr:n_tr + n_va])
        parts[2].append(rows[n_tr + n_va:])
    train, val, test = (ds.pairs[np.concatenate(p)] if p else np.empty((0, 2), np.int64)
                        for p in parts)
    return SplitDataset(ds, train, val, test, seed)


def save_split_manifest(split: SplitDataset, path) -> None:
    ds = split.dataset
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in SPLIT_NAMES:
            for u, i in getattr(split, name):
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\t{name}\n")


def load_split_manifest(path) -> SplitDataset:
    """Inverse of :func:`save_split_manifest`; ids are indexed in file order."""
    path = Path(path)
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    parts: dict[str, list] = {n: [] for n in SPLIT_NAMES}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3 or cols[2] not in parts:
                raise ParseError("expected user_id<TAB>item_id<TAB>{train|val|test}", path, lineno)
            u = users.setdefault(cols[0], len(users))
            i = items.setdefault(cols[1], len(items))
            parts[cols[2]].append((u, i))
    if not any(parts.values()):
        raise EmptyDatasetError(f"{path}: empty split manifest")
    arrays = {n: np.array(p, dtype=np.int64).reshape(-1, 2) for n, p in parts.items()}
    all_pairs = np.concatenate([arrays[n] for n in SPLIT_NAMES])
    ds = InteractionDataset(all_pairs, list(users), list(items))
    return SplitDataset(ds, arrays["train"], arrays["val"], arrays["test"])
