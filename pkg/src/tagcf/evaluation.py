"""Full-ranking top-K metrics and attribute path statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEFAULT_KS = (5, 20)


def recall_at_k(ranked, relevant, k: int) -> float:
    """``|top-k & relevant| / |relevant|``; NaN when ``relevant`` is empty."""
    relevant = set(relevant)
    if not relevant:
        return math.nan
    hits = sum(1 for item in list(ranked)[:k] if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-relevance NDCG with ``1 / log2(rank + 1)`` discounts."""
    relevant = set(relevant)
    if not relevant:
        return math.nan
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(list(ranked)[:k]) if item in relevant)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(relevant))))
    return dcg / idcg


_DISCOUNT_CACHE: dict[int, np.ndarray] = {}


def _discounts(k):
    if k not in _DISCOUNT_CACHE:
        _DISCOUNT_CACHE[k] = 1.0 / np.log2(np.arange(2, k + 2))
    return _DISCOUNT_CACHE[k]


@dataclass
class MetricReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    per_user: dict | None = field(default=None, repr=False)

    def get(self, name: str) -> float:
        kind, _, k = name.lower().partition("@")
        return getattr(self, kind)[int(k)]

    def rows(self):
        for k in sorted(self.recall):
            yield ("recall", k, self.recall[k], self.n_users)
        for k in sorted(self.ndcg):
            yield ("ndcg", k, self.ndcg[k], self.n_users)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "K", "value", "n_users"])
            for m, k, v, n in self.rows():
                w.writerow([m, k, f"{v:.6f}", n])


def _group(pairs, n_users):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.argsort(pairs[:, 0], kind="stable")
    users = pairs[order, 0]
    bounds = np.searchsorted(users, np.arange(n_users + 1))
    items = pairs[order, 1]
    return [items[bounds[u]:bounds[u + 1]] for u in range(n_users)]


def rank_items(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` item indices per row, descending score, ties by ascending index."""
    k = min(k, scores.shape[1])
    # stable sort on negated scores keeps lower indices first among ties
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def evaluate_scores(score_fn, n_users, n_items, target_pairs, mask_pairs=(), ks=DEFAULT_KS,
                    per_user=False, item_filter=None, chunk=1024) -> MetricReport:
    """Rank every item for each user with a non-empty target set.

    ``score_fn(users)`` returns a ``(len(users), n_items)`` score block.
    Masked pairs are pushed to ``-inf``. With ``item_filter`` (a boolean mask
    over items) only those target items count as relevant; users left without
    relevant items are skipped.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    kmax = max(ks)
    targets = _group(target_pairs, n_users)
    masks = _group(mask_pairs, n_users) if len(mask_pairs) else None
    if item_filter is not None:
        item_filter = np.asarray(item_filter, dtype=bool)
        targets = [t[item_filter[t]] for t in targets]
    users = np.array([u for u in range(n_users) if len(targets[u])], dtype=np.int64)
    recall = {k: np.zeros(len(users)) for k in ks}
    ndcg = {k: np.zeros(len(users)) for k in ks}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = np.array(score_fn(block), dtype=np.float64)
        if masks is not None:
            for row, u in enumerate(block):
                scores[row, masks[u]] = -np.inf
        top = rank_items(scores, kmax)
        for row, u in enumerate(block):
            rel = np.zeros(n_items, dtype=bool)
            rel[targets[u]] = True
            n_rel = int(rel.sum())
            hits = rel[top[row]]
            pos = start + row
            for k in ks:
                h = hits[:k]
                recall[k][pos] = h.sum() / n_rel
                disc = _discounts(k)[:len(h)]
                ndcg[k][pos] = (h * disc).sum() / _discounts(k)[:min(k, n_rel)].sum()
    n = len(users)
    report = MetricReport(
        {k: float(recall[k].mean()) if n else 0.0 for k in ks},
        {k: float(ndcg[k].mean()) if n else 0.0 for k in ks},
        n,
    )
    if per_user:
        report.per_user = {"users": users, "recall": recall, "ndcg": ndcg}
    return report


def evaluate_embeddings(x, n_users, n_items, target_pairs, mask_pairs=(), ks=DEFAULT_KS,
                        **kwargs) -> MetricReport:
    user_x = x[:n_users]
    item_x = x[n_users:n_users + n_items]
    return evaluate_scores(lambda us: user_x[us] @ item_x.T, n_users, n_items, target_pairs,
                           mask_pairs, ks, **kwargs)


def metric_from_embeddings(x, n_users, n_items, target_pairs, mask_pairs, kind, k) -> float:
    rep = evaluate_embeddings(x, n_users, n_items, target_pairs, mask_pairs, ks=(k,))
    return getattr(rep, kind)[k]


def full_rank_evaluate(model, split, ks=DEFAULT_KS, on="test", **kwargs) -> MetricReport:
    """Evaluate a fitted model on ``split.val`` or ``split.test``.

    Validation masks train positives; test masks train and validation positives.
    ``model`` needs ``final_embeddings()`` plus ``n_users_`` / ``n_items_``.
    """
    if on == "val":
        target, mask = split.val, split.train
    elif on == "test":
        target, mask = split.test, np.concatenate([split.train, split.val])
    else:
        raise ValueError("on must be 'val' or 'test'")
    if model.n_users_ != split.n_users or model.n_items_ != split.n_items:
        raise ValueError(
            f"model covers {model.n_users_} users / {model.n_items_} items, split has "
            f"{split.n_users} / {split.n_items}")
    x = model.final_embeddings()
    return evaluate_embeddings(x, split.n_users, split.n_items, target, mask, ks, **kwargs)


# -- path statistics -------------------------------------------------------------


@dataclass
class PathStats:
    total_2hop_paths: int
    connected_pairs: int
    covered_test: int
    n_test: int
    paths_on_test: int

    @property
    def overlap_ratio(self) -> float:
        """Fraction of test interactions joined by at least one user-attribute-item path."""
        return self.covered_test / self.n_test if self.n_test else 0.0

    @property
    def overlap_ratio_alt(self) -> float:
        """Fraction of all 2-hop paths that land on a test interaction."""
        return self.paths_on_test / self.total_2hop_paths if self.total_2hop_paths else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["total_2hop_paths", "connected_pairs", "overlap_ratio", "overlap_ratio_alt"])
            w.writerow([self.total_2hop_paths, self.connected_pairs,
                        f"{self.overlap_ratio:.6f}", f"{self.overlap_ratio_alt:.6f}"])


def path_overlap_analysis(graph, test_pairs) -> PathStats:
    """Count user->attribute->item paths and how many test interactions they reach."""
    ua = sp.csr_matrix(graph.ua, dtype=np.int64)
    ia = sp.csr_matrix(graph.ia, dtype=np.int64)
    aug = sp.csr_matrix(ua @ ia.T)
    aug.eliminate_zeros()
    test = np.unique(np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(test):
        counts = np.asarray(aug[test[:, 0], test[:, 1]]).ravel()
    else:
        counts = np.zeros(0, dtype=np.int64)
    return PathStats(
        total_2hop_paths=int(aug.sum()),
        connected_pairs=int(aug.nnz),
        covered_test=int((counts > 0).sum()),
        n_test=len(test),
        paths_on_test=int(counts.sum()),
    )


def attribute_paths(graph, user, item, attr_names=None, limit=None) -> list:
    """Attributes bridging ``user`` and ``item`` (the ``u -> a -> i`` paths)."""
    shared = np.intersect1d(graph.ua[user].indices, graph.ia[item].indices)
    if limit is not None:
        shared = shared[:limit]
    if attr_names is None:
        return [int(a) for a in shared]
    return [attr_names[a] for a in shared]
