"""Attribute vocabulary: frequency filtering, greedy semantic fusion, edge reassignment."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, OracleError, ParseError

_WS = re.compile(r"\s+")


def normalize_attribute(text: str) -> str:
    """NFC, lowercase, internal whitespace collapsed to one space."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text).lower()).strip()


@dataclass(frozen=True)
class RawAttributeRecord:
    user: int
    item: int
    attributes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))


def record_attributes(record: RawAttributeRecord) -> list[str]:
    """Normalized, per-record deduplicated attribute strings in first-seen order."""
    out = []
    seen = set()
    for a in record.attributes:
        n = normalize_attribute(a)
        if n and n not in seen:
            seen.add(n)
            out.append(n)
    return out


def count_frequencies(records) -> Counter:
    """Number of records mentioning each normalized attribute."""
    counts: Counter = Counter()
    for rec in records:
        counts.update(record_attributes(rec))
    return counts


@dataclass(frozen=True)
class AttributeVocabulary:
    """Retained attributes in visitation order (descending count, then lexicographic)."""

    attrs: tuple[str, ...]
    counts: tuple[int, ...]
    tau_min: float
    tau_max: float
    pruned_low: int = 0
    pruned_high: int = 0

    def __len__(self):
        return len(self.attrs)

    def index(self) -> dict[str, int]:
        return {a: k for k, a in enumerate(self.attrs)}


def visitation_order(counts) -> list[str]:
    return sorted(counts, key=lambda a: (-counts[a], a))


def frequency_filter(counts, tau_min: float = 25, tau_max: float = 5000) -> AttributeVocabulary:
    """Keep attributes with ``tau_min <= count <= tau_max``."""
    if tau_min < 1 or tau_min > tau_max:
        raise ConfigError(f"need 1 <= tau_min <= tau_max, got [{tau_min}, {tau_max}]")
    kept = {a: c for a, c in counts.items() if tau_min <= c <= tau_max}
    low = sum(1 for c in counts.values() if c < tau_min)
    high = sum(1 for c in counts.values() if c > tau_max)
    order = visitation_order(kept)
    return AttributeVocabulary(tuple(order), tuple(kept[a] for a in order), tau_min, tau_max,
                               low, high)


# -- equivalence oracles ---------------------------------------------------


class EquivalenceOracle:
    """Decides whether two attribute strings name the same concept."""

    def decide(self, a: str, b: str) -> bool:
        raise NotImplementedError

    def __call__(self, a, b):
        return self.decide(a, b)


class ExactMatchOracle(EquivalenceOracle):
    def decide(self, a, b):
        return normalize_attribute(a) == normalize_attribute(b)


class TokenJaccardOracle(EquivalenceOracle):
    def __init__(self, threshold: float = 0.5):
        if not 0.0 < threshold <= 1.0:
            raise ConfigError("jaccard threshold must lie in (0, 1]")
        self.threshold = threshold

    def decide(self, a, b):
        ta = set(normalize_attribute(a).split())
        tb = set(normalize_attribute(b).split())
        if ta == tb:
            return True
        return len(ta & tb) / len(ta | tb) >= self.threshold


class RemoteNLIOracle(EquivalenceOracle):
    """Bidirectional entailment through an HTTP NLI service.

    The service receives ``POST {base_url}/v1/entailment`` with
    ``{"premise": ..., "hypothesis": ...}`` and answers
    ``{"entailment": <probability>}``. Two attributes are equivalent when both
    directions exceed ``threshold``.
    """

    def __init__(self, base_url, threshold=0.5, timeout=30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.threshold = threshold
        self._client = client or httpx.Client(timeout=timeout)
        self._cache: dict[tuple[str, str], float] = {}

    def entailment(self, premise, hypothesis) -> float:
        key = (premise, hypothesis)
        if key not in self._cache:
            resp = self._client.post(f"{self.base_url}/v1/entailment",
                                     json={"premise": premise, "hypothesis": hypothesis})
            resp.raise_for_status()
            self._cache[key] = float(resp.json()["entailment"])
        return self._cache[key]

    def decide(self, a, b):
        if normalize_attribute(a) == normalize_attribute(b):
            return True
        return (self.entailment(a, b) > self.threshold
                and self.entailment(b, a) > self.threshold)


# -- greedy fusion ------------------------------------------------------------


@dataclass
class FusionClusterMap:
    """Result of greedy fusion over a vocabulary's ids.

    ``representative[k]`` is the canonical id of attribute ``k``; canonical ids
    are the earliest-visited member of their cluster. ``decisions`` records
    every oracle query as ``(i, j, result)`` in the order it was made.
    """

    representative: np.ndarray
    clusters: dict[int, list[int]]
    passes: int = 1
    decisions: list[tuple[int, int, bool]] = field(default_factory=list, repr=False)

    @property
    def canonical_ids(self) -> list[int]:
        return sorted(self.clusters)

    def compact_ids(self) -> np.ndarray:
        """Map each vocabulary id to the dense index of its canonical attribute."""
        canon = self.canonical_ids
        pos = {c: k for k, c in enumerate(canon)}
        return np.array([pos[int(r)] for r in self.representative], dtype=np.int64)

    @classmethod
    def identity(cls, n: int) -> "FusionClusterMap":
        return cls(np.arange(n, dtype=np.int64), {k: [k] for k in range(n)}, passes=0)


def greedy_semantic_fusion(vocab, oracle, order=None) -> FusionClusterMap:
    """Merge oracle-equivalent attributes in a greedy pass repeated to a fixed point.

    The first pass visits attributes in ``order`` (vocabulary order by default);
    each unassigned attribute becomes canonical and absorbs every later
    unassigned attribute it is equivalent to. Later passes repeat this over the
    surviving clusters, comparing members pairwise, so a chain of equivalences
    can merge across passes. Each pair is queried at most once.
    """
    attrs = list(vocab.attrs if isinstance(vocab, AttributeVocabulary) else vocab)
    n = len(attrs)
    if order is None:
        order = list(range(n))
    else:
        order = [int(k) for k in order]
        if sorted(order) != list(range(n)):
            raise ValueError("order must be a permutation of the vocabulary ids")
    rank = {k: r for r, k in enumerate(order)}
    decide = oracle.decide if hasattr(oracle, "decide") else oracle
    cache: dict[tuple[int, int], bool] = {}
    decisions = []

    def equivalent(x, y):
        key = (x, y) if x < y else (y, x)
        if key not in cache:
            try:
                result = bool(decide(attrs[x], attrs[y]))
            except Exception as exc:  # noqa: BLE001 - any oracle failure aborts fusion
                raise OracleError(attrs[x], attrs[y], exc) from exc
            cache[key] = result
            decisions.append((x, y, result))
        return cache[key]

    clusters = [[k] for k in order]
    passes = 0
    while True:
        passes += 1
        merged = False
        absorbed = [False] * len(clusters)
        out = []
        for a in range(len(clusters)):
            if absorbed[a]:
                continue
            base = clusters[a]
            head = list(base)
            for b in range(a + 1, len(clusters)):
                if absorbed[b]:
                    continue
                # compare against the cluster as it stood when the pass began
                if any(equivalent(x, y) for x in base for y in clusters[b]):
                    head.extend(clusters[b])
                    absorbed[b] = True
                    merged = True
            out.append(head)
        clusters = out
        if not merged:
            break

    representative = np.empty(n, dtype=np.int64)
    cluster_map = {}
    for members in clusters:
        canon = min(members, key=rank.__getitem__)
        members = sorted(members, key=rank.__getitem__)
        cluster_map[canon] = members
        representative[members] = canon
    return FusionClusterMap(representative, dict(sorted(cluster_map.items())), passes, decisions)


def reassign_edges(records, vocab: AttributeVocabulary, fusion: FusionClusterMap):
    """U-A and I-A edges to canonical attributes, deduplicated and sorted.

    Attribute ids in the output are compact canonical ids (``fusion.compact_ids``).
    """
    index = vocab.index()
    compact = fusion.compact_ids()
    ua, ia = set(), set()
    for rec in records:
        for a in record_attributes(rec):
            k = index.get(a)
            if k is None:
                continue
            c = int(compact[k])
            ua.add((rec.user, c))
            ia.add((rec.item, c))
    as_arr = lambda s: np.array(sorted(s), dtype=np.int64).reshape(-1, 2)  # noqa: E731
    return as_arr(ua), as_arr(ia)


def canonical_strings(vocab: AttributeVocabulary, fusion: FusionClusterMap) -> list[str]:
    return [vocab.attrs[c] for c in fusion.canonical_ids]


class AttributeFusion(TransformerMixin, BaseEstimator):
    """Filter and fuse raw attribute records into a compact attribute space.

    ``fit`` learns the frequency-filtered vocabulary and the fusion map;
    ``transform`` turns records into ``(ua_edges, ia_edges)`` over compact
    canonical attribute ids. With ``skip=True`` (no filtering or fusion) every
    normalized attribute is kept as its own node.
    """

    def __init__(self, tau_min=25, tau_max=5000, oracle=None, skip=False):
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.oracle = oracle
        self.skip = skip

    def fit(self, X, y=None):
        records = list(X)
        counts = count_frequencies(records)
        if self.skip:
            self.vocabulary_ = frequency_filter(counts, 1, math.inf)
            self.fusion_ = FusionClusterMap.identity(len(self.vocabulary_))
        else:
            self.vocabulary_ = frequency_filter(counts, self.tau_min, self.tau_max)
            oracle = self.oracle if self.oracle is not None else ExactMatchOracle()
            self.fusion_ = greedy_semantic_fusion(self.vocabulary_, oracle)
        self.n_attrs_ = len(self.fusion_.clusters)
        return self

    def transform(self, X):
        check_is_fitted(self, "fusion_")
        return reassign_edges(X, self.vocabulary_, self.fusion_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "fusion_")
        return np.asarray(canonical_strings(self.vocabulary_, self.fusion_), dtype=object)


# -- file formats ---------------------------------------------------------------


def read_attribute_jsonl(path, dataset, strict=True) -> list[RawAttributeRecord]:
    """Read ``{"user", "item", "attributes"}`` lines against ``dataset``'s ids.

    Records naming unknown users or items raise :class:`ParseError` when
    ``strict``; otherwise they are skipped.
    """
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                user, item, attrs = obj["user"], obj["item"], obj["attributes"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad attribute record: {exc}", path, lineno) from None
            if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
                raise ParseError("'attributes' must be a list of strings", path, lineno)
            try:
                u = dataset.user_index(str(user))
                i = dataset.item_index(str(item))
            except KeyError as exc:
                if strict:
                    raise ParseError(f"unknown id {exc.args[0]!r}", path, lineno) from None
                continue
            attrs = [a.strip() for a in attrs if a.strip()]
            out.append(RawAttributeRecord(u, i, attrs))
    return out


def write_attribute_jsonl(records, dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps({
                "user": dataset.user_ids[rec.user],
                "item": dataset.item_ids[rec.item],
                "attributes": list(rec.attributes),
            }, ensure_ascii=False) + "\n")


def write_vocabulary_tsv(vocab, fusion, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, canon in enumerate(fusion.canonical_ids):
            size = len(fusion.clusters[canon])
            fh.write(f"{k}\t{vocab.attrs[canon]}\t{vocab.counts[canon]}\t{size}\n")


def write_edges_tsv(edges, ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node, attr in edges:
            fh.write(f"{ids[node]}\t{attr}\n")


def read_edges_tsv(path, dataset_index) -> np.ndarray:
    """Inverse of :func:`write_edges_tsv`; ``dataset_index`` maps external id to index."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError("expected node_id<TAB>attr_id", path, lineno)
            try:
                rows.append((dataset_index(cols[0]), int(cols[1])))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad edge row: {exc}", path, lineno) from None
    return np.array(rows, dtype=np.int64).reshape(-1, 2)
