"""Planted-topic interaction data with review text and noisy attributes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attributes import RawAttributeRecord, write_attribute_jsonl
from .data import InteractionDataset, save_interactions
from .exceptions import ConfigError

TOPIC_WORDS = (
    "teaching", "camping", "baking", "gardening", "painting", "cycling", "fishing", "knitting",
    "photography", "woodworking", "astronomy", "birdwatching", "calligraphy", "pottery",
    "hiking", "skating", "origami", "chess", "yoga", "sailing", "archery", "beekeeping",
    "climbing", "surfing", "juggling", "gaming", "brewing", "sewing", "dancing", "robotics",
)
SUFFIXES = ("", " supplies", " gear")
GENERIC_ATTRIBUTE = "good value"


def topic_name(t: int) -> str:
    if t < len(TOPIC_WORDS):
        return TOPIC_WORDS[t]
    return f"{TOPIC_WORDS[t % len(TOPIC_WORDS)]} {t // len(TOPIC_WORDS)}"


@dataclass
class SyntheticData:
    dataset: InteractionDataset
    records: list[RawAttributeRecord]
    reviews: dict[tuple[int, int], str]
    item_metadata: list[dict]
    user_topics: np.ndarray
    item_topics: np.ndarray
    topic_names: list[str]
    user_topic_sets: np.ndarray | None = None

    def attribute_records(self, pairs) -> list[RawAttributeRecord]:
        """Records restricted to the given (user, item) pairs."""
        keep = {(int(u), int(i)) for u, i in np.asarray(pairs).reshape(-1, 2)}
        return [r for r in self.records if (r.user, r.item) in keep]

    def topic_match(self) -> np.ndarray:
        """Per interaction: is the item's topic one of the user's topics."""
        p = self.dataset.pairs
        sets = self.user_topic_sets if self.user_topic_sets is not None else self.user_topics[:, None]
        return (sets[p[:, 0]] == self.item_topics[p[:, 1], None]).any(axis=1)

    def write(self, out_dir) -> dict[str, Path]:
        """Write ``interactions.tsv``, ``attributes.jsonl``, ``topics.tsv``,
        ``reviews.jsonl`` and ``items.jsonl`` under ``out_dir``."""
        import json

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ds = self.dataset
        paths = {
            "interactions": out / "interactions.tsv",
            "attributes": out / "attributes.jsonl",
            "topics": out / "topics.tsv",
            "reviews": out / "reviews.jsonl",
            "items": out / "items.jsonl",
        }
        save_interactions(ds, paths["interactions"])
        write_attribute_jsonl(self.records, ds, paths["attributes"])
        with open(paths["topics"], "w", encoding="utf-8", newline="\n") as fh:
            sets = self.user_topic_sets if self.user_topic_sets is not None else self.user_topics[:, None]
            for u, ts in enumerate(sets):
                for t in ts:
                    fh.write(f"user\t{ds.user_ids[u]}\t{self.topic_names[t]}\n")
            for i, t in enumerate(self.item_topics):
                fh.write(f"item\t{ds.item_ids[i]}\t{self.topic_names[t]}\n")
        with open(paths["reviews"], "w", encoding="utf-8", newline="\n") as fh:
            for u, i in ds.pairs:
                fh.write(json.dumps({"user": ds.user_ids[u], "item": ds.item_ids[i],
                                     "review": self.reviews[(int(u), int(i))]}) + "\n")
        with open(paths["items"], "w", encoding="utf-8", newline="\n") as fh:
            for i, meta in enumerate(self.item_metadata):
                fh.write(json.dumps({"item": ds.item_ids[i], "metadata": meta}) + "\n")
        return paths


def generate_synthetic(n_users=300, n_items=300, n_topics=20, interactions_per_user=15,
                       noise_rate=0.1, seed=0, topics_per_user=2,
                       generic_rate=0.7, rare_rate=0.3) -> SyntheticData:
    """Sample users, items and interactions around planted topics.

    Items get one topic each (balanced). Users get ``topics_per_user``
    distinct topics; each interaction picks an item from one of the user's
    topics with probability ``1 - noise_rate`` and an off-topic item otherwise.
    Every interaction carries an attribute record naming the item's topic
    (in one of several surface forms), a random distractor topic with
    probability ``noise_rate``, a near-universal generic attribute and
    occasionally a one-off rare attribute.
    """
    if min(n_users, n_items, n_topics, interactions_per_user, topics_per_user) < 1:
        raise ConfigError("all counts must be positive")
    if not 0.0 <= noise_rate < 1.0:
        raise ConfigError("noise_rate must lie in [0, 1)")
    if interactions_per_user > n_items:
        raise ConfigError(f"interactions_per_user={interactions_per_user} exceeds n_items={n_items}")
    if topics_per_user > n_topics:
        raise ConfigError("topics_per_user exceeds n_topics")
    rng = np.random.default_rng(seed)
    item_topics = rng.permutation(np.arange(n_items) % n_topics)
    user_topic_sets = np.array([rng.choice(n_topics, topics_per_user, replace=False)
                                for _ in range(n_users)])
    user_topics = user_topic_sets[:, 0]
    by_topic = [np.flatnonzero(item_topics == t) for t in range(n_topics)]
    names = [topic_name(t) for t in range(n_topics)]

    pairs = []
    for u in range(n_users):
        mine = np.isin(item_topics, user_topic_sets[u])
        picked = np.zeros(n_items, dtype=bool)
        for _ in range(interactions_per_user):
            on_topic = rng.random() >= noise_rate
            if on_topic:
                t = user_topic_sets[u][rng.integers(topics_per_user)]
                pool = by_topic[t][~picked[by_topic[t]]]
                if not len(pool):
                    pool = np.flatnonzero(mine & ~picked)
            else:
                pool = np.flatnonzero(~mine & ~picked)
            if not len(pool):
                pool = np.flatnonzero(~picked)
            i = int(pool[rng.integers(len(pool))])
            picked[i] = True
            pairs.append((u, i))

    records = []
    reviews = {}
    rare_id = 0
    for u, i in pairs:
        t = item_topics[i]
        attrs = [names[t] + SUFFIXES[rng.integers(len(SUFFIXES))]]
        if rng.random() < noise_rate:
            other = (t + 1 + rng.integers(n_topics - 1)) % n_topics if n_topics > 1 else t
            attrs.append(names[other])
        if rng.random() < generic_rate:
            attrs.append(GENERIC_ATTRIBUTE)
        if rng.random() < rare_rate:
            attrs.append(f"note {rare_id}")
            rare_id += 1
        records.append(RawAttributeRecord(u, i, attrs))
        reviews[(u, i)] = ". ".join(a.capitalize() for a in attrs) + "."

    metadata = [{"title": f"{names[t].title()} item {k}", "category": names[t]}
                for k, t in enumerate(item_topics)]
    ds = InteractionDataset(np.array(pairs, dtype=np.int64),
                            [f"u{u}" for u in range(n_users)],
                            [f"i{i}" for i in range(n_items)])
    return SyntheticData(ds, records, reviews, metadata, user_topics, item_topics, names,
                         user_topic_sets)
