"""Contextual pair generation.

Each pattern freezes some context attributes and forces the others to
differ.  Sampling is vectorised: rows are grouped by their frozen key and a
partner is drawn from the first sample's group by rejection until every
varying attribute differs, which is uniform over the valid partners.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import FRAME, LIGHT, SCENE, SENSOR, SUBJECT, TYPE, Catalog, SampleRecord

log = logging.getLogger(__name__)

# Attributes a pattern can freeze or vary (skin follows the subject).
PAIR_ATTRIBUTES = ("subject", "type", "scene", "light", "sensor", "frame")
_COLUMN = {"subject": SUBJECT, "type": TYPE, "scene": SCENE, "light": LIGHT, "sensor": SENSOR, "frame": FRAME}


class UnsatisfiablePatternError(RuntimeError):
    """No valid pair exists for the requested pattern(s)."""


@dataclass(frozen=True)
class PairPattern:
    pattern_id: int
    varying: frozenset[str]

    @property
    def polarity(self) -> str:
        return "negative" if "type" in self.varying else "positive"

    @property
    def frozen(self) -> tuple[str, ...]:
        return tuple(a for a in PAIR_ATTRIBUTES if a not in self.varying)


PATTERNS: dict[int, PairPattern] = {
    1: PairPattern(1, frozenset({"frame"})),
    2: PairPattern(2, frozenset({"sensor", "frame"})),
    3: PairPattern(3, frozenset({"light", "frame"})),
    4: PairPattern(4, frozenset({"scene", "frame"})),
    5: PairPattern(5, frozenset({"type", "frame"})),
    6: PairPattern(6, frozenset({"subject", "frame"})),
}

# Incremental pattern sets: sensor, +light, +scene, +type, then everything.
INCREMENTAL_COMBINATIONS: dict[int, tuple[int, ...]] = {
    1: (2,),
    2: (2, 3),
    3: (2, 3, 4),
    4: (2, 3, 4, 5),
    5: (1, 2, 3, 4, 5, 6),
}


@dataclass(frozen=True)
class ContextPair:
    first: SampleRecord
    second: SampleRecord
    pattern_id: int
    pair_label: int


def _mixed_radix_key(cols: np.ndarray) -> np.ndarray:
    """Collision-free int64 key for rows of small non-negative ints."""
    key = np.zeros(cols.shape[0], dtype=np.int64)
    for j in range(cols.shape[1]):
        c = cols[:, j]
        key = key * (int(c.max()) + 1 if c.size else 1) + c
    return key


def _group_sizes(cols: np.ndarray) -> np.ndarray:
    if cols.shape[1] == 0:
        return np.full(cols.shape[0], cols.shape[0], dtype=np.int64)
    _, inverse, counts = np.unique(_mixed_radix_key(cols), return_inverse=True, return_counts=True)
    return counts[inverse.reshape(-1)]


class PatternIndex:
    """Grouping of one catalog for one pattern.

    A pattern that varies ``type`` is handled through the live/attack label:
    the pair must cross the live/mask boundary, which implies different types.
    """

    def __init__(self, catalog: Catalog, pattern: PairPattern):
        self.pattern = pattern
        labels = catalog.labels
        self._frozen = catalog.attrs[:, [_COLUMN[a] for a in pattern.frozen]]
        differ = [catalog.attrs[:, _COLUMN[a]] for a in sorted(pattern.varying) if a != "type"]
        if "type" in pattern.varying:
            differ.append(labels)
        self._differ = np.column_stack(differ)

        # Inclusion-exclusion over the "must differ" columns gives, per row,
        # the number of partners differing in all of them.
        k = self._differ.shape[1]
        counts = np.zeros(len(catalog), dtype=np.int64)
        for bits in range(1 << k):
            chosen = [j for j in range(k) if bits >> j & 1]
            cols = np.column_stack([self._frozen] + [self._differ[:, j] for j in chosen])
            counts += (-1) ** len(chosen) * _group_sizes(cols)
        self.partner_counts = counts
        self.valid_first = np.flatnonzero(counts > 0)

        if self._frozen.shape[1]:
            key = _mixed_radix_key(self._frozen)
        else:
            key = np.zeros(len(catalog), dtype=np.int64)
        self._order = np.argsort(key, kind="stable")
        uniq, self._group_of, sizes = np.unique(key, return_inverse=True, return_counts=True)
        self._group_of = self._group_of.reshape(-1)
        self._group_size = sizes
        self._group_start = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    @property
    def satisfiable(self) -> bool:
        return self.valid_first.size > 0

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` (first, second) row-index pairs."""
        if not self.satisfiable:
            raise UnsatisfiablePatternError(f"pattern {self.pattern.pattern_id} has no valid pair")
        first = self.valid_first[rng.integers(0, self.valid_first.size, size=n)]
        group = self._group_of[first]
        second = np.empty(n, dtype=np.int64)
        todo = np.arange(n)
        while todo.size:
            g = group[todo]
            cand = self._order[self._group_start[g] + rng.integers(0, self._group_size[g])]
            ok = np.all(self._differ[cand] != self._differ[first[todo]], axis=1)
            second[todo[ok]] = cand[ok]
            todo = todo[~ok]
        return first, second


@dataclass
class PairBatch:
    """Row indices into a catalog plus per-pair pattern ids and pair labels."""

    first: np.ndarray
    second: np.ndarray
    pattern_ids: np.ndarray
    labels_first: np.ndarray
    labels_second: np.ndarray

    def __len__(self) -> int:
        return self.first.size

    @property
    def pair_labels(self) -> np.ndarray:
        return (self.labels_first == self.labels_second).astype(np.int64)

    def pairs(self, catalog: Catalog) -> list[ContextPair]:
        return [
            ContextPair(catalog[int(a)], catalog[int(b)], int(p), int(y))
            for a, b, p, y in zip(self.first, self.second, self.pattern_ids, self.pair_labels)
        ]


class BatchBuilder:
    """Samples pair batches from one catalog with a fixed pattern mixture.

    Unsatisfiable patterns are dropped from the mixture at construction and
    counted in ``skipped``; if none remain, ``UnsatisfiablePatternError``.
    """

    def __init__(
        self,
        catalog: Catalog,
        patterns: Sequence[int] = (1, 2, 3, 4, 5, 6),
        weights: Sequence[float] | None = None,
        balance: bool = False,
    ):
        if not patterns:
            raise ValueError("at least one pattern is required")
        if weights is None:
            weights = [1.0] * len(patterns)
        if len(weights) != len(patterns):
            raise ValueError("weights and patterns differ in length")
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ValueError("weights must be non-negative with at least one positive")
        self.catalog = catalog
        self.balance = balance
        self.skipped: Counter[int] = Counter()
        self.indices: dict[int, PatternIndex] = {}
        kept_ids, kept_w = [], []
        for pid, w in zip(patterns, weights):
            if pid not in PATTERNS:
                raise ValueError(f"unknown pattern id {pid}")
            if w == 0:
                continue
            index = PatternIndex(catalog, PATTERNS[pid])
            if not index.satisfiable:
                self.skipped[pid] += 1
                log.warning("pattern %d unsatisfiable on this catalog; skipped", pid)
                continue
            self.indices[pid] = index
            kept_ids.append(pid)
            kept_w.append(float(w))
        if not kept_ids:
            raise UnsatisfiablePatternError(f"none of the patterns {list(patterns)} can be sampled")
        self.pattern_ids = np.asarray(kept_ids)
        self.weights = np.asarray(kept_w) / sum(kept_w)
        self._labels = catalog.labels

    def _draw_patterns(self, n: int, rng: np.random.Generator) -> np.ndarray:
        positive = np.array([PATTERNS[p].polarity == "positive" for p in self.pattern_ids])
        if not self.balance or positive.all() or not positive.any():
            return self.pattern_ids[rng.choice(self.pattern_ids.size, size=n, p=self.weights)]
        n_pos = n // 2
        out = []
        for sel, count in ((positive, n_pos), (~positive, n - n_pos)):
            w = self.weights[sel] / self.weights[sel].sum()
            out.append(self.pattern_ids[sel][rng.choice(sel.sum(), size=count, p=w)])
        return np.concatenate(out)

    def sample(self, batch_size: int, rng: np.random.Generator) -> PairBatch:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        drawn = self._draw_patterns(batch_size, rng)
        first = np.empty(batch_size, dtype=np.int64)
        second = np.empty(batch_size, dtype=np.int64)
        for pid in self.pattern_ids:
            slots = np.flatnonzero(drawn == pid)
            if slots.size:
                first[slots], second[slots] = self.indices[int(pid)].sample(slots.size, rng)
        return PairBatch(first, second, drawn, self._labels[first], self._labels[second])

    def steps_per_epoch(self, batch_size: int) -> int:
        return epoch_length(len(self.catalog), batch_size)


def epoch_length(n_records: int, batch_size: int) -> int:
    """Batches per epoch: enough pairs to touch every record once on average."""
    return max(1, math.ceil(n_records / (2 * batch_size)))


def sample_pair(catalog: Catalog, pattern: PairPattern | int, rng: np.random.Generator) -> ContextPair:
    if isinstance(pattern, int):
        pattern = PATTERNS[pattern]
    a, b = PatternIndex(catalog, pattern).sample(1, rng)
    labels = catalog.labels
    return ContextPair(catalog[int(a[0])], catalog[int(b[0])], pattern.pattern_id, int(labels[a[0]] == labels[b[0]]))


def build_batch(
    catalog: Catalog,
    enabled_patterns: Sequence[int],
    weights: Sequence[float] | None,
    batch_size: int,
    rng: np.random.Generator,
) -> PairBatch:
    return BatchBuilder(catalog, enabled_patterns, weights).sample(batch_size, rng)


def dump_pairs(catalog: Catalog, batch: PairBatch) -> list[str]:
    """Audit lines ``pattern_id,sample_id_a,sample_id_b,pair_label``."""
    return [
        f"{p},{catalog.sample_id(int(a))},{catalog.sample_id(int(b))},{y}"
        for a, b, p, y in zip(batch.first, batch.second, batch.pattern_ids, batch.pair_labels)
    ]
