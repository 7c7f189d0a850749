"""Activity sequences, the first-order Markov model and transition times.

Tokens are cluster ids (non-negative ints).  IP-pair sequences are wrapped
in the sentinels :data:`START` and :data:`END`.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import EmptyModelError, VocabularyError

START = -1
END = -2

GLOBAL = "GLOBAL"
IP_PAIR = "IP_PAIR"


def token_name(tok: int) -> str:
    return {START: "<start>", END: "<end>"}.get(tok, str(tok))


@dataclass
class ActivitySequence:
    aggregation: str
    key: tuple[str, str] | None
    clusters: list[int]
    times_ns: list[int]
    flow_ids: list[int] = field(default_factory=list)

    @property
    def tokens(self) -> list[int]:
        if self.aggregation == IP_PAIR:
            return [START, *self.clusters, END]
        return list(self.clusters)

    def __len__(self) -> int:
        return len(self.clusters)


def build_sequences(flows: Sequence, labels: Sequence[int], aggregation: str = GLOBAL
                    ) -> list[ActivitySequence]:
    """Order labeled flows into activity sequences.

    ``flows`` are records with ``key``, ``first_ns`` and ``flow_id`` (e.g.
    :class:`~ntgen.features.FlowMeta`).  Ties in start time go by flow id.
    """
    if len(flows) != len(labels):
        raise ValueError(f"{len(flows)} flows but {len(labels)} labels")
    if aggregation not in (GLOBAL, IP_PAIR):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    order = sorted(range(len(flows)), key=lambda i: (flows[i].first_ns, flows[i].flow_id))
    if aggregation == GLOBAL:
        return [ActivitySequence(
            GLOBAL, None,
            [int(labels[i]) for i in order],
            [flows[i].first_ns for i in order],
            [flows[i].flow_id for i in order])]
    groups: dict[tuple[str, str], ActivitySequence] = {}
    for i in order:
        f = flows[i]
        pair = (f.key.src_addr, f.key.dst_addr)
        seq = groups.get(pair)
        if seq is None:
            seq = groups[pair] = ActivitySequence(IP_PAIR, pair, [], [], [])
        seq.clusters.append(int(labels[i]))
        seq.times_ns.append(f.first_ns)
        seq.flow_ids.append(f.flow_id)
    return list(groups.values())


def _token_lists(seqs: Iterable) -> tuple[list[list[int]], str | None]:
    lists = []
    agg = None
    for s in seqs:
        if isinstance(s, ActivitySequence):
            agg = s.aggregation
            lists.append(s.tokens)
        else:
            lists.append([int(t) for t in s])
    return lists, agg


class SequenceModel(Protocol):
    vocab: list[int]
    aggregation: str | None
    start_prob: np.ndarray

    def predict_next(self, context: Sequence[int]) -> np.ndarray: ...


@dataclass
class MarkovModel:
    vocab: list[int]
    start_prob: np.ndarray
    transition: np.ndarray
    observed: np.ndarray
    aggregation: str | None = None

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.vocab)}

    def index(self, tok: int) -> int:
        try:
            return self._index[tok]
        except KeyError:
            raise VocabularyError(f"token {token_name(tok)} is not in the model vocabulary") from None

    def prob(self, a: int, b: int) -> float:
        return float(self.transition[self.index(a), self.index(b)])

    def predict_next(self, context: Sequence[int]) -> np.ndarray:
        """Next-token distribution given the last token of ``context``.

        A token with no observed successors backs off to ``start_prob``.
        """
        if not context:
            return self.start_prob.copy()
        i = self.index(context[-1])
        if not self.observed[i]:
            return self.start_prob.copy()
        return self.transition[i].copy()

    def to_json(self) -> dict:
        return {
            "kind": "MARKOV",
            "aggregation": self.aggregation,
            "vocab": self.vocab,
            "start_prob": self.start_prob.tolist(),
            "transition": self.transition.tolist(),
            "observed": self.observed.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> MarkovModel:
        return cls(d["vocab"], np.array(d["start_prob"]), np.array(d["transition"]),
                   np.array(d["observed"], dtype=bool), d.get("aggregation"))


def fit_markov(seqs: Iterable) -> MarkovModel:
    """Count start tokens and adjacent-pair transitions; normalise rows.

    For GLOBAL activity sequences the start distribution is the unigram
    distribution (a single global sequence has only one first token).  For
    IP-pair sequences it is the distribution of first clusters after START.
    """
    lists, agg = _token_lists(seqs)
    lists = [t for t in lists if t]
    if not lists:
        raise EmptyModelError("all sequences are empty")
    vocab = sorted({t for toks in lists for t in toks})
    index = {t: i for i, t in enumerate(vocab)}
    V = len(vocab)
    counts = np.zeros((V, V))
    for toks in lists:
        for a, b in zip(toks, toks[1:]):
            counts[index[a], index[b]] += 1
    start = np.zeros(V)
    if agg == GLOBAL:
        for toks in lists:
            for t in toks:
                start[index[t]] += 1
    else:
        for toks in lists:
            first = toks[1] if agg == IP_PAIR and len(toks) > 1 else toks[0]
            start[index[first]] += 1
    start /= start.sum()
    out = counts.sum(axis=1)
    observed = out > 0
    trans = np.zeros_like(counts)
    trans[observed] = counts[observed] / out[observed, None]
    return MarkovModel(vocab, start, trans, observed, agg)


@dataclass
class TransitionTimeHistogram:
    """Histogram of gaps (seconds) between consecutive flow starts."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def mean(self) -> float:
        centers = (self.edges[:-1] + self.edges[1:]) / 2
        return float((centers * self.counts).sum() / self.counts.sum())

    def sample(self, rng: np.random.Generator) -> float:
        """Pick a bin with probability proportional to its count, then uniform within it."""
        p = self.counts / self.counts.sum()
        b = int(rng.choice(len(p), p=p))
        lo, hi = float(self.edges[b]), float(self.edges[b + 1])
        return lo + rng.random() * (hi - lo)

    def to_json(self) -> dict:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> TransitionTimeHistogram:
        return cls(np.array(d["edges"], dtype=np.float64), np.array(d["counts"], dtype=np.int64))


def transition_times(seqs: Iterable[ActivitySequence]) -> np.ndarray:
    deltas = []
    for s in seqs:
        t = s.times_ns
        deltas.extend((b - a) / 1e9 for a, b in zip(t, t[1:]))
    return np.array(deltas, dtype=np.float64)


def fit_transition_times(seqs: Sequence[ActivitySequence], flow_count: int | None = None
                         ) -> TransitionTimeHistogram:
    """Equal-width histogram with ceil(sqrt(|D*|)) bins, |D*| being the flow count."""
    deltas = transition_times(seqs)
    if deltas.size == 0:
        raise EmptyModelError("no adjacent flow pairs to measure transition times")
    if flow_count is None:
        flow_count = sum(len(s) for s in seqs)
    bins = max(1, math.ceil(math.sqrt(flow_count)))
    lo, hi = float(deltas.min()), float(deltas.max())
    if lo == hi:
        edges = np.full(bins + 1, lo)
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = deltas.size
    else:
        counts, edges = np.histogram(deltas, bins=bins, range=(lo, hi))
    return TransitionTimeHistogram(edges.astype(np.float64), counts.astype(np.int64))


def token_counts(seqs: Iterable) -> Counter:
    lists, _ = _token_lists(seqs)
    return Counter(t for toks in lists for t in toks if t not in (START, END))
