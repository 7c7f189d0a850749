"""Fidelity measures between original and generated traffic."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, InsufficientDataError, StageMismatchError
from .features import FeatureTable
from .sequences import END, START, ActivitySequence

DEFAULT_ALPHA = 0.01
KS_EXACT_LIMIT = 10_000
KS_PERMUTATIONS = 10_000

# Scholz & Stephens (1987) critical-value coefficients for the standardized
# k-sample statistic, t = b0 + b1/sqrt(k-1) + b2/(k-1)
_AD_SIG = np.array([0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001])
_AD_B0 = np.array([0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085])
_AD_B1 = np.array([-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615])
_AD_B2 = np.array([-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154])


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    method: str = ""
    standardized: float | None = None


# -- Kolmogorov-Smirnov ---------------------------------------------------


def ks_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    """sup_t |F_x(t) - F_y(t)| evaluated at every pooled data point."""
    xs = np.sort(np.asarray(x, dtype=np.float64))
    ys = np.sort(np.asarray(y, dtype=np.float64))
    pooled = np.concatenate([xs, ys])
    fx = np.searchsorted(xs, pooled, side="right") / len(xs)
    fy = np.searchsorted(ys, pooled, side="right") / len(ys)
    return float(np.max(np.abs(fx - fy)))


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the limiting Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # theta-function form converges fast for small lam
        s = sum(math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * lam * lam)) for k in range(1, 8))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam) for k in range(1, 101))
    return min(1.0, max(0.0, 2.0 * s))


def _ks_permutation_p(xs: np.ndarray, ys: np.ndarray, d_obs: float, permutations: int,
                      seed: int) -> float:
    nx, ny = len(xs), len(ys)
    pooled = np.concatenate([xs, ys])
    order = np.argsort(pooled, kind="stable")
    z = pooled[order]
    n = len(z)
    # evaluate ECDF gaps only at the last element of each run of ties
    ends = np.flatnonzero(np.append(z[1:] != z[:-1], True))
    base = np.zeros(n, dtype=bool)
    base[:nx] = True
    rng = np.random.default_rng(seed)
    hits = 0
    batch = max(1, min(permutations, 2_000_000 // n))
    done = 0
    counts = np.arange(1, n + 1)[ends]
    while done < permutations:
        b = min(batch, permutations - done)
        masks = rng.permuted(np.tile(base, (b, 1)), axis=1)
        cx = np.cumsum(masks, axis=1)[:, ends]
        d = np.max(np.abs(cx / nx - (counts - cx) / ny), axis=1)
        hits += int(np.count_nonzero(d >= d_obs - 1e-12))
        done += b
    return (hits + 1) / (permutations + 1)


def ks_two_sample(x: Sequence[float], y: Sequence[float], *, exact: bool | None = None,
                  permutations: int = KS_PERMUTATIONS, seed: int = 0) -> TestResult:
    """Two-sample KS test.

    With ``exact=None`` a seeded permutation p-value is used when
    ``len(x) * len(y) <= 10_000`` and the asymptotic Kolmogorov distribution
    (effective size nx*ny/(nx+ny)) otherwise.
    """
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.size == 0 or ys.size == 0:
        raise EmptyInputError("KS test needs two non-empty samples")
    d = ks_statistic(xs, ys)
    if exact is None:
        exact = xs.size * ys.size <= KS_EXACT_LIMIT
    if d == 0.0:
        return TestResult(0.0, 1.0, "permutation" if exact else "asymptotic")
    if exact:
        return TestResult(d, _ks_permutation_p(xs, ys, d, permutations, seed), "permutation")
    en = xs.size * ys.size / (xs.size + ys.size)
    return TestResult(d, kolmogorov_sf(math.sqrt(en) * d), "asymptotic")


# -- Anderson-Darling k-sample ---------------------------------------------


def ad_statistic(samples: Sequence[Sequence[float]]) -> float:
    """Midrank k-sample Anderson-Darling statistic (Scholz & Stephens A2akN)."""
    arrs = [np.asarray(s, dtype=np.float64) for s in samples]
    pooled = np.concatenate(arrs)
    N = pooled.size
    z, l = np.unique(pooled, return_counts=True)
    below = np.concatenate([[0], np.cumsum(l)[:-1]])
    B = below + l / 2.0
    denom = B * (N - B) - N * l / 4.0
    total = 0.0
    for a in arrs:
        f = np.array([np.count_nonzero(a == v) for v in z]) if len(z) < 64 else \
            np.bincount(np.searchsorted(z, a), minlength=len(z))
        M = np.concatenate([[0], np.cumsum(f)[:-1]]) + f / 2.0
        num = (N * M - a.size * B) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(denom > 0, l / N * num / np.where(denom > 0, denom, 1.0), 0.0)
        total += terms.sum() / a.size
    return float((N - 1) / N * total)


def ad_null_sigma(sizes: Sequence[int]) -> float:
    k = len(sizes)
    N = sum(sizes)
    H = sum(1.0 / n for n in sizes)
    h = sum(1.0 / i for i in range(1, N))
    # g = sum_{i=1}^{N-2} sum_{j=i+1}^{N-1} 1 / ((N - i) j)
    tail = np.cumsum(1.0 / np.arange(N - 1, 0, -1))[::-1]  # tail[j-1] = sum_{v=j}^{N-1} 1/v
    g = float(sum(tail[i] / (N - i) for i in range(1, N - 1)))
    a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * H
    b = (2 * g - 4) * k ** 2 + 8 * h * k + (2 * g - 14 * h - 4) * H - 8 * h + 4 * g - 6
    c = (6 * h + 2 * g - 2) * k ** 2 + (4 * h - 4 * g + 6) * k + (2 * h - 6) * H + 4 * h
    d = (2 * h + 6) * k ** 2 - 4 * h * k
    var = (a * N ** 3 + b * N ** 2 + c * N + d) / ((N - 1) * (N - 2) * (N - 3))
    return math.sqrt(var)


def ad_p_value(t: float, k: int) -> float:
    """p-value of the standardized statistic by log-linear interpolation.

    Below the 25% anchor the first segment is extrapolated (capped at 1);
    beyond the 0.1% anchor the value is clamped to 0.001.
    """
    m = k - 1
    crit = _AD_B0 + _AD_B1 / math.sqrt(m) + _AD_B2 / m
    logp = np.log(_AD_SIG)
    if t >= crit[-1]:
        return float(_AD_SIG[-1])
    if t <= crit[0]:
        slope = (logp[1] - logp[0]) / (crit[1] - crit[0])
        return float(min(1.0, math.exp(logp[0] + slope * (t - crit[0]))))
    return float(math.exp(np.interp(t, crit, logp)))


def ad_k_sample(samples: Sequence[Sequence]) -> TestResult:
    """k-sample Anderson-Darling test; nominal samples are compared through sorted category codes."""
    if len(samples) < 2:
        raise InsufficientDataError("AD test needs at least two samples")
    samples = [list(s) for s in samples]
    for s in samples:
        if len(s) < 2:
            raise InsufficientDataError("every AD sample needs at least two observations")
    if any(isinstance(v, str) for s in samples for v in s):
        cats = {c: i for i, c in enumerate(sorted({str(v) for s in samples for v in s}))}
        samples = [[cats[str(v)] for v in s] for s in samples]
    stat = ad_statistic(samples)
    sigma = ad_null_sigma([len(s) for s in samples])
    k = len(samples)
    t = (stat - (k - 1)) / sigma
    return TestResult(stat, ad_p_value(t, k), "anderson-darling", standardized=t)


# -- feature preservation -------------------------------------------------


@dataclass
class FeatureTest:
    name: str
    kind: str
    test: str | None
    statistic: float | None
    p_value: float | None
    preserved: bool | None  # None: untestable
    n_original: int
    n_generated: int


def feature_preservation(original: FeatureTable, generated: FeatureTable,
                         alpha: float = DEFAULT_ALPHA, seed: int = 0) -> list[FeatureTest]:
    """KS for numeric features, AD for nominal ones; preserved means p > alpha."""
    if original.catalog_hash != generated.catalog_hash:
        raise StageMismatchError("original and generated tables use different catalogs",
                                 expected=original.catalog_hash, found=generated.catalog_hash)
    out = []
    for j, entry in enumerate(original.catalog.entries):
        a = [r[j] for r in original.rows if r[j] is not None]
        b = [r[j] for r in generated.rows if r[j] is not None]
        if len(a) < 2 or len(b) < 2:
            out.append(FeatureTest(entry.name, entry.kind, None, None, None, None, len(a), len(b)))
            continue
        if entry.kind == "NUMERIC":
            res, test = ks_two_sample(a, b, seed=seed), "KS"
        else:
            res, test = ad_k_sample([a, b]), "AD"
        out.append(FeatureTest(entry.name, entry.kind, test, res.statistic, res.p_value,
                               res.p_value > alpha, len(a), len(b)))
    return out


def preservation_counts(tests: Iterable[FeatureTest]) -> dict[str, int]:
    c = Counter("untestable" if t.preserved is None else
                ("preserved" if t.preserved else "not_preserved") for t in tests)
    return {k: c.get(k, 0) for k in ("preserved", "not_preserved", "untestable")}


def preserved_fraction(tests: Iterable[FeatureTest]) -> float:
    c = preservation_counts(tests)
    testable = c["preserved"] + c["not_preserved"]
    return c["preserved"] / testable if testable else 0.0


# -- n-gram perplexity ------------------------------------------------------


def _strip(seq) -> list[int]:
    if isinstance(seq, ActivitySequence):
        return list(seq.clusters)
    return [int(t) for t in seq if t not in (START, END)]


def ngram_counts(sequences: Iterable, n: int) -> Counter:
    c: Counter = Counter()
    for seq in sequences:
        toks = _strip(seq)
        for i in range(len(toks) - n + 1):
            c[tuple(toks[i:i + n])] += 1
    return c


def ngram_perplexity(sequences: Iterable, n: int) -> float:
    """2 ** entropy (bits) of the empirical n-gram distribution."""
    if n < 1:
        raise ValueError("n must be positive")
    counts = ngram_counts(sequences, n)
    total = sum(counts.values())
    if total == 0:
        raise InsufficientDataError(f"no {n}-grams: sequences are shorter than {n} tokens")
    p = np.array(list(counts.values()), dtype=np.float64) / total
    return float(2.0 ** (-(p * np.log2(p)).sum()))


def perplexity_delta(original: Iterable, generated: Iterable, n: int) -> float:
    return abs(ngram_perplexity(list(original), n) - ngram_perplexity(list(generated), n))


def per_source_perplexity(sequences: Sequence[ActivitySequence], n: int) -> float | None:
    """Mean n-gram perplexity over source addresses of IP-pair sequences."""
    by_src: dict[str, list] = {}
    for s in sequences:
        by_src.setdefault(s.key[0] if s.key else "", []).append(s)
    vals = []
    for seqs in by_src.values():
        if sum(ngram_counts(seqs, n).values()):
            vals.append(ngram_perplexity(seqs, n))
    return float(np.mean(vals)) if vals else None


# -- report -----------------------------------------------------------------


@dataclass
class PerplexityRecord:
    n: int
    original: float | None
    generated: float | None
    abs_difference: float | None
    original_per_source: float | None = None
    generated_per_source: float | None = None


@dataclass
class FidelityReport:
    features: list[FeatureTest]
    alpha: float
    perplexities: list[PerplexityRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return preservation_counts(self.features)

    @property
    def preserved_fraction(self) -> float:
        return preserved_fraction(self.features)

    def feature_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "kind", "test", "statistic", "p_value", "preserved",
                    "n_original", "n_generated"])
        for t in self.features:
            w.writerow([t.name, t.kind, t.test or "",
                        "" if t.statistic is None else repr(t.statistic),
                        "" if t.p_value is None else repr(t.p_value),
                        "" if t.preserved is None else str(t.preserved).lower(),
                        t.n_original, t.n_generated])
        return buf.getvalue()

    def summary_text(self) -> str:
        c = self.counts
        lines = [
            f"feature preservation (alpha={self.alpha}): {c['preserved']} preserved, "
            f"{c['not_preserved']} not preserved, {c['untestable']} untestable "
            f"({self.preserved_fraction:.1%} of testable)",
        ]
        for p in self.perplexities:
            def fmt(v):
                return "n/a" if v is None else f"{v:.3f}"
            lines.append(f"{p.n}-gram perplexity: original {fmt(p.original)}, generated "
                         f"{fmt(p.generated)}, |diff| {fmt(p.abs_difference)}; per-source mean "
                         f"{fmt(p.original_per_source)} vs {fmt(p.generated_per_source)}")
        s = self.summary
        if s:
            lines.append(f"packets: original {s['packets'][0]}, generated {s['packets'][1]}")
            lines.append(f"clusters: original {s['clusters'][0]}, generated {s['clusters'][1]}")
            lines.append(f"mean sequence size: original {s['mean_sequence_size'][0]:.2f}, "
                         f"generated {s['mean_sequence_size'][1]:.2f}")
        return "\n".join(lines) + "\n"


def summary_stats(original_packets: int, generated_packets: int,
                  original_labels: Sequence[int], generated_labels: Sequence[int],
                  original_pair_seqs: Sequence[ActivitySequence],
                  generated_pair_seqs: Sequence[ActivitySequence]) -> dict:
    def mean_size(seqs):
        return float(np.mean([len(s) for s in seqs])) if seqs else 0.0
    return {
        "packets": (int(original_packets), int(generated_packets)),
        "clusters": (len(set(map(int, original_labels))), len(set(map(int, generated_labels)))),
        "mean_sequence_size": (mean_size(original_pair_seqs), mean_size(generated_pair_seqs)),
    }


def perplexity_records(original: Sequence[ActivitySequence], generated: Sequence[ActivitySequence],
                       original_pairs: Sequence[ActivitySequence] | None = None,
                       generated_pairs: Sequence[ActivitySequence] | None = None,
                       ns: Sequence[int] = (2, 3, 4)) -> list[PerplexityRecord]:
    out = []
    for n in ns:
        try:
            po = ngram_perplexity(original, n)
        except InsufficientDataError:
            po = None
        try:
            pg = ngram_perplexity(generated, n)
        except InsufficientDataError:
            pg = None
        out.append(PerplexityRecord(
            n, po, pg, None if po is None or pg is None else abs(po - pg),
            per_source_perplexity(original_pairs, n) if original_pairs else None,
            per_source_perplexity(generated_pairs, n) if generated_pairs else None))
    return out
