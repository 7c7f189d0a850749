from __future__ import annotations

import math
import statistics
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntgen.errors import StageMismatchError
from ntgen.features import (CATALOG, RAW_ATTRIBUTES, STATISTICS, FeatureTable, aggregate,
                            build_catalog, feature_table, histogram_entropy)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def brute_entropy(values, bins=16):
    lo, hi = min(values), max(values)
    if lo == hi:
        return 0.0
    width = (hi - lo) / bins
    counts = Counter(min(int((v - lo) / width), bins - 1) for v in values)
    n = len(values)
    return -sum(c / n * math.log2(c / n) for c in counts.values())


def stat(values, name):
    return aggregate(np.array(values, dtype=float))[STATISTICS.index(name)]


def test_catalog_shape():
    assert len(CATALOG) == 205
    assert len(set(CATALOG.names)) == 205
    raw = [e for e in CATALOG.entries if e.level == "RAW"]
    per_attr = Counter(e.source for e in raw)
    assert set(per_attr) == set(RAW_ATTRIBUTES) and set(per_attr.values()) == {12}
    for attr in RAW_ATTRIBUTES:
        assert [e.statistic for e in raw if e.source == attr] == list(STATISTICS)


def test_catalog_hash_stable():
    assert build_catalog().hash == CATALOG.hash == "fb357eb259bf2668"


def test_simple_statistics():
    v = [100, 200, 300]
    assert stat(v, "mean") == 200 and stat(v, "min") == 100 and stat(v, "max") == 300
    assert stat(v, "sum") == 600 and stat(v, "first") == 100 and stat(v, "last") == 300


def test_constant_sizes_have_zero_entropy_and_variance():
    assert stat([5, 5, 5, 5], "entropy") == 0 and stat([5, 5, 5, 5], "var") == 0


def test_sixteen_values_fill_sixteen_bins():
    v = list(range(1, 17))
    assert stat(v, "entropy") == pytest.approx(4.0, abs=1e-12)
    assert brute_entropy(v) == pytest.approx(4.0, abs=1e-12)


def test_single_value_statistics():
    agg = dict(zip(STATISTICS, aggregate(np.array([7.0]))))
    assert agg["std"] == agg["var"] == 0
    assert agg["q1"] == agg["median"] == agg["q3"] == agg["min"] == agg["max"] == 7


@given(st.lists(finite, min_size=1, max_size=60))
def test_aggregate_matches_independent_formulas(values):
    agg = dict(zip(STATISTICS, aggregate(np.array(values))))
    n = len(values)
    if n > 1:
        q = statistics.quantiles(values, n=4, method="inclusive")
    else:
        q = [values[0]] * 3
    tol = 1e-9 * (1 + max(abs(v) for v in values))
    assert agg["q1"] == pytest.approx(q[0], abs=tol)
    assert agg["median"] == pytest.approx(q[1], abs=tol)
    assert agg["q3"] == pytest.approx(q[2], abs=tol)
    assert agg["mean"] == pytest.approx(math.fsum(values) / n, abs=tol)
    assert agg["var"] == pytest.approx(statistics.pvariance(values), rel=1e-9, abs=tol * tol + 1e-9)
    assert agg["entropy"] == pytest.approx(brute_entropy(values), abs=1e-9)


@given(st.lists(finite, min_size=1, max_size=60))
def test_order_and_entropy_bounds(values):
    agg = dict(zip(STATISTICS, aggregate(np.array(values))))
    assert agg["min"] <= agg["q1"] <= agg["median"] <= agg["q3"] <= agg["max"]
    assert 0 <= agg["entropy"] <= 4 + 1e-12


@given(st.lists(finite, min_size=2, max_size=40), st.randoms())
def test_permutation_changes_only_first_and_last(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = dict(zip(STATISTICS, aggregate(np.array(values))))
    b = dict(zip(STATISTICS, aggregate(np.array(shuffled))))
    for k in STATISTICS:
        if k in ("first", "last"):
            continue
        assert a[k] == pytest.approx(b[k], rel=1e-9, abs=1e-6)


def test_histogram_entropy_nonnegative_zero():
    assert math.copysign(1, histogram_entropy(np.array([1.0, 1.0]))) == 1


def test_corpus_table_shape_and_absence(corpus):
    t = corpus.table
    assert len(t) == len(corpus.assembly.flows)
    app = {i for i, e in enumerate(CATALOG.entries) if e.level == "APP"}
    for row in t.rows:
        assert len(row) == 205
        for j, v in enumerate(row):
            if v is None:
                assert j in app
            elif CATALOG.entries[j].kind == "NUMERIC":
                assert math.isfinite(v)


def test_corpus_application_features(corpus):
    t = corpus.table
    q = CATALOG.index("dns_query_count")
    m = CATALOG.index("http_method")
    transport = CATALOG.index("transport")
    dns_rows = [r for r in t.rows if r[q] is not None]
    http_rows = [r for r in t.rows if r[m] is not None]
    assert dns_rows and http_rows
    assert all(r[transport] == "UDP" for r in dns_rows)
    assert all(r[transport] == "TCP" for r in http_rows)
    assert {r[m] for r in http_rows} <= {"GET", "POST", "NONE"}


def test_table_round_trip_is_exact(corpus):
    t = corpus.table
    back = FeatureTable.from_csv(t.to_csv(), t.metadata())
    assert back.rows == t.rows and back.meta == t.meta
    assert back.source_digest == t.source_digest


@settings(max_examples=30)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=5))
def test_float_serialisation_bit_exact(corpus, values):
    t = corpus.table
    rows = [list(t.rows[0]) for _ in values]
    for r, v in zip(rows, values):
        r[0] = v
    sub = FeatureTable(t.catalog, rows, t.meta[:len(values)], "x")
    back = FeatureTable.from_csv(sub.to_csv(), sub.metadata())
    assert [r[0] for r in back.rows] == values


def test_empty_table_has_header_only():
    t = feature_table([], [])
    assert t.to_csv().strip() == ",".join(CATALOG.names)


def test_catalog_mismatch_refused(corpus):
    meta = dict(corpus.table.metadata(), catalog_hash="0" * 16)
    with pytest.raises(StageMismatchError) as err:
        FeatureTable.from_csv(corpus.table.to_csv(), meta)
    assert "0" * 16 in str(err.value) and CATALOG.hash in str(err.value)


def test_extraction_is_deterministic(corpus):
    again = feature_table(corpus.assembly.flows, corpus.packets, corpus.table.source_digest)
    assert again.to_csv() == corpus.table.to_csv()
