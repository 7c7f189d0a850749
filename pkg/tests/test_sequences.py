from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntgen.errors import EmptyModelError, VocabularyError
from ntgen.flows import FlowKey
from ntgen.sequences import (END, GLOBAL, IP_PAIR, START, MarkovModel, build_sequences,
                             fit_markov, fit_transition_times, token_counts)

S = 1_000_000_000


def flow(fid, t_s, src, dst):
    return SimpleNamespace(key=FlowKey(src, dst, 1000 + fid, 80, "TCP"), first_ns=int(t_s * S),
                           flow_id=fid)


def two_pair_flows():
    red, blue = ("1.1.1.2", "2.2.2.1"), ("2.2.2.3", "2.2.2.1")
    return [flow(0, 0, *red), flow(1, 1, *blue), flow(2, 2, *red), flow(3, 3, *blue),
            flow(4, 4, *red)]


def sample_chain(P, n, rng, start=0):
    out = [start]
    for _ in range(n - 1):
        out.append(int(rng.choice(len(P), p=P[out[-1]])))
    return out


P3 = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])


# -- sequence construction -------------------------------------------------


def test_ip_pair_example_gives_two_sequences():
    seqs = build_sequences(two_pair_flows(), [7, 8, 9, 8, 7], IP_PAIR)
    assert [len(s) for s in seqs] == [3, 2]
    assert seqs[0].key == ("1.1.1.2", "2.2.2.1")
    assert seqs[0].tokens == [START, 7, 9, 7, END]
    assert seqs[1].tokens == [START, 8, 8, END]


def test_global_keeps_every_flow_in_time_order():
    flows = two_pair_flows()[::-1]
    (seq,) = build_sequences(flows, [4, 3, 2, 1, 0], GLOBAL)
    assert seq.clusters == [0, 1, 2, 3, 4]
    assert START not in seq.tokens and END not in seq.tokens


def test_zero_flows_one_empty_global_sequence():
    (seq,) = build_sequences([], [], GLOBAL)
    assert seq.tokens == [] and seq.key is None


def test_timestamp_ties_resolved_by_flow_index():
    a, b = "10.0.0.1", "10.0.0.2"
    flows = [flow(5, 1, a, b), flow(2, 1, a, b), flow(9, 0, a, b)]
    (seq,) = build_sequences(flows, [50, 20, 90], GLOBAL)
    assert seq.flow_ids == [9, 2, 5] and seq.clusters == [90, 20, 50]


def test_sequence_conservation_on_corpus(corpus, corpus_k10):
    for agg in (GLOBAL, IP_PAIR):
        seqs = build_sequences(corpus.meta, corpus_k10.labels, agg)
        assert sum(len(s) for s in seqs) == len(corpus.meta)
        assert sum(token_counts(seqs).values()) == len(corpus.meta)
        for s in seqs:
            assert all(x <= y for x, y in zip(s.times_ns, s.times_ns[1:]))


# -- Markov ------------------------------------------------------------------


def test_alternating_chain():
    m = fit_markov([[0, 1, 0, 1]])
    assert m.prob(0, 1) == 1 and m.prob(1, 0) == 1
    assert m.start_prob[m.index(0)] == 1
    assert m.predict_next([1, 0])[m.index(1)] == 1


def test_self_loop_counting():
    m = fit_markov([[0, 0, 1]])
    assert m.prob(0, 0) == 0.5 and m.prob(0, 1) == 0.5


def test_unobserved_row_falls_back_to_start():
    m = fit_markov([[0, 1, 2]])
    assert not m.observed[m.index(2)]
    assert np.array_equal(m.predict_next([2]), m.start_prob)
    assert m.transition[m.index(2)].sum() == 0


def test_unknown_token_and_empty_input():
    m = fit_markov([[0, 1]])
    with pytest.raises(VocabularyError):
        m.predict_next([5])
    with pytest.raises(EmptyModelError):
        fit_markov([[], []])


def test_global_start_is_unigram_ip_pair_start_is_first_cluster():
    seqs = build_sequences(two_pair_flows(), [7, 8, 9, 8, 7], GLOBAL)
    m = fit_markov(seqs)
    assert dict(zip(m.vocab, m.start_prob)) == pytest.approx({7: 0.4, 8: 0.4, 9: 0.2})
    ip = fit_markov(build_sequences(two_pair_flows(), [7, 8, 9, 8, 7], IP_PAIR))
    assert dict(zip(ip.vocab, ip.start_prob))[7] == 0.5
    assert dict(zip(ip.vocab, ip.start_prob))[8] == 0.5
    assert ip.prob(7, END) == 0.5 and ip.prob(8, END) == 0.5 and ip.prob(START, 7) == 0.5


def test_recovers_known_matrix():
    rng = np.random.default_rng(0)
    m = fit_markov([sample_chain(P3, 10_000, rng)])
    assert m.vocab == [0, 1, 2]
    assert np.abs(m.transition - P3).max() < 0.05


def test_learnability_error_shrinks_with_sample_size():
    rng = np.random.default_rng(1)
    small = [np.abs(fit_markov([sample_chain(P3, 300, rng)]).transition - P3).mean()
             for _ in range(5)]
    large = [np.abs(fit_markov([sample_chain(P3, 30_000, rng)]).transition - P3).mean()
             for _ in range(5)]
    assert max(large) < min(small)


@given(st.lists(st.lists(st.integers(0, 6), max_size=30), min_size=1).filter(
    lambda ls: any(ls)))
def test_rows_are_stochastic(lists):
    m = fit_markov(lists)
    assert m.start_prob.sum() == pytest.approx(1, abs=1e-9)
    for i, obs in enumerate(m.observed):
        assert m.transition[i].sum() == pytest.approx(1 if obs else 0, abs=1e-9)


def test_markov_json_round_trip():
    m = fit_markov([[0, 1, 2, 0, 2]])
    back = MarkovModel.from_json(m.to_json())
    assert back.vocab == m.vocab and np.array_equal(back.transition, m.transition)


# -- transition times -------------------------------------------------------


def gseq(times_s):
    flows = [flow(i, t, "10.0.0.1", "10.0.0.2") for i, t in enumerate(times_s)]
    return build_sequences(flows, [0] * len(flows), GLOBAL)


def test_equal_gaps_single_bin():
    h = fit_transition_times(gseq([0, 10, 20, 30]))
    assert h.total == 3 and np.count_nonzero(h.counts) == 1
    rng = np.random.default_rng(0)
    assert {h.sample(rng) for _ in range(20)} == {10.0}


def test_hundred_flows_ten_bins():
    rng = np.random.default_rng(2)
    h = fit_transition_times(gseq(np.sort(rng.uniform(0, 1000, 100))))
    assert len(h.counts) == 10 and h.total == 99


def test_ip_pair_gaps_stay_within_sequences():
    seqs = build_sequences(two_pair_flows(), [0] * 5, IP_PAIR)
    h = fit_transition_times(seqs, flow_count=5)
    assert h.total == 3 and h.edges[0] == 2 and h.edges[-1] == 2


def test_sampling_reproduces_mean_and_range():
    rng = np.random.default_rng(3)
    times = np.cumsum(rng.exponential(20, 400))
    seqs = gseq(times)
    h = fit_transition_times(seqs)
    deltas = np.diff(np.array([int(t * S) for t in times])) / 1e9
    draws = np.array([h.sample(rng) for _ in range(10_000)])
    assert abs(draws.mean() - deltas.mean()) < 0.05 * deltas.mean()
    assert draws.min() >= deltas.min() and draws.max() <= deltas.max()


def test_no_pairs_is_an_error():
    with pytest.raises(EmptyModelError):
        fit_transition_times(gseq([5]))
