from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from ntgen import craft
from ntgen.errors import RunawaySequenceError
from ntgen.features import CATALOG, FlowMeta, feature_table
from ntgen.flows import FlowConfig, FlowKey, assemble_flows
from ntgen.generation import (AddressAllocator, generate_global, generate_ip_based, make_plan,
                              random_baseline, rebase_flow)
from ntgen.packets import PROTO_UDP, load_capture, write_capture
from ntgen.sequences import (END, GLOBAL, IP_PAIR, START, MarkovModel, TransitionTimeHistogram,
                             build_sequences, fit_markov, fit_transition_times)
from oracles import valid_checksums

S = 1_000_000_000
CLIENT, SERVER = "192.168.5.5", "172.16.5.1"


def toy_capture(n_flows, offsets_s=(0.0, 1.5, 2.5), spacing_s=1000.0):
    """One UDP flow per source port, far enough apart that each is its own flow."""
    packets = []
    for f in range(n_flows):
        for off in offsets_s:
            seg = craft.udp_datagram(CLIENT, SERVER, 20000 + f, 53, b"q" * (10 + f))
            data = craft.frame(seg, CLIENT, SERVER, PROTO_UDP)
            packets.append(craft.packet(len(packets), int((f * spacing_s + off) * S), data))
    fa = assemble_flows(packets)
    assert len(fa.flows) == n_flows
    return packets, [FlowMeta.of(f) for f in fa.flows]


def fixed_gap(seconds):
    return TransitionTimeHistogram(np.array([seconds, seconds]), np.array([1]))


def markov(vocab, start, rows, agg):
    rows = np.array(rows, dtype=float)
    return MarkovModel(vocab, np.array(start, dtype=float), rows, rows.sum(axis=1) > 0, agg)


def set_bounds(plan, t0_s, t1_s):
    plan.t_start_ns, plan.t_end_ns = int(t0_s * S), int(t1_s * S)
    return plan


# -- global walk -------------------------------------------------------------


def test_hand_traced_schedule():
    packets, meta = toy_capture(3)
    model = markov([0, 1, 2], [1, 0, 0], [[0, 1, 0], [0, 0, 1], [1, 0, 0]], GLOBAL)
    plan = set_bounds(make_plan(meta, [0, 1, 2], packets, model, None, fixed_gap(5.0)), 0, 20)
    trace = generate_global(plan)
    got = [(r.scheduled_ns, r.cluster, r.source_flow_id) for r in trace.provenance]
    assert got == [(5 * S, 0, 0), (10 * S, 1, 1), (15 * S, 2, 2), (20 * S, 0, 0)]
    assert [p.ts_ns for p in trace.packets[:3]] == [5 * S, int(6.5 * S), int(7.5 * S)]
    # the reused flow 0 is within the UDP idle window of its first copy
    assert trace.provenance[3].key.src_port != trace.provenance[0].key.src_port


def test_empty_span_gives_empty_trace():
    packets, meta = toy_capture(1)
    model = markov([0], [1], [[1]], GLOBAL)
    plan = set_bounds(make_plan(meta, [0], packets, model, None, fixed_gap(10.0)), 50, 50)
    trace = generate_global(plan)
    assert trace.packets == [] and trace.provenance == []


def test_single_cluster_fixed_gap_schedules_ten_flows():
    packets, meta = toy_capture(2)
    model = markov([0], [1], [[1]], GLOBAL)
    plan = set_bounds(make_plan(meta, [0, 0], packets, model, None, fixed_gap(10.0)), 0, 100)
    trace = generate_global(plan)
    assert len(trace.provenance) == 10
    assert [r.scheduled_ns for r in trace.provenance] == [k * 10 * S for k in range(1, 11)]


def test_determinism_byte_identical(tmp_path, corpus, corpus_k10):
    seqs = build_sequences(corpus.meta, corpus_k10.labels, GLOBAL)
    hist = fit_transition_times(seqs, len(corpus.meta))
    traces = []
    for name in ("a", "b"):
        plan = make_plan(corpus.meta, corpus_k10.labels, corpus.packets, fit_markov(seqs),
                         corpus_k10, hist, GLOBAL, seed=11)
        plan.t_end_ns = plan.t_start_ns + 60 * S
        trace = generate_global(plan)
        write_capture(tmp_path / name, trace.packets)
        traces.append(trace)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert traces[0].provenance_csv() == traces[1].provenance_csv()


# -- rebase ------------------------------------------------------------------


def test_rebase_identity_and_translation():
    packets, meta = toy_capture(1)
    assert rebase_flow(packets, packets[0].ts_ns) == packets
    moved = rebase_flow(packets, 100 * S)
    assert [p.ts_ns for p in moved] == [100 * S, int(101.5 * S), int(102.5 * S)]
    assert [p.data for p in moved] == [p.data for p in packets]


def test_rebase_with_new_key_rewrites_addresses():
    packets, meta = toy_capture(1)
    key = FlowKey("10.1.2.3", "10.1.2.4", meta[0].key.src_port, 53, "UDP")
    moved = rebase_flow(packets, 7 * S, key)
    for old, new in zip(packets, moved):
        assert FlowKey.of(new) == key and valid_checksums(new.data)
        assert new.payload == old.payload


def test_rewritten_corpus_flows_pass_checksum_oracle(corpus):
    for m in corpus.meta[::97]:
        src = [corpus.packets[i] for i in m.packet_refs]
        key = FlowKey("10.7.7.7", "10.8.8.8", m.key.src_port, m.key.dst_port, m.key.transport)
        assert all(valid_checksums(p.data) for p in rebase_flow(src, 0, key))


# -- IP-pair walk --------------------------------------------------------------

IP_VOCAB = [END, START, 0]


def ip_plan(rows, **kw):
    packets, meta = toy_capture(2)
    model = markov(IP_VOCAB, [0, 0, 1], rows, IP_PAIR)
    return make_plan(meta, [0, 0], packets, model, None, fixed_gap(2.0), IP_PAIR, seed=5, **kw)


def test_start_to_end_gives_empty_sequences():
    trace = generate_ip_based(ip_plan([[0, 0, 0], [1, 0, 0], [1, 0, 0]]), pair_count=6)
    assert trace.packets == [] and trace.provenance == []


def test_one_flow_per_sequence_with_unique_pairs():
    trace = generate_ip_based(ip_plan([[0, 0, 0], [0, 0, 1], [1, 0, 0]]), pair_count=6)
    assert [r.sequence_index for r in trace.provenance] == list(range(6))
    pairs = [(r.key.src_addr, r.key.dst_addr) for r in trace.provenance]
    assert len(set(pairs)) == 6 and all(a.startswith("10.") for p in pairs for a in p)
    for owner, p in zip(trace.packet_owner, trace.packets):
        k = trace.provenance[owner].key
        assert (p.decoded.ip.src_addr, p.decoded.ip.dst_addr) == (k.src_addr, k.dst_addr)
        assert valid_checksums(p.data)


def test_runaway_sequence_reports_seed_and_index():
    plan = ip_plan([[0, 0, 0], [0, 0, 1], [0, 0, 1]], max_sequence_len=50)
    with pytest.raises(RunawaySequenceError) as err:
        generate_ip_based(plan, pair_count=3)
    assert err.value.seed == 5 and err.value.sequence_index == 0


def test_allocator_skips_training_addresses_and_broadcast_hosts():
    alloc = AddressAllocator(0, {"10.0.0.2"})
    seen = [a for _ in range(300) for a in alloc.pair()[0]]
    assert "10.0.0.2" not in seen and len(set(seen)) == len(seen)
    assert not any(a.endswith((".0", ".255")) for a in seen)


def test_mean_sequence_length_matches_training(corpus, corpus_k10):
    seqs = build_sequences(corpus.meta, corpus_k10.labels, IP_PAIR)
    train_mean = np.mean([len(s) for s in seqs])
    plan = make_plan(corpus.meta, corpus_k10.labels, corpus.packets, fit_markov(seqs),
                     corpus_k10, fit_transition_times(seqs, len(corpus.meta)), IP_PAIR, seed=3)
    trace = generate_ip_based(plan, pair_count=1000)
    gen_mean = len(trace.provenance) / 1000
    assert abs(gen_mean - train_mean) <= 0.15 * train_mean


# -- random baseline -----------------------------------------------------------


def test_random_baseline_matches_cluster_frequencies(tmp_path):
    packets, meta = toy_capture(20, offsets_s=(0.0,))
    labels = [0] * 10 + [1] * 6 + [2] * 3 + [3]
    plan = make_plan(meta, labels, packets, None, None, fixed_gap(0.001), seed=2)
    trace = random_baseline(plan, 10_000)
    freq = Counter(trace.clusters)
    tv = 0.5 * sum(abs(freq[c] / 10_000 - labels.count(c) / 20) for c in range(4))
    assert tv < 0.03
    assert random_baseline(plan, 0).packets == []
    write_capture(tmp_path / "r.pcap", trace.packets)
    back, stats = load_capture(tmp_path / "r.pcap")
    assert len(back) == len(trace.packets)


# -- pipeline-level invariants ----------------------------------------------------


@pytest.fixture(scope="module")
def global_trace(corpus, corpus_k10):
    seqs = build_sequences(corpus.meta, corpus_k10.labels, GLOBAL)
    plan = make_plan(corpus.meta, corpus_k10.labels, corpus.packets, fit_markov(seqs),
                     corpus_k10, fit_transition_times(seqs, len(corpus.meta)), GLOBAL, seed=1)
    return generate_global(plan)


def test_timestamps_non_decreasing(global_trace):
    ts = [p.ts_ns for p in global_trace.packets]
    assert ts == sorted(ts)


def test_provenance_is_complete(global_trace, corpus):
    counts = Counter(global_trace.packet_owner)
    assert len(global_trace.packet_owner) == len(global_trace.packets)
    for i, r in enumerate(global_trace.provenance):
        assert counts[i] == r.packet_count == len(corpus.meta[r.source_flow_id].packet_refs)


def test_intra_flow_deltas_preserved(global_trace, corpus):
    by_owner: dict[int, list[int]] = {}
    for owner, p in zip(global_trace.packet_owner, global_trace.packets):
        by_owner.setdefault(owner, []).append(p.ts_ns)
    for i, r in list(enumerate(global_trace.provenance))[::37]:
        src = [corpus.packets[j].ts_ns for j in corpus.meta[r.source_flow_id].packet_refs]
        assert np.array_equal(np.diff(by_owner[i]), np.diff(src))


CLOCK_FEATURES = {e.name for e in CATALOG.entries
                  if e.name.startswith("day_time_") or e.name in ("flow_day_time", "flow_week_day")}


@pytest.fixture(scope="module")
def reingested(tmp_path_factory, global_trace):
    path = tmp_path_factory.mktemp("gen") / "gen.pcap"
    write_capture(path, global_trace.packets)
    packets, _ = load_capture(path)
    fa = assemble_flows(packets, FlowConfig(require_handshake=False))
    return fa, feature_table(fa.flows, packets)


def test_reingest_recovers_every_generated_flow(global_trace, reingested):
    fa, _ = reingested
    expected = {(r.key, r.scheduled_ns) for r in global_trace.provenance}
    assert {(f.key, f.first_ns) for f in fa.flows} == expected
    assert fa.orphan_count == 0 and len(fa.flows) == len(expected)


def test_reingested_features_match_source_except_clock(global_trace, reingested, corpus):
    fa, table = reingested
    prov = {(r.key, r.scheduled_ns): r for r in global_trace.provenance}
    keep = [j for j, e in enumerate(CATALOG.entries) if e.name not in CLOCK_FEATURES]
    for f, row in zip(fa.flows, table.rows):
        src = corpus.table.rows[prov[(f.key, f.first_ns)].source_flow_id]
        assert [row[j] for j in keep] == [src[j] for j in keep]
