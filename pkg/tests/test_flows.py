from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from ntgen import craft
from ntgen.flows import CloseReason, FlowConfig, FlowKey, assemble_flows, network_statistics
from ntgen.packets import PROTO_TCP, PROTO_UDP, TCP_ACK, TCP_FIN, TCP_PSH, TCP_RST, TCP_SYN

A, B = "10.0.0.1", "10.0.0.2"
S = 1_000_000_000


class Seg:
    def __init__(self):
        self.pkts = []

    def tcp(self, t_s, fwd, flags, payload=b"", ports=(40000, 80)):
        s, d = (A, B) if fwd else (B, A)
        sp, dp = ports if fwd else ports[::-1]
        seg = craft.tcp_segment(s, d, sp, dp, 0, 0, flags, payload)
        self.pkts.append(craft.packet(len(self.pkts), int(t_s * S), craft.frame(seg, s, d, PROTO_TCP)))
        return self

    def udp(self, t_s, fwd=True, ports=(5000, 53)):
        s, d = (A, B) if fwd else (B, A)
        sp, dp = ports if fwd else ports[::-1]
        seg = craft.udp_datagram(s, d, sp, dp, b"payload")
        self.pkts.append(craft.packet(len(self.pkts), int(t_s * S), craft.frame(seg, s, d, PROTO_UDP)))
        return self


def seven_packet_session() -> Seg:
    return (Seg().tcp(0, True, TCP_SYN).tcp(0.1, False, TCP_SYN | TCP_ACK).tcp(0.2, True, TCP_ACK)
            .tcp(0.3, True, TCP_ACK | TCP_PSH, b"req").tcp(0.4, False, TCP_ACK | TCP_PSH, b"resp")
            .tcp(0.5, True, TCP_FIN | TCP_ACK).tcp(0.6, False, TCP_FIN | TCP_ACK))


def test_tcp_session_gives_two_mirrored_flows():
    fa = assemble_flows(seven_packet_session().pkts)
    assert len(fa.flows) == 2 and fa.orphan_count == 0
    fwd, rev = fa.flows
    assert fwd.key == FlowKey(A, B, 40000, 80, "TCP") and rev.key == fwd.key.reversed()
    assert fwd.packet_refs == (0, 2, 3, 5) and rev.packet_refs == (1, 4, 6)
    assert fwd.close_reason == CloseReason.FIN


def test_trailing_ack_after_both_fins_attaches():
    s = seven_packet_session().tcp(0.7, True, TCP_ACK)
    fa = assemble_flows(s.pkts)
    assert fa.flows[0].packet_refs[-1] == 7 and fa.orphan_count == 0


def test_rst_closes_session():
    s = Seg().tcp(0, True, TCP_SYN).tcp(0.1, False, TCP_SYN | TCP_ACK).tcp(0.2, True, TCP_ACK) \
        .tcp(0.3, False, TCP_RST)
    fa = assemble_flows(s.pkts)
    assert {f.close_reason for f in fa.flows} == {CloseReason.RST}


def test_stray_ack_is_orphan_unless_relaxed():
    s = Seg().tcp(0, True, TCP_ACK, b"mid").tcp(1, False, TCP_ACK)
    fa = assemble_flows(s.pkts)
    assert fa.flows == [] and fa.orphan_count == 2
    relaxed = assemble_flows(s.pkts, FlowConfig(require_handshake=False))
    assert len(relaxed.flows) == 2 and relaxed.orphan_count == 0


def test_incomplete_handshake_packets_are_orphans():
    s = Seg().tcp(0, True, TCP_SYN).tcp(0.1, True, TCP_SYN)
    fa = assemble_flows(s.pkts)
    assert fa.flows == [] and fa.orphan_count == 2


def test_tcp_idle_timeout_closes_session():
    s = Seg().tcp(0, True, TCP_SYN).tcp(0.1, False, TCP_SYN | TCP_ACK).tcp(0.2, True, TCP_ACK) \
        .tcp(0.3, True, TCP_ACK | TCP_PSH, b"x").tcp(400, False, TCP_ACK)
    fa = assemble_flows(s.pkts, FlowConfig(tcp_idle_timeout_s=300))
    assert {f.close_reason for f in fa.flows} == {CloseReason.TIMEOUT}
    assert fa.orphan_count == 1
    # the timer counts activity from either side
    s2 = Seg().tcp(0, True, TCP_SYN).tcp(0.1, False, TCP_SYN | TCP_ACK).tcp(0.2, True, TCP_ACK) \
        .tcp(200, False, TCP_ACK).tcp(400, True, TCP_ACK)
    fa2 = assemble_flows(s2.pkts)
    assert fa2.orphan_count == 0 and sum(len(f.packet_refs) for f in fa2.flows) == 5


def test_udp_idle_gap_splits_flow():
    s = Seg().udp(0).udp(1).udp(2).udp(102)
    fa = assemble_flows(s.pkts, FlowConfig(udp_idle_timeout_s=60))
    assert [len(f.packet_refs) for f in fa.flows] == [3, 1]
    assert fa.flows[0].close_reason == CloseReason.IDLE


def test_udp_max_duration():
    s = Seg()
    for t in range(0, 400, 30):
        s.udp(t)
    fa = assemble_flows(s.pkts, FlowConfig(udp_max_duration_s=300))
    assert fa.flows[0].close_reason == CloseReason.MAX_DURATION
    assert fa.flows[0].duration <= 300


def test_udp_reverse_direction_is_own_flow():
    fa = assemble_flows(Seg().udp(0).udp(0.01, fwd=False).pkts)
    assert len(fa.flows) == 2 and fa.flows[0].key.reversed() == fa.flows[1].key


def test_empty_stream():
    fa = assemble_flows([])
    assert fa.flows == [] and fa.packet_count == 0


def test_network_statistics():
    from ntgen.flows import Flow
    def f(i, t, src=A, dst=B):
        return Flow(i, FlowKey(src, dst, 1, 2, "UDP"), (i,), int(t * S), int(t * S), CloseReason.IDLE)
    stats = network_statistics([f(0, 0), f(1, 10), f(2, 30)])
    assert stats[(A, B)].flow_count == 3 and stats[(A, B)].mean_interval_s == 15
    one = network_statistics([f(0, 5)])
    assert one[(A, B)].mean_interval_s is None
    mixed = network_statistics([f(0, 0), f(1, 1, B, A), f(2, 4), f(3, 5, B, A), f(4, 10)])
    assert mixed[(A, B)].mean_interval_s == 5 and mixed[(B, A)].mean_interval_s == 4


def test_corpus_conservation_and_direction(corpus):
    fa = corpus.assembly
    assert sum(len(f.packet_refs) for f in fa.flows) + fa.orphan_count + fa.skipped_count \
        == len(corpus.packets)
    for f in fa.flows[::11]:
        assert all(FlowKey.of(corpus.packets[i]) == f.key for i in f.packet_refs)
        assert f.first_ns == corpus.packets[f.packet_refs[0]].ts_ns


def test_fixture_flow_count_recovered_exactly(corpus):
    planted = {(f.key, f.first_ns) for f in corpus.truth.flows}
    found = {((f.key.src_addr, f.key.dst_addr, f.key.src_port, f.key.dst_port, f.key.transport),
              f.first_ns) for f in corpus.assembly.flows}
    assert found == planted


event = st.tuples(st.floats(0, 2000, allow_nan=False), st.booleans(), st.booleans(),
                  st.sampled_from([TCP_SYN, TCP_SYN | TCP_ACK, TCP_ACK, TCP_FIN | TCP_ACK,
                                   TCP_RST, TCP_ACK | TCP_PSH]),
                  st.sampled_from([(40000, 80), (40001, 80)]))


@settings(max_examples=60, deadline=None)
@given(st.lists(event, max_size=40), st.booleans())
def test_conservation_and_determinism_property(events, handshake):
    s = Seg()
    for t, is_udp, fwd, flags, ports in sorted(events, key=lambda e: e[0]):
        if is_udp:
            s.udp(t, fwd, ports)
        else:
            s.tcp(t, fwd, flags, ports=ports)
    cfg = FlowConfig(require_handshake=handshake)
    fa = assemble_flows(s.pkts, cfg)
    assert sum(len(f.packet_refs) for f in fa.flows) + fa.orphan_count + fa.skipped_count == len(s.pkts)
    for f in fa.flows:
        assert all(FlowKey.of(s.pkts[i]) == f.key for i in f.packet_refs)
        assert f.first_ns <= f.last_ns
    assert assemble_flows(s.pkts, cfg) == fa
