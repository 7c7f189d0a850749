"""Directional flow assembly over a decoded packet stream.

TCP: a session opens with a three-way handshake and ends on RST, on FIN from
both peers (trailing pure ACKs still attach), on an idle timeout measured
from the last packet in either direction, or at capture end.  Each
established session yields one flow per direction.

UDP: every direction is its own session; a flow collects the packets of one
(src, sport, dst, dport) until an idle gap or a maximum duration is exceeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .packets import RawPacket

NS = 1_000_000_000


class CloseReason(str, Enum):
    FIN = "FIN"
    RST = "RST"
    TIMEOUT = "TIMEOUT"
    IDLE = "IDLE"
    MAX_DURATION = "MAX_DURATION"
    CAPTURE_END = "CAPTURE_END"


@dataclass(frozen=True)
class FlowConfig:
    tcp_idle_timeout_s: float = 300.0
    udp_idle_timeout_s: float = 60.0
    udp_max_duration_s: float = 300.0
    require_handshake: bool = True


@dataclass(frozen=True, order=True)
class FlowKey:
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    transport: str  # "TCP" or "UDP"

    def reversed(self) -> FlowKey:
        return FlowKey(self.dst_addr, self.src_addr, self.dst_port, self.src_port, self.transport)

    @classmethod
    def of(cls, pkt: RawPacket) -> FlowKey | None:
        d = pkt.decoded
        t = d.tcp or d.udp
        if d.ip is None or t is None:
            return None
        return cls(d.ip.src_addr, d.ip.dst_addr, t.src_port, t.dst_port, d.transport)


@dataclass(frozen=True)
class Flow:
    flow_id: int
    key: FlowKey
    packet_refs: tuple[int, ...]
    first_ns: int
    last_ns: int
    close_reason: CloseReason

    @property
    def first_time(self) -> float:
        return self.first_ns / NS

    @property
    def last_time(self) -> float:
        return self.last_ns / NS

    @property
    def duration(self) -> float:
        return (self.last_ns - self.first_ns) / NS


@dataclass
class FlowAssembly:
    flows: list[Flow]
    packet_count: int = 0
    orphan_count: int = 0
    skipped_count: int = 0

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)


@dataclass
class _Session:
    client: FlowKey
    first_ns: int
    last_ns: int
    established: bool
    state: str
    packets: dict[FlowKey, list[RawPacket]] = field(default_factory=dict)
    fin_from: set[FlowKey] = field(default_factory=set)

    def add(self, key: FlowKey, pkt: RawPacket) -> None:
        self.packets.setdefault(key, []).append(pkt)
        self.last_ns = pkt.ts_ns


@dataclass
class _UdpFlow:
    key: FlowKey
    packets: list[RawPacket]
    first_ns: int
    last_ns: int


def _canonical(key: FlowKey) -> tuple:
    a = (key.src_addr, key.src_port)
    b = (key.dst_addr, key.dst_port)
    return (a, b) if a <= b else (b, a)


def assemble_flows(packets: Iterable[RawPacket], config: FlowConfig | None = None) -> FlowAssembly:
    config = config or FlowConfig()
    ordered = sorted(packets, key=lambda p: (p.ts_ns, p.capture_index))
    tcp_idle = int(round(config.tcp_idle_timeout_s * NS))
    udp_idle = int(round(config.udp_idle_timeout_s * NS))
    udp_max = int(round(config.udp_max_duration_s * NS))

    done: list[tuple[FlowKey, list[RawPacket], CloseReason]] = []
    sessions: dict[tuple, _Session] = {}
    udp_open: dict[FlowKey, _UdpFlow] = {}
    orphans = 0
    skipped = 0

    def close_session(canon: tuple, reason: CloseReason) -> None:
        nonlocal orphans
        s = sessions.pop(canon)
        if not s.established:
            orphans += sum(len(v) for v in s.packets.values())
            return
        for key, pkts in s.packets.items():
            done.append((key, pkts, CloseReason.FIN if key in s.fin_from else reason))

    for pkt in ordered:
        key = FlowKey.of(pkt)
        if key is None:
            skipped += 1
            continue
        if key.transport == "UDP":
            open_flow = udp_open.get(key)
            if open_flow is not None:
                reason = None
                if pkt.ts_ns - open_flow.last_ns > udp_idle:
                    reason = CloseReason.IDLE
                elif pkt.ts_ns - open_flow.first_ns > udp_max:
                    reason = CloseReason.MAX_DURATION
                if reason is not None:
                    done.append((key, open_flow.packets, reason))
                    open_flow = None
            if open_flow is None:
                udp_open[key] = _UdpFlow(key, [pkt], pkt.ts_ns, pkt.ts_ns)
            else:
                open_flow.packets.append(pkt)
                open_flow.last_ns = pkt.ts_ns
            continue

        tcp = pkt.decoded.tcp
        syn_only = tcp.syn and not tcp.ack
        canon = _canonical(key)
        s = sessions.get(canon)
        if s is not None and pkt.ts_ns - s.last_ns > tcp_idle:
            close_session(canon, CloseReason.TIMEOUT)
            s = None
        if s is not None and syn_only and s.fin_from:
            # new connection reusing the 4-tuple
            close_session(canon, CloseReason.FIN)
            s = None
        if s is None:
            if config.require_handshake:
                if not syn_only:
                    orphans += 1
                    continue
                s = _Session(key, pkt.ts_ns, pkt.ts_ns, established=False, state="SYN_SENT")
            else:
                s = _Session(key, pkt.ts_ns, pkt.ts_ns, established=True, state="ESTABLISHED")
            sessions[canon] = s
        s.add(key, pkt)
        if s.state == "SYN_SENT" and key != s.client and tcp.syn and tcp.ack:
            s.state = "SYN_RCVD"
        elif s.state == "SYN_RCVD" and key == s.client and tcp.ack and not tcp.syn:
            s.state = "ESTABLISHED"
            s.established = True
        if tcp.fin:
            s.fin_from.add(key)
        if tcp.rst:
            close_session(canon, CloseReason.RST)

    for canon in list(sessions):
        close_session(canon, CloseReason.CAPTURE_END)
    for key, open_flow in udp_open.items():
        done.append((key, open_flow.packets, CloseReason.CAPTURE_END))

    done.sort(key=lambda item: (item[1][0].ts_ns, item[1][0].capture_index))
    flows = [
        Flow(
            flow_id=i,
            key=key,
            packet_refs=tuple(p.capture_index for p in pkts),
            first_ns=pkts[0].ts_ns,
            last_ns=pkts[-1].ts_ns,
            close_reason=reason,
        )
        for i, (key, pkts, reason) in enumerate(done)
    ]
    return FlowAssembly(flows, packet_count=len(ordered), orphan_count=orphans,
                        skipped_count=skipped)


@dataclass(frozen=True)
class PairStats:
    flow_count: int
    mean_interval_s: float | None


def network_statistics(flows: Sequence[Flow]) -> dict[tuple[str, str], PairStats]:
    """Flow count and mean inter-flow interval for every (src, dst) address pair."""
    starts: dict[tuple[str, str], list[int]] = {}
    for f in sorted(flows, key=lambda f: (f.first_ns, f.flow_id)):
        starts.setdefault((f.key.src_addr, f.key.dst_addr), []).append(f.first_ns)
    out = {}
    for pair, ts in starts.items():
        mean = None
        if len(ts) >= 2:
            gaps = [(b - a) / NS for a, b in zip(ts, ts[1:])]
            mean = sum(gaps) / len(gaps)
        out[pair] = PairStats(len(ts), mean)
    return out
