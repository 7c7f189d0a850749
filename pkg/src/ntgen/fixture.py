"""Deterministic synthetic capture with planted activity archetypes.

Every client/server pair runs a chain of activities.  Archetype ``i`` is
followed by archetype ``(i + 1) % m`` with probability ``follow_prob`` and by
any other archetype uniformly otherwise.  Each activity is one bidirectional
session, so it yields two directional flows that share the archetype label.
The generator records that ground truth next to the capture.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import craft
from .packets import PROTO_TCP, PROTO_UDP, TCP_ACK, TCP_FIN, TCP_PSH, TCP_SYN, RawPacket, write_capture

ARCHETYPES = ("dns", "http", "bulk")
BASE_EPOCH_S = 1_700_000_000
SERVICE_PORT = {"dns": 53, "http": 80, "bulk": 445}

_HOSTS = ("example.org", "static.example.net", "updates.example.com", "mail.example.org",
          "cdn.example.net", "api.example.com")
_PATHS = ("/", "/index.html", "/img/logo.png", "/api/v1/items", "/css/site.css")
_AGENTS = ("Mozilla/5.0 (X11; Linux x86_64)", "curl/8.4.0", "Mozilla/5.0 (Windows NT 10.0)")


@dataclass(frozen=True)
class FixtureSpec:
    archetypes: tuple[str, ...] = ARCHETYPES
    pair_count: int = 20
    duration_s: float = 600.0
    seed: int = 0
    follow_prob: float = 0.9
    mean_gap_s: float = 20.0

    def transition_matrix(self) -> np.ndarray:
        m = len(self.archetypes)
        if m == 1:
            return np.ones((1, 1))
        P = np.full((m, m), (1.0 - self.follow_prob) / (m - 1))
        for i in range(m):
            P[i, (i + 1) % m] = self.follow_prob
        return P


@dataclass
class PlantedFlow:
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    transport: str
    first_ns: int
    archetype: int
    activity: int

    @property
    def key(self) -> tuple:
        return (self.src_addr, self.dst_addr, self.src_port, self.dst_port, self.transport)


@dataclass
class FixtureTruth:
    spec: FixtureSpec
    flows: list[PlantedFlow]
    pair_sequences: list[list[int]]  # archetype ids per client/server pair, in order
    packet_count: int
    digest: str = ""

    def label_of(self) -> dict[tuple, int]:
        """(flow key, first_ns) -> archetype id."""
        return {(f.key, f.first_ns): f.archetype for f in self.flows}

    def to_json(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "flows": [asdict(f) for f in self.flows],
            "pair_sequences": self.pair_sequences,
            "packet_count": self.packet_count,
            "digest": self.digest,
        }

    @classmethod
    def from_json(cls, d: dict) -> FixtureTruth:
        spec = d["spec"]
        spec = FixtureSpec(**{**spec, "archetypes": tuple(spec["archetypes"])})
        return cls(spec, [PlantedFlow(**f) for f in d["flows"]], d["pair_sequences"],
                   d["packet_count"], d.get("digest", ""))


class _Emitter:
    def __init__(self):
        self.frames: list[tuple[int, int, bytes]] = []  # (ts_us, order, bytes)

    def add(self, ts_us: int, data: bytes) -> None:
        self.frames.append((ts_us, len(self.frames), data))


class _Tcp:
    """Client/server TCP session writer with consistent sequence numbers."""

    def __init__(self, em: _Emitter, rng: np.random.Generator, client: str, server: str,
                 cport: int, sport: int, ttl: tuple[int, int]):
        self.em, self.rng = em, rng
        self.c, self.s, self.cp, self.sp = client, server, cport, sport
        self.seq = {True: int(rng.integers(1, 2**31)), False: int(rng.integers(1, 2**31))}
        self.ttl = ttl

    def send(self, t_us: int, from_client: bool, flags: int, payload: bytes = b"",
             options: bytes = b"") -> None:
        src, dst = (self.c, self.s) if from_client else (self.s, self.c)
        sp, dp = (self.cp, self.sp) if from_client else (self.sp, self.cp)
        ack = self.seq[not from_client] if flags & TCP_ACK else 0
        window = 64240 if from_client else 65160
        seg = craft.tcp_segment(src, dst, sp, dp, self.seq[from_client], ack, flags, payload,
                                window, options)
        ttl = self.ttl[0] if from_client else self.ttl[1]
        self.em.add(t_us, craft.frame(seg, src, dst, PROTO_TCP, ttl, from_client))
        self.seq[from_client] += len(payload) + (1 if flags & (TCP_SYN | TCP_FIN) else 0)


def _tcp_session(em: _Emitter, rng, client, server, cport, sport, t_us, rtt_us, ttl,
                 exchange: list[tuple[bool, bytes]]) -> int:
    s = _Tcp(em, rng, client, server, cport, sport, ttl)
    mss = b"\x02\x04\x05\xb4"

    def step():
        return max(1, int(rtt_us / 2 + rng.integers(0, max(2, rtt_us // 4))))
    s.send(t_us, True, TCP_SYN, options=mss)
    t_us += step()
    s.send(t_us, False, TCP_SYN | TCP_ACK, options=mss)
    t_us += step()
    s.send(t_us, True, TCP_ACK)
    for from_client, payload in exchange:
        t_us += step()
        s.send(t_us, from_client, TCP_ACK | TCP_PSH, payload)
    t_us += step()
    s.send(t_us, True, TCP_FIN | TCP_ACK)
    t_us += step()
    s.send(t_us, False, TCP_FIN | TCP_ACK)
    t_us += step()
    s.send(t_us, True, TCP_ACK)
    return t_us


def _dns_activity(em, rng, client, server, cport, t_us, rtt_us, ttl) -> int:
    name = _HOSTS[int(rng.integers(len(_HOSTS)))]
    qid = int(rng.integers(0, 65536))
    q = craft.dns_query(qid, name)
    em.add(t_us, craft.frame(craft.udp_datagram(client, server, cport, 53, q),
                             client, server, PROTO_UDP, ttl[0], True))
    t_us += rtt_us + int(rng.integers(0, 500))
    n_addr = int(rng.integers(1, 4))
    addrs = [f"93.184.{int(rng.integers(0, 256))}.{int(rng.integers(1, 255))}" for _ in range(n_addr)]
    cname = f"edge{int(rng.integers(1, 9))}.cdn.example.net" if rng.random() < 0.3 else None
    r = craft.dns_response(qid, name, addrs, cname)
    em.add(t_us, craft.frame(craft.udp_datagram(server, client, 53, cport, r),
                             server, client, PROTO_UDP, ttl[1], False))
    return t_us


def _http_activity(em, rng, client, server, cport, t_us, rtt_us, ttl) -> int:
    method = "POST" if rng.random() < 0.1 else "GET"
    body = bytes(rng.integers(97, 123, size=int(rng.integers(20, 200)), dtype=np.uint8)) \
        if method == "POST" else b""
    req = craft.http_request(method, _HOSTS[int(rng.integers(len(_HOSTS)))],
                             _PATHS[int(rng.integers(len(_PATHS)))],
                             _AGENTS[int(rng.integers(len(_AGENTS)))],
                             f"sid={int(rng.integers(1, 10**6))}" if rng.random() < 0.5 else None,
                             body)
    status = 404 if rng.random() < 0.1 else 200
    ctype = "text/html" if rng.random() < 0.6 else "image/png"
    size = int(rng.integers(300, 3000))
    resp = craft.http_response(status, ctype, bytes(rng.integers(0, 256, size=size, dtype=np.uint8)))
    exchange = [(True, req)]
    for lo in range(0, len(resp), 1400):
        exchange.append((False, resp[lo:lo + 1400]))
    exchange.append((True, b""))
    return _tcp_session(em, rng, client, server, cport, 80, t_us, rtt_us, ttl, exchange)


def _bulk_activity(em, rng, client, server, cport, t_us, rtt_us, ttl) -> int:
    exchange = []
    for _ in range(int(rng.integers(20, 41))):
        exchange.append((True, bytes(int(rng.integers(1000, 1461)))))
        exchange.append((False, bytes(int(rng.integers(1000, 1461)))))
    return _tcp_session(em, rng, client, server, cport, 445, t_us, rtt_us, ttl, exchange)


_BUILDERS = {"dns": _dns_activity, "http": _http_activity, "bulk": _bulk_activity}


def build_fixture(spec: FixtureSpec = FixtureSpec()) -> tuple[list[RawPacket], FixtureTruth]:
    for a in spec.archetypes:
        if a not in _BUILDERS:
            raise ValueError(f"unknown archetype {a!r}; choose from {sorted(_BUILDERS)}")
    rng = np.random.default_rng(spec.seed)
    P = spec.transition_matrix()
    m = len(spec.archetypes)
    em = _Emitter()
    planted: list[PlantedFlow] = []
    pair_sequences = []
    activity = 0
    base_us = BASE_EPOCH_S * 1_000_000
    end_us = base_us + int(spec.duration_s * 1e6)
    for p in range(spec.pair_count):
        client = f"192.168.{1 + p // 200}.{10 + p % 200}"
        server = f"172.16.{p // 250}.{1 + p % 250}"
        rtt = int(rng.integers(1000, 20000))
        ttl = (64, int(rng.choice([52, 56, 60, 116, 120])))
        cport = 40000 + int(rng.integers(0, 1000))
        t = base_us + int(rng.integers(0, int(spec.mean_gap_s * 1e6)))
        state = int(rng.integers(m))
        seq = []
        while t < end_us - 10_000_000:
            kind = spec.archetypes[state]
            start = len(em.frames)
            t_done = _BUILDERS[kind](em, rng, client, server, cport, t, rtt, ttl)
            first_client = em.frames[start][0]
            first_server = next(ts for ts, _o, data in em.frames[start:] if data[6:12] == craft.SERVER_MAC)
            transport = "UDP" if kind == "dns" else "TCP"
            sp = SERVICE_PORT[kind]
            planted.append(PlantedFlow(client, server, cport, sp, transport, first_client * 1000,
                                       state, activity))
            planted.append(PlantedFlow(server, client, sp, cport, transport, first_server * 1000,
                                       state, activity))
            seq.append(state)
            activity += 1
            cport = 40000 + (cport - 40000 + 1 + int(rng.integers(0, 7))) % 9000
            nxt = int(rng.choice(m, p=P[state]))
            if spec.archetypes[state] == "dns" and m > 1 and spec.archetypes[nxt] == "http":
                gap = int(rng.integers(20_000, 100_000))  # page fetch right after the lookup
            else:
                gap = int(rng.exponential(spec.mean_gap_s * 1e6)) + 1000
            t = t_done + gap
            state = nxt
        pair_sequences.append(seq)
    em.frames.sort(key=lambda f: (f[0], f[1]))
    packets = [craft.packet(i, ts * 1000, data) for i, (ts, _o, data) in enumerate(em.frames)]
    planted.sort(key=lambda f: (f.first_ns, f.src_addr, f.src_port))
    return packets, FixtureTruth(spec, planted, pair_sequences, len(packets))


def make_fixture_corpus(spec: FixtureSpec, path: str | Path) -> FixtureTruth:
    """Write the fixture capture to ``path`` and its ground truth to ``path + '.truth.json'``."""
    path = Path(path)
    packets, truth = build_fixture(spec)
    write_capture(path, packets)
    truth.digest = hashlib.sha256(path.read_bytes()).hexdigest()
    Path(str(path) + ".truth.json").write_text(json.dumps(truth.to_json(), indent=1, sort_keys=True))
    return truth
