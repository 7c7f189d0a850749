"""Traffic generation from a fitted sequence model.

Both walks follow the same loop: sample a source flow for the current
cluster, advance the clock by a sampled transition time, emit the flow's
packets at the new time, then predict the next cluster.  The global walk runs
until the clock passes the end of the training capture; the IP-pair walk runs
one sequence per generated address pair until the END sentinel is drawn.
"""

from __future__ import annotations

import csv
import io
import ipaddress
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ClusterModel
from .errors import GenerationConfigError, RunawaySequenceError
from .features import FlowMeta
from .flows import NS, FlowConfig, FlowKey
from .packets import RawPacket, rewrite_packet
from .sequences import END, GLOBAL, IP_PAIR, START, TransitionTimeHistogram

MAX_RESAMPLES = 10
DEFAULT_MAX_SEQUENCE_LEN = 100_000
EPHEMERAL_LO = 49152

_NET10 = int(ipaddress.IPv4Address("10.0.0.0"))
_NETFD = int(ipaddress.IPv6Address("fd00::"))


@dataclass
class GenerationPlan:
    aggregation: str
    model: object | None  # MarkovModel, NeuralLM, or None for the random baseline
    cluster_model: ClusterModel | None
    flows: dict[int, FlowMeta]
    labels: dict[int, int]  # flow_id -> cluster id
    packets: Sequence[RawPacket]  # original capture, indexed by capture_index
    histogram: TransitionTimeHistogram | None
    t_start_ns: int
    t_end_ns: int
    seed: int = 0
    max_sequence_len: int = DEFAULT_MAX_SEQUENCE_LEN
    flow_config: FlowConfig = field(default_factory=FlowConfig)
    avoid_key_collisions: bool = True

    def __post_init__(self):
        self.cluster_flows: dict[int, list[int]] = {}
        for fid in sorted(self.labels):
            self.cluster_flows.setdefault(int(self.labels[fid]), []).append(fid)

    @property
    def pair_count(self) -> int:
        return len({(f.key.src_addr, f.key.dst_addr) for f in self.flows.values()})


def make_plan(meta: Sequence[FlowMeta], labels: Sequence[int], packets: Sequence[RawPacket],
              model, cluster_model: ClusterModel | None, histogram: TransitionTimeHistogram | None,
              aggregation: str = GLOBAL, seed: int = 0, **kw) -> GenerationPlan:
    """Plan whose time bounds are the first and last packet of the capture."""
    if packets:
        t0 = min(p.ts_ns for p in packets)
        t1 = max(p.ts_ns for p in packets)
    else:
        t0 = t1 = 0
    return GenerationPlan(
        aggregation=aggregation, model=model, cluster_model=cluster_model,
        flows={m.flow_id: m for m in meta},
        labels={m.flow_id: int(c) for m, c in zip(meta, labels)},
        packets=packets, histogram=histogram, t_start_ns=t0, t_end_ns=t1, seed=seed, **kw)


@dataclass(frozen=True)
class ProvenanceRecord:
    gen_flow_id: int
    sequence_index: int
    source_flow_id: int
    cluster: int
    scheduled_ns: int
    key: FlowKey
    packet_count: int


@dataclass
class GeneratedTrace:
    packets: list[RawPacket]
    provenance: list[ProvenanceRecord]
    packet_owner: list[int]  # provenance index of every emitted packet

    @property
    def clusters(self) -> list[int]:
        return [r.cluster for r in self.provenance]

    def sequences(self) -> list[list[int]]:
        """Generated cluster sequences, one per sequence index, in schedule order."""
        out: dict[int, list[ProvenanceRecord]] = {}
        for r in self.provenance:
            out.setdefault(r.sequence_index, []).append(r)
        return [[r.cluster for r in sorted(rs, key=lambda r: (r.scheduled_ns, r.gen_flow_id))]
                for _, rs in sorted(out.items())]

    def provenance_csv(self) -> str:
        members: dict[int, list[int]] = {}
        for i, owner in enumerate(self.packet_owner):
            members.setdefault(owner, []).append(i)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gen_flow_id", "sequence_index", "source_flow_id", "cluster", "scheduled_ns",
                    "src_addr", "dst_addr", "src_port", "dst_port", "transport",
                    "packet_count", "packet_indices"])
        for r in self.provenance:
            k = r.key
            w.writerow([r.gen_flow_id, r.sequence_index, r.source_flow_id, r.cluster,
                        r.scheduled_ns, k.src_addr, k.dst_addr, k.src_port, k.dst_port,
                        k.transport, r.packet_count,
                        " ".join(map(str, members.get(r.gen_flow_id, [])))])
        return buf.getvalue()


def rebase_flow(packets: Sequence[RawPacket], new_start_ns: int,
                new_key: FlowKey | None = None) -> list[RawPacket]:
    """Shift a flow so its first packet lands at ``new_start_ns``.

    Intra-flow gaps are kept exactly.  With ``new_key`` the addresses (and
    ports, when they differ) are rewritten and checksums recomputed.
    """
    if not packets:
        return []
    shift = new_start_ns - packets[0].ts_ns
    out = []
    for p in packets:
        if new_key is None:
            out.append(rewrite_packet(p, ts_ns=p.ts_ns + shift))
            continue
        old = FlowKey.of(p)
        out.append(rewrite_packet(
            p, ts_ns=p.ts_ns + shift,
            src_addr=new_key.src_addr if old is None or new_key.src_addr != old.src_addr else None,
            dst_addr=new_key.dst_addr if old is None or new_key.dst_addr != old.dst_addr else None,
            src_port=new_key.src_port if old is not None and new_key.src_port != old.src_port else None,
            dst_port=new_key.dst_port if old is not None and new_key.dst_port != old.dst_port else None,
        ))
    return out


class AddressAllocator:
    """Sequential private-range pairs (10.0.0.0/8, fd00::/8) starting at a seed offset."""

    def __init__(self, seed: int, avoid: set[str] = frozenset()):
        self._next = 1 + (int(seed) * 2654435761) % ((1 << 24) - 2)
        self._used: set[int] = set()
        self._avoid = set(avoid)

    def _host(self) -> int:
        while True:
            h = self._next
            self._next = self._next + 1 if self._next < (1 << 24) - 2 else 1
            v4 = str(ipaddress.IPv4Address(_NET10 + h))
            if h in self._used or h & 0xFF in (0, 255) or v4 in self._avoid:
                continue
            self._used.add(h)
            return h

    def pair(self) -> tuple[tuple[str, str], tuple[str, str]]:
        """((v4 src, v4 dst), (v6 src, v6 dst)) for one generated sequence."""
        a, b = self._host(), self._host()
        return ((str(ipaddress.IPv4Address(_NET10 + a)), str(ipaddress.IPv4Address(_NET10 + b))),
                (str(ipaddress.IPv6Address(_NETFD + a)), str(ipaddress.IPv6Address(_NETFD + b))))


class _Builder:
    def __init__(self, plan: GenerationPlan):
        self.plan = plan
        self.records: list[ProvenanceRecord] = []
        self.chunks: list[list[RawPacket]] = []
        self._busy: dict[tuple, list[tuple[int, int]]] = {}
        self._next_port: dict[tuple, int] = {}

    def _guard(self, transport: str) -> int:
        cfg = self.plan.flow_config
        secs = cfg.tcp_idle_timeout_s if transport == "TCP" else cfg.udp_idle_timeout_s
        return int(round(secs * NS))

    @staticmethod
    def _slot(key: FlowKey) -> tuple:
        if key.transport == "TCP":
            a, b = (key.src_addr, key.src_port), (key.dst_addr, key.dst_port)
            return ("TCP",) + ((a, b) if a <= b else (b, a))
        return (key.transport, key.src_addr, key.src_port, key.dst_addr, key.dst_port)

    def _clashes(self, key: FlowKey, lo: int, hi: int) -> bool:
        guard = self._guard(key.transport)
        return any(lo <= b + guard and a <= hi + guard for a, b in self._busy.get(self._slot(key), ()))

    def _free_key(self, key: FlowKey, lo: int, hi: int) -> FlowKey:
        if not self.plan.avoid_key_collisions or not self._clashes(key, lo, hi):
            return key
        # move the ephemeral (higher) port to a fresh one
        client_is_src = key.src_port >= key.dst_port
        base = (key.transport, key.src_addr, key.dst_addr) if client_is_src else \
            (key.transport, key.dst_addr, key.src_addr)
        port = self._next_port.get(base, EPHEMERAL_LO)
        for _ in range(65536 - EPHEMERAL_LO):
            cand = FlowKey(key.src_addr, key.dst_addr, port, key.dst_port, key.transport) \
                if client_is_src else FlowKey(key.src_addr, key.dst_addr, key.src_port, port,
                                              key.transport)
            port = port + 1 if port < 65535 else EPHEMERAL_LO
            if not self._clashes(cand, lo, hi):
                self._next_port[base] = port
                return cand
        raise GenerationConfigError(f"no free ephemeral port for {key}")

    def add(self, flow_id: int, cluster: int, t_ns: int, seq_index: int,
            pair: tuple[tuple[str, str], tuple[str, str]] | None = None) -> None:
        meta = self.plan.flows[flow_id]
        src = [self.plan.packets[i] for i in meta.packet_refs]
        key = meta.key
        if pair is not None:
            v6 = ":" in key.src_addr
            s, d = pair[1] if v6 else pair[0]
            key = FlowKey(s, d, key.src_port, key.dst_port, key.transport)
        lo, hi = t_ns, t_ns + (meta.last_ns - meta.first_ns)
        key = self._free_key(key, lo, hi)
        self._busy.setdefault(self._slot(key), []).append((lo, hi))
        pkts = rebase_flow(src, t_ns, key if key != meta.key else None)
        self.records.append(ProvenanceRecord(len(self.records), seq_index, flow_id, cluster,
                                             t_ns, key, len(pkts)))
        self.chunks.append(pkts)

    def finish(self) -> GeneratedTrace:
        tagged = [(p.ts_ns, r, j, p) for r, chunk in enumerate(self.chunks)
                  for j, p in enumerate(chunk)]
        tagged.sort(key=lambda x: (x[0], x[1], x[2]))
        packets = []
        owners = []
        for i, (_ts, r, _j, p) in enumerate(tagged):
            packets.append(RawPacket(i, p.ts_ns, p.link_len, p.data, p.linktype, p.decoded,
                                     p.payload))
            owners.append(r)
        return GeneratedTrace(packets, self.records, owners)


def _sample_delta_ns(plan: GenerationPlan, rng: np.random.Generator) -> int:
    return int(round(plan.histogram.sample(rng) * NS))


def _nearest_populated(plan: GenerationPlan, token: int) -> int:
    populated = sorted(plan.cluster_flows)
    cm = plan.cluster_model
    if cm is not None and 0 <= token < cm.K:
        d = np.sum((cm.centroids[populated] - cm.centroids[token]) ** 2, axis=1)
        return populated[int(np.argmin(d))]
    return max(populated, key=lambda c: (len(plan.cluster_flows[c]), -c))


def _draw(plan: GenerationPlan, probs: np.ndarray, rng: np.random.Generator,
          allow_end: bool) -> int:
    """Sample a token; tokens without flows are redrawn, then mapped to the nearest populated cluster."""
    vocab = plan.model.vocab
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum()
    tok = START
    for _ in range(1 + MAX_RESAMPLES):
        tok = int(vocab[int(rng.choice(len(p), p=p))])
        if tok == END and allow_end:
            return tok
        if tok in plan.cluster_flows:
            return tok
    return _nearest_populated(plan, tok)


def _sample_flow(plan: GenerationPlan, cluster: int, rng: np.random.Generator) -> int:
    pool = plan.cluster_flows[cluster]
    return pool[int(rng.integers(len(pool)))]


def _check(plan: GenerationPlan) -> None:
    if plan.histogram is None or plan.histogram.total == 0:
        raise GenerationConfigError("transition-time histogram is empty")
    if not plan.cluster_flows:
        raise GenerationConfigError("no labeled flows to sample from")


def generate_global(plan: GenerationPlan) -> GeneratedTrace:
    builder = _Builder(plan)
    if plan.t_end_ns <= plan.t_start_ns:
        return builder.finish()
    _check(plan)
    model = plan.model
    rng = np.random.default_rng(plan.seed)
    c = _draw(plan, model.start_prob, rng, allow_end=False)
    t = plan.t_start_ns
    context: list[int] = []
    n = 0
    while t < plan.t_end_ns:
        if n >= plan.max_sequence_len:
            raise RunawaySequenceError(
                f"global walk exceeded {plan.max_sequence_len} flows before the end time "
                f"(seed {plan.seed})", plan.seed, 0)
        f = _sample_flow(plan, c, rng)
        t += _sample_delta_ns(plan, rng)
        context = (context + [c])[-3:]
        nxt = _draw(plan, model.predict_next(context), rng, allow_end=False)
        builder.add(f, c, t, 0)
        c = nxt
        n += 1
    return builder.finish()


def generate_ip_based(plan: GenerationPlan, pair_count: int | None = None) -> GeneratedTrace:
    builder = _Builder(plan)
    model = plan.model
    if END not in model.vocab or START not in model.vocab:
        raise GenerationConfigError("IP-pair generation needs a model trained with START/END")
    if pair_count is None:
        pair_count = plan.pair_count
    if pair_count == 0:
        return builder.finish()
    _check(plan)
    rng = np.random.default_rng(plan.seed)
    training_addrs = {a for f in plan.flows.values() for a in (f.key.src_addr, f.key.dst_addr)}
    alloc = AddressAllocator(plan.seed, training_addrs)
    for s in range(pair_count):
        context = [START]
        c = _draw(plan, model.predict_next(context), rng, allow_end=True)
        pair = alloc.pair()
        t = plan.t_start_ns
        n = 0
        while c != END:
            if n >= plan.max_sequence_len:
                raise RunawaySequenceError(
                    f"sequence {s} did not reach END within {plan.max_sequence_len} flows "
                    f"(seed {plan.seed})", plan.seed, s)
            f = _sample_flow(plan, c, rng)
            t += _sample_delta_ns(plan, rng)
            builder.add(f, c, t, s, pair)
            context = (context + [c])[-3:]
            c = _draw(plan, model.predict_next(context), rng, allow_end=True)
            n += 1
    return builder.finish()


def random_baseline(plan: GenerationPlan, flow_count: int | None = None) -> GeneratedTrace:
    """Flows drawn uniformly from all training flows, spaced by sampled transition times."""
    builder = _Builder(plan)
    if flow_count is None:
        flow_count = len(plan.flows)
    if flow_count == 0:
        return builder.finish()
    _check(plan)
    rng = np.random.default_rng(plan.seed)
    ids = sorted(plan.labels)
    t = plan.t_start_ns
    for _ in range(flow_count):
        f = ids[int(rng.integers(len(ids)))]
        t += _sample_delta_ns(plan, rng)
        builder.add(f, plan.labels[f], t, 0)
    return builder.finish()


def generate(plan: GenerationPlan, pair_count: int | None = None,
             flow_count: int | None = None) -> GeneratedTrace:
    if plan.model is None:
        return random_baseline(plan, flow_count)
    if plan.aggregation == IP_PAIR:
        return generate_ip_based(plan, pair_count)
    return generate_global(plan)
