"""Per-flow feature engineering.

Every per-packet attribute is summarised by twelve statistics; flow-level
and DNS/HTTP application-level features are appended.  The catalog is fixed
and versioned, and its hash travels with every table derived from it.

Catalog composition (205 entries)::

    15 packet attributes x 12 statistics   180
     9 flow-level features                   9
     8 DNS features                          8
     8 HTTP features                         8
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConsistencyError, InputError, StageMismatchError
from .flows import NS, Flow, FlowKey
from .packets import RawPacket

CATALOG_VERSION = "ntg-catalog/1"

STATISTICS = ("min", "q1", "median", "q3", "max", "mean", "std", "var",
              "entropy", "sum", "first", "last")

RAW_ATTRIBUTES = (
    "packet_size",
    "inter_arrival",
    "ttl",
    "tcp_seq",
    "tcp_ack",
    "tcp_window",
    "tcp_flag_syn",
    "tcp_flag_ack",
    "tcp_flag_fin",
    "tcp_flag_rst",
    "tcp_flag_psh",
    "tcp_flag_urg",
    "tcp_options",
    "udp_checksum_invalid",
    "day_time",
)

FLOW_FEATURES = (
    ("packet_count", "NUMERIC"),
    ("duration", "NUMERIC"),
    ("byte_count", "NUMERIC"),
    ("flow_day_time", "NUMERIC"),
    ("flow_week_day", "NUMERIC"),
    ("transport", "NOMINAL"),
    ("payload_bytes", "NUMERIC"),
    ("payload_packets", "NUMERIC"),
    ("service_port", "NUMERIC"),
)

DNS_FEATURES = (
    ("dns_query_count", "NUMERIC"),
    ("dns_response_count", "NUMERIC"),
    ("dns_additional_count", "NUMERIC"),
    ("dns_cname_count", "NUMERIC"),
    ("dns_distinct_queries", "NUMERIC"),
    ("dns_mean_query_len", "NUMERIC"),
    ("dns_response_ratio", "NUMERIC"),
    ("dns_nxdomain", "NUMERIC"),
)

HTTP_FEATURES = (
    ("http_request_count", "NUMERIC"),
    ("http_method", "NOMINAL"),
    ("http_status_class", "NOMINAL"),
    ("http_cookie", "NOMINAL"),
    ("http_content_types", "NUMERIC"),
    ("http_ua_bucket", "NOMINAL"),
    ("http_bytes", "NUMERIC"),
    ("http_mean_headers", "NUMERIC"),
)

ENTROPY_BINS = 16
UA_BUCKETS = 16
NONE = "NONE"

_DAY_NS = 86_400 * NS


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    level: str  # RAW, FLOW or APP
    kind: str  # NUMERIC or NOMINAL
    source: str
    statistic: str | None = None


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple[FeatureSpec, ...]
    version: str = CATALOG_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def hash(self) -> str:
        blob = json.dumps(
            [self.version, [[e.name, e.level, e.kind, e.source, e.statistic] for e in self.entries]],
            separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def index(self, name: str) -> int:
        return self.names.index(name)


def build_catalog() -> FeatureCatalog:
    entries = [
        FeatureSpec(f"{attr}_{stat}", "RAW", "NUMERIC", attr, stat)
        for attr in RAW_ATTRIBUTES
        for stat in STATISTICS
    ]
    entries += [FeatureSpec(n, "FLOW", k, n) for n, k in FLOW_FEATURES]
    entries += [FeatureSpec(n, "APP", k, "dns") for n, k in DNS_FEATURES]
    entries += [FeatureSpec(n, "APP", k, "http") for n, k in HTTP_FEATURES]
    return FeatureCatalog(tuple(entries))


CATALOG = build_catalog()


def histogram_entropy(values: np.ndarray, bins: int = ENTROPY_BINS) -> float:
    """Entropy in bits of ``values`` over equal-width bins spanning their range."""
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum()) + 0.0


def aggregate(values: np.ndarray) -> list[float]:
    """The twelve statistics of a non-empty 1-d sample, in STATISTICS order."""
    values = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    std = float(values.std())
    return [
        float(values.min()), float(q1), float(med), float(q3), float(values.max()),
        float(values.mean()), std, std * std, histogram_entropy(values),
        float(values.sum()), float(values[0]), float(values[-1]),
    ]


def _packet_attributes(p: RawPacket) -> tuple[float, ...]:
    d = p.decoded
    ttl = d.ip.ttl if d.ip is not None else 0
    day_time = (p.ts_ns % _DAY_NS) / NS
    tcp = d.tcp
    if tcp is not None:
        tcp_part = (tcp.seq_num, tcp.ack_num, tcp.window_size,
                    tcp.syn, tcp.ack, tcp.fin, tcp.rst, tcp.psh, tcp.urg, tcp.options_count)
    else:
        tcp_part = (0,) * 10
    udp_bad = 1 if d.udp is not None and not d.udp.checksum_valid else 0
    return (p.link_len, ttl, *tcp_part, udp_bad, day_time)


def extract_features(flow: Flow, packets: Mapping[int, RawPacket] | Sequence[RawPacket]) -> list:
    """Feature vector for one flow, aligned to :data:`CATALOG`.

    Numeric values are floats, nominal values are strings and ABSENT
    application features are ``None``.
    """
    try:
        pkts = [packets[i] for i in flow.packet_refs]
    except (IndexError, KeyError) as exc:
        raise ConsistencyError(f"flow {flow.flow_id} references missing packet {exc}") from exc
    for i, p in zip(flow.packet_refs, pkts):
        if p.capture_index != i:
            raise ConsistencyError(f"flow {flow.flow_id}: packet store misaligned at {i}")

    attrs = np.array([_packet_attributes(p) for p in pkts], dtype=np.float64)
    times = np.array([p.ts_ns for p in pkts], dtype=np.int64)
    iat = np.diff(times) / NS if len(pkts) > 1 else np.zeros(1)

    # column order of ``attrs`` follows RAW_ATTRIBUTES minus inter_arrival
    columns = [attrs[:, 0], iat] + [attrs[:, j] for j in range(1, attrs.shape[1])]
    values: list = []
    for col in columns:
        values.extend(aggregate(col))

    first_ns = int(times.min())
    payload_lens = [len(p.payload) for p in pkts]
    values += [
        float(len(pkts)),
        (int(times.max()) - first_ns) / NS,
        float(sum(p.link_len for p in pkts)),
        (first_ns % _DAY_NS) / NS,
        float((first_ns // _DAY_NS + 3) % 7),  # 1970-01-01 was a Thursday; Monday = 0
        flow.key.transport,
        float(sum(payload_lens)),
        float(sum(1 for n in payload_lens if n)),
        float(min(flow.key.src_port, flow.key.dst_port)),
    ]
    values += _dns_features(pkts)
    values += _http_features(pkts)
    return values


def _dns_features(pkts: Sequence[RawPacket]) -> list:
    msgs = [p.decoded.dns for p in pkts if p.decoded.dns is not None]
    if not msgs:
        return [None] * len(DNS_FEATURES)
    names = [n for m in msgs for n in m.query_names]
    responses = sum(1 for m in msgs if m.is_response)
    return [
        float(len(msgs) - responses),
        float(sum(m.response_count for m in msgs)),
        float(sum(m.additional_record_count for m in msgs)),
        float(sum(len(m.canonical_names) for m in msgs)),
        float(len(set(names))),
        float(np.mean([len(n) for n in names])) if names else 0.0,
        responses / len(msgs),
        1.0 if any(m.rcode == 3 for m in msgs) else 0.0,
    ]


def _http_features(pkts: Sequence[RawPacket]) -> list:
    msgs = [p.decoded.http for p in pkts if p.decoded.http is not None]
    if not msgs:
        return [None] * len(HTTP_FEATURES)
    requests = [m for m in msgs if m.is_request]
    responses = [m for m in msgs if not m.is_request]
    agents = [m.user_agent for m in msgs if m.user_agent is not None]
    bucket = f"ua{zlib.crc32(agents[0].encode()) % UA_BUCKETS:02d}" if agents else NONE
    return [
        float(len(requests)),
        requests[0].method if requests else NONE,
        f"{responses[0].status // 100}xx" if responses else NONE,
        "yes" if any(m.cookie_present for m in msgs) else "no",
        float(len({m.content_type for m in msgs if m.content_type is not None})),
        bucket,
        float(sum(m.byte_count for m in msgs)),
        float(np.mean([m.header_count for m in msgs])),
    ]


@dataclass(frozen=True)
class FlowMeta:
    flow_id: int
    key: FlowKey
    first_ns: int
    last_ns: int
    close_reason: str
    packet_refs: tuple[int, ...]

    @classmethod
    def of(cls, flow: Flow) -> FlowMeta:
        return cls(flow.flow_id, flow.key, flow.first_ns, flow.last_ns,
                   flow.close_reason.value, flow.packet_refs)

    def to_json(self) -> dict:
        k = self.key
        return {
            "flow_id": self.flow_id, "src_addr": k.src_addr, "dst_addr": k.dst_addr,
            "src_port": k.src_port, "dst_port": k.dst_port, "transport": k.transport,
            "first_ns": self.first_ns, "last_ns": self.last_ns,
            "close_reason": self.close_reason, "packet_refs": list(self.packet_refs),
        }

    @classmethod
    def from_json(cls, d: dict) -> FlowMeta:
        key = FlowKey(d["src_addr"], d["dst_addr"], d["src_port"], d["dst_port"], d["transport"])
        return cls(d["flow_id"], key, d["first_ns"], d["last_ns"], d["close_reason"],
                   tuple(d["packet_refs"]))


@dataclass
class FeatureTable:
    catalog: FeatureCatalog
    rows: list[list]
    meta: list[FlowMeta]
    source_digest: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def catalog_hash(self) -> str:
        return self.catalog.hash

    def column(self, name: str) -> list:
        j = self.catalog.index(name)
        return [r[j] for r in self.rows]

    # -- serialisation -------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.catalog.names)
        for row in self.rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "catalog_version": self.catalog.version,
            "catalog_hash": self.catalog.hash,
            "flow_count": len(self.rows),
            "source_digest": self.source_digest,
            "flows": [m.to_json() for m in self.meta],
        }

    def save(self, csv_path: str | Path, meta_path: str | Path | None = None) -> None:
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else meta_sidecar(csv_path)
        csv_path.write_text(self.to_csv())
        meta_path.write_text(json.dumps(self.metadata(), sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, text: str, metadata: dict, catalog: FeatureCatalog = CATALOG) -> FeatureTable:
        if metadata.get("catalog_hash") != catalog.hash:
            raise StageMismatchError("feature table was built with a different catalog",
                                     expected=catalog.hash, found=metadata.get("catalog_hash"))
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != catalog.names:
            raise InputError("feature table header does not match the catalog")
        kinds = [e.kind for e in catalog.entries]
        rows = []
        for rec in reader:
            if len(rec) != len(kinds):
                raise InputError(f"feature row {len(rows)} has {len(rec)} fields, expected {len(kinds)}")
            rows.append([None if v == "" else (float(v) if k == "NUMERIC" else v)
                         for v, k in zip(rec, kinds)])
        meta = [FlowMeta.from_json(d) for d in metadata.get("flows", [])]
        if len(meta) != len(rows):
            raise InputError(f"metadata lists {len(meta)} flows but table has {len(rows)} rows")
        return cls(catalog, rows, meta, metadata.get("source_digest", ""))

    @classmethod
    def load(cls, csv_path: str | Path, meta_path: str | Path | None = None) -> FeatureTable:
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else meta_sidecar(csv_path)
        try:
            text = csv_path.read_text()
            metadata = json.loads(meta_path.read_text())
        except FileNotFoundError as exc:
            raise InputError(f"missing feature table file: {exc.filename}") from exc
        return cls.from_csv(text, metadata)


def meta_sidecar(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


def feature_table(flows: Sequence[Flow], packets: Mapping[int, RawPacket] | Sequence[RawPacket],
                  source_digest: str = "") -> FeatureTable:
    ordered = sorted(flows, key=lambda f: (f.first_ns, f.flow_id))
    rows = [extract_features(f, packets) for f in ordered]
    return FeatureTable(CATALOG, rows, [FlowMeta.of(f) for f in ordered], source_digest)
