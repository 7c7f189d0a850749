"""Classic libpcap reading/writing and per-packet protocol decoding.

Only the classic pcap container is handled (no pcapng).  Frames are decoded
from Ethernet II or raw-IP link layers through IPv4/IPv6 to TCP or UDP, and
DNS/HTTP are decoded from the first transport payload when the ports or the
payload prefix admit it.  All decoding functions are pure.
"""

from __future__ import annotations

import array
import socket
import struct
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from .errors import InvalidTimestampError, TruncatedCaptureError, UnsupportedFormatError

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
# Some platforms write DLT_RAW (12/14) or the IPv4/IPv6-only raw types.
_RAW_LINKTYPES = {LINKTYPE_RAW, 12, 14, 228, 229}

SNAPLEN = 262144

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20

PROTO_TCP = 6
PROTO_UDP = 17

HTTP_METHODS = (b"GET", b"POST", b"HEAD", b"PUT", b"DELETE", b"OPTIONS",
                b"PATCH", b"CONNECT", b"TRACE")

DNS_MAX_POINTER_JUMPS = 32

_IPV6_EXT_HEADERS = {0, 43, 60}


@dataclass(frozen=True, slots=True)
class IPInfo:
    version: int
    src_addr: str
    dst_addr: str
    ttl: int
    total_len: int
    protocol: int
    offset: int  # start of the IP header within the frame
    header_len: int  # bytes up to the transport header (incl. IPv6 extensions)
    fragment_offset: int = 0
    more_fragments: bool = False


@dataclass(frozen=True, slots=True)
class TCPInfo:
    src_port: int
    dst_port: int
    seq_num: int
    ack_num: int
    flags: int
    window_size: int
    header_len: int
    urgent_ptr: int
    options_count: int
    offset: int

    @property
    def syn(self) -> bool:
        return bool(self.flags & TCP_SYN)

    @property
    def ack(self) -> bool:
        return bool(self.flags & TCP_ACK)

    @property
    def fin(self) -> bool:
        return bool(self.flags & TCP_FIN)

    @property
    def rst(self) -> bool:
        return bool(self.flags & TCP_RST)

    @property
    def psh(self) -> bool:
        return bool(self.flags & TCP_PSH)

    @property
    def urg(self) -> bool:
        return bool(self.flags & TCP_URG)


@dataclass(frozen=True, slots=True)
class UDPInfo:
    src_port: int
    dst_port: int
    length: int
    checksum_valid: bool
    offset: int


@dataclass(frozen=True, slots=True)
class DNSInfo:
    is_response: bool
    rcode: int
    question_count: int
    response_count: int
    authority_count: int
    additional_record_count: int
    query_names: tuple[str, ...]
    canonical_names: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class HTTPInfo:
    is_request: bool
    method: str | None
    status: int | None
    cookie_present: bool
    content_type: str | None
    user_agent: str | None
    byte_count: int
    header_count: int


@dataclass(frozen=True, slots=True)
class DecodedLayers:
    ip: IPInfo | None = None
    tcp: TCPInfo | None = None
    udp: UDPInfo | None = None
    dns: DNSInfo | None = None
    http: HTTPInfo | None = None

    @property
    def transport(self) -> str | None:
        if self.tcp is not None:
            return "TCP"
        if self.udp is not None:
            return "UDP"
        return None


@dataclass(frozen=True, slots=True)
class RawPacket:
    """One captured frame; timestamps are integer nanoseconds since the epoch."""

    capture_index: int
    ts_ns: int
    link_len: int
    data: bytes
    linktype: int = LINKTYPE_ETHERNET
    decoded: DecodedLayers = field(default_factory=DecodedLayers)
    payload: bytes = b""

    @property
    def timestamp(self) -> float:
        return self.ts_ns / 1e9

    @property
    def captured_len(self) -> int:
        return len(self.data)


@dataclass
class CaptureStats:
    packets: int = 0
    tcp: int = 0
    udp: int = 0
    skipped: int = 0
    fragments_dropped: int = 0
    app_decode_failures: int = 0
    timestamp_regressions: int = 0


# ---------------------------------------------------------------------------
# checksums


def internet_checksum(data: bytes) -> int:
    """RFC 1071 one's-complement checksum of ``data``."""
    if len(data) % 2:
        data = data + b"\x00"
    total = sum(array.array("H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    total = ~total & 0xFFFF
    if sys.byteorder == "little":
        total = ((total & 0xFF) << 8) | (total >> 8)
    return total


def _pseudo_header(ip: IPInfo, src: bytes, dst: bytes, length: int) -> bytes:
    if ip.version == 4:
        return src + dst + struct.pack("!BBH", 0, ip.protocol, length)
    return src + dst + struct.pack("!I3xB", length, ip.protocol)


# ---------------------------------------------------------------------------
# decoding


def decode_frame(data: bytes, linktype: int) -> tuple[DecodedLayers, bytes]:
    """Decode link, network and transport layers; return (layers, transport payload).

    Application layers are left empty, see :func:`decode_application`.
    """
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return DecodedLayers(), b""
        ethertype = struct.unpack_from("!H", data, 12)[0]
        off = 14
        while ethertype in (0x8100, 0x88A8) and len(data) >= off + 4:
            ethertype = struct.unpack_from("!H", data, off + 2)[0]
            off += 4
        if ethertype == 0x0800:
            return _decode_ipv4(data, off)
        if ethertype == 0x86DD:
            return _decode_ipv6(data, off)
        return DecodedLayers(), b""
    if linktype in _RAW_LINKTYPES:
        if not data:
            return DecodedLayers(), b""
        version = data[0] >> 4
        if version == 4:
            return _decode_ipv4(data, 0)
        if version == 6:
            return _decode_ipv6(data, 0)
    return DecodedLayers(), b""


def _decode_ipv4(data: bytes, off: int) -> tuple[DecodedLayers, bytes]:
    if len(data) < off + 20:
        return DecodedLayers(), b""
    vihl, _tos, total_len, _ident, frag, ttl, proto = struct.unpack_from("!BBHHHBB", data, off)
    ihl = (vihl & 0x0F) * 4
    if vihl >> 4 != 4 or ihl < 20 or len(data) < off + ihl:
        return DecodedLayers(), b""
    ip = IPInfo(
        version=4,
        src_addr=socket.inet_ntop(socket.AF_INET, data[off + 12:off + 16]),
        dst_addr=socket.inet_ntop(socket.AF_INET, data[off + 16:off + 20]),
        ttl=ttl,
        total_len=total_len,
        protocol=proto,
        offset=off,
        header_len=ihl,
        fragment_offset=(frag & 0x1FFF) * 8,
        more_fragments=bool(frag & 0x2000),
    )
    end = min(len(data), off + total_len) if total_len >= ihl else len(data)
    if ip.fragment_offset:
        return DecodedLayers(ip=ip), b""
    return _decode_transport(data, ip, off + ihl, end)


def _decode_ipv6(data: bytes, off: int) -> tuple[DecodedLayers, bytes]:
    if len(data) < off + 40:
        return DecodedLayers(), b""
    payload_len, next_header, hop_limit = struct.unpack_from("!HBB", data, off + 4)
    src = socket.inet_ntop(socket.AF_INET6, data[off + 8:off + 24])
    dst = socket.inet_ntop(socket.AF_INET6, data[off + 24:off + 40])
    pos = off + 40
    frag_offset = 0
    more = False
    # walk extension headers only as far as needed to find the transport header
    while True:
        if next_header in _IPV6_EXT_HEADERS:
            if len(data) < pos + 2:
                return DecodedLayers(), b""
            nh, hlen = data[pos], (data[pos + 1] + 1) * 8
        elif next_header == 44:
            if len(data) < pos + 8:
                return DecodedLayers(), b""
            nh, hlen = data[pos], 8
            fo = struct.unpack_from("!H", data, pos + 2)[0]
            frag_offset, more = fo & 0xFFF8, bool(fo & 1)
        elif next_header == 51:
            if len(data) < pos + 2:
                return DecodedLayers(), b""
            nh, hlen = data[pos], (data[pos + 1] + 2) * 4
        else:
            break
        next_header = nh
        pos += hlen
    ip = IPInfo(
        version=6,
        src_addr=src,
        dst_addr=dst,
        ttl=hop_limit,
        total_len=payload_len + 40,
        protocol=next_header,
        offset=off,
        header_len=pos - off,
        fragment_offset=frag_offset,
        more_fragments=more,
    )
    end = min(len(data), off + 40 + payload_len)
    if frag_offset:
        return DecodedLayers(ip=ip), b""
    return _decode_transport(data, ip, pos, end)


def _decode_transport(data: bytes, ip: IPInfo, off: int, end: int) -> tuple[DecodedLayers, bytes]:
    if ip.protocol == PROTO_TCP:
        if end < off + 20:
            return DecodedLayers(ip=ip), b""
        sport, dport, seq, ack, doff_flags, window, _csum, urg = struct.unpack_from(
            "!HHIIHHHH", data, off)
        hlen = (doff_flags >> 12) * 4
        if hlen < 20 or end < off + hlen:
            return DecodedLayers(ip=ip), b""
        tcp = TCPInfo(
            src_port=sport,
            dst_port=dport,
            seq_num=seq,
            ack_num=ack,
            flags=doff_flags & 0x3F,
            window_size=window,
            header_len=hlen,
            urgent_ptr=urg,
            options_count=_count_tcp_options(data[off + 20:off + hlen]),
            offset=off,
        )
        return DecodedLayers(ip=ip, tcp=tcp), bytes(data[off + hlen:end])
    if ip.protocol == PROTO_UDP:
        if end < off + 8:
            return DecodedLayers(ip=ip), b""
        sport, dport, length, csum = struct.unpack_from("!HHHH", data, off)
        udp = UDPInfo(
            src_port=sport,
            dst_port=dport,
            length=length,
            checksum_valid=_udp_checksum_ok(data, ip, off, length, csum),
            offset=off,
        )
        stop = min(end, off + length) if length >= 8 else end
        return DecodedLayers(ip=ip, udp=udp), bytes(data[off + 8:stop])
    return DecodedLayers(ip=ip), b""


def _count_tcp_options(opts: bytes) -> int:
    count = 0
    i = 0
    while i < len(opts):
        kind = opts[i]
        if kind == 0:
            break
        if kind == 1:
            i += 1
            continue
        if i + 1 >= len(opts) or opts[i + 1] < 2:
            break
        count += 1
        i += opts[i + 1]
    return count


def _ip_addr_bytes(data: bytes, ip: IPInfo) -> tuple[bytes, bytes]:
    o = ip.offset
    if ip.version == 4:
        return data[o + 12:o + 16], data[o + 16:o + 20]
    return data[o + 8:o + 24], data[o + 24:o + 40]


def _udp_checksum_ok(data: bytes, ip: IPInfo, off: int, length: int, csum: int) -> bool:
    if csum == 0 and ip.version == 4:
        return True
    if length < 8 or len(data) < off + length:
        # segment not fully captured: cannot prove the checksum wrong
        return True
    src, dst = _ip_addr_bytes(data, ip)
    return internet_checksum(_pseudo_header(ip, src, dst, length) + data[off:off + length]) == 0


def decode_application(pkt: RawPacket) -> RawPacket:
    """Return ``pkt`` with its DNS/HTTP layers populated where they decode."""
    dns, http, _failed = application_layers(pkt.decoded, pkt.payload)
    if dns is None and http is None:
        return pkt
    return replace(pkt, decoded=replace(pkt.decoded, dns=dns, http=http))


def application_layers(layers: DecodedLayers, payload: bytes
                       ) -> tuple[DNSInfo | None, HTTPInfo | None, bool]:
    """Decode DNS or HTTP from a transport payload.

    Returns ``(dns, http, failed)`` where ``failed`` marks a payload that looked
    like DNS/HTTP by port or prefix but did not parse.
    """
    ports: tuple[int, int]
    if layers.udp is not None:
        ports = (layers.udp.src_port, layers.udp.dst_port)
        if 53 in ports and payload:
            dns = parse_dns(payload)
            return dns, None, dns is None
        return None, None, False
    if layers.tcp is not None and payload:
        ports = (layers.tcp.src_port, layers.tcp.dst_port)
        if 53 in ports:
            if len(payload) < 2:
                return None, None, True
            (msg_len,) = struct.unpack_from("!H", payload, 0)
            dns = parse_dns(payload[2:2 + msg_len])
            return dns, None, dns is None
        if _looks_like_http(payload):
            http = parse_http(payload)
            return None, http, http is None
    return None, None, False


def _looks_like_http(payload: bytes) -> bool:
    if payload.startswith(b"HTTP/"):
        return True
    head = payload[:8]
    return any(head.startswith(m + b" ") for m in HTTP_METHODS)


def _read_dns_name(msg: bytes, pos: int) -> tuple[str, int]:
    """Read a possibly compressed name; return (name, position after it)."""
    labels: list[str] = []
    jumps = 0
    end_pos = None
    while True:
        if pos >= len(msg):
            raise ValueError("name runs past message")
        length = msg[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(msg):
                raise ValueError("truncated pointer")
            jumps += 1
            if jumps > DNS_MAX_POINTER_JUMPS:
                raise ValueError("compression loop")
            if end_pos is None:
                end_pos = pos + 2
            pos = ((length & 0x3F) << 8) | msg[pos + 1]
            continue
        if length & 0xC0:
            raise ValueError("reserved label type")
        pos += 1
        if length == 0:
            break
        if pos + length > len(msg):
            raise ValueError("label runs past message")
        labels.append(msg[pos:pos + length].decode("ascii", "replace"))
        pos += length
    return ".".join(labels), (end_pos if end_pos is not None else pos)


def parse_dns(msg: bytes) -> DNSInfo | None:
    """Decode a DNS message header, questions and resource records.

    Returns None for anything malformed.
    """
    if len(msg) < 12:
        return None
    _ident, flags, qd, an, ns, ar = struct.unpack_from("!HHHHHH", msg, 0)
    try:
        pos = 12
        names = []
        for _ in range(qd):
            name, pos = _read_dns_name(msg, pos)
            if pos + 4 > len(msg):
                return None
            pos += 4
            names.append(name)
        cnames = []
        for _ in range(an + ns + ar):
            _name, pos = _read_dns_name(msg, pos)
            if pos + 10 > len(msg):
                return None
            rtype, _rclass, _ttl, rdlen = struct.unpack_from("!HHIH", msg, pos)
            pos += 10
            if pos + rdlen > len(msg):
                return None
            if rtype == 5:
                target, _ = _read_dns_name(msg, pos)
                cnames.append(target)
            pos += rdlen
    except ValueError:
        return None
    return DNSInfo(
        is_response=bool(flags & 0x8000),
        rcode=flags & 0x000F,
        question_count=qd,
        response_count=an,
        authority_count=ns,
        additional_record_count=ar,
        query_names=tuple(names),
        canonical_names=tuple(cnames),
    )


def parse_http(payload: bytes) -> HTTPInfo | None:
    """Decode the start line and headers of an HTTP message; body ignored."""
    head, _sep, _body = payload.partition(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    start = lines[0].split(" ", 2)
    if start[0].startswith("HTTP/"):
        if len(start) < 2 or len(start[1]) != 3 or not start[1].isdigit():
            return None
        is_request, method, status = False, None, int(start[1])
    else:
        if len(start) != 3 or not start[2].startswith("HTTP/"):
            return None
        is_request, method, status = True, start[0], None
    headers: dict[str, str] = {}
    count = 0
    for line in lines[1:]:
        if not line:
            continue
        name, colon, value = line.partition(":")
        if not colon:
            return None
        headers[name.strip().lower()] = value.strip()
        count += 1
    return HTTPInfo(
        is_request=is_request,
        method=method,
        status=status,
        cookie_present="cookie" in headers or "set-cookie" in headers,
        content_type=headers.get("content-type"),
        user_agent=headers.get("user-agent"),
        byte_count=len(payload),
        header_count=count,
    )


def decode_packet(pkt: RawPacket) -> RawPacket:
    """Fully decode a packet from its captured bytes."""
    layers, payload = decode_frame(pkt.data, pkt.linktype)
    pkt = replace(pkt, decoded=layers, payload=payload)
    return decode_application(pkt)


# ---------------------------------------------------------------------------
# pcap container


class PcapReader:
    """Iterate the records of a classic pcap file.

    Decoding counters accumulate in :attr:`stats` as the stream is consumed.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.stats = CaptureStats()
        self.linktype = LINKTYPE_ETHERNET
        self.nanosecond = False
        self._endian = "<"

    def _read_header(self, fh: BinaryIO) -> None:
        header = fh.read(24)
        if len(header) < 24:
            raise UnsupportedFormatError(f"{self.path}: file too short for a pcap header")
        magic_le = struct.unpack("<I", header[:4])[0]
        magic_be = struct.unpack(">I", header[:4])[0]
        for endian, magic in (("<", magic_le), (">", magic_be)):
            if magic in (MAGIC_USEC, MAGIC_NSEC):
                self._endian = endian
                self.nanosecond = magic == MAGIC_NSEC
                break
        else:
            raise UnsupportedFormatError(
                f"{self.path}: bad magic number 0x{magic_be:08x} (only classic pcap is supported)")
        self.linktype = struct.unpack(self._endian + "I", header[20:24])[0] & 0x0FFFFFFF

    def __iter__(self) -> Iterator[RawPacket]:
        with open(self.path, "rb") as fh:
            self._read_header(fh)
            rec = struct.Struct(self._endian + "IIII")
            scale = 1 if self.nanosecond else 1000
            index = 0
            offset = 24
            last_ts = None
            while True:
                hdr = fh.read(16)
                if not hdr:
                    return
                if len(hdr) < 16:
                    raise TruncatedCaptureError(
                        f"{self.path}: truncated record header at offset {offset} "
                        f"after {index} packets", packets_read=index, offset=offset)
                ts_sec, ts_frac, incl_len, orig_len = rec.unpack(hdr)
                data = fh.read(incl_len)
                if len(data) < incl_len:
                    raise TruncatedCaptureError(
                        f"{self.path}: record {index} declares {incl_len} captured bytes but "
                        f"only {len(data)} remain (offset {offset}); {index} packets read",
                        packets_read=index, offset=offset)
                ts_ns = ts_sec * 1_000_000_000 + ts_frac * scale
                if last_ts is not None and ts_ns < last_ts:
                    self.stats.timestamp_regressions += 1
                last_ts = ts_ns
                pkt = self._decode(RawPacket(index, ts_ns, orig_len, data, self.linktype))
                yield pkt
                index += 1
                offset += 16 + incl_len

    def _decode(self, pkt: RawPacket) -> RawPacket:
        layers, payload = decode_frame(pkt.data, pkt.linktype)
        dns, http, failed = application_layers(layers, payload)
        if dns is not None or http is not None:
            layers = replace(layers, dns=dns, http=http)
        st = self.stats
        st.packets += 1
        if failed:
            st.app_decode_failures += 1
        if layers.tcp is not None:
            st.tcp += 1
        elif layers.udp is not None:
            st.udp += 1
        else:
            st.skipped += 1
            if layers.ip is not None and layers.ip.fragment_offset:
                st.fragments_dropped += 1
        return replace(pkt, decoded=layers, payload=payload)


def read_capture(path: str | Path) -> PcapReader:
    """Open a classic pcap file as a stream of decoded packets."""
    return PcapReader(path)


def load_capture(path: str | Path) -> tuple[list[RawPacket], CaptureStats]:
    reader = read_capture(path)
    packets = list(reader)
    return packets, reader.stats


def write_capture(path: str | Path, packets: Iterable[RawPacket],
                  linktype: int | None = None) -> None:
    """Write packets as classic pcap, stable-sorted by timestamp.

    Microsecond resolution is used unless some timestamp needs nanoseconds.
    """
    packets = list(packets)
    for p in packets:
        if not isinstance(p.ts_ns, int) or isinstance(p.ts_ns, bool) or p.ts_ns < 0:
            raise InvalidTimestampError(
                f"packet {p.capture_index} has invalid timestamp {p.ts_ns!r}")
    if linktype is None:
        kinds = {p.linktype for p in packets}
        if len(kinds) > 1:
            raise ValueError(f"mixed link types {sorted(kinds)} cannot share one pcap file")
        linktype = kinds.pop() if kinds else LINKTYPE_ETHERNET
    ordered = sorted(packets, key=lambda p: p.ts_ns)
    nano = any(p.ts_ns % 1000 for p in ordered)
    magic, div = (MAGIC_NSEC, 1) if nano else (MAGIC_USEC, 1000)
    rec = struct.Struct("<IIII")
    chunks = [struct.pack("<IHHiIII", magic, 2, 4, 0, 0, SNAPLEN, linktype)]
    for p in ordered:
        sec, frac = divmod(p.ts_ns, 1_000_000_000)
        chunks.append(rec.pack(sec, frac // div, len(p.data), p.link_len))
        chunks.append(p.data)
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"cannot write capture {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# rewriting


def rewrite_packet(pkt: RawPacket, *, ts_ns: int | None = None,
                   src_addr: str | None = None, dst_addr: str | None = None,
                   src_port: int | None = None, dst_port: int | None = None) -> RawPacket:
    """Return a copy of ``pkt`` with new timing and/or addressing.

    Address or port changes rewrite the frame bytes and recompute the IPv4
    header checksum and the TCP/UDP checksum.  Segments that were not fully
    captured get an incremental (RFC 1624) checksum update instead.
    """
    new_ts = pkt.ts_ns if ts_ns is None else ts_ns
    if src_addr is None and dst_addr is None and src_port is None and dst_port is None:
        return replace(pkt, ts_ns=new_ts)
    ip = pkt.decoded.ip
    if ip is None:
        raise ValueError(f"packet {pkt.capture_index} has no IP layer to rewrite")
    data = bytearray(pkt.data)
    family = socket.AF_INET if ip.version == 4 else socket.AF_INET6
    o = ip.offset
    a_src, a_dst = (o + 12, o + 16) if ip.version == 4 else (o + 8, o + 24)
    alen = 4 if ip.version == 4 else 16
    old_src, old_dst = bytes(data[a_src:a_src + alen]), bytes(data[a_dst:a_dst + alen])
    if src_addr is not None:
        data[a_src:a_src + alen] = socket.inet_pton(family, src_addr)
    if dst_addr is not None:
        data[a_dst:a_dst + alen] = socket.inet_pton(family, dst_addr)
    if ip.version == 4:
        struct.pack_into("!H", data, o + 10, 0)
        struct.pack_into("!H", data, o + 10, internet_checksum(bytes(data[o:o + ip.header_len])))
    layers = pkt.decoded
    transport = layers.tcp or layers.udp
    if transport is not None:
        t = transport.offset
        old_ports = bytes(data[t:t + 4])
        if src_port is not None:
            struct.pack_into("!H", data, t, src_port)
        if dst_port is not None:
            struct.pack_into("!H", data, t + 2, dst_port)
        csum_at = t + 16 if layers.tcp is not None else t + 6
        ip_end = o + ip.total_len
        seg_len = ip.total_len - ip.header_len
        if layers.udp is not None:
            seg_len = layers.udp.length
        old_csum = struct.unpack_from("!H", data, csum_at)[0]
        if layers.udp is not None and old_csum == 0 and ip.version == 4:
            pass  # checksum disabled by the sender
        elif len(data) >= ip_end and seg_len >= 0 and len(data) >= t + seg_len:
            struct.pack_into("!H", data, csum_at, 0)
            src_b, dst_b = _ip_addr_bytes(bytes(data), ip)
            seg = bytes(data[t:t + seg_len])
            csum = internet_checksum(_pseudo_header(ip, src_b, dst_b, seg_len) + seg)
            if layers.udp is not None and csum == 0:
                csum = 0xFFFF
            struct.pack_into("!H", data, csum_at, csum)
        else:
            new_src, new_dst = _ip_addr_bytes(bytes(data), ip)
            new_ports = bytes(data[t:t + 4])
            csum = _incremental_update(old_csum, old_src + old_dst + old_ports,
                                       new_src + new_dst + new_ports)
            struct.pack_into("!H", data, csum_at, csum)
    frame = bytes(data)
    return decode_packet(replace(pkt, ts_ns=new_ts, data=frame))


def _incremental_update(csum: int, old: bytes, new: bytes) -> int:
    # HC' = ~(~HC + ~m + m') summed over 16-bit words
    total = ~csum & 0xFFFF
    for i in range(0, len(old), 2):
        total += ~struct.unpack_from("!H", old, i)[0] & 0xFFFF
        total += struct.unpack_from("!H", new, i)[0]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF
