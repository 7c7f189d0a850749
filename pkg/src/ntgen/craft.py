"""Byte-level builders for Ethernet/IP/TCP/UDP frames and DNS/HTTP payloads."""

from __future__ import annotations

import ipaddress
import socket
import struct

from .packets import (LINKTYPE_ETHERNET, PROTO_TCP, PROTO_UDP, RawPacket, decode_packet,
                      internet_checksum)

CLIENT_MAC = bytes.fromhex("020000000001")
SERVER_MAC = bytes.fromhex("020000000002")


def _addr(a: str) -> bytes:
    ip = ipaddress.ip_address(a)
    return socket.inet_pton(socket.AF_INET if ip.version == 4 else socket.AF_INET6, a)


def _pseudo(src: str, dst: str, proto: int, length: int) -> bytes:
    s, d = _addr(src), _addr(dst)
    if len(s) == 4:
        return s + d + struct.pack("!BBH", 0, proto, length)
    return s + d + struct.pack("!I3xB", length, proto)


def ethernet(payload: bytes, ethertype: int, src_mac: bytes = CLIENT_MAC,
             dst_mac: bytes = SERVER_MAC) -> bytes:
    return dst_mac + src_mac + struct.pack("!H", ethertype) + payload


def ip_packet(src: str, dst: str, proto: int, payload: bytes, ttl: int = 64,
              ident: int = 0) -> bytes:
    """IPv4 (with header checksum) or IPv6 header plus payload, by address family."""
    if ipaddress.ip_address(src).version == 4:
        hdr = bytearray(struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), ident, 0x4000,
                                    ttl, proto, 0, _addr(src), _addr(dst)))
        struct.pack_into("!H", hdr, 10, internet_checksum(bytes(hdr)))
        return bytes(hdr) + payload
    return struct.pack("!IHBB16s16s", 6 << 28, len(payload), proto, ttl,
                       _addr(src), _addr(dst)) + payload


def tcp_segment(src: str, dst: str, sport: int, dport: int, seq: int, ack: int, flags: int,
                payload: bytes = b"", window: int = 65535, options: bytes = b"") -> bytes:
    if len(options) % 4:
        options += b"\x00" * (4 - len(options) % 4)
    off = (20 + len(options)) // 4
    seg = bytearray(struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                                off << 4, flags, window, 0, 0) + options + payload)
    struct.pack_into("!H", seg, 16, internet_checksum(_pseudo(src, dst, PROTO_TCP, len(seg))
                                                      + bytes(seg)))
    return bytes(seg)


def udp_datagram(src: str, dst: str, sport: int, dport: int, payload: bytes) -> bytes:
    seg = bytearray(struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload)
    csum = internet_checksum(_pseudo(src, dst, PROTO_UDP, len(seg)) + bytes(seg))
    struct.pack_into("!H", seg, 6, csum or 0xFFFF)
    return bytes(seg)


def frame(transport: bytes, src: str, dst: str, proto: int, ttl: int = 64,
          from_client: bool = True) -> bytes:
    ethertype = 0x0800 if ipaddress.ip_address(src).version == 4 else 0x86DD
    macs = (CLIENT_MAC, SERVER_MAC) if from_client else (SERVER_MAC, CLIENT_MAC)
    return ethernet(ip_packet(src, dst, proto, transport, ttl), ethertype, *macs)


def packet(index: int, ts_ns: int, data: bytes, linktype: int = LINKTYPE_ETHERNET) -> RawPacket:
    return decode_packet(RawPacket(index, ts_ns, len(data), data, linktype))


# -- application payloads ----------------------------------------------------


def _qname(name: str) -> bytes:
    out = b""
    for label in name.rstrip(".").split("."):
        out += bytes([len(label)]) + label.encode()
    return out + b"\x00"


def dns_query(qid: int, name: str, qtype: int = 1) -> bytes:
    return struct.pack("!HHHHHH", qid, 0x0100, 1, 0, 0, 0) + _qname(name) + struct.pack("!HH", qtype, 1)


def dns_response(qid: int, name: str, addrs: list[str], cname: str | None = None,
                 rcode: int = 0, qtype: int = 1) -> bytes:
    """Response echoing the question; answers use a compression pointer to it."""
    answers = b""
    count = 0
    owner = b"\xc0\x0c"
    if cname is not None:
        target = _qname(cname)
        answers += owner + struct.pack("!HHIH", 5, 1, 300, len(target)) + target
        owner = struct.pack("!H", 0xC000 | (12 + len(_qname(name)) + 4 + 12))
        count += 1
    for a in addrs:
        raw = _addr(a)
        rtype = 1 if len(raw) == 4 else 28
        answers += owner + struct.pack("!HHIH", rtype, 1, 60, len(raw)) + raw
        count += 1
    flags = 0x8180 | (rcode & 0xF)
    return (struct.pack("!HHHHHH", qid, flags, 1, count, 0, 0) + _qname(name)
            + struct.pack("!HH", qtype, 1) + answers)


def http_request(method: str, host: str, path: str, user_agent: str | None = None,
                 cookie: str | None = None, body: bytes = b"") -> bytes:
    lines = [f"{method} {path} HTTP/1.1", f"Host: {host}"]
    if user_agent:
        lines.append(f"User-Agent: {user_agent}")
    if cookie:
        lines.append(f"Cookie: {cookie}")
    if body:
        lines.append(f"Content-Length: {len(body)}")
    return ("\r\n".join(lines) + "\r\n\r\n").encode() + body


def http_response(status: int, content_type: str, body: bytes) -> bytes:
    reason = {200: "OK", 301: "Moved Permanently", 304: "Not Modified",
              404: "Not Found", 500: "Internal Server Error"}.get(status, "Status")
    head = (f"HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\n"
            f"Content-Length: {len(body)}\r\n\r\n")
    return head.encode() + body
