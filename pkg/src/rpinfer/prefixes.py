"""IPv4 prefix tables: longest-prefix match for IP-to-AS and IXP LAN lookup."""
from __future__ import annotations

import functools
import ipaddress
from typing import Generic, Iterable, Iterator, TypeVar

V = TypeVar("V")


@functools.lru_cache(maxsize=1 << 18)
def ip_to_int(ip: str) -> int:
    """Parse a dotted-quad literal. Raises ValueError on anything else."""
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def parse_prefix(prefix: str) -> tuple[int, int]:
    """Return (network, length) for a CIDR string; host bits must be zero."""
    net = ipaddress.IPv4Network(prefix, strict=True)
    return int(net.network_address), net.prefixlen


@functools.lru_cache(maxsize=1 << 16)
def is_unroutable(ip: str) -> bool:
    return not ipaddress.IPv4Address(ip).is_global


class PrefixTable(Generic[V]):
    """Longest-prefix-match table keyed by IPv4 CIDR blocks.

    One hash map per prefix length; a lookup probes lengths from the most
    specific down, so cost is bounded by the number of distinct lengths.
    """

    def __init__(self, items: Iterable[tuple[str, V]] = ()):
        self._by_len: dict[int, dict[int, V]] = {}
        self._lengths: list[int] = []
        for prefix, value in items:
            self.insert(prefix, value)

    def insert(self, prefix: str, value: V) -> None:
        net, length = parse_prefix(prefix)
        bucket = self._by_len.get(length)
        if bucket is None:
            bucket = self._by_len[length] = {}
            self._lengths = sorted(self._by_len, reverse=True)
        bucket[net >> (32 - length) if length else 0] = value

    def lookup_int(self, addr: int) -> V | None:
        for length in self._lengths:
            hit = self._by_len[length].get(addr >> (32 - length) if length else 0)
            if hit is not None:
                return hit
        return None

    def lookup(self, ip: str) -> V | None:
        return self.lookup_int(ip_to_int(ip))

    def items(self) -> Iterator[tuple[str, V]]:
        for length in sorted(self._by_len):
            for key, value in sorted(self._by_len[length].items()):
                net = key << (32 - length) if length else 0
                yield f"{int_to_ip(net)}/{length}", value

    def __len__(self) -> int:
        return sum(len(b) for b in self._by_len.values())
