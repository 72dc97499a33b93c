"""Frame model, Y-TAG relay tag codec and MLD address rewriting.

Wire layout of a tagged frame (all multi-byte fields big-endian)::

    DA(6) | SA(6) | 0x88B5(2) | NA(6) | seq(2) | version(1) | flags(1) | EtherType(2) | payload

The 12 bytes between SA and the original EtherType are the Y-TAG.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

YTAG_ETHERTYPE = 0x88B5
# Association notices and L2 update frames exchanged between HR APs.
NOTIFY_ETHERTYPE = 0x88B6
DATA_ETHERTYPE = 0x0800

YTAG_LEN = 12
YTAG_VERSION = 1
# Ancillary flag: the tagged copy goes P-AP -> serving AP for transmission on air.
YTAG_FLAG_DOWNLINK = 0x01
ETH_HEADER_LEN = 14
SEQ_MOD = 1 << 16

_YTAG_STRUCT = struct.Struct("!H6sHBB")


class FrameError(ValueError):
    """Base class for frame codec errors."""


class MalformedFrameError(FrameError):
    pass


class NotAYTagError(FrameError):
    pass


class TagNestingError(FrameError):
    pass


class NoAssociationError(LookupError):
    pass


@dataclass(frozen=True, order=True)
class MacAddress:
    octets: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.octets, bytes) or len(self.octets) != 6:
            raise ValueError(f"MAC address needs 6 octets, got {self.octets!r}")

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        parts = text.replace("-", ":").split(":")
        if len(parts) != 6:
            raise ValueError(f"bad MAC address {text!r}")
        try:
            return cls(bytes(int(p, 16) for p in parts))
        except ValueError:
            raise ValueError(f"bad MAC address {text!r}") from None

    @property
    def is_broadcast(self) -> bool:
        return self.octets == b"\xff" * 6

    @property
    def is_multicast(self) -> bool:
        return bool(self.octets[0] & 0x01)

    @property
    def is_local(self) -> bool:
        return bool(self.octets[0] & 0x02)

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)


BROADCAST = MacAddress(b"\xff" * 6)


class AccessCategory(Enum):
    BK = "BK"
    BE = "BE"
    VI = "VI"
    VO = "VO"


@dataclass(frozen=True)
class ReliabilityCategory:
    """Best effort when ``copies == 1``; otherwise k-way redundant service."""

    copies: int = 1

    def __post_init__(self) -> None:
        if self.copies < 1:
            raise ValueError("copies must be >= 1")

    @classmethod
    def best_effort(cls) -> "ReliabilityCategory":
        return cls(1)

    @classmethod
    def reliable(cls, k: int) -> "ReliabilityCategory":
        if k < 2:
            raise ValueError("Reliable(k) needs k >= 2")
        return cls(k)

    @classmethod
    def parse(cls, value: object) -> "ReliabilityCategory":
        if isinstance(value, str):
            text = value.strip().upper()
            if text in ("BE", "BESTEFFORT", "BEST_EFFORT"):
                return cls(1)
            if text.startswith("R") and text[1:].isdigit():
                return cls.reliable(int(text[1:]))
            raise ValueError(f"unknown reliability category {value!r}")
        if isinstance(value, int) and not isinstance(value, bool):
            return cls(1) if value <= 1 else cls.reliable(value)
        raise ValueError(f"unknown reliability category {value!r}")

    @property
    def is_reliable(self) -> bool:
        return self.copies >= 2

    def __str__(self) -> str:
        return f"R{self.copies}" if self.is_reliable else "BE"


BEST_EFFORT = ReliabilityCategory(1)


@dataclass(frozen=True)
class YTag:
    na: MacAddress
    seq: int
    version: int = YTAG_VERSION
    flags: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seq < SEQ_MOD:
            raise ValueError(f"seq out of range: {self.seq}")
        if not (0 <= self.version < 256 and 0 <= self.flags < 256):
            raise ValueError("version and flags are single bytes")

    @property
    def reserved_ethertype(self) -> int:
        return YTAG_ETHERTYPE

    def to_bytes(self) -> bytes:
        return _YTAG_STRUCT.pack(YTAG_ETHERTYPE, self.na.octets, self.seq, self.version, self.flags)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "YTag":
        if len(raw) < YTAG_LEN:
            raise MalformedFrameError(f"truncated Y-TAG: {len(raw)} bytes")
        etype, na, seq, version, flags = _YTAG_STRUCT.unpack_from(raw)
        if etype != YTAG_ETHERTYPE:
            raise NotAYTagError(f"EtherType 0x{etype:04x} is not a Y-TAG")
        if version != YTAG_VERSION:
            raise MalformedFrameError(f"unsupported Y-TAG version {version}")
        return cls(MacAddress(na), seq, version, flags)


@dataclass(frozen=True)
class Frame:
    """A frame on air or on the wire.

    ``da``, ``sa``, ``ether_type``, ``y_tag`` and ``payload`` are wire fields.
    The rest is simulation metadata: ``origin`` is the MLD that assigned
    ``mld_seq``, ``inner_sa`` keeps the SA a Y-TAG relay replaced, and
    ``frame_id``/``flow`` identify the application frame all copies belong to.
    """

    da: MacAddress
    sa: MacAddress
    ether_type: int = DATA_ETHERTYPE
    payload: bytes = b""
    y_tag: Optional[YTag] = None
    rc: ReliabilityCategory = BEST_EFFORT
    ac: AccessCategory = AccessCategory.BE
    mld_seq: int = 0
    origin: str = ""
    created_at: int = 0
    frame_id: Optional[int] = None
    flow: Optional[str] = None
    inner_sa: Optional[MacAddress] = None
    notice: object = field(default=None, compare=False)

    @property
    def outer_ether_type(self) -> int:
        return YTAG_ETHERTYPE if self.y_tag is not None else self.ether_type

    def to_bytes(self) -> bytes:
        if self.y_tag is None:
            return self.da.octets + self.sa.octets + struct.pack("!H", self.ether_type) + self.payload
        plain = replace(self, y_tag=None)
        return encode_ytag(plain, self.y_tag.na, self.y_tag.seq, flags=self.y_tag.flags)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Frame":
        """Parse wire bytes; tagged frames keep their tag and outer addresses."""
        if len(raw) < ETH_HEADER_LEN:
            raise MalformedFrameError(f"frame shorter than an Ethernet header: {len(raw)} bytes")
        (etype,) = struct.unpack_from("!H", raw, 12)
        if etype != YTAG_ETHERTYPE:
            return cls(MacAddress(raw[0:6]), MacAddress(raw[6:12]), etype, raw[14:])
        tag, inner_type, payload = _split_tagged(raw)
        return cls(MacAddress(raw[0:6]), MacAddress(raw[6:12]), inner_type, payload, y_tag=tag)


def encode_ytag(frame: Frame, na: MacAddress, seq: int, *, flags: int = 0) -> bytes:
    """Serialize ``frame`` with a Y-TAG inserted after SA."""
    if frame.y_tag is not None:
        raise TagNestingError("frame already carries a Y-TAG")
    tag = YTag(na, seq & 0xFFFF, flags=flags)
    return (
        frame.da.octets
        + frame.sa.octets
        + tag.to_bytes()
        + struct.pack("!H", frame.ether_type)
        + frame.payload
    )


def _split_tagged(raw: bytes) -> tuple[YTag, int, bytes]:
    if len(raw) < 12 + YTAG_LEN + 2:
        raise MalformedFrameError(f"truncated Y-TAG frame: {len(raw)} bytes")
    tag = YTag.from_bytes(raw[12 : 12 + YTAG_LEN])
    (inner_type,) = struct.unpack_from("!H", raw, 12 + YTAG_LEN)
    return tag, inner_type, raw[12 + YTAG_LEN + 2 :]


def decode_ytag(raw: bytes) -> tuple[Frame, YTag]:
    """Remove the Y-TAG and rebuild the original frame with DA := NA."""
    if len(raw) < ETH_HEADER_LEN:
        raise MalformedFrameError(f"frame shorter than an Ethernet header: {len(raw)} bytes")
    (etype,) = struct.unpack_from("!H", raw, 12)
    if etype != YTAG_ETHERTYPE:
        raise NotAYTagError(f"EtherType 0x{etype:04x} is not a Y-TAG")
    tag, inner_type, payload = _split_tagged(raw)
    return Frame(da=tag.na, sa=MacAddress(raw[6:12]), ether_type=inner_type, payload=payload), tag


def attach_ytag(frame: Frame, *, da: MacAddress, sa: MacAddress, na: MacAddress, seq: int,
                flags: int = 0) -> Frame:
    """Readdress ``frame`` for a wired relay hop and attach a Y-TAG."""
    if frame.y_tag is not None:
        raise TagNestingError("frame already carries a Y-TAG")
    return replace(frame, da=da, sa=sa, y_tag=YTag(na, seq & 0xFFFF, flags=flags), inner_sa=frame.sa)


def strip_ytag(frame: Frame) -> tuple[Frame, YTag]:
    """Model-level inverse of :func:`attach_ytag`, routed through the wire codec."""
    inner, tag = decode_ytag(frame.to_bytes())
    restored = replace(
        frame,
        da=inner.da,
        sa=frame.inner_sa if frame.inner_sa is not None else inner.sa,
        ether_type=inner.ether_type,
        payload=inner.payload,
        y_tag=None,
        inner_sa=None,
    )
    return restored, tag


@dataclass(frozen=True)
class AffiliatedInfo:
    link_id: str
    channel: int
    mac: MacAddress


@dataclass(frozen=True)
class MultiLinkElement:
    mld_id: str
    affiliated: tuple[AffiliatedInfo, ...]
    primary_sta: int = 0

    def __post_init__(self) -> None:
        macs = [a.mac for a in self.affiliated]
        if len(set(macs)) != len(macs):
            raise ValueError(f"{self.mld_id}: affiliated MAC addresses must be distinct")
        if not 0 <= self.primary_sta < len(self.affiliated):
            raise ValueError(f"{self.mld_id}: primary index {self.primary_sta} out of range")

    @property
    def primary_mac(self) -> MacAddress:
        return self.affiliated[self.primary_sta].mac

    @property
    def primary_link(self) -> str:
        return self.affiliated[self.primary_sta].link_id

    def link(self, link_id: str) -> AffiliatedInfo:
        for info in self.affiliated:
            if info.link_id == link_id:
                return info
        raise NoAssociationError(f"{self.mld_id} has no affiliated link {link_id!r}")

    def owns(self, mac: MacAddress) -> bool:
        return any(a.mac == mac for a in self.affiliated)


def rewrite_egress(frame: Frame, mle: MultiLinkElement, link_id: Optional[str] = None) -> Frame:
    """Make an HR STA look like a single node.

    Without ``link_id`` the frame is leaving towards Ethernet and its SA becomes
    the primary STA MAC. With ``link_id`` it is going out on air over that link
    and its DA becomes the MAC of the affiliated STA at the other end.
    """
    if link_id is None:
        if not mle.owns(frame.sa):
            raise NoAssociationError(f"SA {frame.sa} is not affiliated with {mle.mld_id}")
        if frame.sa == mle.primary_mac:
            return frame
        return replace(frame, sa=mle.primary_mac)
    if not mle.owns(frame.da):
        raise NoAssociationError(f"DA {frame.da} is not affiliated with {mle.mld_id}")
    target = mle.link(link_id).mac
    if frame.da == target:
        return frame
    return replace(frame, da=target)


def hexdump(data: bytes, sep: str = " ") -> str:
    return sep.join(f"{b:02x}" for b in data)


def mle_from_links(mld_id: str, links: Sequence[tuple[str, int, MacAddress]], primary: int = 0) -> MultiLinkElement:
    return MultiLinkElement(mld_id, tuple(AffiliatedInfo(*l) for l in links), primary)
