"""Wire format, in-path proxy and transports for the leader/follower link.

Wire layout (header little-endian)::

    magic "TBT1" | version u8 | direction u8 | seq u32 | tick u32 | count u8
    count x ( length u16 | big-endian unsigned integer bytes )
    crc32 u32 over every preceding byte

``count`` is 8 for ciphertext payloads (c1, c2 per slot) and 4 for
plaintext payloads, where each integer is the IEEE-754 binary64 bit pattern
of the slot value so that plaintext runs carry signals losslessly.
"""
from __future__ import annotations

import random
import select
import socket
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .attacker import AttackScenario, apply_affine_plaintext, apply_malleability
from .controller import SignalVector
from .crypto import Ciphertext

MAGIC = b"TBT1"
VERSION = 1
DIRECTIONS = ("L2F", "F2L")
_HEADER = struct.Struct("<4sBBIIB")
_LEN = struct.Struct("<H")
_CRC = struct.Struct("<I")
MAX_INT_BYTES = 256  # payload integers < 2**2048


class WireError(ValueError):
    pass


class BadMagic(WireError):
    pass


class Truncated(WireError):
    pass


class CrcMismatch(WireError):
    pass


class MalformedMessage(WireError):
    pass


@dataclass(frozen=True)
class ChannelMessage:
    seq: int
    tick: int
    direction: str
    payload: tuple[int, ...]

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if len(self.payload) not in (4, 8):
            raise ValueError("payload must hold 4 or 8 integers")
        if not (0 <= self.seq < 2 ** 32 and 0 <= self.tick < 2 ** 32):
            raise ValueError("seq and tick must fit in u32")

    @property
    def is_ciphertext(self) -> bool:
        return len(self.payload) == 8

    @property
    def crc(self) -> int:
        return _CRC.unpack(serialize(self)[-4:])[0]


def _int_bytes(n: int) -> bytes:
    if n < 0:
        raise ValueError("payload integers must be non-negative")
    raw = n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big")
    if len(raw) > MAX_INT_BYTES:
        raise ValueError("payload integer exceeds 2048 bits")
    return raw


def serialize(msg: ChannelMessage) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, DIRECTIONS.index(msg.direction), msg.seq, msg.tick,
                          len(msg.payload))]
    for n in msg.payload:
        raw = _int_bytes(n)
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def deserialize(data: bytes) -> ChannelMessage:
    if len(data) < len(MAGIC):
        raise Truncated("shorter than magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise Truncated("incomplete header")
    _, version, direction, seq, tick, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise MalformedMessage(f"unsupported version {version}")
    if direction >= len(DIRECTIONS):
        raise MalformedMessage(f"bad direction code {direction}")
    if count not in (4, 8):
        raise MalformedMessage(f"payload count must be 4 or 8, got {count}")
    pos = _HEADER.size
    payload = []
    for _ in range(count):
        if pos + _LEN.size > len(data):
            raise Truncated("incomplete length prefix")
        (length,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if not 1 <= length <= MAX_INT_BYTES:
            raise MalformedMessage(f"bad integer length {length}")
        if pos + length > len(data):
            raise Truncated("incomplete payload integer")
        raw = data[pos:pos + length]
        if length > 1 and raw[0] == 0:
            raise MalformedMessage("non-canonical integer encoding")
        payload.append(int.from_bytes(raw, "big"))
        pos += length
    if pos + _CRC.size > len(data):
        raise Truncated("missing crc")
    (crc,) = _CRC.unpack_from(data, pos)
    if zlib.crc32(data[:pos]) != crc:
        raise CrcMismatch("crc32 mismatch")
    if pos + _CRC.size != len(data):
        raise MalformedMessage("trailing bytes after crc")
    return ChannelMessage(seq, tick, DIRECTIONS[direction], tuple(payload))


# -- payload conversions ------------------------------------------------------

def pack_plain(v: Sequence[float]) -> tuple[int, ...]:
    return tuple(int.from_bytes(struct.pack(">d", float(x)), "big") for x in v)


def unpack_plain(payload: Sequence[int]) -> SignalVector:
    return SignalVector(*(struct.unpack(">d", n.to_bytes(8, "big"))[0] for n in payload))


def pack_cipher(cv: Sequence[Ciphertext]) -> tuple[int, ...]:
    out: list[int] = []
    for c in cv:
        out += [c.c1, c.c2]
    return tuple(out)


def unpack_cipher(payload: Sequence[int]) -> tuple[Ciphertext, ...]:
    return tuple(Ciphertext(payload[i], payload[i + 1]) for i in range(0, len(payload), 2))


# -- proxy ----------------------------------------------------------------------

class Proxy:
    """In-path attacker. In ciphertext mode it holds only the modulus ``p``."""

    def __init__(self, scenario: AttackScenario, p: int | None = None, tick_period: float = 0.02):
        if scenario.mode == "ciphertext" and p is None:
            raise ValueError("ciphertext-mode proxy needs the public modulus p")
        self.scenario = scenario
        self.p = p
        self.tick_period = tick_period

    def forward(self, msg: ChannelMessage) -> ChannelMessage:
        return proxy_forward(msg, self.scenario, self.p, self.tick_period)

    def forward_bytes(self, data: bytes) -> bytes:
        return serialize(self.forward(deserialize(data)))


def proxy_forward(msg: ChannelMessage, scenario: AttackScenario, p: int | None = None,
                  tick_period: float = 0.02) -> ChannelMessage:
    """Apply the scenario's attack for the message direction; seq and tick are kept."""
    attack = scenario.attack_for(msg.direction)
    if attack.is_identity or not scenario.active(msg.tick * tick_period):
        return msg
    if msg.is_ciphertext:
        if p is None:
            raise ValueError("ciphertext payload needs the modulus p")
        payload = pack_cipher(apply_malleability(unpack_cipher(msg.payload), attack, p))
    else:
        payload = pack_plain(apply_affine_plaintext(unpack_plain(msg.payload), attack))
    return ChannelMessage(msg.seq, msg.tick, msg.direction, payload)


# -- latency and transports --------------------------------------------------------

@dataclass(frozen=True)
class LatencyModel:
    base_delay: float = 10.0  # ms
    jitter: float = 0.0       # ms, uniform in [0, jitter]
    drop_rate: float = 0.0

    def __post_init__(self):
        if self.base_delay < 0 or self.jitter < 0 or not 0 <= self.drop_rate < 1:
            raise ValueError("invalid latency model")

    @property
    def deterministic(self) -> bool:
        return self.jitter == 0 and self.drop_rate == 0


class _DelayLine:
    def __init__(self, latency: LatencyModel, seed: int):
        self.latency = latency
        self.rng = random.Random(f"latency:{seed}")
        self.queue: list[tuple[int, int, bytes]] = []
        self.counter = 0
        self.dropped = 0

    def push(self, data: bytes, now_us: int) -> bool:
        lat = self.latency
        if lat.drop_rate and self.rng.random() < lat.drop_rate:
            self.dropped += 1
            return False
        delay = lat.base_delay + (self.rng.uniform(0.0, lat.jitter) if lat.jitter else 0.0)
        self.queue.append((now_us + round(delay * 1000), self.counter, data))
        self.counter += 1
        return True

    def pop_ready(self, now_us: int) -> list[bytes]:
        ready = sorted(item for item in self.queue if item[0] <= now_us)
        self.queue = [item for item in self.queue if item[0] > now_us]
        return [data for _, _, data in ready]


class LoopbackTransport:
    """In-memory transport; the optional proxy rewrites each datagram in flight."""

    def __init__(self, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 proxy: Callable[[bytes], bytes] | None = None):
        self.lines = {d: _DelayLine(latency, seed * 2 + i) for i, d in enumerate(DIRECTIONS)}
        self.proxy = proxy

    def send(self, direction: str, data: bytes, now_us: int) -> bytes:
        """Queue ``data``; returns the bytes as they will be delivered."""
        out = self.proxy(data) if self.proxy else data
        self.lines[direction].push(out, now_us)
        return out

    def receive(self, direction: str, now_us: int) -> list[bytes]:
        return self.lines[direction].pop_ready(now_us)

    @property
    def dropped(self) -> int:
        return sum(line.dropped for line in self.lines.values())

    def close(self) -> None:
        pass


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


class UdpProxy:
    """Datagram MITM: traffic from ``peer`` goes back to the last other sender,
    everything else is forwarded to ``peer``."""

    def __init__(self, listen: tuple[str, int], peer: tuple[str, int], proxy: Proxy):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(listen)
        self.peer = peer
        self.client: tuple[str, int] | None = None
        self.proxy = proxy
        self.forwarded = 0
        self.rejected = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def pump(self, timeout: float = 0.0) -> int:
        """Forward every datagram that arrives within ``timeout``; returns the count."""
        n = 0
        while select.select([self.sock], [], [], timeout)[0]:
            data, src = self.sock.recvfrom(65535)
            timeout = 0.0
            try:
                out = self.proxy.forward_bytes(data)
            except WireError:
                self.rejected += 1
                continue
            if src == self.peer:
                if self.client is None:
                    continue
                self.sock.sendto(out, self.client)
            else:
                self.client = src
                self.sock.sendto(out, self.peer)
            n += 1
            self.forwarded += 1
        return n

    def serve_forever(self) -> None:
        while True:
            self.pump(timeout=1.0)

    def close(self) -> None:
        self.sock.close()


class UdpTransport:
    """Leader and follower sockets on localhost relaying through a :class:`UdpProxy`.

    The latency model is applied before datagrams hit the sockets so that a
    run stays on the same logical timeline as the loopback transport.
    """

    def __init__(self, proxy: Proxy, latency: LatencyModel = LatencyModel(), seed: int = 0,
                 host: str = "127.0.0.1", proxy_port: int = 0, timeout: float = 1.0):
        self.timeout = timeout
        self.leader = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.follower = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.leader.bind((host, 0))
        self.follower.bind((host, 0))
        self.mitm = UdpProxy((host, proxy_port), self.follower.getsockname(), proxy)
        # the leader may be silent when the first F2L datagram arrives
        self.mitm.client = self.leader.getsockname()
        self.lines = {d: _DelayLine(latency, seed * 2 + i) for i, d in enumerate(DIRECTIONS)}
        self.delivered: list[bytes] = []
        self.lost = 0

    def send(self, direction: str, data: bytes, now_us: int) -> None:
        self.lines[direction].push(data, now_us)

    def receive(self, direction: str, now_us: int) -> list[bytes]:
        src, dst = (self.leader, self.follower) if direction == "L2F" else (self.follower, self.leader)
        out = []
        for data in self.lines[direction].pop_ready(now_us):
            src.sendto(data, self.mitm.address)
            self.mitm.pump(self.timeout)
            if select.select([dst], [], [], self.timeout)[0]:
                out.append(dst.recvfrom(65535)[0])
            else:
                self.lost += 1
        return out

    @property
    def dropped(self) -> int:
        return sum(line.dropped for line in self.lines.values()) + self.lost

    def close(self) -> None:
        for s in (self.leader, self.follower):
            s.close()
        self.mitm.close()


@dataclass
class Receiver:
    """Latest-sequence-wins receiver with zero-order hold of the last payload."""
    direction: str
    last_seq: int = -1
    last: ChannelMessage | None = None
    stale: int = 0
    rejected: int = 0
    ticks_seen: list[int] = field(default_factory=list)

    def accept(self, datagrams: Sequence[bytes]) -> ChannelMessage | None:
        """Return the newest fresh message among ``datagrams`` or None (hold)."""
        best = None
        for data in datagrams:
            try:
                msg = deserialize(data)
            except WireError:
                self.rejected += 1
                continue
            if msg.direction != self.direction or msg.seq <= self.last_seq:
                self.stale += 1
                continue
            if best is not None and msg.seq <= best.seq:
                self.stale += 1
                continue
            best = msg
        if best is not None:
            self.last_seq = best.seq
            self.last = best
            self.ticks_seen.append(best.tick)
        return best
