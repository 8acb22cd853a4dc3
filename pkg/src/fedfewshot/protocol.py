"""Binary framing for round messages.

Layout (little-endian)::

    magic "F2LC" | version u16 | kind u8 | round u32 | client_id u16 | beta u32 | tensor_count u32
    per tensor: name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim | values f32 * prod(dims)
    crc32 u32 over everything before it

Only parameters and task counts travel; there is no field for audio or features.
"""

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, ChecksumMismatch, ProtocolError, TruncatedPayload, VersionMismatch
from .params import ParameterSet

MAGIC = b"F2LC"
VERSION = 1
HEADER = struct.Struct("<4sHBIHII")
_CRC = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
LENGTH_PREFIX = struct.Struct("<I")


class MessageKind(enum.IntEnum):
    UPLOAD = 1
    GLOBAL = 2
    HELLO = 3
    ACK = 4


@dataclass
class RoundMessage:
    kind: MessageKind
    round_index: int = 0
    client_id: int = 0
    beta: int = 0
    params: ParameterSet = field(default_factory=ParameterSet)
    version: int = VERSION


def serialize_message(msg):
    parts = [
        HEADER.pack(MAGIC, msg.version, int(msg.kind), msg.round_index, msg.client_id,
                    msg.beta, len(msg.params))
    ]
    for name, values in msg.params.items():
        raw = name.encode("utf-8")
        parts.append(_U16.pack(len(raw)))
        parts.append(raw)
        parts.append(_U8.pack(values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


class _Reader:
    def __init__(self, buf, end):
        self.buf = buf
        self.pos = 0
        self.end = end

    def take(self, n, what):
        if self.pos + n > self.end:
            raise TruncatedPayload(f"frame ends inside {what} (need {n} bytes at offset {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def deserialize_message(data):
    """Parse a frame. Checks run magic, version, structure, then CRC."""
    data = bytes(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < HEADER.size + _CRC.size:
        raise TruncatedPayload(f"frame of {len(data)} bytes is shorter than header + crc")
    magic, version, kind, rnd, client, beta, count = HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatch(f"frame version {version}, expected {VERSION}")
    body_end = len(data) - _CRC.size
    reader = _Reader(data, body_end)
    reader.pos = HEADER.size
    entries = []
    for i in range(count):
        (name_len,) = _U16.unpack(reader.take(2, f"tensor {i} name length"))
        name = reader.take(name_len, f"tensor {i} name").decode("utf-8", errors="replace")
        (ndim,) = _U8.unpack(reader.take(1, f"tensor {i} ndim"))
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim, f"tensor {i} dims"))
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = reader.take(4 * n, f"tensor {i} values")
        entries.append((name, np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)))
    if reader.pos != body_end:
        # bytes left over means the declared structure does not cover the frame
        if zlib.crc32(data[:body_end]) != _CRC.unpack_from(data, body_end)[0]:
            raise ChecksumMismatch("crc32 mismatch")
        raise ProtocolError(f"{body_end - reader.pos} unexpected bytes after last tensor")
    if zlib.crc32(data[:body_end]) != _CRC.unpack_from(data, body_end)[0]:
        raise ChecksumMismatch("crc32 mismatch")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    try:
        params = ParameterSet(entries)
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None
    return RoundMessage(kind, rnd, client, beta, params, version)


def frame(data):
    """Prefix a serialized message with its u32 length for stream transports."""
    return LENGTH_PREFIX.pack(len(data)) + data


def read_exact(sock, n):
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise TruncatedPayload(f"connection closed with {remaining} of {n} bytes unread")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_message(sock, msg):
    sock.sendall(frame(serialize_message(msg)))


def recv_message(sock):
    (length,) = LENGTH_PREFIX.unpack(read_exact(sock, LENGTH_PREFIX.size))
    return deserialize_message(read_exact(sock, length))
