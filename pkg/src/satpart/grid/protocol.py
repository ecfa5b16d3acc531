"""Length-prefixed frames exchanged between the coordinator and workers.

Frame layout (all integers big-endian)::

    offset 0  u8   magic    0xA5
    offset 1  u8   version  1
    offset 2  u8   type     MsgType
    offset 3  u32  length   payload byte count
    offset 7  ...  payload  UTF-8 JSON object

A reader that sees a wrong magic byte, an unknown version or type, or a
length above ``MAX_PAYLOAD`` raises ``ProtocolError``; the stream is then
considered broken.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO

from ..solver import Budget

MAGIC = 0xA5
VERSION = 1
HEADER = struct.Struct(">BBBI")
MAX_PAYLOAD = 1 << 28


class ProtocolError(Exception):
    pass


class MsgType(enum.IntEnum):
    SETUP = 1  # coordinator -> worker: CNF text, digest, decomposition set
    READY = 2  # worker -> coordinator: SETUP accepted
    ASSIGN = 3  # coordinator -> worker: one work unit replica
    RESULT = 4  # worker -> coordinator: WorkResult
    CANCEL = 5  # coordinator -> worker: abandon the current unit
    HEARTBEAT = 6  # worker -> coordinator: liveness
    SHUTDOWN = 7  # coordinator -> worker: exit


def encode_frame(kind: MsgType, payload: dict) -> bytes:
    body = json.dumps(payload, separators=(",", ":")).encode()
    if len(body) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return HEADER.pack(MAGIC, VERSION, int(kind), len(body)) + body


def _check_header(magic: int, version: int, kind: int, length: int) -> MsgType:
    if magic != MAGIC:
        raise ProtocolError(f"bad magic byte 0x{magic:02x}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError("frame length over limit")
    try:
        return MsgType(kind)
    except ValueError:
        raise ProtocolError(f"unknown message type {kind}") from None


def _decode_body(body: bytes) -> dict:
    try:
        payload = json.loads(body.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable payload: {exc}") from None
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be a JSON object")
    return payload


class FrameDecoder:
    """Incremental decoder for a non-blocking byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[MsgType, dict]]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            magic, version, kind, length = HEADER.unpack_from(self._buf)
            mtype = _check_header(magic, version, kind, length)
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            body = bytes(self._buf[HEADER.size : end])
            del self._buf[:end]
            out.append((mtype, _decode_body(body)))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    chunks = []
    while n:
        data = stream.read(n)
        if not data:
            return None
        chunks.append(data)
        n -= len(data)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[MsgType, dict] | None:
    """Blocking read of one frame; None on clean end of stream."""
    head = _read_exact(stream, HEADER.size)
    if head is None:
        return None
    mtype = _check_header(*HEADER.unpack(head))
    body = _read_exact(stream, HEADER.unpack(head)[3])
    if body is None:
        raise ProtocolError("stream ended inside a frame")
    return mtype, _decode_body(body)


def budget_to_dict(b: Budget) -> dict:
    return {"max_conflicts": b.max_conflicts, "max_seconds": b.max_seconds}


def budget_from_dict(d: dict) -> Budget:
    return Budget(d.get("max_conflicts"), d.get("max_seconds"))


@dataclass(frozen=True)
class WorkUnit:
    """Cube indices ``start <= i < stop`` of the lexicographic cube order."""

    id: int
    start: int
    stop: int
    cnf_ref: str
    variables: tuple[int, ...]
    budget: Budget = Budget()

    def __post_init__(self):
        if not 0 <= self.start < self.stop:
            raise ValueError("work unit range must be nonempty")

    @property
    def size(self) -> int:
        return self.stop - self.start

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "start": self.start,
            "stop": self.stop,
            "cnf_ref": self.cnf_ref,
            "set": list(self.variables),
            "budget": budget_to_dict(self.budget),
        }

    @classmethod
    def from_dict(cls, d: dict) -> WorkUnit:
        return cls(d["id"], d["start"], d["stop"], d["cnf_ref"], tuple(d["set"]), budget_from_dict(d["budget"]))


class ResultStatus(str, enum.Enum):
    UNSAT_ALL = "UNSAT-all"
    SAT = "SAT"
    UNKNOWN = "UNKNOWN"  # budget hit; ``resume`` is the first unfinished cube
    CANCELLED = "CANCELLED"


@dataclass(frozen=True)
class WorkResult:
    unit_id: int
    replica: int
    worker: int
    status: ResultStatus
    cube: int | None = None  # SAT: index of the satisfiable cube
    model: str | None = None  # SAT: total assignment as a 0/1 string
    resume: int | None = None
    conflicts: int = 0
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {
            "unit": self.unit_id,
            "replica": self.replica,
            "worker": self.worker,
            "status": self.status.value,
            "cube": self.cube,
            "model": self.model,
            "resume": self.resume,
            "conflicts": self.conflicts,
            "elapsed": self.elapsed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> WorkResult:
        return cls(
            d["unit"],
            d["replica"],
            d["worker"],
            ResultStatus(d["status"]),
            d.get("cube"),
            d.get("model"),
            d.get("resume"),
            d.get("conflicts", 0),
            d.get("elapsed", 0.0),
        )

    def model_bits(self) -> list[int]:
        if self.model is None:
            raise ValueError("result carries no model")
        return [1 if ch == "1" else 0 for ch in self.model]
