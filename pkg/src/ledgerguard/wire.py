"""Framing and payload codecs for the block-fetch protocol.

Frame:      msg_type:u8 | payload_len:u32 LE | payload
REQ_BLOCK:  payload = lid_len:u32 | ledger_id | number:u64
RESP_BLOCK: payload = status:u8 (0 OK, 1 NOT_FOUND, 2 ERROR) | block bytes if OK
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MSG_REQ_BLOCK = 0x01
MSG_RESP_BLOCK = 0x02

STATUS_OK = 0
STATUS_NOT_FOUND = 1
STATUS_ERROR = 2

FRAME_HEADER = struct.Struct("<BI")
_u32 = struct.Struct("<I")
_u64 = struct.Struct("<Q")

MAX_PAYLOAD = 0xFFFFFFFF


@dataclass(frozen=True)
class WireMessage:
    msg_type: int
    payload: bytes


def encode_frame(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError("payload too large for a u32 length")
    return FRAME_HEADER.pack(msg.msg_type, len(msg.payload)) + msg.payload


def decode_frame(data: bytes) -> WireMessage:
    """Decode one complete frame; the buffer must hold exactly one frame."""
    if len(data) < FRAME_HEADER.size:
        raise ValueError("truncated frame header")
    msg_type, length = FRAME_HEADER.unpack_from(data, 0)
    if len(data) != FRAME_HEADER.size + length:
        raise ValueError("frame length mismatch")
    return WireMessage(msg_type, data[FRAME_HEADER.size:])


def read_frame(recv_exact) -> WireMessage:
    """Read one frame via ``recv_exact(n) -> bytes`` (raises on short reads)."""
    header = recv_exact(FRAME_HEADER.size)
    msg_type, length = FRAME_HEADER.unpack(header)
    payload = recv_exact(length) if length else b""
    return WireMessage(msg_type, payload)


def encode_block_request(ledger_id: bytes, number: int) -> WireMessage:
    payload = _u32.pack(len(ledger_id)) + ledger_id + _u64.pack(number)
    return WireMessage(MSG_REQ_BLOCK, payload)


def decode_block_request(payload: bytes) -> tuple[bytes, int]:
    if len(payload) < 4:
        raise ValueError("truncated block request")
    (lid_len,) = _u32.unpack_from(payload, 0)
    if len(payload) != 4 + lid_len + 8:
        raise ValueError("block request length mismatch")
    ledger_id = payload[4:4 + lid_len]
    (number,) = _u64.unpack_from(payload, 4 + lid_len)
    return ledger_id, number


def encode_block_response(status: int, data: bytes = b"") -> WireMessage:
    return WireMessage(MSG_RESP_BLOCK, bytes([status]) + data)


def decode_block_response(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 1:
        raise ValueError("empty block response")
    return payload[0], payload[1:]
