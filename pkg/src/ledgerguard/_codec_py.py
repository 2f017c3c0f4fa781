"""Pure-Python structural block parser.

This is the fallback for the compiled kernel in ``_codec``; both expose the
same ``block_outline`` function and must accept and reject exactly the same
byte sequences.  The walk never allocates per-transaction objects, so it is
the cheapest possible structural check in plain Python.
"""

import struct

from ledgerguard.errors import MalformedBlock

BACKEND = "python"

HEADER_LEN = 72
# minimum encoded sizes used to cap count fields before looping
_MIN_TX = 9    # payload_len + 1 payload byte + endo_count
_MIN_ENDO = 8  # id_len + sig_len, both ids and sigs may be empty

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def block_outline(buf) -> tuple:
    """Validate the canonical block structure of ``buf``.

    Returns ``(number, data_off, data_len, tx_count, oid_off, oid_len,
    sig_off, sig_len)`` with offsets into ``buf``.  Raises MalformedBlock
    on any structural violation, including trailing bytes.
    """
    size = len(buf)
    if size < 4:
        raise MalformedBlock("truncated header length")
    (header_len,) = _U32.unpack_from(buf, 0)
    if header_len != HEADER_LEN:
        raise MalformedBlock("bad header length")
    if size < 4 + HEADER_LEN + 4:
        raise MalformedBlock("truncated header")
    (number,) = _U64.unpack_from(buf, 4)

    (data_len,) = _U32.unpack_from(buf, 76)
    data_off = 80
    data_end = data_off + data_len
    if data_len < 4 or data_end + 4 > size:
        raise MalformedBlock("bad data section length")

    (tx_count,) = _U32.unpack_from(buf, data_off)
    if tx_count > (data_len - 4) // _MIN_TX:
        raise MalformedBlock("transaction count exceeds data section")
    cur = data_off + 4
    for _ in range(tx_count):
        if cur + 4 > data_end:
            raise MalformedBlock("truncated transaction")
        (payload_len,) = _U32.unpack_from(buf, cur)
        cur += 4
        if payload_len < 1 or cur + payload_len + 4 > data_end:
            raise MalformedBlock("bad payload length")
        cur += payload_len
        (endo_count,) = _U32.unpack_from(buf, cur)
        cur += 4
        if endo_count > (data_end - cur) // _MIN_ENDO:
            raise MalformedBlock("endorsement count exceeds data section")
        for _ in range(endo_count):
            if cur + 4 > data_end:
                raise MalformedBlock("truncated endorsement")
            (id_len,) = _U32.unpack_from(buf, cur)
            cur += 4
            if cur + id_len + 4 > data_end:
                raise MalformedBlock("bad endorser id length")
            cur += id_len
            (esig_len,) = _U32.unpack_from(buf, cur)
            cur += 4
            if cur + esig_len > data_end:
                raise MalformedBlock("bad endorsement signature length")
            cur += esig_len
    if cur != data_end:
        raise MalformedBlock("data section length mismatch")

    (meta_len,) = _U32.unpack_from(buf, data_end)
    meta_off = data_end + 4
    meta_end = meta_off + meta_len
    if meta_end != size:
        raise MalformedBlock("metadata section length mismatch")

    cur = meta_off
    if cur + 4 > meta_end:
        raise MalformedBlock("truncated metadata")
    (oid_len,) = _U32.unpack_from(buf, cur)
    cur += 4
    oid_off = cur
    if cur + oid_len + 4 > meta_end:
        raise MalformedBlock("bad orderer id length")
    cur += oid_len
    (sig_len,) = _U32.unpack_from(buf, cur)
    cur += 4
    sig_off = cur
    if cur + sig_len + 4 > meta_end:
        raise MalformedBlock("bad signature length")
    cur += sig_len
    (flags_len,) = _U32.unpack_from(buf, cur)
    cur += 4
    if flags_len != tx_count:
        raise MalformedBlock("validity flags count mismatch")
    if cur + flags_len != meta_end:
        raise MalformedBlock("metadata length mismatch")
    # canonical encodings mark every transaction valid; any other value is
    # indistinguishable from tampering since neither digest covers the flags
    for i in range(cur, meta_end):
        if buf[i] != 0:
            raise MalformedBlock("non-canonical validity flag")

    return (number, data_off, data_len, tx_count, oid_off, oid_len, sig_off, sig_len)
