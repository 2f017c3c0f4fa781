# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled structural block parser.

Mirror of ``_codec_py``: same function, same accept/reject behaviour, same
return tuple.  Kept intentionally tiny; everything above the per-byte walk
lives in regular Python modules.
"""

from ledgerguard.errors import MalformedBlock

BACKEND = "compiled"

DEF HEADER_LEN = 72
DEF MIN_TX = 9
DEF MIN_ENDO = 8


cdef inline unsigned long long _u32(const unsigned char[::1] b, Py_ssize_t off):
    return (
        <unsigned long long>b[off]
        | (<unsigned long long>b[off + 1] << 8)
        | (<unsigned long long>b[off + 2] << 16)
        | (<unsigned long long>b[off + 3] << 24)
    )


cdef inline unsigned long long _u64(const unsigned char[::1] b, Py_ssize_t off):
    return _u32(b, off) | (_u32(b, off + 4) << 32)


def block_outline(const unsigned char[::1] buf) -> tuple:
    """See ``ledgerguard._codec_py.block_outline``."""
    cdef Py_ssize_t size = buf.shape[0]
    cdef unsigned long long number
    cdef Py_ssize_t data_off, data_end, meta_off, meta_end, cur, i
    cdef unsigned long long data_len, meta_len, tx_count, payload_len
    cdef unsigned long long endo_count, id_len, esig_len, oid_len, sig_len, flags_len
    cdef Py_ssize_t oid_off, sig_off
    cdef unsigned long long t, e

    if size < 4:
        raise MalformedBlock("truncated header length")
    if _u32(buf, 0) != HEADER_LEN:
        raise MalformedBlock("bad header length")
    if size < 4 + HEADER_LEN + 4:
        raise MalformedBlock("truncated header")
    number = _u64(buf, 4)

    data_len = _u32(buf, 76)
    data_off = 80
    data_end = data_off + <Py_ssize_t>data_len
    if data_len < 4 or data_end + 4 > size:
        raise MalformedBlock("bad data section length")

    tx_count = _u32(buf, data_off)
    if tx_count > (data_len - 4) // MIN_TX:
        raise MalformedBlock("transaction count exceeds data section")
    cur = data_off + 4
    for t in range(tx_count):
        if cur + 4 > data_end:
            raise MalformedBlock("truncated transaction")
        payload_len = _u32(buf, cur)
        cur += 4
        if payload_len < 1 or cur + <Py_ssize_t>payload_len + 4 > data_end:
            raise MalformedBlock("bad payload length")
        cur += <Py_ssize_t>payload_len
        endo_count = _u32(buf, cur)
        cur += 4
        if endo_count > <unsigned long long>(data_end - cur) // MIN_ENDO:
            raise MalformedBlock("endorsement count exceeds data section")
        for e in range(endo_count):
            if cur + 4 > data_end:
                raise MalformedBlock("truncated endorsement")
            id_len = _u32(buf, cur)
            cur += 4
            if cur + <Py_ssize_t>id_len + 4 > data_end:
                raise MalformedBlock("bad endorser id length")
            cur += <Py_ssize_t>id_len
            esig_len = _u32(buf, cur)
            cur += 4
            if cur + <Py_ssize_t>esig_len > data_end:
                raise MalformedBlock("bad endorsement signature length")
            cur += <Py_ssize_t>esig_len
    if cur != data_end:
        raise MalformedBlock("data section length mismatch")

    meta_len = _u32(buf, data_end)
    meta_off = data_end + 4
    meta_end = meta_off + <Py_ssize_t>meta_len
    if meta_end != size:
        raise MalformedBlock("metadata section length mismatch")

    cur = meta_off
    if cur + 4 > meta_end:
        raise MalformedBlock("truncated metadata")
    oid_len = _u32(buf, cur)
    cur += 4
    oid_off = cur
    if cur + <Py_ssize_t>oid_len + 4 > meta_end:
        raise MalformedBlock("bad orderer id length")
    cur += <Py_ssize_t>oid_len
    sig_len = _u32(buf, cur)
    cur += 4
    sig_off = cur
    if cur + <Py_ssize_t>sig_len + 4 > meta_end:
        raise MalformedBlock("bad signature length")
    cur += <Py_ssize_t>sig_len
    flags_len = _u32(buf, cur)
    cur += 4
    if flags_len != tx_count:
        raise MalformedBlock("validity flags count mismatch")
    if cur + <Py_ssize_t>flags_len != meta_end:
        raise MalformedBlock("metadata length mismatch")
    for i in range(cur, meta_end):
        if buf[i] != 0:
            raise MalformedBlock("non-canonical validity flag")

    return (
        number,
        data_off,
        <Py_ssize_t>data_len,
        tx_count,
        oid_off,
        <Py_ssize_t>oid_len,
        sig_off,
        <Py_ssize_t>sig_len,
    )
