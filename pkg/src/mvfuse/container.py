"""Self-describing little-endian container shared by the MODEL, HEAD, SCENE and
RESULT files.

Layout (all integers little-endian)::

    magic        16 bytes   ASCII, NUL padded, e.g. b"MVFUSE-MODEL-v1"
    payload_len  uint64
    header_crc   uint32     CRC-32 of the 24 bytes above
    payload      payload_len bytes, a sequence of records
    payload_crc  uint32     CRC-32 of the payload

Each record is::

    name_len uint16, name utf-8, dtype uint8 ('f' float64, 'i' int64, 's' utf-8),
    ndim uint8, shape ndim * uint64, data (row-major)
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC_PREFIX = b"MVFUSE-"
MAGIC_LEN = 16
HEADER = struct.Struct("<16sQI")
FOOTER = struct.Struct("<I")


class FormatError(Exception):
    """Base class for container read failures."""


class MalformedHeaderError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


class InvariantError(FormatError):
    """Payload decoded fine but violates the model/head invariants."""


def _pack_record(name, value):
    out = bytearray()
    raw_name = name.encode("utf-8")
    out += struct.pack("<H", len(raw_name)) + raw_name
    if isinstance(value, str):
        data = value.encode("utf-8")
        out += struct.pack("<BB", ord("s"), 1) + struct.pack("<Q", len(data)) + data
        return bytes(out)
    arr = np.asarray(value)
    if arr.dtype.kind in "iub":
        arr = arr.astype("<i8")
        code = "i"
    elif arr.dtype.kind == "f":
        arr = arr.astype("<f8")
        code = "f"
    else:
        raise TypeError(f"cannot store dtype {arr.dtype} for field {name!r}")
    out += struct.pack("<BB", ord(code), arr.ndim)
    out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    out += np.ascontiguousarray(arr).tobytes()
    return bytes(out)


def encode(magic, fields):
    payload = b"".join(_pack_record(k, v) for k, v in fields.items())
    magic_b = magic.encode("ascii").ljust(MAGIC_LEN, b"\0")
    head = struct.pack("<16sQ", magic_b, len(payload))
    return head + struct.pack("<I", zlib.crc32(head)) + payload + FOOTER.pack(zlib.crc32(payload))


def write(path, magic, fields):
    Path(path).write_bytes(encode(magic, fields))


def decode(blob, magic):
    if len(blob) == 0:
        raise MalformedHeaderError("empty file")
    if len(blob) < HEADER.size:
        if blob.startswith(MAGIC_PREFIX[: len(blob)]):
            raise TruncatedFileError(f"file ends inside the header ({len(blob)} bytes)")
        raise MalformedHeaderError("missing MVFUSE magic header")
    magic_b, payload_len, header_crc = HEADER.unpack_from(blob)
    if zlib.crc32(blob[:24]) != header_crc:
        raise ChecksumError("header checksum mismatch")
    found = magic_b.rstrip(b"\0").decode("ascii", errors="replace")
    end = HEADER.size + payload_len
    if len(blob) < end + FOOTER.size:
        raise TruncatedFileError(f"expected {end + FOOTER.size} bytes, found {len(blob)}")
    if len(blob) > end + FOOTER.size:
        raise ChecksumError("trailing bytes after payload checksum")
    payload = blob[HEADER.size : end]
    (payload_crc,) = FOOTER.unpack_from(blob, end)
    if zlib.crc32(payload) != payload_crc:
        raise ChecksumError("payload checksum mismatch")
    if not found.startswith("MVFUSE-"):
        raise MalformedHeaderError(f"bad magic {found!r}")
    if found != magic:
        kind = magic.rsplit("-", 1)[0]
        if found.rsplit("-", 1)[0] == kind:
            raise VersionError(f"unsupported version {found!r}, expected {magic!r}")
        raise MalformedHeaderError(f"file is {found!r}, expected {magic!r}")
    return _parse_payload(payload)


def _parse_payload(payload):
    fields = {}
    pos = 0
    try:
        while pos < len(payload):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos : pos + n].decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", payload, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", payload, pos)
            pos += 8 * ndim
            code = chr(code)
            if code == "s":
                size = shape[0]
                fields[name] = payload[pos : pos + size].decode("utf-8")
                pos += size
                continue
            dtype = {"f": "<f8", "i": "<i8"}[code]
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = 8 * count
            if pos + nbytes > len(payload):
                raise TruncatedFileError(f"record {name!r} runs past the payload")
            arr = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).reshape(shape)
            fields[name] = arr.astype(np.float64 if code == "f" else np.int64)
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise MalformedHeaderError(f"corrupt record table: {exc}") from exc
    return fields


def read(path, magic):
    return decode(Path(path).read_bytes(), magic)
