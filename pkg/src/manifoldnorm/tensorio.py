"""Binary serialization of feature grids and labeled datasets.

Layout, all little-endian:

    magic   4 bytes  "MNRM"
    version u16      currently 1
    kind    u8       manifold family code
    n       u16      matrix size / sphere dimension parameter
    dims    5 x u32  grid extents (D1, D2, D3, N, C)
    payload           cells as float64, row-major, point shape appended
    labels  optional  "LBLS", u32 count == N, count x i64
    crc     u32      CRC32 of every preceding byte

The payload length is fully determined by the header, so truncation,
trailing garbage, and bit flips are all detected before any data is
handed back.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import FormatError
from .geometry import ManifoldKind, make_manifold
from .normalization import FeatureGrid

__all__ = ["write_grid", "read_grid", "MAGIC", "VERSION"]

MAGIC = b"MNRM"
VERSION = 1
_LABEL_MAGIC = b"LBLS"
_U32_MAX = 2**32 - 1

_KIND_CODES = {
    ManifoldKind.SPD_AFFINE: 1,
    ManifoldKind.SPD_LOG_EUCLIDEAN: 2,
    ManifoldKind.SPHERE: 3,
    ManifoldKind.SPECIAL_ORTHOGONAL: 4,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_HEADER = struct.Struct("<4sHBH5I")


def write_grid(path, grid: FeatureGrid, labels: np.ndarray | None = None) -> None:
    """Serialize a grid, with one i64 label per sample when given."""
    m = grid.manifold
    dims = grid.dims
    if any(d > _U32_MAX for d in dims):
        raise FormatError(f"grid extents {dims} overflow the u32 header fields")
    header = _HEADER.pack(MAGIC, VERSION, _KIND_CODES[m.kind], m.n, *dims)
    payload = np.ascontiguousarray(grid.data, dtype="<f8").tobytes()
    body = header + payload
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (dims[3],):
            raise FormatError(
                f"need one label per sample: {dims[3]} samples, shape {labels.shape}"
            )
        body += _LABEL_MAGIC + struct.pack("<I", dims[3])
        body += np.ascontiguousarray(labels, dtype="<i8").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", crc))


def read_grid(path) -> tuple[FeatureGrid, np.ndarray | None]:
    """Inverse of write_grid; returns (grid, labels-or-None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size + 4:
        raise FormatError("file too short to hold a header and checksum")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError("checksum mismatch: file corrupted")

    magic, version, kind_code, n, *dims = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"unknown manifold code {kind_code}")
    manifold = make_manifold(_CODE_KINDS[kind_code], n)

    dims = tuple(dims)
    cells = int(np.prod([np.int64(d) for d in dims]))
    count = cells * int(np.prod(manifold.point_shape, dtype=np.int64))
    start = _HEADER.size
    end = start + count * 8
    if end > len(body):
        raise FormatError("payload truncated relative to the declared extents")
    data = np.frombuffer(body[start:end], dtype="<f8").reshape(
        dims + manifold.point_shape
    )
    grid = FeatureGrid(manifold, np.ascontiguousarray(data))

    labels = None
    rest = body[end:]
    if rest:
        if rest[:4] != _LABEL_MAGIC or len(rest) < 8:
            raise FormatError("unrecognized trailing block")
        (count,) = struct.unpack_from("<I", rest, 4)
        if count != dims[3]:
            raise FormatError(
                f"label count {count} does not match sample count {dims[3]}"
            )
        if len(rest) != 8 + 8 * count:
            raise FormatError("label block truncated")
        labels = np.frombuffer(rest[8:], dtype="<i8").copy()
    return grid, labels
