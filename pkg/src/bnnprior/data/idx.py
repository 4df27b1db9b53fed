"""Reader and writer for the IDX format used by the MNIST distribution.

Header: two zero bytes, a type code (0x08 = unsigned byte), the number of
dimensions, then one big-endian uint32 per dimension, then the payload.
"""

import struct

import numpy as np

from ..errors import FormatError

LABELS_MAGIC = 0x00000801
IMAGES_MAGIC = 0x00000803


def parse_idx(data: bytes) -> np.ndarray:
    """Parse raw IDX bytes into a uint8 array."""
    if len(data) < 4:
        raise FormatError(f"IDX header truncated at byte offset {len(data)} (need 4)")
    magic, = struct.unpack(">I", data[:4])
    if magic >> 8 != 0x08:
        raise FormatError(f"bad IDX magic 0x{magic:08x} at byte offset 0 (only unsigned-byte payloads are supported)")
    ndim = magic & 0xFF
    if ndim < 1:
        raise FormatError("IDX file declares zero dimensions (byte offset 3)")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise FormatError(f"IDX dimension table truncated at byte offset {len(data)} (need {header_end})")
    shape = struct.unpack(">" + "I" * ndim, data[4:header_end])
    n = int(np.prod(shape))
    if len(data) < header_end + n:
        raise FormatError(f"IDX payload truncated at byte offset {len(data)} (need {header_end + n})")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=header_end).reshape(shape)


def load_idx(path) -> np.ndarray:
    """Load an IDX file.

    Label files (magic 0x801) come back as integer arrays; image files
    (three or more dimensions) are rescaled from bytes to floats in [0, 1].
    """
    with open(path, "rb") as fh:
        data = fh.read()
    arr = parse_idx(data)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    return arr.astype(np.float64) / 255.0


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise FormatError("only uint8 arrays can be written as IDX")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x0800 | arr.ndim))
        fh.write(struct.pack(">" + "I" * arr.ndim, *arr.shape))
        fh.write(arr.tobytes())
