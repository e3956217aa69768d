"""Tensor container, seeded random draws, and on-disk formats.

Everything the samplers touch is a Tensor: an immutable, C-ordered, flat
float64 buffer plus a shape.  Keeping the buffer flat and read-only means a
sampler state can be handed around, hashed into traces, and written to disk
without defensive copies.

Two byte formats live here.  The tensor format is deliberately minimal:

    bytes 0..3   magic "EDT1"
    bytes 4..7   rank, uint32 little-endian, must be >= 1
    then         rank dimension sizes, uint64 little-endian, each >= 1
    then         the values, float64 little-endian, C order, no padding

The PGM writer emits binary (P5) 8-bit images for eyeballing 2-d states;
values are clipped to [-1, 1] and mapped linearly onto [0, 255].

Random draws come from SeededRng, a counter-based splitmix64 stream with
Box-Muller normals.  The generator is implemented here rather than taken
from numpy so that the draw sequence is pinned by this module alone and
cannot drift with library versions; reproducibility of seeded runs is part
of the package contract.
"""

import math
import struct

import numpy as np

MAGIC = b"EDT1"

_MAX_RANK = 255
_MAX_ELEMENTS = 1 << 40  # allocation guard when reading untrusted files


class EdictError(Exception):
    """Base class for errors raised by this package."""


class FormatError(EdictError):
    """A file did not parse.  ``kind`` names the first problem found.

    Kinds: "bad_magic", "truncated", "bad_rank", "bad_shape", "trailing",
    "bad_header" (PGM only).
    """

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _check_shape(shape):
    shape = tuple(shape)
    if len(shape) < 1:
        raise ValueError("shape must have rank >= 1")
    for d in shape:
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise ValueError(f"shape dimensions must be positive ints, got {shape}")
    return shape


class Tensor:
    """Immutable flat float64 array with an explicit shape."""

    __slots__ = ("_shape", "_data")

    def __init__(self, shape, values):
        self._shape = _check_shape(shape)
        data = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
        n = math.prod(self._shape)
        if data.size != n:
            raise ValueError(
                f"shape {self._shape} needs {n} values, got {data.size}"
            )
        if data.base is not None or not data.flags.owndata:
            data = data.copy()
        data.flags.writeable = False
        self._data = data

    @classmethod
    def zeros(cls, shape):
        return cls(shape, np.zeros(math.prod(_check_shape(shape))))

    @classmethod
    def full(cls, shape, value):
        return cls(shape, np.full(math.prod(_check_shape(shape)), float(value)))

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            raise ValueError("0-d arrays have no tensor shape")
        return cls(arr.shape, arr.reshape(-1))

    @property
    def shape(self):
        return self._shape

    @property
    def size(self):
        return self._data.size

    @property
    def data(self):
        """The flat read-only float64 buffer."""
        return self._data

    def to_array(self):
        """Read-only numpy view with the tensor's shape."""
        return self._data.reshape(self._shape)

    def all_finite(self):
        return bool(np.isfinite(self._data).all())

    def values_equal(self, other):
        """Bitwise value equality (same shape, same bytes)."""
        return self._shape == other._shape and np.array_equal(
            self._data, other._data, equal_nan=True
        )

    def __repr__(self):
        return f"Tensor(shape={self._shape})"


# splitmix64 constants (Steele, Lea & Flood's published mixer).
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(1 << 53)
_TWO52 = float(1 << 52)


class SeededRng:
    """Deterministic random stream: splitmix64 words, Box-Muller normals.

    The raw stream is counter-based: word i is the splitmix64 mix of
    seed + (i+1)*gamma, so any run is a pure function of (seed, position).
    Normals are produced in pairs from consecutive words via the basic
    Box-Muller transform; ``normals(n)`` always consumes whole pairs and
    discards the odd half when n is odd, so the stream position after a
    call depends only on n.
    """

    def __init__(self, seed):
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ValueError(f"seed must be a non-negative int, got {seed!r}")
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._pos = 0

    def _raw(self, n):
        idx = np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)
        self._pos += n
        z = self._seed + idx * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def next_u64(self):
        return int(self._raw(1)[0])

    def uniforms(self, n):
        """n doubles in [0, 1), 53-bit resolution."""
        if n < 0:
            raise ValueError("n must be >= 0")
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) / _TWO53

    def normals(self, n):
        """n standard normal doubles."""
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.empty(0)
        pairs = (n + 1) // 2
        words = self._raw(2 * pairs)
        # u1 is offset into (0, 1) so log(u1) is always finite.
        u1 = ((words[0::2] >> np.uint64(12)).astype(np.float64) + 0.5) / _TWO52
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) / _TWO53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def normal(self):
        return float(self.normals(1)[0])

    def randrange(self, n):
        """Unbiased integer in [0, n) via rejection on the raw stream."""
        if n < 1:
            raise ValueError("n must be >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            word = self.next_u64()
            if word < limit:
                return word % n


def gaussian_draw(rng, shape):
    """Tensor of i.i.d. standard normals from the given stream."""
    shape = _check_shape(shape)
    return Tensor(shape, rng.normals(math.prod(shape)))


def write_tensor(tensor, path):
    """Write a Tensor to ``path`` in the EDT1 byte format."""
    dims = tensor.shape
    header = MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)
    payload = tensor.data.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path):
    """Read an EDT1 file back into a Tensor.

    Raises FormatError with a specific ``kind`` for each way the bytes can
    be wrong; the error message includes the offending value.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) >= 4 and blob[:4] != MAGIC:
        raise FormatError("bad_magic", f"expected magic {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError("truncated", f"file ends inside the header ({len(blob)} bytes)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank == 0 or rank > _MAX_RANK:
        raise FormatError("bad_rank", f"rank {rank} is outside [1, {_MAX_RANK}]")
    dims_end = 8 + 8 * rank
    if len(blob) < dims_end:
        raise FormatError("truncated", "file ends inside the dimension list")
    dims = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = 1
    for d in dims:
        if d == 0:
            raise FormatError("bad_shape", f"zero-sized dimension in {dims}")
        count *= d
    if count > _MAX_ELEMENTS:
        raise FormatError("bad_shape", f"{count} elements exceeds the reader limit")
    expected = dims_end + 8 * count
    if len(blob) < expected:
        raise FormatError(
            "truncated", f"payload needs {expected} bytes, file has {len(blob)}"
        )
    if len(blob) > expected:
        raise FormatError(
            "trailing", f"{len(blob) - expected} unexpected bytes after the payload"
        )
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=dims_end)
    return Tensor(dims, values.astype(np.float64))


def write_pgm(tensor, path):
    """Write a rank-2 Tensor as a binary 8-bit PGM image.

    Values are clipped to [-1, 1] and mapped linearly onto [0, 255]; the
    first dimension is image height.
    """
    if len(tensor.shape) != 2:
        raise ValueError(f"PGM export needs a rank-2 tensor, got shape {tensor.shape}")
    h, w = tensor.shape
    levels = np.rint((np.clip(tensor.data, -1.0, 1.0) + 1.0) * 127.5)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.astype(np.uint8).tobytes())


def read_pgm(path):
    """Read a binary 8-bit PGM written by write_pgm back into a Tensor."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise FormatError("bad_magic", f"expected PGM magic b'P5', got {blob[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise FormatError("bad_header", "malformed PGM header")
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError("bad_header", f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError("bad_shape", f"bad PGM dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    pixels = blob[pos : pos + w * h]
    if len(pixels) < w * h:
        raise FormatError("truncated", f"PGM needs {w * h} pixels, got {len(pixels)}")
    values = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 127.5 - 1.0
    return Tensor((h, w), values)
