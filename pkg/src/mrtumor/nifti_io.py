"""Reader and writer for single-file NIfTI-1 volumes (``.nii``).

Only the subset the pipeline needs is supported: three spatial dimensions,
datatypes uint8 / int16 / float32, either byte order on input and
little-endian on output.  Orientation (qform/sform) is written as a simple
centred scaling matrix and ignored on read; ``pixdim`` carries the geometry.

Voxel data is exposed as a float64 array indexed ``data[x, y, z]`` with the
scl_slope / scl_inter scaling already applied.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    MalformedHeader,
    NonFiniteVolume,
    TruncatedFile,
    UnsupportedDatatype,
)

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# datatype code -> (name, numpy type, bitpix)
DATATYPES = {
    2: ("uint8", np.uint8, 8),
    4: ("int16", np.int16, 16),
    16: ("float32", np.float32, 32),
}
DATATYPE_CODES = {name: code for code, (name, _, _) in DATATYPES.items()}

# byte offsets of the fields we touch, from the public nifti1.h layout
_OFF_SIZEOF_HDR = 0
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_XYZT_UNITS = 123
_OFF_DESCRIP = 148
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_SROW = 280
_OFF_MAGIC = 344


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, int, int]
    datatype_code: int = 16
    pixdim: tuple[float, float, float] = (1.0, 1.0, 1.0)
    vox_offset: int = DEFAULT_VOX_OFFSET
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC_SINGLE
    descrip: str = ""

    @property
    def datatype(self) -> str:
        return DATATYPES[self.datatype_code][0]

    @property
    def bitpix(self) -> int:
        return DATATYPES[self.datatype_code][2]


@dataclass
class Volume:
    """A 3-D intensity grid plus the header it was read from (or will be written with)."""

    header: NiftiHeader
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != tuple(self.header.dims):
            raise MalformedHeader(
                f"data shape {self.data.shape} does not match header dims {self.header.dims}"
            )

    @classmethod
    def from_array(cls, data, pixdim=(1.0, 1.0, 1.0), datatype="float32", descrip=""):
        """Wrap an array as a volume, rounding values to what ``datatype`` can store.

        Integer datatypes require integral values inside the type's range.
        """
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3:
            raise MalformedHeader(f"expected a 3-D array, got shape {arr.shape}")
        if datatype not in DATATYPE_CODES:
            raise UnsupportedDatatype(f"datatype {datatype!r} not in {sorted(DATATYPE_CODES)}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteVolume("volume contains non-finite intensities")
        code = DATATYPE_CODES[datatype]
        np_type = DATATYPES[code][1]
        if datatype == "float32":
            arr = arr.astype(np.float32).astype(np.float64)
        else:
            info = np.iinfo(np_type)
            if np.any(arr != np.round(arr)) or arr.min(initial=0) < info.min or arr.max(initial=0) > info.max:
                raise MalformedHeader(f"values are not representable as {datatype}")
        header = NiftiHeader(
            dims=tuple(int(n) for n in arr.shape),
            datatype_code=code,
            pixdim=tuple(float(np.float32(p)) for p in pixdim),
            descrip=descrip,
        )
        return cls(header, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.header.dims

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.header.pixdim, dtype=np.float64)

    def equals(self, other: "Volume") -> bool:
        return (
            self.header.dims == other.header.dims
            and np.allclose(self.header.pixdim, other.header.pixdim, rtol=0, atol=0)
            and np.array_equal(self.data, other.data)
        )


def _byte_order(buf: bytes) -> str:
    for order in ("<", ">"):
        dim0 = struct.unpack_from(order + "h", buf, _OFF_DIM)[0]
        if 1 <= dim0 <= 7:
            return order
    raise MalformedHeader("dim[0] is outside 1..7 in either byte order")


def parse_header(buf: bytes) -> tuple[NiftiHeader, str]:
    """Decode the first 348 bytes of ``buf``; returns the header and its byte order."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, file has {len(buf)}")
    if buf[:2] == b"\x1f\x8b":
        raise BadMagic("gzip-compressed stream; decompress to a raw .nii first")
    magic = bytes(buf[_OFF_MAGIC:_OFF_MAGIC + 4])
    if magic == MAGIC_PAIR:
        raise BadMagic("two-file (.hdr/.img) NIfTI-1 is not supported")
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"magic {magic!r} is not {MAGIC_SINGLE!r}")

    e = _byte_order(buf)
    sizeof_hdr = struct.unpack_from(e + "i", buf, _OFF_SIZEOF_HDR)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise MalformedHeader(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")

    dim = struct.unpack_from(e + "8h", buf, _OFF_DIM)
    ndim = dim[0]
    sizes = list(dim[1:ndim + 1])
    if any(n < 1 for n in sizes):
        raise MalformedHeader(f"non-positive dimension in {sizes}")
    if any(n != 1 for n in sizes[3:]):
        raise MalformedHeader(f"only 3-D volumes are supported, got dims {sizes}")
    sizes = (sizes + [1, 1, 1])[:3]

    datatype, bitpix = struct.unpack_from(e + "2h", buf, _OFF_DATATYPE)
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} (supported: uint8, int16, float32)")
    if bitpix != DATATYPES[datatype][2]:
        raise MalformedHeader(f"bitpix {bitpix} inconsistent with datatype code {datatype}")

    pixdim = struct.unpack_from(e + "8f", buf, _OFF_PIXDIM)[1:4]
    if not all(np.isfinite(p) and p > 0 for p in pixdim):
        raise MalformedHeader(f"voxel sizes must be finite and positive, got {pixdim}")

    vox_offset = struct.unpack_from(e + "f", buf, _OFF_VOX_OFFSET)[0]
    if not np.isfinite(vox_offset) or vox_offset < DEFAULT_VOX_OFFSET or vox_offset != int(vox_offset):
        raise MalformedHeader(f"vox_offset {vox_offset} must be an integer >= {DEFAULT_VOX_OFFSET}")

    slope, inter = struct.unpack_from(e + "2f", buf, _OFF_SCL_SLOPE)
    if slope == 0 or not np.isfinite(slope):
        # NIfTI-1: a zero (or unusable) slope means the data is unscaled
        slope, inter = 1.0, 0.0
    elif not np.isfinite(inter):
        raise MalformedHeader(f"scl_inter {inter} is not finite")

    descrip = bytes(buf[_OFF_DESCRIP:_OFF_DESCRIP + 80]).split(b"\x00", 1)[0]
    header = NiftiHeader(
        dims=tuple(int(n) for n in sizes),
        datatype_code=int(datatype),
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=int(vox_offset),
        scl_slope=float(slope),
        scl_inter=float(inter),
        magic=magic,
        descrip=descrip.decode("latin-1"),
    )
    return header, e


def decode_volume(buf: bytes) -> Volume:
    header, e = parse_header(buf)
    np_type = np.dtype(DATATYPES[header.datatype_code][1]).newbyteorder(e)
    count = int(np.prod(header.dims))
    needed = header.vox_offset + count * np_type.itemsize
    if len(buf) < needed:
        raise TruncatedFile(f"data section needs {needed} bytes, file has {len(buf)}")
    raw = np.frombuffer(buf, dtype=np_type, count=count, offset=header.vox_offset)
    # NIfTI stores x fastest
    data = raw.reshape(header.dims, order="F").astype(np.float64)
    if header.scl_slope != 1.0 or header.scl_inter != 0.0:
        data = data * header.scl_slope + header.scl_inter
    if not np.all(np.isfinite(data)):
        raise NonFiniteVolume("volume contains non-finite intensities")
    return Volume(header, data)


def read_volume(path) -> Volume:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_volume(buf)


def encode_volume(v: Volume) -> bytes:
    h = v.header
    if h.datatype_code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {h.datatype_code}")
    if v.data.shape != tuple(h.dims) or any(n < 1 for n in h.dims):
        raise MalformedHeader(f"data shape {v.data.shape} vs dims {h.dims}")
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteVolume("refusing to write a volume with non-finite intensities")

    _, np_type, bitpix = DATATYPES[h.datatype_code]
    raw = v.data
    if h.scl_slope != 1.0 or h.scl_inter != 0.0:
        raw = (raw - h.scl_inter) / h.scl_slope
    if np.issubdtype(np_type, np.integer):
        info = np.iinfo(np_type)
        raw = np.round(raw)
        if raw.size and (raw.min() < info.min or raw.max() > info.max):
            raise MalformedHeader(f"values overflow {DATATYPES[h.datatype_code][0]}")
    payload = raw.astype(np.dtype(np_type).newbyteorder("<")).tobytes(order="F")

    hdr = bytearray(DEFAULT_VOX_OFFSET)
    struct.pack_into("<i", hdr, _OFF_SIZEOF_HDR, HEADER_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, *h.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, _OFF_DATATYPE, h.datatype_code, bitpix)
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, *h.pixdim, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(DEFAULT_VOX_OFFSET))
    struct.pack_into("<2f", hdr, _OFF_SCL_SLOPE, h.scl_slope, h.scl_inter)
    hdr[_OFF_XYZT_UNITS] = 2  # millimetres
    hdr[_OFF_DESCRIP:_OFF_DESCRIP + 80] = h.descrip.encode("latin-1", "replace")[:79].ljust(80, b"\x00")
    # scanner-style sform: centred, axis-aligned, scaled by pixdim
    struct.pack_into("<2h", hdr, _OFF_QFORM_CODE, 0, 2)
    for axis in range(3):
        row = [0.0, 0.0, 0.0, -0.5 * (h.dims[axis] - 1) * h.pixdim[axis]]
        row[axis] = h.pixdim[axis]
        struct.pack_into("<4f", hdr, _OFF_SROW + 16 * axis, *row)
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = MAGIC_SINGLE
    # bytes 348..351: empty extension flag
    return bytes(hdr) + payload


def write_volume(v: Volume, path) -> None:
    blob = encode_volume(v)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
