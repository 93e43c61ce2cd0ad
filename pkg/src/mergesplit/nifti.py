"""Minimal NIfTI-1 single-file reader/writer.

Only the fields this package relies on are interpreted: dims, datatype,
per-axis spacing, vox_offset and the scl_slope/scl_inter scaling pair.
Orientation (qform/sform) is written for interoperability but ignored on
read; inputs are assumed to live on a shared, pre-aligned grid.

Voxel data is exchanged as a 3D array indexed [i, j, k] with i varying
fastest in the on-disk byte order (Fortran layout in memory).
"""

import gzip
import struct
import zlib

import numpy as np

from .errors import FormatError, MergeSplitError, UnsupportedDatatypeError

HEADER_SIZE = 348
SINGLE_MAGIC = b"n+1\x00"
PAIR_MAGIC = b"ni1\x00"

# NIfTI-1 datatype code -> numpy dtype (endian applied at read time)
_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    256: "i1",
    512: "u2",
    768: "u4",
}

_OFF_SIZEOF_HDR = 0
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_SFORM_CODE = 254
_OFF_SROW = 280
_OFF_MAGIC = 344


def _open_read(path):
    try:
        raw = open(path, "rb").read()
    except FileNotFoundError:
        raise MergeSplitError(f"no such file: {path}") from None
    except OSError as exc:
        raise MergeSplitError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read(path):
    """Read a .nii / .nii.gz file.

    Returns (data, spacing) where data is a 3D array in [i, j, k] order
    (integer dtype preserved, floating data scaled to float64) and spacing
    is the per-axis voxel size.
    """
    raw = _open_read(path)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the 348-byte header",
                          offset=len(raw))

    sizeof_hdr = struct.unpack_from("<i", raw, _OFF_SIZEOF_HDR)[0]
    if sizeof_hdr == HEADER_SIZE:
        end = "<"
    elif struct.unpack_from(">i", raw, _OFF_SIZEOF_HDR)[0] == HEADER_SIZE:
        end = ">"
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348; not a NIfTI-1 file",
                          offset=_OFF_SIZEOF_HDR)

    magic = raw[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic == PAIR_MAGIC:
        raise FormatError(f"{path}: two-file (.hdr/.img) NIfTI is not supported",
                          offset=_OFF_MAGIC)
    if magic != SINGLE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}; not a NIfTI-1 file",
                          offset=_OFF_MAGIC)

    dim = struct.unpack_from(end + "8h", raw, _OFF_DIM)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: dim[0] = {ndim} outside 1..7",
                          offset=_OFF_DIM)
    # Trailing singleton dimensions are tolerated; true 4D+ data is not.
    for ax in range(4, ndim + 1):
        if dim[ax] > 1:
            raise FormatError(
                f"{path}: {ndim}D data (dim[{ax}] = {dim[ax]}); only 3D volumes "
                "are supported", offset=_OFF_DIM + 2 * ax)
    dims = tuple(dim[ax] if ax <= ndim else 1 for ax in (1, 2, 3))
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive spatial dimension {dims}",
                          offset=_OFF_DIM + 2)

    datatype = struct.unpack_from(end + "h", raw, _OFF_DATATYPE)[0]
    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(datatype)
    dtype = np.dtype(end + _DTYPES[datatype])

    pixdim = struct.unpack_from(end + "8f", raw, _OFF_PIXDIM)
    spacing = tuple(float(pixdim[ax]) for ax in (1, 2, 3))
    for ax, s in enumerate(spacing):
        if not np.isfinite(s) or s <= 0:
            raise FormatError(f"{path}: pixdim[{ax + 1}] = {s} is not a valid "
                              "voxel size", offset=_OFF_PIXDIM + 4 * (ax + 1))

    vox_offset = struct.unpack_from(end + "f", raw, _OFF_VOX_OFFSET)[0]
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset = {vox_offset} precedes the header",
                          offset=_OFF_VOX_OFFSET)
    vox_offset = int(vox_offset)

    slope = struct.unpack_from(end + "f", raw, _OFF_SCL_SLOPE)[0]
    inter = struct.unpack_from(end + "f", raw, _OFF_SCL_INTER)[0]
    if np.isnan(slope):
        slope = 0.0
    if np.isnan(inter):
        inter = 0.0

    n_vox = dims[0] * dims[1] * dims[2]
    nbytes = n_vox * dtype.itemsize
    buf = raw[vox_offset:vox_offset + nbytes]
    if len(buf) < nbytes:
        raise FormatError(
            f"{path}: truncated voxel data ({len(buf)} of {nbytes} bytes)",
            offset=vox_offset + len(buf))
    data = np.frombuffer(buf, dtype=dtype).reshape(dims, order="F")

    if dtype.kind in "iu":
        if slope not in (0.0, 1.0) or inter != 0.0:
            raise FormatError(
                f"{path}: integer volume with non-identity scaling "
                f"(scl_slope={slope}, scl_inter={inter})",
                offset=_OFF_SCL_SLOPE)
    else:
        data = data.astype(np.float64)
        if slope != 0.0:
            data = data * slope + inter
    return data, spacing


def _pack_header(dims, spacing, datatype, bitpix):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, _OFF_SIZEOF_HDR, HEADER_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, _OFF_DATATYPE, datatype)
    struct.pack_into("<h", hdr, _OFF_BITPIX, bitpix)
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0,
                     spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, 352.0)
    struct.pack_into("<f", hdr, _OFF_SCL_SLOPE, 1.0)
    struct.pack_into("<f", hdr, _OFF_SCL_INTER, 0.0)
    struct.pack_into("<b", hdr, 123, 2)  # xyzt_units: millimetres
    struct.pack_into("<h", hdr, _OFF_SFORM_CODE, 1)
    srow = [spacing[0], 0, 0, 0, 0, spacing[1], 0, 0, 0, 0, spacing[2], 0]
    struct.pack_into("<12f", hdr, _OFF_SROW, *srow)
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = SINGLE_MAGIC
    return bytes(hdr)


def write(path, data, spacing):
    """Write a 3D array as a single-file NIfTI-1 volume.

    Integer arrays are stored as int32, floating arrays as float32. Output
    bytes are a pure function of the inputs (gzip mtime is pinned), so
    rewriting unchanged data yields an identical file.
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise MergeSplitError(f"expected a 3D array, got {data.ndim}D")
    if data.dtype.kind in "iu":
        payload = np.asfortranarray(data, dtype="<i4")
        datatype, bitpix = 8, 32
    else:
        payload = np.asfortranarray(data, dtype="<f4")
        datatype, bitpix = 16, 32

    blob = (_pack_header(data.shape, spacing, datatype, bitpix)
            + b"\x00\x00\x00\x00"
            + payload.tobytes(order="F"))
    path = str(path)
    try:
        if path.endswith(".gz"):
            with open(path, "wb") as f:
                # Pin filename and mtime so rewrites are byte-identical.
                with gzip.GzipFile(filename="", fileobj=f, mode="wb",
                                   mtime=0) as gz:
                    gz.write(blob)
        else:
            with open(path, "wb") as f:
                f.write(blob)
    except OSError as exc:
        raise MergeSplitError(f"cannot write {path}: {exc}") from exc
