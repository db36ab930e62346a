"""Minimal single-file NIfTI-1 (.nii, optionally gzipped), little-endian.

Only Int16 and Float32 payloads are handled; the affine is reduced to
pixdim. Statistic maps carry their kind in ``intent_name``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datamodel import FmriSeries, StatKind, StatMap
from ..errors import (
    BadMagic,
    DataError,
    FormatError,
    IoFailure,
    TruncatedPayload,
    UnsupportedDatatype,
    UnsupportedFormat,
)

__all__ = ["NiftiHeader", "read_nifti_array", "read_nifti", "read_statmap", "write_nifti"]

HEADER_SIZE = 348
VOX_OFFSET = 352
DATATYPES = {4: np.dtype("<i2"), 16: np.dtype("<f4")}
DATATYPE_CODES = {"int16": 4, "float32": 16}
INTENTS = {StatKind.R: 2, StatKind.T: 3, StatKind.P: 22, StatKind.Q: 22, StatKind.MASK: 0}
UNITS_MM_SEC = 2 | 8


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, ...]
    datatype: int
    pixdim: tuple[float, ...]
    vox_offset: int
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    intent_code: int = 0
    intent_name: str = ""
    byte_order: str = "<"


def _load_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedPayload(f"corrupt gzip stream in {path}: {exc}") from None
    return raw


def _parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayload(f"{len(raw)} bytes cannot hold a {HEADER_SIZE}-byte header")
    (size,) = struct.unpack_from("<i", raw, 0)
    if size != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise UnsupportedFormat("big-endian NIfTI is not supported")
        raise BadMagic(f"sizeof_hdr is {size}, expected {HEADER_SIZE}")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise BadMagic(f"magic {magic!r} is not single-file NIfTI-1 ('n+1')")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"dim[0] = {ndim} outside [1, 7]")
    dims = tuple(int(d) for d in dim[1 : ndim + 1])
    if any(d < 1 for d in dims):
        raise FormatError(f"non-positive dimension in {dims}")
    if ndim > 4 and any(d != 1 for d in dims[4:]):
        raise UnsupportedFormat("only up to 4 dimensions are supported")
    dims = dims[:4]
    intent_code, datatype, bitpix = struct.unpack_from("<hhh", raw, 68)
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} (only Int16=4 and Float32=16)")
    if bitpix != DATATYPES[datatype].itemsize * 8:
        raise FormatError(f"bitpix {bitpix} disagrees with datatype {datatype}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset, slope, inter = struct.unpack_from("<3f", raw, 108)
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise FormatError(f"vox_offset {vox_offset} is invalid for a single-file image")
    name = raw[328:344].split(b"\x00", 1)[0].decode("ascii", "replace")
    return NiftiHeader(
        dims=dims,
        datatype=int(datatype),
        # shortest float32 repr, so 3.3 stored as float32 reads back as 3.3
        pixdim=tuple(float(str(np.float32(p))) for p in pixdim[1 : len(dims) + 1]),
        vox_offset=int(vox_offset),
        scl_slope=float(slope) if np.isfinite(slope) else 0.0,
        scl_inter=float(inter) if np.isfinite(inter) else 0.0,
        intent_code=int(intent_code),
        intent_name=name,
    )


def read_nifti_array(path) -> tuple[np.ndarray, NiftiHeader]:
    """Voxel values (scaled when ``scl_slope != 0``) and the parsed header."""
    raw = _load_bytes(Path(path))
    hdr = _parse_header(raw)
    dtype = DATATYPES[hdr.datatype]
    count = int(np.prod(hdr.dims))
    need = hdr.vox_offset + count * dtype.itemsize
    if len(raw) < need:
        raise TruncatedPayload(f"payload needs {need} bytes, file has {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=hdr.vox_offset)
    arr = arr.reshape(hdr.dims, order="F")
    with np.errstate(invalid="ignore", over="ignore"):
        arr = arr.astype(np.float64)
        if hdr.scl_slope != 0.0:
            arr = arr * hdr.scl_slope + hdr.scl_inter
    if not np.all(np.isfinite(arr)):
        raise FormatError("image holds non-finite voxel values")
    return arr, hdr


def read_nifti(path) -> FmriSeries:
    arr, hdr = read_nifti_array(path)
    if arr.ndim != 4:
        raise DataError(f"expected a 4-D series, got {arr.ndim}-D image")
    vox = tuple(abs(p) if p else 1.0 for p in hdr.pixdim[:3])
    tr = hdr.pixdim[3] if hdr.pixdim[3] > 0 else 1.0
    return FmriSeries(arr, float(tr), vox)


def read_statmap(path) -> StatMap:
    arr, hdr = read_nifti_array(path)
    if arr.ndim == 4 and arr.shape[3] == 1:
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise DataError(f"expected a 3-D map, got {arr.ndim}-D image")
    try:
        kind = StatKind(hdr.intent_name)
    except ValueError:
        kind = {2: StatKind.R, 3: StatKind.T, 22: StatKind.P}.get(hdr.intent_code, StatKind.T)
    vox = tuple(abs(p) if p else 1.0 for p in hdr.pixdim[:3])
    return StatMap(arr, kind, vox)


def _header_bytes(dims, datatype, pixdim, slope, inter, intent_code, intent_name) -> bytes:
    buf = bytearray(VOX_OFFSET)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into("<8h", buf, 40, *dim)
    struct.pack_into("<hhh", buf, 68, intent_code, datatype, DATATYPES[datatype].itemsize * 8)
    pd = [1.0] + list(pixdim) + [1.0] * (7 - len(pixdim))
    struct.pack_into("<8f", buf, 76, *pd)
    struct.pack_into("<3f", buf, 108, float(VOX_OFFSET), slope, inter)
    buf[123] = UNITS_MM_SEC
    buf[328 : 328 + len(intent_name)] = intent_name.encode("ascii")[:16]
    buf[344:348] = b"n+1\x00"
    return bytes(buf)


def write_nifti(obj, path, dtype: str = "float32") -> Path:
    """Write an :class:`FmriSeries` (4-D) or :class:`StatMap` (3-D).

    ``dtype='int16'`` stores ``round((x - inter) / slope)`` with the slope
    chosen so the largest magnitude maps to 32767. Paths ending in ``.gz``
    are gzip-compressed with a zero timestamp so output is reproducible.
    """
    code = DATATYPE_CODES.get(str(dtype).lower())
    if code is None:
        raise UnsupportedDatatype(f"cannot write datatype {dtype!r}")
    if isinstance(obj, FmriSeries):
        values, pixdim = obj.data, list(obj.voxel_size) + [obj.tr]
        intent_code, intent_name = 0, ""
    elif isinstance(obj, StatMap):
        values, pixdim = obj.values, list(obj.voxel_size)
        intent_code, intent_name = INTENTS[obj.kind], obj.kind.value
    else:
        raise DataError(f"cannot write {type(obj).__name__} as NIfTI")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError("NIfTI payload must be finite")
    if any(d > 32767 for d in values.shape):
        raise DataError("dimension exceeds the NIfTI-1 int16 limit")
    slope, inter = 0.0, 0.0
    if code == 4:
        peak = float(np.abs(values).max()) if values.size else 0.0
        slope = peak / 32767.0 if peak > 0 else 1.0
        payload = np.round(values / slope).astype("<i2")
    else:
        payload = values.astype("<f4")
    body = _header_bytes(values.shape, code, pixdim, slope, inter, intent_code, intent_name)
    body += payload.tobytes(order="F")
    path = Path(path)
    if path.suffix == ".gz":
        body = gzip.compress(body, mtime=0)
    try:
        path.write_bytes(body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None
    return path
