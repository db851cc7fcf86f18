"""MetaImage (.mha / .mhd + .raw) reader and writer for 3D scalar volumes.

Only axis-aligned images are accepted. Payloads are little-endian on write;
big-endian and zlib-compressed payloads are accepted on read.
"""

from __future__ import annotations

import os
import zlib
from pathlib import Path

import numpy as np

from .errors import ContractError, IntegrityError, ParseError, UnsupportedRankError
from .volume import Mask, Volume

ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype(np.uint8),
    "MET_CHAR": np.dtype(np.int8),
    "MET_USHORT": np.dtype(np.uint16),
    "MET_SHORT": np.dtype(np.int16),
    "MET_UINT": np.dtype(np.uint32),
    "MET_INT": np.dtype(np.int32),
    "MET_FLOAT": np.dtype(np.float32),
    "MET_DOUBLE": np.dtype(np.float64),
}
WRITABLE_TYPES = ("MET_UCHAR", "MET_USHORT", "MET_FLOAT", "MET_DOUBLE")

_MATRIX_KEYS = ("TransformMatrix", "Rotation", "Orientation")
_OFFSET_KEYS = ("Offset", "Origin", "Position")
_TRUE = {"true", "1", "yes"}


def _floats(key: str, raw: str, n: int) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split()]
    except ValueError:
        raise ParseError(f"{key}: expected {n} numbers, got {raw!r}", key=key) from None
    if len(values) != n:
        raise ParseError(f"{key}: expected {n} numbers, got {len(values)}", key=key)
    return values


def _ints(key: str, raw: str, n: int) -> list[int]:
    try:
        values = [int(tok) for tok in raw.split()]
    except ValueError:
        raise ParseError(f"{key}: expected {n} integers, got {raw!r}", key=key) from None
    if len(values) != n:
        raise ParseError(f"{key}: expected {n} integers, got {len(values)}", key=key)
    return values


def _read_header(fh) -> dict[str, str]:
    header: dict[str, str] = {}
    lineno = 0
    while True:
        raw = fh.readline()
        if not raw:
            raise ParseError("header ended before ElementDataFile", key="ElementDataFile")
        lineno += 1
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError(f"non-ASCII header line {lineno}", line=lineno) from None
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"header line {lineno} is not 'Key = Value': {line!r}", line=lineno)
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
        if key.strip() == "ElementDataFile":
            return header


def load_volume(path, as_mask: bool = False) -> Volume:
    """Read a 3D MetaImage. Voxels are converted to float64 (bool for masks)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh)
        local_payload_start = fh.tell()

    if "NDims" not in header:
        raise ParseError("missing NDims", key="NDims")
    try:
        ndims = int(header["NDims"])
    except ValueError:
        raise ParseError(f"NDims: not an integer: {header['NDims']!r}", key="NDims") from None
    if ndims != 3:
        raise UnsupportedRankError(f"only 3D images are supported, NDims = {ndims}")

    if "DimSize" not in header:
        raise ParseError("missing DimSize", key="DimSize")
    dims = _ints("DimSize", header["DimSize"], 3)
    if min(dims) < 1:
        raise ParseError(f"DimSize must be positive, got {dims}", key="DimSize")

    etype = header.get("ElementType")
    if etype not in ELEMENT_TYPES:
        raise ParseError(f"unsupported ElementType {etype!r}", key="ElementType")
    channels = int(header.get("ElementNumberOfChannels", "1"))
    if channels != 1:
        raise ParseError("only scalar images are supported", key="ElementNumberOfChannels")

    spacing = _floats("ElementSpacing", header.get("ElementSpacing", "1 1 1"), 3)
    if min(spacing) <= 0:
        raise ParseError(f"ElementSpacing must be positive, got {spacing}", key="ElementSpacing")
    origin = [0.0, 0.0, 0.0]
    for key in _OFFSET_KEYS:
        if key in header:
            origin = _floats(key, header[key], 3)
            break
    for key in _MATRIX_KEYS:
        if key in header:
            matrix = _floats(key, header[key], 9)
            if not np.allclose(matrix, np.eye(3).ravel(), atol=1e-6):
                raise ParseError(f"{key}: only identity orientation is supported", key=key)

    big_endian = header.get("BinaryDataByteOrderMSB", header.get("ElementByteOrderMSB", "False"))
    dtype = ELEMENT_TYPES[etype].newbyteorder(">" if big_endian.lower() in _TRUE else "<")
    compressed = header.get("CompressedData", "False").lower() in _TRUE

    data_file = header["ElementDataFile"]
    if data_file == "LOCAL":
        with open(path, "rb") as fh:
            fh.seek(local_payload_start)
            payload = fh.read()
    elif data_file.upper() == "LIST" or "%" in data_file:
        raise ParseError(f"multi-file payloads are not supported: {data_file!r}", key="ElementDataFile")
    else:
        raw_path = path.parent / data_file
        if not raw_path.exists():
            raise ParseError(f"data file not found: {raw_path}", key="ElementDataFile")
        payload = raw_path.read_bytes()
        skip = int(header.get("HeaderSize", "0"))
        if skip > 0:
            payload = payload[skip:]
    if compressed:
        try:
            payload = zlib.decompress(payload)
        except zlib.error as exc:
            raise IntegrityError(f"corrupt compressed payload: {exc}") from None

    n = dims[0] * dims[1] * dims[2]
    if len(payload) != n * dtype.itemsize:
        raise IntegrityError(
            f"DimSize {dims} needs {n} voxels ({n * dtype.itemsize} bytes), "
            f"payload has {len(payload)} bytes"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(dims, order="F")
    if as_mask:
        return Mask(data, spacing, origin)
    return Volume(data.astype(np.float64), spacing, origin)


def load_mask(path) -> Mask:
    return load_volume(path, as_mask=True)  # type: ignore[return-value]


def _encode(v: Volume, element_type: str) -> bytes:
    dtype = ELEMENT_TYPES[element_type].newbyteorder("<")
    data = v.data
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if dtype.kind in "ui":
        info = np.iinfo(dtype)
        if not np.isfinite(data).all() or (data != np.round(data)).any():
            raise ContractError(f"{element_type} requires integral voxel values")
        if data.min() < info.min or data.max() > info.max:
            raise ContractError(f"voxel values out of range for {element_type}")
    return np.asarray(data, dtype=dtype).ravel(order="F").tobytes()


def _fmt(values) -> str:
    # repr() round-trips float64 exactly
    return " ".join(repr(float(x)) for x in values)


def save_volume(v: Volume, path, element_type: str | None = None, compress: bool = False) -> None:
    """Write ``v`` as MetaImage. ``.mha`` embeds the payload; ``.mhd`` writes a sibling ``.raw``.

    The default element type is MET_UCHAR for masks, MET_DOUBLE otherwise.
    """
    if element_type is None:
        element_type = "MET_UCHAR" if isinstance(v, Mask) else "MET_DOUBLE"
    if element_type not in WRITABLE_TYPES:
        raise ContractError(f"cannot write ElementType {element_type!r}")
    path = Path(path)
    payload = _encode(v, element_type)
    if compress:
        payload = zlib.compress(payload)

    detached = path.suffix.lower() == ".mhd"
    raw_name = path.with_suffix(".zraw" if compress else ".raw").name if detached else "LOCAL"
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"CompressedData = {'True' if compress else 'False'}",
    ]
    if compress:
        lines.append(f"CompressedDataSize = {len(payload)}")
    lines += [
        "TransformMatrix = 1 0 0 0 1 0 0 0 1",
        f"Offset = {_fmt(v.origin)}",
        f"ElementSpacing = {_fmt(v.spacing)}",
        f"DimSize = {' '.join(str(d) for d in v.dims)}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_name}",
    ]
    header = ("\n".join(lines) + "\n").encode("ascii")
    try:
        if detached:
            (path.parent / raw_name).write_bytes(payload)
            path.write_bytes(header)
        else:
            path.write_bytes(header + payload)
    except OSError as exc:
        raise OSError(f"cannot write {os.fspath(path)}: {exc}") from exc
