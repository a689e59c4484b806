"""
File formats of the toolkit: TNSR tensors, TNSR checkpoint archives,
ASCII OBJ meshes, ASCII PLY point clouds and line-delimited records.
"""

import os
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import trimesh

from exceptions import DataError
from log import logging

logger = logging.getLogger(__name__)

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
ARCHIVE_MAGIC = b"TNSRPACK"
ARCHIVE_VERSION = 1

# dtype code -> little-endian numpy dtype
TNSR_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i4"),
}


def _dtype_code(dtype: np.dtype) -> Optional[int]:
    for code, candidate in TNSR_DTYPES.items():
        if dtype.kind == candidate.kind and dtype.itemsize == candidate.itemsize:
            return code
    return None


def checkdir(dir):
    if not os.path.isdir(dir):
        logger.info("Creating directory: " + dir)
        try:
            os.makedirs(dir, exist_ok=True)
        except OSError as e:
            logger.error("Error occured during creating directory:" + dir)
            logger.error(e)
            raise DataError(f"Cannot create directory {dir}: {e}")


def require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"File not found: {path}")
    return path


# ---------------------------------------------------------------- TNSR

def encode_tnsr(array: np.ndarray) -> bytes:
    """Serialize an array (float32, float64, uint8 or int32) to TNSR bytes."""
    array = np.asarray(array)
    code = _dtype_code(array.dtype)
    if code is None:
        raise ValueError(f"Unsupported TNSR dtype: {array.dtype}")
    if array.ndim > 255:
        raise ValueError("TNSR rank must fit in one byte")
    header = TNSR_MAGIC + struct.pack("<BBB", TNSR_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=TNSR_DTYPES[code]).tobytes()
    return header + payload


def decode_tnsr(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Parse one TNSR record at ``offset``; returns the array and the end offset."""
    if buffer[offset:offset + 4] != TNSR_MAGIC:
        raise DataError("Bad TNSR magic")
    if len(buffer) < offset + 7:
        raise DataError("Truncated TNSR header")
    version, code, rank = struct.unpack_from("<BBB", buffer, offset + 4)
    if version != TNSR_VERSION:
        raise DataError(f"Unsupported TNSR version {version}")
    if code not in TNSR_DTYPES:
        raise DataError(f"Unknown TNSR dtype code {code}")
    start = offset + 7
    if len(buffer) < start + 4 * rank:
        raise DataError("Truncated TNSR dims")
    dims = struct.unpack_from(f"<{rank}I", buffer, start)
    start += 4 * rank
    dtype = TNSR_DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    end = start + nbytes
    if len(buffer) < end:
        raise DataError(f"TNSR payload too short: expected {nbytes} bytes")
    array = np.frombuffer(buffer, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
    return array.reshape(dims).copy(), end


def write_tnsr(path: str, array: np.ndarray):
    with open(path, "wb") as f:
        f.write(encode_tnsr(array))


def read_tnsr(path: str) -> np.ndarray:
    with open(require_file(path), "rb") as f:
        buffer = f.read()
    array, end = decode_tnsr(buffer)
    if end != len(buffer):
        raise DataError(f"Trailing bytes after TNSR payload in {path}")
    return array


# ---------------------------------------------------------------- archives

def format_header(values: Dict[str, str]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in values.items())


def parse_header(text: str) -> Dict[str, str]:
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"Malformed header record: {line}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_archive(path: str, header: Dict[str, str], tensors: Dict[str, np.ndarray]):
    """Write named tensors plus a structured-text header into one archive."""
    text = format_header(header).encode("utf-8")
    chunks = [ARCHIVE_MAGIC, struct.pack("<B", ARCHIVE_VERSION),
              struct.pack("<I", len(text)), text, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        encoded_name = name.encode("utf-8")
        blob = encode_tnsr(array)
        chunks += [struct.pack("<H", len(encoded_name)), encoded_name,
                   struct.pack("<Q", len(blob)), blob]
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_archive(path: str) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    with open(require_file(path), "rb") as f:
        buffer = f.read()
    if buffer[:8] != ARCHIVE_MAGIC:
        raise DataError(f"Not a TNSR archive: {path}")
    try:
        (version,) = struct.unpack_from("<B", buffer, 8)
        if version != ARCHIVE_VERSION:
            raise DataError(f"Unsupported archive version {version}")
        (header_len,) = struct.unpack_from("<I", buffer, 9)
        offset = 13
        header = parse_header(buffer[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        (count,) = struct.unpack_from("<I", buffer, offset)
        offset += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buffer, offset)
            offset += 2
            name = buffer[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (blob_len,) = struct.unpack_from("<Q", buffer, offset)
            offset += 8
            array, end = decode_tnsr(buffer, offset)
            if end != offset + blob_len:
                raise DataError(f"Archive entry {name} has inconsistent length")
            tensors[name] = array
            offset = end
    except struct.error as e:
        raise DataError(f"Truncated archive {path}: {e}")
    return header, tensors


# ---------------------------------------------------------------- OBJ

OBJ_DIGITS = 10


def write_obj(path: str, vertices: np.ndarray, triangles: np.ndarray):
    mesh = trimesh.Trimesh(vertices=np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
                           faces=np.asarray(triangles, dtype=np.int64).reshape(-1, 3), process=False)
    if len(mesh.faces) == 0:
        # the OBJ exporter needs at least one face
        with open(path, "w") as f:
            f.write("# empty mesh\n")
        return
    mesh.export(path, file_type="obj", include_normals=False, include_color=False, include_texture=False,
                digits=OBJ_DIGITS)


def read_obj(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices and 0-based triangles in file order; polygons come back triangulated."""
    with open(require_file(path)) as f:
        if not any(line.startswith("v ") for line in f):
            return np.zeros((0, 3), dtype=np.float64), np.zeros((0, 3), dtype=np.int64)
    try:
        mesh = trimesh.load(path, file_type="obj", force="mesh", process=False, maintain_order=True,
                            skip_materials=True)
        vertices = np.asarray(mesh.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3)
    except Exception as e:
        # trimesh reports malformed records with assorted exception types
        raise DataError(f"{path}: malformed OBJ ({type(e).__name__}: {e})")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise DataError(f"{path}: face index out of range")
    return vertices, triangles


# ---------------------------------------------------------------- PLY

def write_ply(path: str, points: np.ndarray):
    """ASCII PLY point cloud."""
    cloud = trimesh.PointCloud(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    cloud.export(path, file_type="ply", encoding="ascii")


def read_ply(path: str) -> np.ndarray:
    require_file(path)
    try:
        cloud = trimesh.load(path, file_type="ply", process=False)
        points = np.asarray(cloud.vertices, dtype=np.float64).reshape(-1, 3)
    except Exception as e:
        raise DataError(f"{path}: malformed PLY ({type(e).__name__}: {e})")
    return points


# ---------------------------------------------------------------- records

def append_records(path: str, records: List[Dict]):
    """Append line-delimited JSON records (one object per line)."""
    if not records:
        return
    frame = pd.DataFrame.from_records(records)
    with open(path, "a") as f:
        f.write(frame.to_json(orient="records", lines=True).rstrip("\n") + "\n")


def read_records(path: str) -> pd.DataFrame:
    require_file(path)
    return pd.read_json(path, lines=True)
