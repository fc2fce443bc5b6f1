"""Binary little-endian PLY reading/writing for point maps and fused clouds.

Two fixed layouts are supported:

- point map (input):  float32 x, y, z, confidence
- fused cloud (output): float32 x, y, z + uint8 arm_id + uint16 view_id

Anything else is rejected; this is a data channel, not a general PLY library.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ManifestError

POINT_MAP_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("confidence", "<f4")]
)

CLOUD_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("arm_id", "u1"), ("view_id", "<u2")]
)

_PLY_TYPES = {"float": "<f4", "uchar": "u1", "ushort": "<u2"}


def _parse_header(raw: bytes, path: Path) -> tuple[int, list[tuple[str, str]], int]:
    """Return (vertex count, [(type, name), ...], body offset)."""
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ManifestError(f"unsupported PLY layout in {path}: missing header")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    count = -1
    props: list[tuple[str, str]] = []
    for line in lines[1:]:
        fields = line.split()
        if not fields or fields[0] == "comment":
            continue
        if fields[0] == "format":
            if fields[1:] != ["binary_little_endian", "1.0"]:
                raise ManifestError(
                    f"unsupported PLY layout in {path}: format must be binary_little_endian 1.0"
                )
        elif fields[0] == "element":
            if fields[1] != "vertex" or count >= 0:
                raise ManifestError(
                    f"unsupported PLY layout in {path}: expected a single vertex element"
                )
            count = int(fields[2])
        elif fields[0] == "property":
            props.append((fields[1], fields[2]))
    if count < 0:
        raise ManifestError(f"unsupported PLY layout in {path}: no vertex element")
    return count, props, end + len(b"end_header\n")


def _read_body(path: Path, dtype: np.dtype) -> np.ndarray:
    raw = Path(path).read_bytes()
    count, props, offset = _parse_header(raw, Path(path))
    expected = [(_PLY_TYPES_INV[dtype[name].str.lstrip("<>|")], name) for name in dtype.names]
    if props != expected:
        raise ManifestError(
            f"unsupported PLY layout in {path}: properties {props} != {expected}"
        )
    body = raw[offset:]
    if len(body) != count * dtype.itemsize:
        raise ManifestError(f"unsupported PLY layout in {path}: truncated vertex data")
    return np.frombuffer(body, dtype=dtype, count=count)


_PLY_TYPES_INV = {v.lstrip("<>|"): k for k, v in _PLY_TYPES.items()}


def _header(count: int, dtype: np.dtype) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    for name in dtype.names:
        lines.append(f"property {_PLY_TYPES_INV[dtype[name].str.lstrip('<>|')]} {name}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def read_point_map(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a point-map PLY; returns (points (n, 3) float64, confidences (n,))."""
    rows = _read_body(path, POINT_MAP_DTYPE)
    points = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    return points, rows["confidence"].astype(np.float64)


def write_point_map(path, points: np.ndarray, confidences: np.ndarray) -> None:
    points = np.asarray(points)
    rows = np.empty(len(points), dtype=POINT_MAP_DTYPE)
    rows["x"], rows["y"], rows["z"] = (points[:, i].astype("<f4") for i in range(3))
    rows["confidence"] = np.asarray(confidences).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_header(len(rows), POINT_MAP_DTYPE))
        fh.write(rows.tobytes())


def read_cloud(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a fused-cloud PLY; returns (points, arm_ids, view_ids)."""
    rows = _read_body(path, CLOUD_DTYPE)
    points = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    return points, rows["arm_id"].copy(), rows["view_id"].copy()


def write_cloud(path, points: np.ndarray, arm_ids: np.ndarray, view_ids: np.ndarray) -> None:
    points = np.asarray(points)
    rows = np.empty(len(points), dtype=CLOUD_DTYPE)
    rows["x"], rows["y"], rows["z"] = (points[:, i].astype("<f4") for i in range(3))
    rows["arm_id"] = np.asarray(arm_ids).astype("u1")
    rows["view_id"] = np.asarray(view_ids).astype("<u2")
    with open(path, "wb") as fh:
        fh.write(_header(len(rows), CLOUD_DTYPE))
        fh.write(rows.tobytes())
