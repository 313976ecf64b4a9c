"""PLY point-cloud I/O: ascii and binary little-endian, xyz + rgb.

The parser needs x, y, z and red, green, blue per-vertex properties and
skips any other scalar properties. Positions are widened to float64 (exact
for float32 input), colors to uint8. Every parse failure reports the byte
offset where it was detected.

serialize_ply writes binary little-endian with double-precision positions so
parse(serialize(cloud)) round-trips bit-exactly.
"""

from __future__ import annotations

import numpy as np

_SCALAR_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}

_REQUIRED = ("x", "y", "z", "red", "green", "blue")


class PlyError(ValueError):
    """Malformed or truncated PLY payload; offset is a byte position."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


def _header_lines(data: bytes):
    """Yield (line text, start offset); stops after end_header."""
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyError("header not terminated by end_header", pos)
        raw = data[pos:nl]
        try:
            text = raw.decode("ascii").strip("\r").strip()
        except UnicodeDecodeError:
            raise PlyError("non-ascii bytes inside header", pos) from None
        yield text, pos
        pos = nl + 1
        if text == "end_header":
            return
    raise PlyError("header not terminated by end_header", pos)


def _parse_header(data: bytes):
    lines = _header_lines(data)
    first, offset = next(lines)
    if first != "ply":
        raise PlyError("file does not start with 'ply'", offset)

    fmt = None
    elements: list[dict] = []  # {"name", "count", "properties": [(name, code)], "offset"}
    body_offset = None
    for text, offset in lines:
        if text == "end_header":
            body_offset = offset + len("end_header") + 1
            break
        if not text or text.startswith("comment") or text.startswith("obj_info"):
            continue
        parts = text.split()
        if parts[0] == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise PlyError(f"malformed format line: {text!r}", offset)
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported format {parts[1]!r}", offset)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"malformed element line: {text!r}", offset)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyError(f"bad element count in {text!r}", offset) from None
            elements.append(
                {"name": parts[1], "count": count, "properties": [], "offset": offset}
            )
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element", offset)
            if parts[1] == "list":
                elements[-1]["properties"].append((parts[-1], "list"))
            else:
                if len(parts) != 3:
                    raise PlyError(f"malformed property line: {text!r}", offset)
                code = _SCALAR_TYPES.get(parts[1])
                if code is None:
                    raise PlyError(f"unknown property type {parts[1]!r}", offset)
                elements[-1]["properties"].append((parts[2], code))
        else:
            raise PlyError(f"unrecognized header line: {text!r}", offset)
    if fmt is None:
        raise PlyError("header has no format line", 0)
    if body_offset is None:
        raise PlyError("header not terminated by end_header", len(data))
    return fmt, elements, body_offset


def parse_ply(data: bytes):
    """Parse PLY bytes into a PointCloud (positions + colors, header order)."""
    from .scene import PointCloud

    fmt, elements, body_offset = _parse_header(data)

    vertex = None
    preceding = []
    for elem in elements:
        if elem["name"] == "vertex":
            vertex = elem
            break
        preceding.append(elem)
    if vertex is None:
        raise PlyError("no vertex element declared", body_offset)

    prop_names = [name for name, _ in vertex["properties"]]
    missing = [name for name in _REQUIRED if name not in prop_names]
    if missing:
        raise PlyError(
            f"vertex element lacks required properties: {', '.join(missing)}",
            vertex["offset"],
        )
    if any(code == "list" for _, code in vertex["properties"]):
        raise PlyError("list properties on the vertex element are unsupported", vertex["offset"])

    count = vertex["count"]
    if count <= 0:
        raise PlyError(f"vertex count must be positive, got {count}", vertex["offset"])

    if fmt == "binary_little_endian":
        offset = body_offset
        for elem in preceding:
            if any(code == "list" for _, code in elem["properties"]):
                raise PlyError(
                    f"cannot skip element {elem['name']!r} with list properties before vertex",
                    elem["offset"],
                )
            offset += elem["count"] * sum(
                np.dtype("<" + code).itemsize for _, code in elem["properties"]
            )
        dtype = np.dtype([(name, "<" + code) for name, code in vertex["properties"]])
        needed = count * dtype.itemsize
        if len(data) - offset < needed:
            complete = max(0, (len(data) - offset)) // dtype.itemsize
            raise PlyError(
                f"truncated payload: header declares {count} vertices, "
                f"body holds {complete}",
                offset + complete * dtype.itemsize,
            )
        records = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    else:
        records = _parse_ascii_vertices(data, body_offset, preceding, vertex)

    positions = np.stack(
        [records["x"].astype(np.float64), records["y"].astype(np.float64),
         records["z"].astype(np.float64)],
        axis=1,
    )
    colors = np.stack(
        [records["red"].astype(np.uint8), records["green"].astype(np.uint8),
         records["blue"].astype(np.uint8)],
        axis=1,
    )
    return PointCloud(positions, colors)


def _parse_ascii_vertices(data: bytes, body_offset: int, preceding, vertex):
    pos = body_offset
    for elem in preceding:
        for _ in range(elem["count"]):
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PlyError(f"truncated payload inside element {elem['name']!r}", pos)
            pos = nl + 1

    names = [name for name, _ in vertex["properties"]]
    dtype = np.dtype([(name, "<" + code) for name, code in vertex["properties"]])
    records = np.zeros(vertex["count"], dtype=dtype)
    for i in range(vertex["count"]):
        if pos >= len(data):
            raise PlyError(
                f"truncated payload: header declares {vertex['count']} vertices, body holds {i}",
                pos,
            )
        nl = data.find(b"\n", pos)
        if nl < 0:
            nl = len(data)
        tokens = data[pos:nl].split()
        if len(tokens) != len(names):
            raise PlyError(
                f"vertex {i}: expected {len(names)} values, got {len(tokens)}", pos
            )
        for name, token in zip(names, tokens):
            records[name][i] = float(token)
        pos = nl + 1
    return records


def serialize_ply(cloud, ascii_format: bool = False) -> bytes:
    """Write a PointCloud as PLY; binary little-endian unless ascii_format."""
    count = len(cloud)
    fmt = "ascii" if ascii_format else "binary_little_endian"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {count}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    ).encode("ascii")
    if ascii_format:
        lines = []
        for p, c in zip(cloud.positions, cloud.colors):
            lines.append(
                f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                f"{int(c[0])} {int(c[1])} {int(c[2])}"
            )
        return header + ("\n".join(lines) + "\n").encode("ascii")
    dtype = np.dtype(
        [("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
         ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    )
    records = np.zeros(count, dtype=dtype)
    records["x"], records["y"], records["z"] = cloud.positions.T
    records["red"], records["green"], records["blue"] = cloud.colors.T
    return header + records.tobytes()
