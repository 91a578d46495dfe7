"""OFF / OBJ readers and writers.

Only vertices and triangular faces are read. Indices are 0-based in memory;
OBJ's 1-based (and negative, relative) indices are converted on the way in and out.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError, ParseError

logger = logging.getLogger(__name__)

MESH_FORMATS = ("OFF", "OBJ")


def detect_format(path: Path, fmt: Optional[str] = None) -> str:
    if fmt:
        fmt = fmt.upper()
    else:
        fmt = path.suffix.lstrip(".").upper()
    if fmt not in MESH_FORMATS:
        raise ParseError(f"Unsupported mesh format '{fmt or path.suffix}' for {path}; expected OFF or OBJ")
    return fmt


def _tokens(text: str) -> list[list[str]]:
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    return rows


def read_off(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = _tokens(path.read_text(encoding="utf-8"))
    if not rows:
        raise ParseError(f"{path}: empty file")

    header = rows[0]
    if not header[0].upper().endswith("OFF"):
        raise ParseError(f"{path}: missing OFF header")
    # counts may share the header line ("OFF 3 1 0")
    counts = header[1:] if len(header) > 1 else (rows[1] if len(rows) > 1 else [])
    body = rows[1:] if len(header) > 1 else rows[2:]
    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: malformed OFF count line")

    if len(body) < n_vertices + n_faces:
        raise ParseError(f"{path}: expected {n_vertices} vertices and {n_faces} faces, file is truncated")

    try:
        vertices = np.array([[float(x) for x in row[:3]] for row in body[:n_vertices]], dtype=float)
    except ValueError as e:
        raise ParseError(f"{path}: bad vertex coordinate ({e})")

    faces = []
    for k, row in enumerate(body[n_vertices:n_vertices + n_faces]):
        try:
            arity = int(row[0])
            idx = [int(x) for x in row[1:1 + arity]]
        except (IndexError, ValueError):
            raise ParseError(f"{path}: malformed face line {k}")
        if arity != 3 or len(idx) != 3:
            raise ParseError(f"{path}: face {k} is not a triangle (arity {arity})")
        faces.append(idx)

    return vertices, np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, row in enumerate(_tokens(path.read_text(encoding="utf-8")), start=1):
        tag = row[0]
        if tag == "v":
            try:
                vertices.append([float(x) for x in row[1:4]])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: bad vertex coordinate ({e})")
        elif tag == "f":
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: face is not a triangle")
            tri = []
            for token in row[1:]:
                # "v", "v/vt", "v//vn", "v/vt/vn"; only v is kept
                try:
                    raw = int(token.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad face index '{token}'")
                if raw == 0:
                    raise ParseError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
                tri.append(raw - 1 if raw > 0 else len(vertices) + raw)
            faces.append(tri)
        # vt, vn, g, o, s, usemtl ... are ignored

    if not vertices:
        raise ParseError(f"{path}: no vertices")
    width = max(len(v) for v in vertices)
    if any(len(v) != width for v in vertices) or width < 2:
        raise ParseError(f"{path}: inconsistent vertex dimensions")
    return np.array(vertices, dtype=float), np.array(faces, dtype=np.int64).reshape(-1, 3)


def read_mesh_arrays(path, fmt: Optional[str] = None) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Mesh file not found: {path}", {"path": str(path)})
    kind = detect_format(path, fmt)
    logger.debug(f"reading {kind} mesh from {path}")
    return read_off(path) if kind == "OFF" else read_obj(path)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_mesh(path, vertices, faces, fmt: Optional[str] = None) -> Path:
    """Write a planar mesh; complex vertex arrays are written as (re, im, 0)."""
    path = Path(path)
    kind = detect_format(path, fmt)
    verts = np.asarray(vertices)
    if np.iscomplexobj(verts):
        verts = np.column_stack([verts.real, verts.imag])
    faces = np.asarray(faces, dtype=np.int64)

    lines: list[str] = []
    if kind == "OFF":
        lines.append("OFF")
        lines.append(f"{len(verts)} {len(faces)} 0")
        lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in verts[:, :2]]
        lines += [f"3 {a} {b} {c}" for a, b, c in faces]
    else:
        lines += [f"v {_fmt(x)} {_fmt(y)} 0.0" for x, y in verts[:, :2]]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
