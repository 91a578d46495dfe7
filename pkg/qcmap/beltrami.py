import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InputError, MuOutOfRange, ParseError, ShapeMismatch
from .json_utils import load_json_file
from .mesh_core import TriMesh

logger = logging.getLogger(__name__)

DEGENERATE_JACOBIAN_TOL = 1e-14
MAX_MODULUS = 1.0 - 1e-12


@dataclass(frozen=True, eq=False)
class BeltramiField:
    """Complex Beltrami coefficients per vertex and/or per face."""

    per_vertex: Optional[np.ndarray] = None
    per_face: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.per_vertex is None and self.per_face is None:
            raise ShapeMismatch("BeltramiField needs per_vertex or per_face values")
        for name in ("per_vertex", "per_face"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=complex).reshape(-1))

    @classmethod
    def from_vertices(cls, mesh: TriMesh, per_vertex) -> "BeltramiField":
        values = np.asarray(per_vertex, dtype=complex)
        return cls(per_vertex=values, per_face=vertex_to_face(mesh, values))

    def sup_norm(self) -> float:
        parts = [np.abs(v) for v in (self.per_vertex, self.per_face) if v is not None]
        return float(max((np.max(p) for p in parts if len(p)), default=0.0))

    def check(self, bound: float = 1.0) -> None:
        """Raise MuOutOfRange listing every face (or vertex) with |mu| >= bound."""
        for name, values in (("per_face", self.per_face), ("per_vertex", self.per_vertex)):
            if values is None:
                continue
            bad = np.flatnonzero(~(np.abs(values) < bound))
            if len(bad):
                raise MuOutOfRange(
                    f"|mu| >= {bound} at {len(bad)} {name.split('_')[1]}(s), first index {int(bad[0])} "
                    f"(|mu| = {np.abs(values[bad[0]]):.6g})",
                    bad.tolist(),
                )

    def to_json(self) -> dict:
        out = {}
        for name in ("per_vertex", "per_face"):
            value = getattr(self, name)
            if value is not None:
                out[name] = [[float(z.real), float(z.imag)] for z in value]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "BeltramiField":
        def _decode(rows):
            if rows is None:
                return None
            try:
                arr = np.asarray(rows, dtype=float).reshape(-1, 2)
            except (TypeError, ValueError) as e:
                raise ParseError(f"Beltrami values must be [[re, im], ...]: {e}")
            return arr[:, 0] + 1j * arr[:, 1]

        if not isinstance(data, dict):
            raise ParseError("Beltrami JSON must be an object with per_vertex and/or per_face")
        return cls(per_vertex=_decode(data.get("per_vertex")), per_face=_decode(data.get("per_face")))


def load_mu(path: Union[str, Path], mesh: Optional[TriMesh] = None) -> BeltramiField:
    """Read a BeltramiField from JSON, or per-face values from a CSV of `re,im` rows."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        field = BeltramiField(per_face=read_complex_csv(path))
    else:
        field = BeltramiField.from_json(load_json_file(path, expect_types=(dict,)))
    if mesh is not None:
        if field.per_face is None and field.per_vertex is not None:
            if len(field.per_vertex) != mesh.n_vertices:
                raise ShapeMismatch(f"{path}: {len(field.per_vertex)} vertex values for {mesh.n_vertices} vertices")
            field = BeltramiField.from_vertices(mesh, field.per_vertex)
        if len(field.per_face) != mesh.n_faces:
            raise ShapeMismatch(f"{path}: {len(field.per_face)} face values for {mesh.n_faces} faces")
    return field


def read_complex_csv(path: Path) -> np.ndarray:
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                values.append(complex(float(row[0]), float(row[1]) if len(row) > 1 else 0.0))
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"{path}:{lineno}: expected 're,im'")
    return np.asarray(values, dtype=complex)


def write_complex_csv(path: Path, values: np.ndarray, header: str = "re,im") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header.split(","))
        for z in np.asarray(values, dtype=complex):
            writer.writerow([repr(float(z.real)), repr(float(z.imag))])
    return path


def face_gradient(mesh: TriMesh, field) -> np.ndarray:
    """Per-face (d/dx, d/dy) of the piecewise-linear interpolant, shape (|F|, 2)."""
    values = np.asarray(field)
    dx, dy = mesh.gradient_operators
    return np.column_stack([dx @ values, dy @ values])


def wirtinger_derivatives(mesh: TriMesh, map_values) -> tuple[np.ndarray, np.ndarray]:
    """(f_z, f_zbar) per face for a piecewise-linear complex map."""
    grad = face_gradient(mesh, np.asarray(map_values, dtype=complex))
    fx, fy = grad[:, 0], grad[:, 1]
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def bc_from_map(mesh: TriMesh, map_values) -> tuple[np.ndarray, np.ndarray]:
    """Per-face mu = f_zbar / f_z and a mask of faces where f_z vanishes (mu is NaN there)."""
    fz, fzbar = wirtinger_derivatives(mesh, map_values)
    scale = max(float(np.max(np.abs(fz), initial=0.0)), float(np.max(np.abs(fzbar), initial=0.0)), np.finfo(float).tiny)
    degenerate = np.abs(fz) < DEGENERATE_JACOBIAN_TOL * scale
    mu = np.full(mesh.n_faces, np.nan + 1j * np.nan, dtype=complex)
    ok = ~degenerate
    mu[ok] = fzbar[ok] / fz[ok]
    if np.any(degenerate):
        logger.warning(f"bc_from_map: {int(degenerate.sum())} face(s) with vanishing f_z")
    return mu, degenerate


def vertex_to_face(mesh: TriMesh, per_vertex) -> np.ndarray:
    values = np.asarray(per_vertex, dtype=complex)
    if len(values) != mesh.n_vertices:
        raise ShapeMismatch(f"expected {mesh.n_vertices} vertex values, got {len(values)}")
    return mesh.averaging_operator @ values


def activation(x, temp: float) -> np.ndarray:
    """tanh(|x| / temp) * exp(i arg x); exactly 0 at x = 0."""
    if not temp > 0:
        raise ValueError(f"temperature must be positive, got {temp}")
    x = np.asarray(x, dtype=complex)
    r = np.abs(x)
    safe = np.where(r > 0, r, 1.0)
    # tanh rounds to exactly 1.0 for large arguments
    modulus = np.minimum(np.tanh(r / temp), MAX_MODULUS)
    return np.where(r > 0, modulus * x / safe, 0.0 + 0.0j)


def clamp_sup_norm(field: BeltramiField, bound: float, mesh: Optional[TriMesh] = None) -> BeltramiField:
    """Rescale entries with |mu| > bound onto the circle of radius bound.

    Vertex values are clamped and face values re-averaged from them, so a field
    built with `from_vertices` keeps its faces equal to the corner means.
    """
    if not 0 < bound < 1:
        raise ValueError(f"bound must lie in (0, 1), got {bound}")

    def _clamp(values):
        if values is None:
            return None
        r = np.abs(values)
        over = r > bound
        out = values.copy()
        out[over] = values[over] * (bound / r[over])
        return out

    if field.per_vertex is None:
        return BeltramiField(per_face=_clamp(field.per_face))
    per_vertex = _clamp(field.per_vertex)
    if mesh is not None:
        return BeltramiField(per_vertex=per_vertex, per_face=vertex_to_face(mesh, per_vertex))
    if field.per_face is not None:
        raise InputError("clamping a field with vertex and face values needs the mesh to re-average faces")
    return BeltramiField(per_vertex=per_vertex)


def mean_l2_norm(mu) -> float:
    return float(np.mean(np.abs(np.asarray(mu))))


def histogram_summary(mu, bin_width: float = 0.05) -> dict:
    """Distribution of |mu| in fixed-width bins over [0, 1)."""
    mags = np.abs(np.asarray(mu))
    mags = mags[np.isfinite(mags)]
    edges = np.round(np.arange(0.0, 1.0 + bin_width / 2, bin_width), 10)
    counts, _ = np.histogram(np.minimum(mags, np.nextafter(1.0, 0.0)), bins=edges)
    return {
        "mean_abs": float(mags.mean()) if len(mags) else 0.0,
        "max_abs": float(mags.max()) if len(mags) else 0.0,
        "bin_width": bin_width,
        "bin_edges": edges.tolist(),
        "counts": counts.astype(int).tolist(),
    }
