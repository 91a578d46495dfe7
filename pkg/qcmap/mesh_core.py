import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import InvalidWeights, ShapeMismatch, ValidationError
from .mesh_io import read_mesh_arrays

logger = logging.getLogger(__name__)

DEGENERATE_REL_TOL = 1e-14
PLANAR_TOL = 1e-9
INSIDE_TOL = 1e-12


def as_points(points) -> np.ndarray:
    """Coerce complex or (k, 2) input into a float (k, 2) array."""
    arr = np.asarray(points)
    if np.iscomplexobj(arr):
        arr = arr.reshape(-1)
        return np.column_stack([arr.real, arr.imag])
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr[:, :2]


def doubled_areas(points, faces: np.ndarray) -> np.ndarray:
    """Signed twice-area d_T per face, positive for counter-clockwise corners."""
    pts = as_points(points)
    p1, p2, p3 = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    e1 = p2 - p1
    e2 = p3 - p1
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


def loop_area(points) -> float:
    """Signed area of a closed polygon (shoelace / Green's theorem)."""
    z = np.asarray(points)
    if not np.iscomplexobj(z):
        xy = as_points(z)
        z = xy[:, 0] + 1j * xy[:, 1]
    return 0.5 * float(np.sum(np.imag(np.conj(z) * np.roll(z, -1))))


def _edge_keys(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = faces.reshape(-1)
    b = np.roll(faces, -1, axis=1).reshape(-1)
    return a, b


def _validate(vertices: np.ndarray, faces: np.ndarray) -> list[str]:
    """Return the list of violated mesh rules (empty when valid)."""
    violations: list[str] = []
    n = len(vertices)
    m = len(faces)

    if vertices.ndim != 2 or vertices.shape[1] != 2:
        return [f"vertices must have shape (n, 2), got {vertices.shape}"]
    if faces.ndim != 2 or faces.shape[1] != 3 or m == 0:
        return [f"faces must have shape (m, 3) with m >= 1, got {faces.shape}"]
    if not np.all(np.isfinite(vertices)):
        bad = np.flatnonzero(~np.all(np.isfinite(vertices), axis=1))
        return [f"vertex {int(i)} has a non-finite coordinate" for i in bad[:20]]
    if faces.min() < 0 or faces.max() >= n:
        return [f"face index out of range [0, {n})"]

    repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])
    for k in np.flatnonzero(repeated)[:20]:
        violations.append(f"face {int(k)} repeats a vertex {faces[k].tolist()}")
    if violations:
        return violations

    extent = vertices.max(axis=0) - vertices.min(axis=0)
    tol = DEGENERATE_REL_TOL * float(extent @ extent)
    d = doubled_areas(vertices, faces)
    for k in np.flatnonzero(np.abs(d) <= tol)[:20]:
        violations.append(f"face {int(k)} is degenerate (d_T = {d[k]:.3e})")
    clockwise = np.flatnonzero(d < -tol)
    if len(clockwise):
        violations.append(
            f"mixed orientation: {len(clockwise)} clockwise face(s), first {clockwise[:10].tolist()}"
        )

    a, b = _edge_keys(faces)
    directed = a.astype(np.int64) * n + b
    _, dcount = np.unique(directed, return_counts=True)
    if np.any(dcount > 1):
        violations.append(f"{int(np.sum(dcount > 1))} directed edge(s) used twice (non-manifold or inconsistent orientation)")

    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    undirected = lo * n + hi
    order = np.argsort(undirected, kind="stable")
    sorted_keys = undirected[order]
    _, ucount = np.unique(undirected, return_counts=True)
    if np.any(ucount > 2):
        violations.append(f"{int(np.sum(ucount > 2))} edge(s) shared by more than two faces")

    used = np.zeros(n, dtype=bool)
    used[faces.reshape(-1)] = True
    for v in np.flatnonzero(~used)[:20]:
        violations.append(f"vertex {int(v)} belongs to no face")

    if m > 1:
        face_of = order // 3
        same = sorted_keys[1:] == sorted_keys[:-1]
        fa, fb = face_of[:-1][same], face_of[1:][same]
        adjacency = sparse.coo_matrix((np.ones(len(fa)), (fa, fb)), shape=(m, m))
        degree = np.bincount(np.concatenate([fa, fb]), minlength=m)
        for k in np.flatnonzero(degree == 0)[:20]:
            violations.append(f"face {int(k)} shares no edge with another face (dangling triangle)")
        n_comp, _ = connected_components(adjacency, directed=False)
        if n_comp > 1:
            violations.append(f"mesh is not edge-connected ({n_comp} components)")

    return violations


@dataclass(frozen=True, eq=False)
class BaryLocation:
    face_index: int
    weights: np.ndarray

    @property
    def inside(self) -> bool:
        return bool(np.all(self.weights >= -INSIDE_TOL))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Planar triangle mesh, validated on construction and immutable afterwards.

    `face_areas` holds the signed *twice*-area d_T of each face.
    """

    vertices: np.ndarray
    faces: np.ndarray
    repaired_orientation: bool = field(default=False, compare=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        tris = np.array(self.faces, dtype=np.int64)
        violations = _validate(verts, tris)
        if violations:
            raise ValidationError(f"Invalid mesh: {violations[0]}", violations)
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", tris)

    @classmethod
    def from_arrays(cls, vertices, faces, *, repair_orientation: bool = True) -> "TriMesh":
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim == 2 and verts.shape[1] == 3:
            off_plane = np.abs(verts[:, 2]) > PLANAR_TOL
            if np.any(off_plane):
                bad = np.flatnonzero(off_plane)
                raise ValidationError(
                    "Non-planar input: parameter-domain meshes must have z = 0",
                    [f"vertex {int(i)} has |z| = {abs(verts[i, 2]):.3e}" for i in bad[:20]],
                )
            verts = verts[:, :2]
        tris = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

        repaired = False
        if repair_orientation and len(tris) and len(verts) and tris.min() >= 0 and tris.max() < len(verts):
            d = doubled_areas(verts, tris)
            if np.all(d < 0):
                logger.warning(f"all {len(tris)} faces are clockwise; flipping to counter-clockwise")
                tris = tris[:, [0, 2, 1]]
                repaired = True
        return cls(verts, tris, repaired_orientation=repaired)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(as_points(vertices), self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def complex_vertices(self) -> np.ndarray:
        return self.vertices[:, 0] + 1j * self.vertices[:, 1]

    @cached_property
    def face_areas(self) -> np.ndarray:
        return doubled_areas(self.vertices, self.faces)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @cached_property
    def diagonal(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.hypot(*extent))

    @cached_property
    def directed_edges(self) -> np.ndarray:
        a, b = _edge_keys(self.faces)
        return np.column_stack([a, b])

    @cached_property
    def boundary_loops(self) -> tuple[tuple[int, ...], ...]:
        """Boundary loops oriented so the mesh lies on their left.

        The outer loop runs counter-clockwise and comes first; holes run clockwise.
        """
        n = self.n_vertices
        edges = self.directed_edges
        fwd = edges[:, 0] * n + edges[:, 1]
        rev = edges[:, 1] * n + edges[:, 0]
        on_boundary = ~np.isin(fwd, rev)

        succ: dict[int, list[int]] = {}
        for a, b in edges[on_boundary]:
            succ.setdefault(int(a), []).append(int(b))
        for targets in succ.values():
            targets.sort()

        loops: list[tuple[int, ...]] = []
        while succ:
            start = min(succ)
            loop = [start]
            current = start
            while True:
                targets = succ[current]
                nxt = targets.pop(0)
                if not targets:
                    del succ[current]
                if nxt == start:
                    break
                if nxt not in succ:
                    raise ValidationError("Open boundary chain", [f"boundary chain breaks at vertex {nxt}"])
                loop.append(nxt)
                current = nxt
            loops.append(tuple(loop))

        loops.sort(key=lambda lp: -loop_area(self.vertices[list(lp)]))
        return tuple(loops)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        if not self.boundary_loops:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([np.asarray(lp) for lp in self.boundary_loops]))

    @cached_property
    def gradient_operators(self) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
        """(Dx, Dy), |F| x |V|: exact per-face partials of the piecewise-linear interpolant."""
        f = self.faces
        x = self.vertices[:, 0][f]
        y = self.vertices[:, 1][f]
        d = self.face_areas[:, None]
        # coefficient of u_j: (y_{j+1} - y_{j+2}) / d_T  and  (x_{j+2} - x_{j+1}) / d_T
        cx = (np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)) / d
        cy = (np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)) / d
        rows = np.repeat(np.arange(self.n_faces), 3)
        shape = (self.n_faces, self.n_vertices)
        dx = sparse.csr_matrix((cx.reshape(-1), (rows, f.reshape(-1))), shape=shape)
        dy = sparse.csr_matrix((cy.reshape(-1), (rows, f.reshape(-1))), shape=shape)
        return dx, dy

    @cached_property
    def averaging_operator(self) -> sparse.csr_matrix:
        """|F| x |V| matrix taking corner values to their face mean."""
        rows = np.repeat(np.arange(self.n_faces), 3)
        data = np.full(3 * self.n_faces, 1.0 / 3.0)
        return sparse.csr_matrix((data, (rows, self.faces.reshape(-1))), shape=(self.n_faces, self.n_vertices))

    @cached_property
    def locator(self) -> "FaceLocator":
        return FaceLocator(self)

    def summary(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "faces": self.n_faces,
            "boundary_loops": len(self.boundary_loops),
            "boundary_vertices": int(len(self.boundary_vertices)),
            "area": float(self.face_areas.sum() / 2.0),
            "euler_characteristic": int(self.n_vertices - len(np.unique(np.sort(self.directed_edges, axis=1), axis=0)) + self.n_faces),
        }


def load_mesh(path, format: Optional[str] = None) -> TriMesh:
    vertices, faces = read_mesh_arrays(Path(path), format)
    mesh = TriMesh.from_arrays(vertices, faces)
    logger.debug(f"loaded {path}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return mesh


def boundary(mesh: TriMesh) -> list[list[int]]:
    return [list(loop) for loop in mesh.boundary_loops]


class FaceLocator:
    """Barycentric point location with a uniform background grid for pruning.

    Weights come from the 2x2 edge-basis solve per face, so they stay defined
    (and possibly negative) for points outside a face.
    """

    def __init__(self, mesh: TriMesh, cells_per_axis: Optional[int] = None):
        pts = mesh.vertices
        f = mesh.faces
        self._n_faces = mesh.n_faces
        self._origin = pts[f[:, 0]]
        e1 = pts[f[:, 1]] - self._origin
        e2 = pts[f[:, 2]] - self._origin
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        # rows of the inverse edge basis
        self._inv = np.stack(
            [np.column_stack([e2[:, 1], -e2[:, 0]]), np.column_stack([-e1[:, 1], e1[:, 0]])], axis=1
        ) / det[:, None, None]

        self._lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        n_cells = cells_per_axis or max(1, int(np.sqrt(mesh.n_faces)))
        self._n_cells = n_cells
        self._cell = np.maximum((hi - self._lo) / n_cells, np.finfo(float).tiny)

        corners = pts[f]
        fmin = self._cell_index(corners.min(axis=1))
        fmax = self._cell_index(corners.max(axis=1))
        buckets: list[list[int]] = [[] for _ in range(n_cells * n_cells)]
        for k in range(mesh.n_faces):
            for ix in range(fmin[k, 0], fmax[k, 0] + 1):
                for iy in range(fmin[k, 1], fmax[k, 1] + 1):
                    buckets[ix * n_cells + iy].append(k)
        self._buckets = [np.asarray(b, dtype=np.int64) for b in buckets]

    def _cell_index(self, points: np.ndarray) -> np.ndarray:
        idx = np.floor((points - self._lo) / self._cell).astype(np.int64)
        return np.clip(idx, 0, self._n_cells - 1)

    def weights(self, point: np.ndarray, faces: np.ndarray) -> np.ndarray:
        rel = point - self._origin[faces]
        ab = np.einsum("kij,kj->ki", self._inv[faces], rel)
        return np.column_stack([1.0 - ab[:, 0] - ab[:, 1], ab[:, 0], ab[:, 1]])

    def locate(self, point, inside_only: bool = False) -> Optional[BaryLocation]:
        p = as_points(point)[0]
        cell = ((p - self._lo) / self._cell)
        if np.all(cell >= 0) and np.all(cell <= self._n_cells):
            ix, iy = self._cell_index(p[None, :])[0]
            candidates = self._buckets[ix * self._n_cells + iy]
            if len(candidates):
                lam = self.weights(p, candidates)
                inside = np.all(lam >= -INSIDE_TOL, axis=1)
                if np.any(inside):
                    cand = candidates[inside]
                    cost = np.abs(lam[inside]).sum(axis=1)
                    best = np.lexsort((cand, cost))[0]
                    return BaryLocation(int(cand[best]), lam[inside][best])
        if inside_only:
            return None
        everything = np.arange(self._n_faces)
        lam = self.weights(p, everything)
        best = int(np.argmin(np.abs(lam).sum(axis=1)))
        return BaryLocation(best, lam[best])

    def locate_many(self, points, inside_only: bool = False, jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised front-end; unlocated points get face -1 and zero weights."""
        pts = as_points(points)

        def _run(chunk: np.ndarray) -> list[Optional[BaryLocation]]:
            return [self.locate(p, inside_only=inside_only) for p in chunk]

        if jobs > 1 and len(pts) > 1:
            chunks = np.array_split(pts, min(jobs * 4, len(pts)))
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                located = [loc for part in pool.map(_run, chunks) for loc in part]
        else:
            located = _run(pts)

        faces = np.full(len(pts), -1, dtype=np.int64)
        weights = np.zeros((len(pts), 3))
        for i, loc in enumerate(located):
            if loc is not None:
                faces[i] = loc.face_index
                weights[i] = loc.weights
        return faces, weights


def locate(point, mesh: TriMesh) -> BaryLocation:
    return mesh.locator.locate(point)


@dataclass(frozen=True, eq=False)
class InterpMatrix:
    """Sparse barycentric interpolation, |targets| x |source vertices|, rows summing to 1."""

    matrix: sparse.csr_matrix
    faces: np.ndarray
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def apply_transpose(self, grad: np.ndarray) -> np.ndarray:
        return self.matrix.T @ grad


def build_interp(source: TriMesh, targets, jobs: int = 1) -> InterpMatrix:
    pts = as_points(targets)
    faces, weights = source.locator.locate_many(pts, jobs=jobs)
    # exact zeros keep vertex-on-vertex rows as single ones
    weights = np.where(np.abs(weights) < 1e-14, 0.0, weights)
    weights = weights / weights.sum(axis=1, keepdims=True)

    rows = np.repeat(np.arange(len(pts)), 3)
    cols = source.faces[faces].reshape(-1)
    matrix = sparse.csr_matrix((weights.reshape(-1), (rows, cols)), shape=(len(pts), source.n_vertices))
    matrix.eliminate_zeros()
    outside = int(np.sum(np.any(weights < -INSIDE_TOL, axis=1)))
    if outside:
        logger.debug(f"build_interp: {outside} target(s) outside the source domain, extrapolating")
    return InterpMatrix(matrix, faces, weights)


def split_face(mesh: TriMesh, face: int, alpha: Sequence[float]) -> tuple[TriMesh, int]:
    """Split face T=(v1,v2,v3) at v = sum(alpha_j v_j) into three faces.

    Face T_i omits v_i, so its area is alpha_i * area(T). T_1 takes T's index,
    T_2 and T_3 are appended; every other face keeps its index.
    """
    a = np.asarray(alpha, dtype=float)
    if a.shape != (3,) or not np.all(np.isfinite(a)) or np.any(a <= 0) or abs(a.sum() - 1.0) > 1e-12:
        raise InvalidWeights(f"split weights must be three positive numbers summing to 1, got {a.tolist()}")
    if not 0 <= face < mesh.n_faces:
        raise InvalidWeights(f"face index {face} out of range")

    v1, v2, v3 = (int(i) for i in mesh.faces[face])
    new_vertex = mesh.n_vertices
    position = a @ mesh.vertices[[v1, v2, v3]]

    faces = mesh.faces.copy()
    faces[face] = (new_vertex, v2, v3)
    faces = np.vstack([faces, [(v1, new_vertex, v3), (v1, v2, new_vertex)]])
    vertices = np.vstack([mesh.vertices, position])
    return TriMesh(vertices, faces), new_vertex


@dataclass(frozen=True, eq=False)
class DeformedMesh:
    """Image of a mesh under a piecewise-linear map. Not validated: faces may flip."""

    positions: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=complex).reshape(-1))

    @classmethod
    def of(cls, mesh: TriMesh, positions) -> "DeformedMesh":
        deformed = cls(positions, mesh.faces)
        if len(deformed.positions) != mesh.n_vertices:
            raise ShapeMismatch(f"expected {mesh.n_vertices} positions, got {len(deformed.positions)}")
        return deformed

    @cached_property
    def doubled_areas(self) -> np.ndarray:
        return doubled_areas(self.positions, self.faces)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.positions[self.faces].mean(axis=1)

    @property
    def flipped_faces(self) -> np.ndarray:
        return np.flatnonzero(self.doubled_areas <= 0)
