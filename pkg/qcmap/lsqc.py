"""Least-squares quasiconformal (LSQC) system: assembly, pinned solve, energy.

The discrete energy is E(U) = sum_T (1/d_T) |W_T . U_T|^2 = ||M U||^2, with

    W_1 = (1 + mu)(x_3 - x_2) + i (1 - mu)(y_3 - y_2)    (and cyclic),

row T of M holding W_{j,T} / sqrt(d_T). Two vertices are pinned; the free part
solves the real normal equations (A^T A) u = A^T b.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla
from scipy.spatial import ConvexHull

from .errors import DuplicatePins, InputError, MuOutOfRange, SolverFailure
from .mesh_core import TriMesh, doubled_areas

logger = logging.getLogger(__name__)

ROW_SCALINGS = ("sqrt_area", "none")
EXACT_PAIRWISE_LIMIT = 4096
RESIDUAL_TOL = 1e-6


def _real_block(m: sparse.spmatrix) -> sparse.csr_matrix:
    """Real 2x2 block form [[Re, -Im], [Im, Re]] of a complex matrix."""
    re = sparse.csr_matrix(m.real)
    im = sparse.csr_matrix(m.imag)
    return sparse.bmat([[re, -im], [im, re]], format="csr")


def _stack(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def _unstack(u: np.ndarray) -> np.ndarray:
    half = len(u) // 2
    return u[:half] + 1j * u[half:]


@dataclass(frozen=True, eq=False)
class LsqcSystem:
    mesh: TriMesh
    mu_faces: np.ndarray
    pin_vertices: np.ndarray
    pin_targets: np.ndarray
    M: sparse.csr_matrix
    dM_dmu: sparse.csr_matrix
    free: np.ndarray
    row_scaling: str = "sqrt_area"

    @cached_property
    def _csc(self) -> sparse.csc_matrix:
        return self.M.tocsc()

    @cached_property
    def M_f(self) -> sparse.csr_matrix:
        return self._csc[:, self.free].tocsr()

    @cached_property
    def M_p(self) -> sparse.csr_matrix:
        return self._csc[:, self.pin_vertices].tocsr()

    @cached_property
    def A(self) -> sparse.csr_matrix:
        return _real_block(self.M_f)

    @cached_property
    def b(self) -> np.ndarray:
        return -_stack(self.M_p @ self.pin_targets)

    @cached_property
    def normal(self) -> sparse.csc_matrix:
        return (self.A.T @ self.A).tocsc()

    @cached_property
    def rhs(self) -> np.ndarray:
        return self.A.T @ self.b

    @property
    def n_free(self) -> int:
        return len(self.free)

    def full_solution(self, u: np.ndarray) -> np.ndarray:
        U = np.empty(self.mesh.n_vertices, dtype=complex)
        U[self.free] = _unstack(u)
        U[self.pin_vertices] = self.pin_targets
        return U


def _normalize_pins(mesh: TriMesh, pins) -> tuple[np.ndarray, np.ndarray]:
    pins = list(pins)
    if len(pins) != 2:
        raise InputError(f"exactly two pins are supported, got {len(pins)}")
    vertices = np.array([int(v) for v, _ in pins], dtype=np.int64)
    targets = np.array([complex(t) for _, t in pins], dtype=complex)
    if vertices[0] == vertices[1]:
        raise DuplicatePins(f"pin vertices must be distinct, got {vertices.tolist()}")
    if np.any(vertices < 0) or np.any(vertices >= mesh.n_vertices):
        raise InputError(f"pin vertex out of range: {vertices.tolist()}")
    if not np.all(np.isfinite(targets)):
        raise InputError("pin targets must be finite")
    return vertices, targets


def assemble(mesh: TriMesh, mu_faces, pins: Sequence[tuple[int, complex]], row_scaling: str = "sqrt_area") -> LsqcSystem:
    """Build M (|F| x |V|) and its pin partition.

    `row_scaling="none"` drops the 1/sqrt(d_T) factor; it only exists as a
    negative control for the property suites.
    """
    if row_scaling not in ROW_SCALINGS:
        raise InputError(f"row_scaling must be one of {ROW_SCALINGS}")
    mu = np.asarray(mu_faces, dtype=complex).reshape(-1)
    if len(mu) != mesh.n_faces:
        raise InputError(f"expected {mesh.n_faces} face coefficients, got {len(mu)}")
    bad = np.flatnonzero(~(np.abs(mu) < 1.0))
    if len(bad):
        raise MuOutOfRange(
            f"|mu| >= 1 at {len(bad)} face(s), first face {int(bad[0])} (|mu| = {np.abs(mu[bad[0]]):.6g})",
            bad.tolist(),
        )
    pin_vertices, pin_targets = _normalize_pins(mesh, pins)

    f = mesh.faces
    x = mesh.vertices[:, 0][f]
    y = mesh.vertices[:, 1][f]
    dx = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    dy = np.roll(y, -2, axis=1) - np.roll(y, -1, axis=1)
    # W = (dx + i dy) + mu (dx - i dy), affine (and holomorphic) in mu
    slope = dx - 1j * dy
    W = (dx + 1j * dy) + mu[:, None] * slope
    if row_scaling == "sqrt_area":
        scale = 1.0 / np.sqrt(mesh.face_areas)[:, None]
    else:
        scale = np.ones((mesh.n_faces, 1))

    rows = np.repeat(np.arange(mesh.n_faces), 3)
    cols = f.reshape(-1)
    shape = (mesh.n_faces, mesh.n_vertices)
    M = sparse.csr_matrix(((W * scale).reshape(-1), (rows, cols)), shape=shape)
    dM = sparse.csr_matrix(((slope * scale).reshape(-1), (rows, cols)), shape=shape)
    free = np.setdiff1d(np.arange(mesh.n_vertices), pin_vertices)

    logger.debug(f"assembled LSQC system: {mesh.n_faces} rows, {len(free)} free vertices, pins {pin_vertices.tolist()}")
    return LsqcSystem(mesh, mu, pin_vertices, pin_targets, M, dM, free, row_scaling)


@dataclass(frozen=True, eq=False)
class NormalFactorization:
    """Sparse factorization of one system's normal operator in a fixed ordering."""

    system: LsqcSystem
    lu: spla.SuperLU
    ordering: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = np.empty_like(rhs)
        out[self.ordering] = self.lu.solve(rhs[self.ordering])
        return out

    def owns(self, system: LsqcSystem) -> bool:
        return self.system is system

    def solve_for(self, system: LsqcSystem, rhs: np.ndarray, tol: float = 1e-13) -> np.ndarray:
        """Solve with `system.normal`; a foreign factorization becomes a PCG preconditioner."""
        if self.owns(system):
            return self.solve(rhs)
        precond = spla.LinearOperator(system.normal.shape, matvec=self.solve, dtype=float)
        x, info = spla.cg(system.normal, rhs, M=precond, rtol=tol, maxiter=200)
        if info != 0:
            raise SolverFailure(f"preconditioned CG did not converge (info={info})")
        return x


def fill_reducing_ordering(normal: sparse.csc_matrix) -> np.ndarray:
    """Column ordering chosen once and reused while only matrix values change."""
    symbolic = spla.splu(normal, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
    return np.argsort(symbolic.perm_c)


def factorize(system: LsqcSystem, ordering: Optional[np.ndarray] = None) -> NormalFactorization:
    normal = system.normal
    if ordering is None or len(ordering) != normal.shape[0]:
        ordering = fill_reducing_ordering(normal)
    permuted = normal[ordering][:, ordering].tocsc()
    try:
        lu = spla.splu(permuted, permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
    except RuntimeError as e:
        diag = normal.diagonal()
        raise SolverFailure(
            f"normal-equation factorization failed: {e}",
            {"min_diagonal": float(diag.min()), "max_diagonal": float(diag.max()), "size": int(normal.shape[0])},
        )
    return NormalFactorization(system, lu, ordering)


@dataclass(frozen=True, eq=False)
class MapResult:
    U: np.ndarray
    energy: float
    residual_norm: float
    flipped_faces: np.ndarray
    system: LsqcSystem
    factorization: NormalFactorization
    u: np.ndarray

    @property
    def flipped_count(self) -> int:
        return int(len(self.flipped_faces))

    def report(self) -> dict:
        return {
            "energy": float(self.energy),
            "residual": float(self.residual_norm),
            "flipped_count": self.flipped_count,
            "flipped_faces": self.flipped_faces.tolist(),
            "pins": [
                {"vertex": int(v), "target": [float(t.real), float(t.imag)]}
                for v, t in zip(self.system.pin_vertices, self.system.pin_targets)
            ],
        }


def solve(
    system: LsqcSystem,
    factorization: Optional[NormalFactorization] = None,
    ordering: Optional[np.ndarray] = None,
    refine_steps: int = 2,
) -> MapResult:
    """Unique minimiser of ||A u - b||^2 with pins set to their targets."""
    stale = factorization is not None and not factorization.owns(system)
    if factorization is None:
        factorization = factorize(system, ordering)

    rhs = system.rhs
    rhs_norm = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    if stale:
        try:
            u = factorization.solve_for(system, rhs)
        except SolverFailure:
            logger.warning("stale factorization did not precondition well enough; refactorizing")
            factorization = factorize(system, factorization.ordering)
            u = factorization.solve(rhs)
    else:
        u = factorization.solve(rhs)

    def _grad_residual(u):
        return system.A.T @ (system.b - system.A @ u)

    g = _grad_residual(u)
    for step in range(refine_steps):
        if np.linalg.norm(g) <= 1e-15 * rhs_norm:
            break
        u = u + factorization.solve_for(system, g)
        g = _grad_residual(u)
        logger.debug(f"refinement step {step + 1}: normal residual {np.linalg.norm(g) / rhs_norm:.3e}")

    residual = float(np.linalg.norm(g)) / rhs_norm
    if not np.all(np.isfinite(u)) or residual > RESIDUAL_TOL:
        diag = system.normal.diagonal()
        raise SolverFailure(
            f"LSQC solve did not reach the residual tolerance (relative normal residual {residual:.3e})",
            {"residual": residual, "min_diagonal": float(diag.min()), "max_diagonal": float(diag.max())},
        )

    U = system.full_solution(u)
    flipped = np.flatnonzero(doubled_areas(U, system.mesh.faces) <= 0)
    if len(flipped):
        logger.debug(f"solution has {len(flipped)} flipped face(s)")
    return MapResult(U, energy(system, U), residual, flipped, system, factorization, u)


def energy(system: LsqcSystem, U) -> float:
    r = system.M @ np.asarray(U, dtype=complex)
    return float(np.vdot(r, r).real)


def _hull_diameter(points: np.ndarray) -> tuple[int, int]:
    """Rotating calipers over a counter-clockwise convex polygon."""
    n = len(points)
    if n < 3:
        return 0, n - 1

    def area2(a, b, c):
        return abs((points[b, 0] - points[a, 0]) * (points[c, 1] - points[a, 1]) - (points[b, 1] - points[a, 1]) * (points[c, 0] - points[a, 0]))

    best = (-1.0, 0, 1)
    j = 1
    for i in range(n):
        ni = (i + 1) % n
        while area2(i, ni, (j + 1) % n) > area2(i, ni, j):
            j = (j + 1) % n
        for a in (i, ni):
            d = float(np.sum((points[a] - points[j]) ** 2))
            if d > best[0]:
                best = (d, a, j)
    return best[1], best[2]


def pick_pins(mesh: TriMesh) -> tuple[int, int]:
    """Approximately farthest-apart pair of boundary vertices, smaller index first."""
    candidates = mesh.boundary_vertices
    if len(candidates) < 2:
        raise InputError("mesh needs at least two boundary vertices to place pins")
    pts = mesh.vertices[candidates]

    if len(candidates) <= EXACT_PAIRWISE_LIMIT:
        best = (-1.0, 0, 1)
        for i in range(len(pts) - 1):
            d = np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1)
            k = int(np.argmax(d))
            if d[k] > best[0]:
                best = (float(d[k]), i, i + 1 + k)
        a, b = best[1], best[2]
    else:
        hull = ConvexHull(pts)
        ring = hull.vertices  # counter-clockwise in 2D
        ia, ib = _hull_diameter(pts[ring])
        a, b = int(ring[ia]), int(ring[ib])

    va, vb = int(candidates[a]), int(candidates[b])
    return (va, vb) if va < vb else (vb, va)


def apply_similarity(U, phi: float, s: float, r: complex) -> np.ndarray:
    """g(U) = s e^{i phi} U + r."""
    if not s > 0:
        raise InputError(f"similarity scale must be positive, got {s}")
    return s * np.exp(1j * phi) * np.asarray(U, dtype=complex) + r


def solve_mapping(mesh: TriMesh, mu_faces, pins, **kwargs) -> MapResult:
    return solve(assemble(mesh, mu_faces, pins, **kwargs))
