"""Optimization energies with exact value-and-gradient evaluation.

Gradients with respect to complex positions use G = dE/dx + i dE/dy.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .beltrami import face_gradient
from .errors import EmptyRegion, InputError, ShapeMismatch
from .mesh_core import DeformedMesh, TriMesh, as_points, loop_area

logger = logging.getLogger(__name__)

AREA_FLOOR = 1e-12
DENSITY_WEIGHTS = {"density": 1.0, "bc": 5e-2, "smooth": 1e-3}
REGISTRATION_WEIGHTS = {"intensity": 1.0, "chamfer": 1.0, "bc": 5e-2, "smooth": 1e-3}


@dataclass(frozen=True, eq=False)
class DensityProblem:
    mesh: TriMesh
    population: np.ndarray
    barrier_omega: float = 1.5
    barrier_weight: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.population, dtype=float).reshape(-1)
        if len(p) != self.mesh.n_faces:
            raise ShapeMismatch(f"population has {len(p)} entries for {self.mesh.n_faces} faces")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise InputError("population must be finite and strictly positive on every face")
        if not self.barrier_omega > 0 or self.barrier_weight < 0:
            raise InputError("barrier_omega must be positive and barrier_weight non-negative")
        object.__setattr__(self, "population", p)


@dataclass(frozen=True, eq=False)
class RegionPair:
    moving_indices: np.ndarray
    static_points: np.ndarray


@dataclass(frozen=True, eq=False)
class RegistrationProblem:
    moving: TriMesh
    moving_intensity: np.ndarray
    static: TriMesh
    static_intensity: np.ndarray
    region_pairs: tuple[RegionPair, ...] = ()
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, mesh in (("moving_intensity", self.moving), ("static_intensity", self.static)):
            values = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if len(values) != mesh.n_vertices:
                raise ShapeMismatch(f"{name} has {len(values)} entries for {mesh.n_vertices} vertices")
            if not np.all(np.isfinite(values)):
                raise InputError(f"{name} must be finite")
            object.__setattr__(self, name, values)
        pairs = []
        for k, pair in enumerate(self.region_pairs):
            idx = np.asarray(pair.moving_indices, dtype=np.int64).reshape(-1)
            pts = np.asarray(pair.static_points)
            if not np.iscomplexobj(pts):
                pts = as_points(pts) @ np.array([1.0, 1j]) if pts.size else np.zeros(0, dtype=complex)
            if len(idx) == 0 or len(pts) == 0:
                raise EmptyRegion(f"region pair {k} is empty", {"pair": k})
            if idx.min() < 0 or idx.max() >= self.moving.n_vertices:
                raise InputError(f"region pair {k} indexes outside the moving mesh")
            pairs.append(RegionPair(idx, pts.astype(complex)))
        object.__setattr__(self, "region_pairs", tuple(pairs))
        unknown = set(self.weights) - set(REGISTRATION_WEIGHTS)
        if unknown:
            raise InputError(f"unknown registration weight(s): {sorted(unknown)}")


@dataclass
class EnergyReport:
    total: float
    components: dict[str, float]
    weights: dict[str, float]
    gradient: np.ndarray
    d_s_tilde: float = 0.0
    d_mu_vertex: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def weighted_sum(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.components.items()))


def _doubled_area_gradient(positions: np.ndarray, faces: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """sum_T coeff_T * grad(d_T), with grad_j d_T = -i (z_{j+1} - z_{j-1})."""
    z = positions[faces]
    corner = -1j * (np.roll(z, -1, axis=1) - np.roll(z, 1, axis=1)) * coeff[:, None]
    out = np.zeros(len(positions), dtype=complex)
    np.add.at(out, faces.reshape(-1), corner.reshape(-1))
    return out


def green_area(boundary_positions) -> float:
    z = np.asarray(boundary_positions)
    if len(z) < 3:
        raise InputError("a polygon needs at least three points")
    return loop_area(z)


def green_area_gradient(boundary_positions) -> np.ndarray:
    z = np.asarray(boundary_positions, dtype=complex)
    return -0.5j * (np.roll(z, -1) - np.roll(z, 1))


def _image_total_area(mesh: TriMesh, positions: np.ndarray) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros(len(positions), dtype=complex)
    for loop in mesh.boundary_loops:
        idx = np.asarray(loop)
        total += green_area(positions[idx])
        np.add.at(grad, idx, green_area_gradient(positions[idx]))
    return total, grad


def _floored_areas(area: np.ndarray) -> np.ndarray:
    """Signed face areas with exact zeros lifted to a small positive floor."""
    floor = AREA_FLOOR * max(float(np.mean(np.abs(area))), np.finfo(float).tiny)
    return np.where(area == 0.0, floor, area)


def face_density(problem: DensityProblem, positions) -> np.ndarray:
    z = np.asarray(positions, dtype=complex)
    return problem.population / _floored_areas(0.5 * DeformedMesh.of(problem.mesh, z).doubled_areas)


def density_variance(problem: DensityProblem, positions) -> float:
    """Variance of rho(T) / rho_bar, which is invariant under similarities of f."""
    z = np.asarray(positions, dtype=complex)
    total, _ = _image_total_area(problem.mesh, z)
    rho_bar = problem.population.sum() / total
    return float(np.var(face_density(problem, z) / rho_bar))


def density_energy(problem: DensityProblem, positions, s_tilde: float) -> EnergyReport:
    """E = sum_T (rho_T - rho_bar)^2 + lambda_reg max(0, e^{s_tilde} - omega)."""
    z = np.asarray(positions, dtype=complex)
    image = DeformedMesh.of(problem.mesh, z)
    area = 0.5 * image.doubled_areas
    degenerate = int(np.sum(area <= 0))
    if degenerate:
        logger.warning(f"density_energy: {degenerate} image face(s) with non-positive area")
    area = _floored_areas(area)

    p = problem.population
    total, total_grad = _image_total_area(problem.mesh, z)
    rho = p / area
    rho_bar = p.sum() / total
    dev = rho - rho_bar
    variance_term = float(np.sum(dev * dev))

    dE_drho = 2.0 * dev
    dE_drho_bar = -2.0 * dev.sum()
    dE_darea = dE_drho * (-p / area**2)
    dE_dtotal = dE_drho_bar * (-p.sum() / total**2)
    grad = _doubled_area_gradient(z, image.faces, 0.5 * dE_darea) + dE_dtotal * total_grad

    s = float(np.exp(s_tilde))
    barrier = max(0.0, s - problem.barrier_omega)
    d_s = problem.barrier_weight * s if s > problem.barrier_omega else 0.0
    value = variance_term + problem.barrier_weight * barrier
    return EnergyReport(
        total=value,
        components={"density": value},
        weights={"density": 1.0},
        gradient=grad,
        d_s_tilde=d_s,
        diagnostics={"variance_term": variance_term, "barrier": barrier, "degenerate_faces": degenerate},
    )


def e_bc(mu_vertex) -> tuple[float, np.ndarray]:
    mu = np.asarray(mu_vertex, dtype=complex)
    n = len(mu)
    return float(np.sum(np.abs(mu) ** 2) / n), 2.0 * mu / n


def e_smooth(mesh: TriMesh, mu_vertex) -> tuple[float, np.ndarray]:
    mu = np.asarray(mu_vertex, dtype=complex)
    dx, dy = mesh.gradient_operators
    gx, gy = dx @ mu, dy @ mu
    n = mesh.n_faces
    value = float(np.sum(np.abs(gx) ** 2 + np.abs(gy) ** 2) / n)
    grad = (2.0 / n) * (dx.T @ gx + dy.T @ gy)
    return value, grad


def _xy(z: np.ndarray) -> np.ndarray:
    return np.column_stack([z.real, z.imag])


def chamfer_pair(moved, static) -> tuple[float, np.ndarray]:
    """Symmetric mean nearest squared distance and its gradient on `moved`.

    Nearest-neighbour assignments are frozen for the gradient.
    """
    a = np.asarray(moved, dtype=complex).reshape(-1)
    b = np.asarray(static, dtype=complex).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise EmptyRegion("chamfer needs non-empty point sets on both sides")
    _, nn_ab = cKDTree(_xy(b)).query(_xy(a))
    _, nn_ba = cKDTree(_xy(a)).query(_xy(b))
    diff_ab = a - b[nn_ab]
    diff_ba = b - a[nn_ba]
    value = float(np.mean(np.abs(diff_ab) ** 2) + np.mean(np.abs(diff_ba) ** 2))

    grad = 2.0 * diff_ab / len(a)
    np.add.at(grad, nn_ba, -2.0 * diff_ba / len(b))
    return value, grad


def chamfer(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[float, list[np.ndarray]]:
    total = 0.0
    grads = []
    for k, (moved, static) in enumerate(pairs):
        if len(moved) == 0 or len(static) == 0:
            raise EmptyRegion(f"region pair {k} is empty", {"pair": k})
        value, grad = chamfer_pair(moved, static)
        total += value
        grads.append(grad)
    return total, grads


@dataclass(frozen=True, eq=False)
class StaticSamples:
    """Static-mesh face and barycentric weights at each moved face centroid (face -1 outside)."""

    faces: np.ndarray
    weights: np.ndarray


def sample_static(moved: DeformedMesh, static: TriMesh, jobs: int = 1) -> StaticSamples:
    faces, weights = static.locator.locate_many(moved.centroids, inside_only=True, jobs=jobs)
    return StaticSamples(faces, weights)


def overlap_region(moved: DeformedMesh, static: TriMesh, samples: Optional[StaticSamples] = None, jobs: int = 1) -> np.ndarray:
    """Moving-mesh faces whose image centroid lies in the static domain."""
    samples = samples or sample_static(moved, static, jobs)
    return np.flatnonzero(samples.faces >= 0)


def overlap_components(mesh: TriMesh, faces) -> int:
    """Number of edge-connected components of a face subset."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return 0
    sub = mesh.faces[faces]
    n = mesh.n_vertices
    a = sub.reshape(-1)
    b = np.roll(sub, -1, axis=1).reshape(-1)
    key = np.minimum(a, b) * n + np.maximum(a, b)
    owner = np.repeat(np.arange(len(faces)), 3)
    order = np.argsort(key, kind="stable")
    key, owner = key[order], owner[order]
    shared = np.flatnonzero(key[1:] == key[:-1])
    adj = sparse.coo_matrix((np.ones(len(shared)), (owner[shared], owner[shared + 1])), shape=(len(faces), len(faces)))
    count, _ = connected_components(adj, directed=False)
    return int(count)


def intensity_mismatch(
    moved: DeformedMesh,
    moving_intensity,
    static: TriMesh,
    static_intensity,
    overlap,
    samples: Optional[StaticSamples] = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Area-weighted mean of |mean corner I1 - I2(image centroid)| over the overlap.

    Returns (value, gradient on moved positions, per-face mismatch with NaN off the overlap).
    """
    I1 = np.asarray(moving_intensity, dtype=float)
    I2 = np.asarray(static_intensity, dtype=float)
    overlap = np.asarray(overlap, dtype=np.int64)
    n_faces = len(moved.faces)
    per_face = np.full(n_faces, np.nan)
    grad = np.zeros(len(moved.positions), dtype=complex)
    if len(overlap) == 0:
        return 0.0, grad, per_face

    samples = samples or sample_static(moved, static)
    s_faces = samples.faces[overlap]
    s_weights = samples.weights[overlap]
    if np.any(s_faces < 0):
        raise InputError("overlap contains faces whose centroid was not located on the static mesh")

    f = moved.faces[overlap]
    area = 0.5 * moved.doubled_areas[overlap]
    mean_i1 = I1[f].mean(axis=1)
    sampled = np.sum(s_weights * I2[static.faces[s_faces]], axis=1)
    diff = mean_i1 - sampled
    absdiff = np.abs(diff)
    total_area = float(area.sum())
    if total_area <= 0:
        logger.warning("intensity_mismatch: overlap has non-positive total image area")
        return 0.0, grad, per_face
    value = float(np.sum(area * absdiff) / total_area)
    per_face[overlap] = absdiff

    # through image areas
    grad += _doubled_area_gradient(moved.positions, f, 0.5 * (absdiff - value) / total_area)
    # through the static sample, static face frozen
    g2 = face_gradient(static, I2)[s_faces]
    corner = -(area * np.sign(diff) / total_area) * (g2[:, 0] + 1j * g2[:, 1]) / 3.0
    np.add.at(grad, f.reshape(-1), np.repeat(corner, 3))
    return value, grad, per_face


def _merge_weights(defaults: dict, *overrides: Optional[dict]) -> dict:
    weights = dict(defaults)
    for override in overrides:
        for key, value in (override or {}).items():
            if key not in defaults:
                raise InputError(f"unknown energy weight '{key}', expected one of {sorted(defaults)}")
            weights[key] = float(value)
    return weights


def _regularizers(solver_mesh: TriMesh, mu_vertex, weights: dict) -> tuple[dict, np.ndarray]:
    bc_value, bc_grad = e_bc(mu_vertex)
    smooth_value, smooth_grad = e_smooth(solver_mesh, mu_vertex)
    grad = weights["bc"] * bc_grad + weights["smooth"] * smooth_grad
    return {"bc": bc_value, "smooth": smooth_value}, grad


class DensityObjective:
    """Weighted E_1 + E_BC + E_smooth over fine positions, s_tilde and per-vertex mu."""

    name = "density"

    def __init__(self, problem: DensityProblem, solver_mesh: Optional[TriMesh] = None, weights: Optional[dict] = None):
        self.problem = problem
        self.solver_mesh = solver_mesh or problem.mesh
        self.weights = _merge_weights(DENSITY_WEIGHTS, weights)

    @property
    def target_mesh(self) -> TriMesh:
        return self.problem.mesh

    def evaluate(self, positions, s_tilde: float, mu_vertex) -> EnergyReport:
        w = self.weights
        dens = density_energy(self.problem, positions, s_tilde)
        reg, mu_grad = _regularizers(self.solver_mesh, mu_vertex, w)
        components = {"density": dens.total, **reg}
        return EnergyReport(
            total=float(sum(w[k] * v for k, v in components.items())),
            components=components,
            weights=dict(w),
            gradient=w["density"] * dens.gradient,
            d_s_tilde=w["density"] * dens.d_s_tilde,
            d_mu_vertex=mu_grad,
            diagnostics={**dens.diagnostics, "variance": density_variance(self.problem, positions)},
        )

    def per_face(self, positions) -> dict[str, np.ndarray]:
        return {"density": face_density(self.problem, positions)}


class RegistrationObjective:
    """Weighted E_I + chamfer + E_BC + E_smooth; overlap and assignments re-derived per call."""

    name = "registration"

    def __init__(self, problem: RegistrationProblem, solver_mesh: Optional[TriMesh] = None, weights: Optional[dict] = None, jobs: int = 1):
        self.problem = problem
        self.solver_mesh = solver_mesh or problem.moving
        self.weights = _merge_weights(REGISTRATION_WEIGHTS, problem.weights, weights)
        self.jobs = jobs

    @property
    def target_mesh(self) -> TriMesh:
        return self.problem.moving

    def _mismatch(self, positions):
        p = self.problem
        moved = DeformedMesh.of(p.moving, positions)
        samples = sample_static(moved, p.static, self.jobs)
        overlap = overlap_region(moved, p.static, samples)
        value, grad, per_face = intensity_mismatch(moved, p.moving_intensity, p.static, p.static_intensity, overlap, samples)
        return moved, overlap, value, grad, per_face

    def evaluate(self, positions, s_tilde: float, mu_vertex) -> EnergyReport:
        w = self.weights
        z = np.asarray(positions, dtype=complex)
        moved, overlap, mismatch, grad_i, _ = self._mismatch(z)

        grad_c = np.zeros(len(z), dtype=complex)
        chamfer_value = 0.0
        if self.problem.region_pairs:
            chamfer_value, grads = chamfer([(z[pair.moving_indices], pair.static_points) for pair in self.problem.region_pairs])
            for pair, g in zip(self.problem.region_pairs, grads):
                np.add.at(grad_c, pair.moving_indices, g)

        reg, mu_grad = _regularizers(self.solver_mesh, mu_vertex, w)
        components = {"intensity": mismatch, "chamfer": chamfer_value, **reg}
        return EnergyReport(
            total=float(sum(w[k] * v for k, v in components.items())),
            components=components,
            weights=dict(w),
            gradient=w["intensity"] * grad_i + w["chamfer"] * grad_c,
            d_mu_vertex=mu_grad,
            diagnostics={"overlap_faces": int(len(overlap)), "flipped_faces": int(len(moved.flipped_faces))},
        )

    def per_face(self, positions) -> dict[str, np.ndarray]:
        _, _, _, _, per_face = self._mismatch(np.asarray(positions, dtype=complex))
        return {"mismatch": per_face}

    def overlap(self, positions) -> np.ndarray:
        _, overlap, _, _, _ = self._mismatch(np.asarray(positions, dtype=complex))
        return overlap

    def summary(self, positions) -> dict:
        moved, overlap, value, _, _ = self._mismatch(np.asarray(positions, dtype=complex))
        return {
            "mismatch": value,
            "overlap_faces": int(len(overlap)),
            "overlap_components": overlap_components(self.problem.moving, overlap),
            "flipped_faces": int(len(moved.flipped_faces)),
        }
