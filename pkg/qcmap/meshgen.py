"""Synthetic meshes and fields for tests, property suites and desk-scale jobs."""
import logging
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay

from .mesh_core import TriMesh, doubled_areas

logger = logging.getLogger(__name__)


def _oriented(points: np.ndarray, faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64).copy()
    flip = doubled_areas(points, faces) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _rings(n_rings: int, r_min: float, with_center: bool, rng: Optional[np.random.Generator], jitter: float):
    pts = [np.zeros((1, 2))] if with_center else []
    radii = np.linspace(r_min, 1.0, n_rings + (0 if with_center else 1))
    if with_center:
        radii = np.linspace(0.0, 1.0, n_rings + 1)[1:]
    for k, r in enumerate(radii, start=1):
        count = max(6 * k if with_center else int(np.ceil(2 * np.pi * r * n_rings * 1.1)), 6)
        theta = np.linspace(0.0, 2 * np.pi, count, endpoint=False) + (0.5 * k * np.pi / count)
        ring = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        if rng is not None and jitter > 0 and k < len(radii):
            ring += rng.uniform(-jitter, jitter, ring.shape) / n_rings
        pts.append(ring)
    return np.vstack(pts)


def unit_disk(n_rings: int = 10, seed: Optional[int] = None, jitter: float = 0.0) -> TriMesh:
    """Concentric-ring Delaunay disk with 1 + 3 n (n + 1) vertices; the outer ring stays on the circle."""
    rng = np.random.default_rng(seed) if seed is not None else None
    pts = _rings(n_rings, 0.0, True, rng, jitter)
    tri = Delaunay(pts)
    return TriMesh(pts, _oriented(pts, tri.simplices))


def annulus(n_rings: int = 6, inner: float = 0.4) -> TriMesh:
    pts = _rings(n_rings, inner, False, None, 0.0)
    tri = Delaunay(pts)
    faces = tri.simplices
    centroid_radius = np.linalg.norm(pts[faces].mean(axis=1), axis=1)
    faces = faces[centroid_radius > inner]
    return TriMesh(pts, _oriented(pts, faces))


def grid_square(n: int = 8, size: float = 1.0, origin=(0.0, 0.0)) -> TriMesh:
    xs = np.linspace(0.0, size, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()]) + np.asarray(origin, dtype=float)
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(pts, np.array(faces))


def fan_polygon(n: int, rng: np.random.Generator) -> TriMesh:
    """Random convex n-gon fan-triangulated from vertex 0, so |F| = |V| - 2."""
    gaps = rng.uniform(0.5, 1.5, n)
    theta = np.cumsum(gaps) / gaps.sum() * 2 * np.pi
    axes = rng.uniform(0.6, 1.0, 2)
    rot = rng.uniform(0, 2 * np.pi)
    z = (axes[0] * np.cos(theta) + 1j * axes[1] * np.sin(theta)) * np.exp(1j * rot)
    pts = np.column_stack([z.real, z.imag])
    faces = np.array([(0, i, i + 1) for i in range(1, n - 1)])
    return TriMesh(pts, faces)


def smooth_complex_field(points: np.ndarray, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    """Sum of a few random low-frequency complex Fourier modes at the given points."""
    out = np.zeros(len(points), dtype=complex)
    for _ in range(modes):
        k = rng.normal(0.0, 2.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal() + 1j * rng.normal()
        out += amp * np.cos(points @ k + phase)
    return out


def random_smooth_mu(mesh: TriMesh, rng: np.random.Generator, max_abs: float = 0.5) -> np.ndarray:
    """Per-vertex smooth Beltrami field scaled so that max |mu| == max_abs."""
    field = smooth_complex_field(mesh.vertices, rng)
    peak = np.max(np.abs(field))
    return field * (max_abs / peak) if peak > 0 else field


def random_homeomorphism(mesh: TriMesh, rng: np.random.Generator, amplitude: float = 0.15) -> np.ndarray:
    """Orientation-preserving piecewise-linear map given by vertex images (complex)."""
    z = mesh.complex_vertices
    bump = smooth_complex_field(mesh.vertices, rng, modes=3)
    bump /= max(np.max(np.abs(bump)), 1e-12)
    affine = (1.0 + 0.3 * (rng.normal() + 1j * rng.normal())) * z + 0.2 * (rng.normal() + 1j * rng.normal()) * np.conj(z)
    base_det = doubled_areas(affine, mesh.faces)
    if np.any(base_det <= 0):
        affine = z
    eps = amplitude * mesh.diagonal
    while eps > 1e-6:
        image = affine + eps * bump
        if np.all(doubled_areas(image, mesh.faces) > 1e-3 * np.abs(mesh.face_areas)):
            return image
        eps *= 0.5
    return affine


def gaussian_peak_population(mesh: TriMesh, height: float = 4.0, sigma: float = 0.25, center=(0.0, 0.0)) -> np.ndarray:
    """Population per face: area times (1 + height * gaussian bump)."""
    c = mesh.centroids - np.asarray(center, dtype=float)
    density = 1.0 + height * np.exp(-np.sum(c * c, axis=1) / (2 * sigma * sigma))
    return 0.5 * mesh.face_areas * density
