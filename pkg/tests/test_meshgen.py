import numpy as np
import pytest

from qcmap.mesh_core import doubled_areas
from qcmap.meshgen import fan_polygon, gaussian_peak_population, grid_square, random_homeomorphism, random_smooth_mu, unit_disk


@pytest.mark.parametrize("n_rings", [1, 4, 9])
def test_unit_disk_counts(n_rings):
    mesh = unit_disk(n_rings)
    assert mesh.n_vertices == 1 + 3 * n_rings * (n_rings + 1)
    assert np.abs(mesh.complex_vertices).max() == pytest.approx(1.0)


def test_fan_polygon_is_exact_case(rng):
    mesh = fan_polygon(17, rng)
    assert mesh.n_faces == mesh.n_vertices - 2
    assert np.all(mesh.face_areas > 0)


def test_grid_square_area():
    mesh = grid_square(5, size=2.0, origin=(1.0, -1.0))
    assert mesh.face_areas.sum() / 2 == pytest.approx(4.0)
    assert mesh.vertices.min(axis=0).tolist() == [1.0, -1.0]


def test_random_homeomorphism_preserves_orientation(jittered_disk, rng):
    image = random_homeomorphism(jittered_disk, rng)
    assert np.all(doubled_areas(image, jittered_disk.faces) > 0)
    assert not np.allclose(image, jittered_disk.complex_vertices)


def test_random_smooth_mu_peak(disk, rng):
    mu = random_smooth_mu(disk, rng, max_abs=0.35)
    assert np.abs(mu).max() == pytest.approx(0.35)


def test_gaussian_peak_population(disk):
    population = gaussian_peak_population(disk, height=0.0)
    np.testing.assert_allclose(population, 0.5 * disk.face_areas)
    peaked = gaussian_peak_population(disk, height=4.0)
    assert np.all(peaked > population)
