import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcmap.energies import (
    DensityObjective,
    DensityProblem,
    RegionPair,
    RegistrationObjective,
    RegistrationProblem,
    chamfer,
    chamfer_pair,
    density_energy,
    density_variance,
    e_bc,
    e_smooth,
    face_density,
    green_area,
    green_area_gradient,
    intensity_mismatch,
    overlap_components,
    overlap_region,
    sample_static,
)
from qcmap.errors import EmptyRegion, InputError, ShapeMismatch
from qcmap.mesh_core import DeformedMesh
from qcmap.meshgen import gaussian_peak_population, grid_square, unit_disk

H = 1e-6


def fd_check(loss, grad, z, rng, count=4, rel=1e-5):
    for _ in range(count):
        direction = rng.normal(size=len(z)) + 1j * rng.normal(size=len(z))
        numeric = (loss(z + H * direction) - loss(z - H * direction)) / (2 * H)
        analytic = float(np.real(np.vdot(grad, direction)))
        assert analytic == pytest.approx(numeric, rel=rel, abs=1e-8)


def test_chamfer_of_single_points():
    value, grad = chamfer_pair(np.array([0j]), np.array([1 + 0j]))
    assert value == pytest.approx(2.0)
    np.testing.assert_allclose(grad, [-4.0])


def test_chamfer_gradient(rng):
    moved = rng.normal(size=15) + 1j * rng.normal(size=15)
    static = rng.normal(size=9) + 1j * rng.normal(size=9)
    value, grad = chamfer_pair(moved, static)
    fd_check(lambda z: chamfer_pair(z, static)[0], grad, moved, rng)
    total, grads = chamfer([(moved, static), (moved, static)])
    assert total == pytest.approx(2 * value)
    assert len(grads) == 2


def test_chamfer_empty_region():
    with pytest.raises(EmptyRegion):
        chamfer([(np.array([0j]), np.array([], dtype=complex))])


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_chamfer_is_symmetric(n_moved, n_static, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n_moved) + 1j * rng.normal(size=n_moved)
    b = rng.normal(size=n_static) + 1j * rng.normal(size=n_static)
    assert chamfer_pair(a, b)[0] == pytest.approx(chamfer_pair(b, a)[0], rel=1e-12)


def test_regularizer_values(square):
    value, grad = e_bc(np.full(7, 0.5))
    assert value == pytest.approx(0.25)
    np.testing.assert_allclose(grad, 2 * 0.5 / 7)
    smooth, _ = e_smooth(square, square.vertices[:, 0].astype(complex))
    assert smooth == pytest.approx(1.0)


def test_smooth_gradient(jittered_disk, rng):
    mu = 0.3 * (rng.normal(size=jittered_disk.n_vertices) + 1j * rng.normal(size=jittered_disk.n_vertices))
    _, grad = e_smooth(jittered_disk, mu)
    fd_check(lambda m: e_smooth(jittered_disk, m)[0], grad, mu, rng)


def test_green_area_of_unit_square(rng):
    z = np.array([0, 1, 1 + 1j, 1j])
    assert green_area(z) == pytest.approx(1.0)
    fd_check(green_area, green_area_gradient(z), z.astype(complex), rng)
    with pytest.raises(InputError):
        green_area(z[:2])


def test_uniform_population_has_zero_energy(jittered_disk):
    problem = DensityProblem(jittered_disk, 3.0 * 0.5 * jittered_disk.face_areas)
    report = density_energy(problem, jittered_disk.complex_vertices, 0.0)
    assert report.total == pytest.approx(0.0, abs=1e-20)
    assert report.diagnostics["barrier"] == 0.0
    assert density_variance(problem, jittered_disk.complex_vertices) == pytest.approx(0.0, abs=1e-24)


def test_density_gradient(jittered_disk, rng):
    problem = DensityProblem(jittered_disk, gaussian_peak_population(jittered_disk))
    z = 1.2 * jittered_disk.complex_vertices + 0.01 * (rng.normal(size=jittered_disk.n_vertices) + 1j * rng.normal(size=jittered_disk.n_vertices))
    report = density_energy(problem, z, 0.0)
    fd_check(lambda w: density_energy(problem, w, 0.0).total, report.gradient, z, rng)


def test_density_scale_barrier(jittered_disk):
    problem = DensityProblem(jittered_disk, gaussian_peak_population(jittered_disk))
    report = density_energy(problem, jittered_disk.complex_vertices, np.log(2.0))
    assert report.diagnostics["barrier"] == pytest.approx(0.5)
    assert report.d_s_tilde == pytest.approx(2.0)


def test_density_variance_ignores_similarities(jittered_disk):
    problem = DensityProblem(jittered_disk, gaussian_peak_population(jittered_disk))
    z = jittered_disk.complex_vertices
    assert density_variance(problem, 2.5 * np.exp(0.7j) * z + 1 - 2j) == pytest.approx(density_variance(problem, z))


DENSITY_DISK = unit_disk(4, seed=3, jitter=0.3)


@given(st.floats(0.1, 10.0), st.floats(-np.pi, np.pi))
def test_density_scales_with_inverse_square(c, phi):
    problem = DensityProblem(DENSITY_DISK, gaussian_peak_population(DENSITY_DISK))
    z = DENSITY_DISK.complex_vertices
    scaled = face_density(problem, c * np.exp(1j * phi) * z + 0.3 - 0.1j)
    np.testing.assert_allclose(scaled, face_density(problem, z) / c**2, rtol=1e-9)


def test_density_energy_with_collapsed_face(square, caplog):
    problem = DensityProblem(square, gaussian_peak_population(square))
    z = square.complex_vertices.copy()
    a, _, c = square.faces[5]
    z[c] = z[a]
    report = density_energy(problem, z, 0.0)
    assert report.diagnostics["degenerate_faces"] >= 1
    assert np.isfinite(report.total)
    assert np.all(np.isfinite(report.gradient))
    assert "non-positive area" in caplog.text


def test_density_problem_validation(square):
    with pytest.raises(ShapeMismatch):
        DensityProblem(square, np.ones(3))
    with pytest.raises(InputError):
        DensityProblem(square, -np.ones(square.n_faces))


def test_overlap_and_components():
    static = grid_square(4)
    inside = DeformedMesh.of(static, static.complex_vertices)
    assert len(overlap_region(inside, static)) == static.n_faces
    far = DeformedMesh.of(static, static.complex_vertices + 10)
    assert len(overlap_region(far, static)) == 0
    assert overlap_components(static, np.arange(static.n_faces)) == 1
    assert overlap_components(static, [0, static.n_faces - 1]) == 2
    assert overlap_components(static, []) == 0


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(0.2, 0.95))
def test_overlap_never_grows_when_static_shrinks(dx, dy, c):
    moving = grid_square(5, origin=(dx, dy))
    moved = DeformedMesh.of(moving, moving.complex_vertices)
    large = grid_square(6, size=2.0, origin=(-0.5, -0.5))
    small = grid_square(6, size=2.0 * c, origin=(0.5 - c, 0.5 - c))
    assert set(overlap_region(moved, small).tolist()) <= set(overlap_region(moved, large).tolist())


def planted_registration(rng):
    moving = grid_square(4, origin=(0.13, 0.07))
    static = grid_square(8, size=2.0, origin=(-0.5, -0.5))
    static_intensity = static.vertices[:, 0] + 2.0 * static.vertices[:, 1]
    moving_intensity = rng.uniform(0, 3, moving.n_vertices)
    return moving, moving_intensity, static, static_intensity


def test_intensity_mismatch_gradient(rng):
    moving, I1, static, I2 = planted_registration(rng)
    z = moving.complex_vertices

    def loss(w):
        moved = DeformedMesh.of(moving, w)
        return intensity_mismatch(moved, I1, static, I2, overlap_region(moved, static))[0]

    moved = DeformedMesh.of(moving, z)
    samples = sample_static(moved, static)
    value, grad, per_face = intensity_mismatch(moved, I1, static, I2, overlap_region(moved, static, samples), samples)
    assert value > 0
    assert np.all(np.isfinite(per_face))
    fd_check(loss, grad, z, rng)


def test_identical_meshes_have_no_mismatch(square):
    intensity = np.sin(square.vertices[:, 0])
    problem = RegistrationProblem(square, intensity, square, intensity)
    report = RegistrationObjective(problem).evaluate(square.complex_vertices, 0.0, np.zeros(square.n_vertices))
    assert report.components["intensity"] == pytest.approx(0.0, abs=1e-12)
    assert report.diagnostics["overlap_faces"] == square.n_faces


def test_registration_problem_validation(square):
    intensity = np.zeros(square.n_vertices)
    with pytest.raises(EmptyRegion):
        RegistrationProblem(square, intensity, square, intensity, (RegionPair(np.array([], dtype=int), np.array([0j])),))
    with pytest.raises(InputError):
        RegistrationProblem(square, intensity, square, intensity, weights={"area": 1.0})
    with pytest.raises(ShapeMismatch):
        RegistrationProblem(square, intensity[:-1], square, intensity)


def test_registration_objective_gradient(rng):
    moving, I1, static, I2 = planted_registration(rng)
    pair = RegionPair(np.arange(5), static.complex_vertices[:7] + 0.1)
    problem = RegistrationProblem(moving, I1, static, I2, (pair,))
    objective = RegistrationObjective(problem)
    z = moving.complex_vertices
    mu = np.zeros(moving.n_vertices, dtype=complex)
    report = objective.evaluate(z, 0.0, mu)
    assert set(report.components) == {"intensity", "chamfer", "bc", "smooth"}
    fd_check(lambda w: objective.evaluate(w, 0.0, mu).total, report.gradient, z, rng)
    summary = objective.summary(z)
    assert summary["overlap_faces"] == moving.n_faces
    assert summary["overlap_components"] == 1


def test_objective_weights(jittered_disk):
    problem = DensityProblem(jittered_disk, gaussian_peak_population(jittered_disk))
    objective = DensityObjective(problem, weights={"bc": 0.5})
    assert objective.weights == {"density": 1.0, "bc": 0.5, "smooth": 1e-3}
    with pytest.raises(InputError):
        DensityObjective(problem, weights={"chamfer": 1.0})
    mu = 0.2 * np.ones(jittered_disk.n_vertices, dtype=complex)
    report = objective.evaluate(jittered_disk.complex_vertices, 0.0, mu)
    assert report.total == pytest.approx(report.weighted_sum())
    assert report.components["bc"] == pytest.approx(0.04)
