import numpy as np
import pytest

from qcmap.beltrami import bc_from_map, vertex_to_face
from qcmap.errors import DuplicatePins, InputError, MuOutOfRange
from qcmap.lsqc import _stack, apply_similarity, assemble, energy, factorize, pick_pins, solve, solve_mapping
from qcmap.meshgen import fan_polygon, random_smooth_mu, unit_disk


def own_pins(mesh, pins=None):
    a, b = pins or pick_pins(mesh)
    z = mesh.complex_vertices
    return [(a, z[a]), (b, z[b])]


def random_mu(rng, n, max_abs):
    return max_abs * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))


def test_w_coefficients_sum_to_zero(jittered_disk, rng):
    system = assemble(jittered_disk, random_mu(rng, jittered_disk.n_faces, 0.7), own_pins(jittered_disk))
    np.testing.assert_allclose(system.M @ np.ones(jittered_disk.n_vertices), 0.0, atol=1e-12)
    assert system.M.shape == (jittered_disk.n_faces, jittered_disk.n_vertices)
    assert system.n_free == jittered_disk.n_vertices - 2


def test_zero_mu_gives_identity(jittered_disk):
    result = solve_mapping(jittered_disk, np.zeros(jittered_disk.n_faces), own_pins(jittered_disk))
    np.testing.assert_allclose(result.U, jittered_disk.complex_vertices, atol=1e-10)
    assert result.energy < 1e-20
    assert result.flipped_count == 0


def test_exact_case_recovers_mu(rng):
    for n in (10, 33, 60):
        mesh = fan_polygon(n, rng)
        mu = random_mu(rng, mesh.n_faces, 0.8)
        result = solve(assemble(mesh, mu, own_pins(mesh)))
        recovered, degenerate = bc_from_map(mesh, result.U)
        assert not degenerate.any()
        np.testing.assert_allclose(recovered, mu, atol=1e-9)
        assert result.energy < 1e-18


def test_system_has_full_rank(rng):
    mesh = unit_disk(3, seed=3, jitter=0.3)
    system = assemble(mesh, random_mu(rng, mesh.n_faces, 0.9), [(0, 0j), (5, 1 + 0j)])
    A = system.A.toarray()
    assert np.linalg.matrix_rank(A) == A.shape[1]


def test_energy_matches_real_residual(jittered_disk, rng):
    mu = vertex_to_face(jittered_disk, random_smooth_mu(jittered_disk, rng, 0.5))
    system = assemble(jittered_disk, mu, own_pins(jittered_disk))
    result = solve(system)
    residual = system.A @ result.u - system.b
    assert result.energy == pytest.approx(float(residual @ residual), rel=1e-10, abs=1e-16)
    assert energy(system, result.U) == pytest.approx(result.energy)


def test_similarity_of_pins_moves_solution(jittered_disk, rng):
    mu = vertex_to_face(jittered_disk, random_smooth_mu(jittered_disk, rng, 0.6))
    a, b = pick_pins(jittered_disk)
    base = solve_mapping(jittered_disk, mu, [(a, 0j), (b, 1 + 0j)])
    zc, tc = 0.4 - 1.3j, 2.0 + 0.5j
    moved = solve_mapping(jittered_disk, mu, [(a, tc), (b, zc + tc)])
    np.testing.assert_allclose(moved.U, zc * base.U + tc, atol=1e-9)


def test_out_of_range_mu_names_faces(square):
    mu = np.zeros(square.n_faces, dtype=complex)
    mu[3] = 1.5
    with pytest.raises(MuOutOfRange) as info:
        assemble(square, mu, own_pins(square))
    assert info.value.faces == [3]
    assert info.value.exit_code == 4


def test_pin_errors(square):
    mu = np.zeros(square.n_faces)
    with pytest.raises(DuplicatePins):
        assemble(square, mu, [(2, 0j), (2, 1 + 0j)])
    with pytest.raises(InputError):
        assemble(square, mu, [(0, 0j), (1, 1 + 0j), (2, 1j)])
    with pytest.raises(InputError):
        assemble(square, mu, [(0, 0j), (square.n_vertices, 1 + 0j)])
    with pytest.raises(InputError):
        assemble(square, mu, own_pins(square), row_scaling="area")


def test_foreign_factorization_preconditions(jittered_disk, rng):
    pins = own_pins(jittered_disk)
    first = assemble(jittered_disk, vertex_to_face(jittered_disk, random_smooth_mu(jittered_disk, rng, 0.4)), pins)
    second = assemble(jittered_disk, vertex_to_face(jittered_disk, random_smooth_mu(jittered_disk, rng, 0.4)), pins)
    reused = solve(second, factorize(first))
    fresh = solve(second)
    np.testing.assert_allclose(reused.U, fresh.U, atol=1e-10)
    assert reused.residual_norm <= 1e-6


def test_ordering_is_reused(jittered_disk):
    system = assemble(jittered_disk, np.zeros(jittered_disk.n_faces), own_pins(jittered_disk))
    first = factorize(system)
    again = factorize(system, first.ordering)
    np.testing.assert_array_equal(first.ordering, again.ordering)
    np.testing.assert_allclose(again.solve(system.rhs), first.solve(system.rhs), atol=1e-12)


def test_pick_pins_on_disk(disk):
    a, b = pick_pins(disk)
    assert a < b
    assert {a, b} <= set(disk.boundary_vertices.tolist())
    assert abs(disk.complex_vertices[a] - disk.complex_vertices[b]) == pytest.approx(2.0)


def test_pick_pins_hull_path(monkeypatch, disk):
    import qcmap.lsqc as lsqc

    exact = pick_pins(disk)
    monkeypatch.setattr(lsqc, "EXACT_PAIRWISE_LIMIT", 2)
    a, b = pick_pins(disk)
    z = disk.complex_vertices
    assert abs(z[a] - z[b]) == pytest.approx(abs(z[exact[0]] - z[exact[1]]))


def test_apply_similarity():
    U = np.array([0j, 1 + 0j])
    np.testing.assert_allclose(apply_similarity(U, np.pi / 2, 2.0, 1j), [1j, 3j])
    with pytest.raises(InputError):
        apply_similarity(U, 0.0, 0.0, 0j)


def test_report_fields(square):
    report = solve_mapping(square, np.zeros(square.n_faces), own_pins(square)).report()
    assert set(report) == {"energy", "residual", "flipped_count", "flipped_faces", "pins"}
    assert len(report["pins"]) == 2


def test_stack_layout():
    np.testing.assert_array_equal(_stack(np.array([1 + 2j, 3 + 4j])), [1, 3, 2, 4])
