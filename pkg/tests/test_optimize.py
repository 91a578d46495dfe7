import numpy as np
import pytest

from qcmap.adjoint import GradBundle
from qcmap.energies import DensityObjective, DensityProblem, RegionPair, RegistrationProblem
from qcmap.errors import ConfigError, NonFiniteGradient
from qcmap.meshgen import gaussian_peak_population, grid_square, unit_disk
from qcmap.optimize import (
    GROUPS,
    AdamState,
    MappingModel,
    OptimConfig,
    OptimParams,
    OptimTrace,
    TraceRow,
    adam_update,
    backward,
    forward,
    gradient_vector,
    run,
    step,
)


def zero_grads(n, **kwargs):
    return GradBundle(np.zeros(n, dtype=complex), d_mu_tilde=kwargs.pop("d_mu_tilde", np.zeros(n, dtype=complex)), **kwargs)


def test_config_from_json5_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{\n  // short run\n  max_iters: 20,\n  step: 0.005,\n  weights: {bc: 0.1},\n}\n", encoding="utf-8")
    config = OptimConfig.from_file(path)
    assert config.max_iters == 20
    assert config.step == 0.005
    assert config.weights == {"bc": 0.1}


@pytest.mark.parametrize(
    "data",
    [{"learning_rate": 0.1}, {"step": 0.0}, {"decays": [0.9, 1.0]}, {"freeze": ["gamma"]}, {"max_iters": 0}, {"init_noise": -0.1}],
)
def test_config_rejects_bad_values(data):
    with pytest.raises(ConfigError):
        OptimConfig.from_dict(data)


def test_config_overrides_merge_weights():
    config = OptimConfig(weights={"bc": 0.1, "smooth": 0.2})
    updated = config.with_overrides(max_iters=7, step=0.5, weights={"smooth": 0.0})
    assert updated.weights == {"bc": 0.1, "smooth": 0.0}
    assert (updated.max_iters, updated.step) == (7, 0.5)
    assert config.with_overrides() is config


def test_params_vector_layout():
    params = OptimParams(np.array([1 + 2j, 3 - 4j]), np.log(0.5), 0.1, -0.2, 0.3 + 0.4j, (0, 1))
    vec = params.to_vector()
    np.testing.assert_allclose(vec, [1, 3, 2, -4, np.log(0.5), 0.1, -0.2, 0.3, 0.4])
    back = OptimParams.from_vector(vec, params.pin_vertices)
    assert back.temp_bc == pytest.approx(0.5)
    assert back.r == params.r


def test_first_adam_step_is_signed_step():
    config = OptimConfig(step=0.1)
    g = np.array([2.0, -0.5, 0.0])
    x, state = adam_update(np.zeros(3), g, AdamState.zeros(3), config)
    np.testing.assert_allclose(x, -0.1 * g / (np.abs(g) + config.eps))
    assert state.t == 1


def test_freeze_zeroes_groups():
    params = OptimParams.identity(3, (0, 1))
    grads = zero_grads(3, d_mu_tilde=np.ones(3, dtype=complex), d_phi=1.0, d_s_tilde=2.0, d_r=1 + 1j, d_temp=4.0)
    g = gradient_vector(params, grads, freeze=("mu_tilde", "r"))
    np.testing.assert_allclose(g, [0, 0, 0, 0, 0, 0, 4.0, 1.0, 2.0, 0, 0])


def test_non_finite_gradient_is_reported():
    params = OptimParams.identity(3, (0, 1))
    grads = zero_grads(3, d_phi=float("nan"))
    with pytest.raises(NonFiniteGradient) as info:
        step(params, grads, AdamState.zeros(11), OptimConfig())
    assert info.value.details["groups"] == ["phi"]


def test_identity_forward(jittered_disk):
    model = MappingModel(jittered_disk)
    fwd = forward(model.initial_params(), model)
    np.testing.assert_allclose(fwd.fine, jittered_disk.complex_vertices, atol=1e-10)
    np.testing.assert_allclose(fwd.mu_vertex, 0.0)


def test_scale_r0_round_trip(jittered_disk):
    scaled = jittered_disk.with_vertices(3.0 * jittered_disk.vertices)
    model = MappingModel(scaled, scale_r0=True)
    assert model.r0 == pytest.approx(3.0 * np.abs(jittered_disk.complex_vertices).max())
    fwd = forward(model.initial_params(), model)
    np.testing.assert_allclose(fwd.fine, scaled.complex_vertices, atol=1e-9)


def test_backward_matches_finite_differences(rng):
    mesh = unit_disk(5, seed=4, jitter=0.3)
    objective = DensityObjective(DensityProblem(mesh, gaussian_peak_population(mesh)), weights={"bc": 0.1, "smooth": 0.01})
    model = MappingModel(mesh)
    params = OptimParams(
        0.3 * (rng.normal(size=mesh.n_vertices) + 1j * rng.normal(size=mesh.n_vertices)),
        0.1, 0.2, 0.05, 0.1 - 0.1j, model.pins,
    )

    def loss(p):
        fwd = forward(p, model)
        return objective.evaluate(fwd.fine, p.s_tilde, fwd.mu_vertex).total

    fwd = forward(params, model)
    grad = gradient_vector(params, backward(params, model, fwd, objective.evaluate(fwd.fine, params.s_tilde, fwd.mu_vertex)))
    x0 = params.to_vector()
    h = 1e-6
    for k in [0, 7, len(x0) // 2 + 3, len(x0) - 5, len(x0) - 4, len(x0) - 3, len(x0) - 2, len(x0) - 1]:
        e = np.zeros(len(x0))
        e[k] = 1.0
        numeric = (loss(OptimParams.from_vector(x0 + h * e, params.pin_vertices)) - loss(OptimParams.from_vector(x0 - h * e, params.pin_vertices))) / (2 * h)
        assert grad[k] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_trace_rejects_non_increasing_iterations(tmp_path):
    trace = OptimTrace()
    trace.record(TraceRow(0, 1.0, {"density": 1.0}, 0.5, 0))
    with pytest.raises(ValueError):
        trace.record(TraceRow(0, 1.0, {"density": 1.0}, 0.5, 0))
    lines = trace.to_csv(tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,total,density,grad_norm,flips,millis"
    assert lines[1].endswith(",0.0")


def test_uniform_population_stays_put(disk):
    problem = DensityProblem(disk, 0.5 * disk.face_areas)
    result = run(problem, OptimConfig(max_iters=5))
    assert np.all(result.trace.totals < 1e-12)
    np.testing.assert_allclose(result.fine, disk.complex_vertices, atol=1e-6)


def test_peak_population_decreases_energy(disk):
    problem = DensityProblem(disk, gaussian_peak_population(disk, height=3.0))
    result = run(problem, OptimConfig(max_iters=60, step=0.02))
    totals = result.trace.totals
    assert result.report.total < totals[0]
    assert result.report.total == pytest.approx(totals.min())
    assert result.trace.rows[result.best_iteration].total == pytest.approx(result.report.total)
    assert result.stop_reason in {"max_iters", "plateau", "gradient"}


def test_runs_are_reproducible(tmp_path, disk):
    problem = DensityProblem(disk, gaussian_peak_population(disk, height=2.0))
    first = run(problem, OptimConfig(max_iters=8)).trace.to_csv(tmp_path / "a.csv").read_bytes()
    second = run(problem, OptimConfig(max_iters=8)).trace.to_csv(tmp_path / "b.csv").read_bytes()
    assert first == second


def test_frozen_groups_do_not_move(disk):
    problem = DensityProblem(disk, gaussian_peak_population(disk, height=3.0))
    result = run(problem, OptimConfig(max_iters=10, freeze=("phi", "r", "log_temp")))
    assert result.params.phi == 0.0
    assert result.params.r == 0j
    assert result.params.log_temp == 0.0


def test_log_two_scale_doubles_distances(jittered_disk):
    model = MappingModel(jittered_disk)
    params = OptimParams(np.zeros(jittered_disk.n_vertices, dtype=complex), 0.0, 0.3, np.log(2.0), 0.5j, model.pins)
    fine = forward(params, model).fine
    z = jittered_disk.complex_vertices
    np.testing.assert_allclose(np.abs(fine[:, None] - fine[None, :]), 2.0 * np.abs(z[:, None] - z[None, :]), atol=1e-9)
    np.testing.assert_allclose(fine, 2.0 * np.exp(0.3j) * z + 0.5j, atol=1e-9)


def test_similarity_alone_is_recovered_with_frozen_mu():
    moving = grid_square(6, origin=(-0.5, -0.5))
    z = moving.complex_vertices
    phi, scale, shift = 0.1, 1.05, 0.05 - 0.03j
    target = scale * np.exp(1j * phi) * z + shift
    static = moving.with_vertices(np.column_stack([target.real, target.imag]))
    flat = np.zeros(moving.n_vertices)
    problem = RegistrationProblem(moving, flat, static, flat, (RegionPair(np.arange(moving.n_vertices), target),))
    config = OptimConfig(
        max_iters=3000,
        freeze=("mu_tilde", "log_temp"),
        weights={"intensity": 0.0, "chamfer": 1.0, "bc": 0.0, "smooth": 0.0},
    )
    result = run(problem, config)
    p = result.params
    np.testing.assert_array_equal(p.mu_tilde, 0.0)
    assert abs(p.phi - phi) < 1e-4
    assert abs(np.exp(p.s_tilde) - scale) < 1e-4
    assert abs(p.r - shift) < 1e-4


def test_seed_drives_initial_noise(disk):
    problem = DensityProblem(disk, gaussian_peak_population(disk, height=2.0))

    def first_mu(seed, noise):
        return run(problem, OptimConfig(max_iters=1, seed=seed, init_noise=noise, freeze=GROUPS)).params.mu_tilde

    np.testing.assert_array_equal(first_mu(1, 0.05), first_mu(1, 0.05))
    assert not np.allclose(first_mu(1, 0.05), first_mu(2, 0.05))
    assert np.std(first_mu(1, 0.05)) == pytest.approx(0.05, rel=0.3)
    np.testing.assert_array_equal(first_mu(1, 0.0), first_mu(2, 0.0))
    np.testing.assert_array_equal(first_mu(1, 0.0), 0.0)
