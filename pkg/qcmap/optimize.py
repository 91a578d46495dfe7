"""Gradient loop over (mu_tilde, T_BC, phi, s_tilde, r) with the solve and its adjoint in the middle.

One iteration:

    mu = activation(mu_tilde, T)  -> vertex_to_face -> assemble -> solve
       -> similarity g -> interpolation R -> energies
    and back: energies -> R^T -> similarity -> adjoint solve -> activation -> Adam step
"""
import csv
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .adjoint import GradBundle, backprop_activation, backprop_interp, backprop_similarity, backprop_solve
from .beltrami import activation, vertex_to_face
from .errors import ConfigError, MuOutOfRange, NonFiniteGradient
from .energies import DensityObjective, DensityProblem, EnergyReport, RegistrationObjective, RegistrationProblem
from .json_utils import load_json_file
from .lsqc import MapResult, apply_similarity, assemble, factorize, pick_pins, solve
from .mesh_core import InterpMatrix, TriMesh, build_interp

logger = logging.getLogger(__name__)

GROUPS = ("mu_tilde", "log_temp", "phi", "s_tilde", "r")


@dataclass(frozen=True, eq=False)
class OptimParams:
    mu_tilde: np.ndarray
    log_temp: float
    phi: float
    s_tilde: float
    r: complex
    pin_vertices: tuple[int, int]

    @classmethod
    def identity(cls, n_vertices: int, pin_vertices: Sequence[int]) -> "OptimParams":
        return cls(np.zeros(n_vertices, dtype=complex), 0.0, 0.0, 0.0, 0j, tuple(int(v) for v in pin_vertices))

    @property
    def temp_bc(self) -> float:
        return float(np.exp(self.log_temp))

    @property
    def similarity(self) -> tuple[float, float, complex]:
        return self.phi, self.s_tilde, self.r

    def to_vector(self) -> np.ndarray:
        mu = np.asarray(self.mu_tilde, dtype=complex)
        return np.concatenate([mu.real, mu.imag, [self.log_temp, self.phi, self.s_tilde, np.real(self.r), np.imag(self.r)]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, pin_vertices) -> "OptimParams":
        n = (len(vec) - 5) // 2
        mu = vec[:n] + 1j * vec[n:2 * n]
        tail = vec[2 * n:]
        return cls(mu, float(tail[0]), float(tail[1]), float(tail[2]), complex(tail[3], tail[4]), tuple(pin_vertices))

    def to_json(self) -> dict:
        return {
            "mu_tilde": [[float(z.real), float(z.imag)] for z in self.mu_tilde],
            "temp_bc": self.temp_bc,
            "phi": float(self.phi),
            "s_tilde": float(self.s_tilde),
            "r": [float(np.real(self.r)), float(np.imag(self.r))],
            "pin_vertices": list(self.pin_vertices),
        }


def _group_slices(n_vertices: int) -> dict[str, list[slice]]:
    base = 2 * n_vertices
    return {
        "mu_tilde": [slice(0, base)],
        "log_temp": [slice(base, base + 1)],
        "phi": [slice(base + 1, base + 2)],
        "s_tilde": [slice(base + 2, base + 3)],
        "r": [slice(base + 3, base + 5)],
    }


@dataclass(frozen=True)
class OptimConfig:
    weights: dict = field(default_factory=dict)
    max_iters: int = 5000
    step: float = 1e-2
    decays: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    tol: float = 1e-6
    atol: float = 1e-10
    patience: int = 200
    log_every: int = 50
    seed: int = 0
    init_noise: float = 0.0
    freeze: tuple[str, ...] = ()
    record_timing: bool = False

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"step must be positive, got {self.step}")
        if len(self.decays) != 2 or not all(0 < b < 1 for b in self.decays):
            raise ConfigError(f"decays must be two numbers in (0, 1), got {list(self.decays)}")
        if int(self.max_iters) < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.patience < 1 or self.log_every < 1:
            raise ConfigError("patience and log_every must be positive")
        if self.tol < 0 or self.atol < 0 or not self.eps > 0:
            raise ConfigError("tol and atol must be non-negative and eps positive")
        if not self.init_noise >= 0:
            raise ConfigError(f"init_noise must be non-negative, got {self.init_noise}")
        unknown = set(self.freeze) - set(GROUPS)
        if unknown:
            raise ConfigError(f"cannot freeze unknown parameter group(s) {sorted(unknown)}; known: {list(GROUPS)}")
        object.__setattr__(self, "decays", tuple(float(b) for b in self.decays))
        object.__setattr__(self, "freeze", tuple(self.freeze))
        object.__setattr__(self, "weights", {str(k): float(v) for k, v in dict(self.weights).items()})

    @classmethod
    def from_dict(cls, data: dict) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}", {"known": sorted(known)})
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "OptimConfig":
        return cls.from_dict(load_json_file(path, expect_types=(dict,)))

    def with_overrides(self, max_iters: Optional[int] = None, step: Optional[float] = None, weights: Optional[dict] = None) -> "OptimConfig":
        changes = {}
        if max_iters is not None:
            changes["max_iters"] = int(max_iters)
        if step is not None:
            changes["step"] = float(step)
        if weights:
            changes["weights"] = {**self.weights, **weights}
        return replace(self, **changes) if changes else self


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_update(x: np.ndarray, g: np.ndarray, state: AdamState, config: OptimConfig) -> tuple[np.ndarray, AdamState]:
    b1, b2 = config.decays
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return x - config.step * m_hat / (np.sqrt(v_hat) + config.eps), AdamState(m, v, t)


def gradient_vector(params: OptimParams, grads: GradBundle, freeze: Sequence[str] = ()) -> np.ndarray:
    """Real gradient in the layout of `OptimParams.to_vector`; frozen groups are zeroed."""
    n = len(params.mu_tilde)
    d_mu = grads.d_mu_tilde if grads.d_mu_tilde is not None else np.zeros(n, dtype=complex)
    g = np.concatenate([
        np.real(d_mu), np.imag(d_mu),
        [grads.d_temp * params.temp_bc, grads.d_phi, grads.d_s_tilde, np.real(grads.d_r), np.imag(grads.d_r)],
    ])
    slices = _group_slices(n)
    for group in freeze:
        for sl in slices[group]:
            g[sl] = 0.0
    return g


def step(params: OptimParams, grads: GradBundle, state: AdamState, config: OptimConfig) -> tuple[OptimParams, AdamState]:
    g = gradient_vector(params, grads, config.freeze)
    if not np.all(np.isfinite(g)):
        slices = _group_slices(len(params.mu_tilde))
        bad = sorted({name for name, sls in slices.items() for sl in sls if not np.all(np.isfinite(g[sl]))})
        raise NonFiniteGradient(
            f"non-finite gradient in parameter group(s) {bad} at step {state.t + 1}",
            {"groups": bad, "step": state.t + 1, "non_finite": int(np.sum(~np.isfinite(g))), "params": params.to_json()},
        )
    x, state = adam_update(params.to_vector(), g, state, config)
    return OptimParams.from_vector(x, params.pin_vertices), state


class MappingModel:
    """Solver mesh, fixed pins and the interpolation to the target (fine) vertices.

    With `scale_r0` the solver domain is normalised by r0 = max |v| and fine
    positions are scaled back by r0.
    """

    def __init__(
        self,
        solver_mesh: TriMesh,
        target_points=None,
        pins: Optional[Sequence[int]] = None,
        scale_r0: bool = False,
        jobs: int = 1,
        row_scaling: str = "sqrt_area",
    ):
        self.r0 = float(np.max(np.abs(solver_mesh.complex_vertices))) if scale_r0 else 1.0
        if not self.r0 > 0:
            self.r0 = 1.0
        self.mesh = solver_mesh if self.r0 == 1.0 else solver_mesh.with_vertices(solver_mesh.vertices / self.r0)
        targets = solver_mesh.complex_vertices if target_points is None else np.asarray(target_points, dtype=complex)
        self.R: InterpMatrix = build_interp(self.mesh, targets / self.r0, jobs=jobs)
        self.pins = tuple(int(v) for v in (pins if pins is not None else pick_pins(self.mesh)))
        self.row_scaling = row_scaling
        self._ordering: Optional[np.ndarray] = None
        logger.debug(f"mapping model: {self.mesh.n_vertices} solver vertices, {self.R.shape[0]} targets, pins {self.pins}, r0 {self.r0:.6g}")

    @property
    def pin_targets(self) -> list[tuple[int, complex]]:
        z = self.mesh.complex_vertices
        return [(v, complex(z[v])) for v in self.pins]

    def initial_params(self, noise: float = 0.0, rng: Optional[np.random.Generator] = None) -> OptimParams:
        """Identity map, or mu_tilde drawn around 0 with standard deviation `noise`."""
        params = OptimParams.identity(self.mesh.n_vertices, self.pins)
        if noise > 0:
            rng = rng if rng is not None else np.random.default_rng(0)
            n = self.mesh.n_vertices
            params = replace(params, mu_tilde=noise * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0))
        return params

    def solve(self, mu_faces) -> MapResult:
        system = assemble(self.mesh, mu_faces, self.pin_targets, row_scaling=self.row_scaling)
        factorization = factorize(system, self._ordering)
        self._ordering = factorization.ordering
        return solve(system, factorization)


@dataclass(frozen=True, eq=False)
class Forward:
    result: MapResult
    mu_vertex: np.ndarray
    image: np.ndarray
    fine: np.ndarray


def forward(params: OptimParams, model: MappingModel) -> Forward:
    mu_vertex = activation(params.mu_tilde, params.temp_bc)
    peak = float(np.max(np.abs(mu_vertex), initial=0.0))
    if not peak < 1.0:
        raise MuOutOfRange(f"activated Beltrami coefficient reached |mu| = {peak}", np.flatnonzero(np.abs(mu_vertex) >= 1).tolist())
    result = model.solve(vertex_to_face(model.mesh, mu_vertex))
    image = apply_similarity(result.U, params.phi, float(np.exp(params.s_tilde)), params.r)
    fine = model.r0 * model.R.apply(image)
    return Forward(result, mu_vertex, image, fine)


def backward(params: OptimParams, model: MappingModel, fwd: Forward, report: EnergyReport) -> GradBundle:
    d_image = backprop_interp(model.R, model.r0 * np.asarray(report.gradient, dtype=complex))
    d_U, (d_phi, d_s, d_r) = backprop_similarity(fwd.result.U, params.similarity, d_image)
    bundle = backprop_solve(fwd.result.system, fwd.result, d_U)

    d_mu_vertex = model.mesh.averaging_operator.T @ bundle.d_mu_faces
    if report.d_mu_vertex is not None:
        d_mu_vertex = d_mu_vertex + report.d_mu_vertex
    d_mu_tilde, d_temp = backprop_activation(params.mu_tilde, params.temp_bc, d_mu_vertex)

    bundle.d_phi = d_phi
    bundle.d_s_tilde = d_s + report.d_s_tilde
    bundle.d_r = d_r
    bundle.d_temp = d_temp
    bundle.d_mu_tilde = d_mu_tilde
    return bundle


@dataclass
class TraceRow:
    iteration: int
    total: float
    components: dict[str, float]
    grad_norm: float
    flips: int
    millis: float = 0.0
    note: str = ""


@dataclass
class OptimTrace:
    rows: list[TraceRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def record(self, row: TraceRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.rows.append(row)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.rows])

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = sorted({k for r in self.rows for k in r.components})
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "total", *names, "grad_norm", "flips", "millis"])
            for r in self.rows:
                writer.writerow([
                    r.iteration, repr(float(r.total)),
                    *(repr(float(r.components.get(k, 0.0))) for k in names),
                    repr(float(r.grad_norm)), r.flips, repr(float(r.millis)),
                ])
        return path


@dataclass(frozen=True, eq=False)
class RunResult:
    result: MapResult
    params: OptimParams
    trace: OptimTrace
    fine: np.ndarray
    report: EnergyReport
    best_iteration: int
    stop_reason: str
    model: MappingModel


Objective = Union[DensityObjective, RegistrationObjective]


def make_objective(problem: Union[DensityProblem, RegistrationProblem], solver_mesh: Optional[TriMesh] = None, weights: Optional[dict] = None, jobs: int = 1) -> Objective:
    if isinstance(problem, DensityProblem):
        return DensityObjective(problem, solver_mesh, weights)
    if isinstance(problem, RegistrationProblem):
        return RegistrationObjective(problem, solver_mesh, weights, jobs=jobs)
    raise ConfigError(f"unsupported problem type {type(problem).__name__}")


def run(
    problem: Union[DensityProblem, RegistrationProblem],
    config: OptimConfig,
    *,
    solver_mesh: Optional[TriMesh] = None,
    scale_r0: bool = False,
    jobs: int = 1,
    row_scaling: str = "sqrt_area",
    initial: Optional[OptimParams] = None,
) -> RunResult:
    """Run the optimizer to a stop condition and return the best iterate seen."""
    objective = make_objective(problem, solver_mesh, config.weights, jobs)
    model = MappingModel(
        objective.solver_mesh,
        objective.target_mesh.complex_vertices,
        scale_r0=scale_r0,
        jobs=jobs,
        row_scaling=row_scaling,
    )
    params = initial or model.initial_params(config.init_noise, np.random.default_rng(config.seed))
    state = AdamState.zeros(len(params.to_vector()))
    trace = OptimTrace()

    best = None
    since_best = 0
    g0 = None
    stop_reason = "max_iters"
    logger.info(f"[optimize] {objective.name}: {model.mesh.n_vertices} solver vertices, max_iters={config.max_iters}, step={config.step}")

    for it in range(config.max_iters + 1):
        started = time.perf_counter()
        fwd = forward(params, model)
        report = objective.evaluate(fwd.fine, params.s_tilde, fwd.mu_vertex)
        grads = backward(params, model, fwd, report)
        gnorm = float(np.linalg.norm(gradient_vector(params, grads, config.freeze)))

        note = ""
        degenerate = report.diagnostics.get("degenerate_faces", 0)
        if degenerate:
            note = f"degenerate image: {degenerate} face(s)"
            trace.warnings.append(f"iteration {it}: {note}")
        millis = (time.perf_counter() - started) * 1000.0 if config.record_timing else 0.0
        trace.record(TraceRow(it, report.total, dict(report.components), gnorm, fwd.result.flipped_count, millis, note))

        if best is None or report.total < best[2].total:
            best = (params, fwd, report, it)
            since_best = 0
        else:
            since_best += 1
        if g0 is None:
            g0 = gnorm

        if it % config.log_every == 0:
            logger.info(f"[optimize] it {it}: total={report.total:.6e} grad={gnorm:.3e} flips={fwd.result.flipped_count}")
        if gnorm <= config.tol * g0 or gnorm < config.atol:
            stop_reason = "gradient"
            break
        if since_best >= config.patience:
            stop_reason = "plateau"
            break
        if it == config.max_iters:
            break
        params, state = step(params, grads, state, config)

    best_params, best_fwd, best_report, best_it = best
    logger.info(f"[optimize] stopped ({stop_reason}) after {len(trace.rows)} evaluations; best total {best_report.total:.6e} at it {best_it}")
    return RunResult(best_fwd.result, best_params, trace, best_fwd.fine, best_report, best_it, stop_reason, model)
