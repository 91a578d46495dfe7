"""Gradients through the pinned LSQC solve, the similarity and the activation.

Complex gradients use the convention G = dL/dRe + i dL/dIm, so a first-order
change of L is Re(conj(G) * dz) summed over entries.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MismatchedSystem, ShapeMismatch
from .json_utils import complex_pairs, dump_json
from .lsqc import LsqcSystem, MapResult, _stack, _unstack
from .mesh_core import InterpMatrix

logger = logging.getLogger(__name__)


@dataclass
class GradBundle:
    d_mu_faces: np.ndarray
    d_pin_targets: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=complex))
    d_phi: float = 0.0
    d_s_tilde: float = 0.0
    d_r: complex = 0j
    d_temp: float = 0.0
    d_mu_tilde: Optional[np.ndarray] = None

    @property
    def d_similarity(self) -> tuple[float, float, complex]:
        return self.d_phi, self.d_s_tilde, self.d_r

    def is_finite(self) -> bool:
        parts = [self.d_mu_faces, self.d_pin_targets, np.array([self.d_phi, self.d_s_tilde, self.d_r, self.d_temp])]
        if self.d_mu_tilde is not None:
            parts.append(self.d_mu_tilde)
        return all(np.all(np.isfinite(p)) for p in parts)

    def to_json(self) -> dict:
        return {
            "d_mu_faces": complex_pairs(self.d_mu_faces),
            "d_pin_targets": complex_pairs(self.d_pin_targets),
            "d_phi": float(self.d_phi),
            "d_s_tilde": float(self.d_s_tilde),
            "d_r": [float(np.real(self.d_r)), float(np.imag(self.d_r))],
            "d_temp": float(self.d_temp),
            **({"d_mu_tilde": complex_pairs(self.d_mu_tilde)} if self.d_mu_tilde is not None else {}),
        }


def backprop_solve(system: LsqcSystem, result: MapResult, dL_dU) -> GradBundle:
    """Adjoint of U = solve(system): one extra solve with the forward factorization.

    With lambda = (A^T A)^{-1} g and Lambda its complex free-vertex embedding
    (zero on pins), and C = dM/dmu row-wise:

        dL/dmu_T   = -[(M U)_T conj(C Lambda)_T + (M Lambda)_T conj(C U)_T]
        dL/dpin_k  = dL/dU_{pin_k} - (M^H M Lambda)_{pin_k}
    """
    if result.system is not system:
        raise MismatchedSystem("result was not produced by solving this system")
    G = np.asarray(dL_dU, dtype=complex).reshape(-1)
    if len(G) != system.mesh.n_vertices:
        raise ShapeMismatch(f"expected {system.mesh.n_vertices} vertex gradients, got {len(G)}")

    g = _stack(G[system.free])
    lam = result.factorization.solve_for(system, g)
    Lam = np.zeros(system.mesh.n_vertices, dtype=complex)
    Lam[system.free] = _unstack(lam)

    U = result.U
    MU = system.M @ U
    MLam = system.M @ Lam
    d_mu = -(MU * np.conj(system.dM_dmu @ Lam) + MLam * np.conj(system.dM_dmu @ U))
    back = system.M.conj().T @ MLam
    d_pins = G[system.pin_vertices] - back[system.pin_vertices]
    return GradBundle(d_mu_faces=np.asarray(d_mu), d_pin_targets=np.asarray(d_pins))


def backprop_similarity(U, params, dL_dgU) -> tuple[np.ndarray, tuple[float, float, complex]]:
    """Chain rule through g(x) = e^{s_tilde} e^{i phi} x + r.

    Returns dL/dU and (dL/dphi, dL/ds_tilde, dL/dr).
    """
    phi, s_tilde, _ = params
    U = np.asarray(U, dtype=complex)
    G = np.asarray(dL_dgU, dtype=complex)
    a = np.exp(s_tilde + 1j * phi)
    aU = a * U
    d_phi = float(np.sum(np.real(np.conj(G) * 1j * aU)))
    d_s = float(np.sum(np.real(np.conj(G) * aU)))
    d_r = complex(np.sum(G))
    return np.conj(a) * G, (d_phi, d_s, d_r)


def backprop_activation(x_tilde, temp: float, dL_dmu) -> tuple[np.ndarray, float]:
    """Chain rule through mu = tanh(|x|/T) x/|x|.

    At x = 0 the subgradient is dL/dx = dL/dmu / T (the radial slope at the
    origin) and the point contributes nothing to dL/dT.
    """
    x = np.asarray(x_tilde, dtype=complex)
    G = np.asarray(dL_dmu, dtype=complex)
    rho = np.abs(x)
    at_zero = rho == 0
    safe = np.where(at_zero, 1.0, rho)
    e = np.where(at_zero, 1.0, x / safe)
    t = np.tanh(rho / temp)
    sech2 = 1.0 - t * t
    h = np.real(np.conj(G) * e)
    k = np.real(np.conj(G) * 1j * e)

    dx = (h * sech2 / temp) * e + (k * t / safe) * 1j * e
    dx = np.where(at_zero, G / temp, dx)
    d_temp = float(-np.sum(np.where(at_zero, 0.0, h * sech2 * rho / temp**2)))
    return dx, d_temp


def backprop_interp(R: InterpMatrix, dL_dfine) -> np.ndarray:
    grad = np.asarray(dL_dfine, dtype=complex).reshape(-1)
    if len(grad) != R.shape[0]:
        raise ShapeMismatch(f"interpolation has {R.shape[0]} rows, gradient has {len(grad)} entries")
    return R.apply_transpose(grad)


def dump_gradients(path, bundle: GradBundle, **extra) -> Path:
    """Debug dump consumed by finite-difference harnesses."""
    payload = bundle.to_json()
    payload.update({k: complex_pairs(np.atleast_1d(v)) if np.iscomplexobj(v) else v for k, v in extra.items()})
    logger.debug(f"dumping gradients to {path}")
    return dump_json(path, payload)
