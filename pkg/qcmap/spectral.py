"""Cotangent Laplacian, lumped mass and the low end of the spectrum.

The stiffness matrix is stored positive semi-definite: off-diagonal entries
are -1/2 (cot a + cot b) and rows sum to zero.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ConvergenceFailure, InputError
from .mesh_core import TriMesh

logger = logging.getLogger(__name__)

COT_CLAMP = 1e8
DENSE_LIMIT = 400
SHIFT = -0.01


@dataclass(frozen=True, eq=False)
class LaplacePair:
    L: sparse.csr_matrix
    M: sparse.dia_matrix

    @property
    def mass(self) -> np.ndarray:
        return self.M.diagonal()

    @property
    def size(self) -> int:
        return self.L.shape[0]


def cotan_laplacian(mesh: TriMesh) -> LaplacePair:
    pts = mesh.vertices
    f = mesh.faces
    d = mesh.face_areas
    cots = np.empty((mesh.n_faces, 3))
    for j in range(3):
        e1 = pts[f[:, (j + 1) % 3]] - pts[f[:, j]]
        e2 = pts[f[:, (j + 2) % 3]] - pts[f[:, j]]
        cots[:, j] = np.einsum("ij,ij->i", e1, e2) / d

    clamped = np.abs(cots) > COT_CLAMP
    if np.any(clamped):
        logger.warning(f"clamping {int(clamped.sum())} cotangent(s) to +/-{COT_CLAMP:g}")
        cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)

    # corner j weighs the opposite edge (j+1, j+2)
    i_idx = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j_idx = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
    n = mesh.n_vertices
    rows = np.concatenate([i_idx, j_idx, i_idx, j_idx])
    cols = np.concatenate([j_idx, i_idx, i_idx, j_idx])
    data = np.concatenate([-w, -w, w, w])
    L = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    L.sum_duplicates()

    mass = np.zeros(n)
    np.add.at(mass, f.reshape(-1), np.repeat(0.5 * d / 3.0, 3))
    return LaplacePair(L, sparse.diags(mass))


def _normalize(pair: LaplacePair, values: np.ndarray, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    norms = np.sqrt(np.einsum("ij,i,ij->j", vectors, pair.mass, vectors))
    vectors = vectors / norms
    # deterministic sign: largest-magnitude entry positive
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return values, vectors * signs


def smallest_eigenpairs(pair: LaplacePair, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k smallest solutions of L v = lambda M v, M-orthonormal, ascending."""
    n = pair.size
    if not 1 <= k <= n:
        raise InputError(f"k must lie in [1, {n}], got {k}")

    if n < DENSE_LIMIT or k >= n - 1:
        values, vectors = linalg.eigh(pair.L.toarray(), pair.M.toarray(), subset_by_index=[0, k - 1])
        return _normalize(pair, values, vectors)

    lu = splu((pair.L - SHIFT * pair.M).tocsc())
    op_inv = LinearOperator(matvec=lu.solve, shape=pair.L.shape, dtype=float)
    try:
        values, vectors = eigsh(pair.L, k, pair.M, sigma=SHIFT, OPinv=op_inv, maxiter=max(1000, 20 * n))
    except ArpackNoConvergence as e:
        raise ConvergenceFailure(f"shift-invert eigensolver did not converge ({len(e.eigenvalues)} of {k} pairs)")
    logger.debug(f"eigsh: {k} pairs on {n} vertices, lambda range [{values.min():.3e}, {values.max():.3e}]")
    return _normalize(pair, values, vectors)


def spectral_content(pair: LaplacePair, eigvecs: np.ndarray, field) -> np.ndarray:
    """M-inner-product coefficients of a vertex field in the eigenbasis."""
    values = np.asarray(field)
    if len(values) != pair.size:
        raise InputError(f"field has {len(values)} entries, mesh has {pair.size} vertices")
    return eigvecs.T @ (pair.mass * values)


def write_eigenpairs(out_dir, values: np.ndarray, vectors: np.ndarray) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values_path = out_dir / "eigenvalues.csv"
    vectors_path = out_dir / "eigenvectors.csv"
    with open(values_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "eigenvalue"])
        for i, v in enumerate(values):
            writer.writerow([i, repr(float(v))])
    with open(vectors_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"v{i}" for i in range(vectors.shape[1])])
        for row in vectors:
            writer.writerow([repr(float(x)) for x in row])
    return values_path, vectors_path
