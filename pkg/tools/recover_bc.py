import csv
import logging
from collections.abc import Generator
from pathlib import Path
from typing import Any

import numpy as np

from qcmap.beltrami import bc_from_map, histogram_summary, mean_l2_norm, write_complex_csv
from qcmap.errors import ConnectivityMismatch
from qcmap.json_utils import dump_json
from qcmap.mesh_core import TriMesh, as_points, load_mesh
from qcmap.mesh_io import read_mesh_arrays
from qcmap.spectral import cotan_laplacian, smallest_eigenpairs, spectral_content, write_eigenpairs
from tools.base import CommandTool

logger = logging.getLogger(__name__)


class RecoverBcTool(CommandTool):
    """Beltrami coefficient of a mapped mesh"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            out = self._out_dir()
            mesh = load_mesh(params["mesh"])
            image = self._load_image(Path(params["mesh"]), Path(params["mapped"]), mesh)
            mu, degenerate = bc_from_map(mesh, image)

            mu_path = write_complex_csv(out / "mu.csv", mu)
            summary = {**histogram_summary(mu), "mean_l2_norm": mean_l2_norm(mu[~degenerate]), "degenerate_faces": np.flatnonzero(degenerate).tolist()}
            summary_path = dump_json(out / "histogram.json", summary)
            hist_path = self._write_histogram_csv(out / "histogram.csv", np.abs(mu), 0.05, 1.0)
            outputs = {"mu": str(mu_path), "histogram": str(hist_path), "summary": str(summary_path)}

            k = int(params.get("eigen") or 0)
            if k > 0:
                outputs.update(self._export_spectrum(out, mesh, mu, k))

            logger.info(f"📐 [recover-bc] mean |mu| {summary['mean_abs']:.4g}, max |mu| {summary['max_abs']:.4g}")
            yield from self._create_success_message({
                "operation": "recover-bc",
                "faces": mesh.n_faces,
                "mean_abs": summary["mean_abs"],
                "max_abs": summary["max_abs"],
                "counts": summary["counts"],
                "degenerate_count": int(degenerate.sum()),
                "outputs": outputs,
            })
        except Exception as e:
            yield from self._handle_error(e)

    def _load_image(self, mesh_path: Path, mapped_path: Path, mesh: TriMesh) -> np.ndarray:
        """Mapped positions, after checking they share the source file's connectivity."""
        _, source_faces = read_mesh_arrays(mesh_path)
        mapped_vertices, mapped_faces = read_mesh_arrays(mapped_path)
        if len(mapped_vertices) != mesh.n_vertices or mapped_faces.shape != source_faces.shape or np.any(mapped_faces != source_faces):
            raise ConnectivityMismatch(
                f"{mapped_path} does not share the connectivity of {mesh_path}",
                {"source": {"vertices": mesh.n_vertices, "faces": len(source_faces)},
                 "mapped": {"vertices": len(mapped_vertices), "faces": len(mapped_faces)}},
            )
        xy = as_points(mapped_vertices)
        return xy[:, 0] + 1j * xy[:, 1]

    def _export_spectrum(self, out: Path, mesh: TriMesh, mu: np.ndarray, k: int) -> dict[str, str]:
        pair = cotan_laplacian(mesh)
        values, vectors = smallest_eigenpairs(pair, min(k, mesh.n_vertices))
        # area-weighted face-to-vertex mean, degenerate faces contribute 0
        weights = 0.5 * mesh.face_areas
        spread = mesh.averaging_operator.T
        mu_vertex = (spread @ (weights * np.nan_to_num(mu))) / (spread @ weights)
        content = spectral_content(pair, vectors, mu_vertex)
        values_path, vectors_path = write_eigenpairs(out, values, vectors)
        content_path = out / "spectral_content.csv"
        with open(content_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "eigenvalue", "re", "im"])
            for i, (lam, c) in enumerate(zip(values, content)):
                writer.writerow([i, repr(float(lam)), repr(float(c.real)), repr(float(c.imag))])
        return {"eigenvalues": str(values_path), "eigenvectors": str(vectors_path), "spectral_content": str(content_path)}
