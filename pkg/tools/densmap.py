import csv
import logging
from collections.abc import Generator
from typing import Any

import numpy as np

from qcmap.beltrami import activation
from qcmap.energies import density_variance, face_density
from qcmap.jobs import load_density_job
from qcmap.json_utils import dump_json
from qcmap.mesh_io import write_mesh
from qcmap.optimize import run
from tools.base import CommandTool

logger = logging.getLogger(__name__)


class DensmapTool(CommandTool):
    """Density-equalizing map job"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            out = self._out_dir()
            job = load_density_job(params["job"])
            config = self._apply_overrides(job.config)
            problem = job.problem
            initial_variance = density_variance(problem, problem.mesh.complex_vertices)
            logger.info(f"🚀 [densmap] {problem.mesh.n_faces} faces, initial variance {initial_variance:.6g}")

            result = run(
                problem,
                config,
                solver_mesh=job.solver_mesh,
                scale_r0=bool(params.get("scale_r0") or job.scale_r0),
                jobs=int(params.get("jobs") or 1),
            )
            final_variance = density_variance(problem, result.fine)
            density = face_density(problem, result.fine)
            image_area = np.sum(problem.population / density)
            normalized = density / (problem.population.sum() / image_area)

            image_path = write_mesh(out / "image.off", result.fine, problem.mesh.faces)
            trace_path = result.trace.to_csv(out / "trace.csv")
            density_path = out / "density.csv"
            with open(density_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["face", "density", "normalized"])
                for i, (d, n) in enumerate(zip(density, normalized)):
                    writer.writerow([i, repr(float(d)), repr(float(n))])
            hist_path = self._write_histogram_csv(out / "density_histogram.csv", normalized, 0.05, 3.0)
            params_path = dump_json(out / "params.json", result.params.to_json())

            summary = {
                "initial_variance": initial_variance,
                "final_variance": final_variance,
                "reduction": 1.0 - final_variance / initial_variance if initial_variance > 0 else 0.0,
                "iterations": len(result.trace.rows),
                "best_iteration": result.best_iteration,
                "stop_reason": result.stop_reason,
                "flipped_count": result.result.flipped_count,
                "max_mu": float(np.max(np.abs(activation(result.params.mu_tilde, result.params.temp_bc)), initial=0.0)),
                "total": result.report.total,
                "components": result.report.components,
                "seed": config.seed,
                "warnings": result.trace.warnings,
            }
            summary_path = dump_json(out / "summary.json", summary)
            logger.info(f"✅ [densmap] variance {initial_variance:.6g} -> {final_variance:.6g} ({result.stop_reason})")

            yield from self._create_success_message({
                "operation": "densmap",
                **{k: v for k, v in summary.items() if k != "warnings"},
                "warning_count": len(result.trace.warnings),
                "outputs": {
                    "image": str(image_path),
                    "trace": str(trace_path),
                    "density": str(density_path),
                    "histogram": str(hist_path),
                    "params": str(params_path),
                    "summary": str(summary_path),
                },
            })
        except Exception as e:
            yield from self._handle_error(e)
