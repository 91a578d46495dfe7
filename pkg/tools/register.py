import csv
import logging
from collections.abc import Generator
from typing import Any

import numpy as np

from qcmap.energies import RegistrationObjective
from qcmap.jobs import load_registration_job
from qcmap.json_utils import dump_json
from qcmap.mesh_io import write_mesh
from qcmap.optimize import run
from tools.base import CommandTool

logger = logging.getLogger(__name__)


class RegisterTool(CommandTool):
    """Partial-overlap registration job"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            out = self._out_dir()
            job = load_registration_job(params["job"])
            config = self._apply_overrides(job.config)
            problem = job.problem
            jobs = int(params.get("jobs") or 1)
            objective = RegistrationObjective(problem, job.solver_mesh, config.weights, jobs=jobs)
            initial = objective.summary(problem.moving.complex_vertices)
            logger.info(f"🚀 [register] initial mismatch {initial['mismatch']:.6g} over {initial['overlap_faces']} faces")

            result = run(problem, config, solver_mesh=job.solver_mesh, scale_r0=bool(params.get("scale_r0") or job.scale_r0), jobs=jobs)
            final = objective.summary(result.fine)
            overlap = objective.overlap(result.fine)
            mismatch = objective.per_face(result.fine)["mismatch"]

            deformed_path = write_mesh(out / "deformed.off", result.fine, problem.moving.faces)
            trace_path = result.trace.to_csv(out / "trace.csv")
            overlap_path = out / "overlap.csv"
            with open(overlap_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["face"])
                writer.writerows([int(f)] for f in overlap)
            mismatch_path = out / "mismatch.csv"
            with open(mismatch_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["face", "mismatch"])
                for i, m in enumerate(mismatch):
                    writer.writerow([i, repr(float(m)) if np.isfinite(m) else ""])
            hist_path = self._write_histogram_csv(out / "mismatch_histogram.csv", mismatch, 0.05, 1.0)
            params_path = dump_json(out / "params.json", result.params.to_json())

            p = result.params
            summary = {
                "initial_mismatch": initial["mismatch"],
                "final_mismatch": final["mismatch"],
                "reduction": 1.0 - final["mismatch"] / initial["mismatch"] if initial["mismatch"] > 0 else 0.0,
                "overlap_faces": final["overlap_faces"],
                "overlap_components": final["overlap_components"],
                "similarity": {"phi": p.phi, "scale": float(np.exp(p.s_tilde)), "r": [float(np.real(p.r)), float(np.imag(p.r))]},
                "iterations": len(result.trace.rows),
                "best_iteration": result.best_iteration,
                "stop_reason": result.stop_reason,
                "flipped_count": final["flipped_faces"],
                "total": result.report.total,
                "components": result.report.components,
                "seed": config.seed,
                "warnings": result.trace.warnings,
            }
            summary_path = dump_json(out / "summary.json", summary)
            logger.info(f"✅ [register] mismatch {initial['mismatch']:.6g} -> {final['mismatch']:.6g} ({result.stop_reason})")

            yield from self._create_success_message({
                "operation": "register",
                **summary,
                "outputs": {
                    "deformed": str(deformed_path),
                    "trace": str(trace_path),
                    "overlap": str(overlap_path),
                    "mismatch": str(mismatch_path),
                    "histogram": str(hist_path),
                    "params": str(params_path),
                    "summary": str(summary_path),
                },
            })
        except Exception as e:
            yield from self._handle_error(e)
