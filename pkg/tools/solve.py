import logging
from collections.abc import Generator
from pathlib import Path
from typing import Any

import numpy as np

from qcmap.beltrami import load_mu
from qcmap.errors import InputError
from qcmap.json_utils import dump_json
from qcmap.lsqc import assemble, pick_pins, solve
from qcmap.mesh_core import TriMesh, load_mesh
from qcmap.mesh_io import write_mesh
from tools.base import CommandTool

logger = logging.getLogger(__name__)


def parse_pins(value: str, mesh: TriMesh) -> tuple[int, int]:
    """'auto' or 'i,j'."""
    if value is None or value.strip().lower() == "auto":
        return pick_pins(mesh)
    parts = [p.strip() for p in value.split(",") if p.strip()]
    if len(parts) != 2:
        raise InputError(f"--pins expects 'i,j' or 'auto', got {value!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise InputError(f"--pins indices must be integers, got {value!r}")


class SolveTool(CommandTool):
    """One-shot LSQC solve"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            out = self._out_dir()
            mesh_path = Path(params["mesh"])
            mesh = load_mesh(mesh_path)
            field = load_mu(params["mu"], mesh)
            field.check()
            pins = parse_pins(params.get("pins"), mesh)
            z = mesh.complex_vertices
            logger.info(f"🔧 [solve] {mesh.n_vertices} vertices, pins {pins}")

            result = solve(assemble(mesh, field.per_face, [(p, z[p]) for p in pins]))
            suffix = ".obj" if mesh_path.suffix.lower() == ".obj" else ".off"
            image_path = write_mesh(out / f"image{suffix}", result.U, mesh.faces)
            report = {**result.report(), "mu_max": float(np.max(np.abs(field.per_face)))}
            report_path = dump_json(out / "report.json", report)

            yield from self._create_success_message({
                "operation": "solve",
                **report,
                "flipped_faces": report["flipped_faces"][:50],
                "outputs": {"image": str(image_path), "report": str(report_path)},
            })
        except Exception as e:
            yield from self._handle_error(e)
