import logging
from collections.abc import Generator
from typing import Any

from qcmap.mesh_core import load_mesh
from tools.base import CommandTool

logger = logging.getLogger(__name__)


class ValidateTool(CommandTool):
    """Mesh validation report"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            mesh = load_mesh(params["mesh"])
            warnings = []
            if mesh.repaired_orientation:
                warnings.append("all faces were clockwise; orientation repaired")
                logger.warning(f"⚠️ [validate] {params['mesh']}: orientation repaired")
            yield from self._create_success_message({
                "operation": "validate",
                "mesh": str(params["mesh"]),
                "summary": mesh.summary(),
                "repaired_orientation": mesh.repaired_orientation,
                "warnings": warnings,
            })
        except Exception as e:
            yield from self._handle_error(e)
