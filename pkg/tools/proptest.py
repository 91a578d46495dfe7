import logging
from collections.abc import Generator
from typing import Any

from qcmap.errors import InputError, PropertyFailure
from qcmap.json_utils import dump_json
from qcmap.properties import run_suites
from tools.base import CommandTool

logger = logging.getLogger(__name__)


class ProptestTool(CommandTool):
    """Randomized property suites"""

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        try:
            seed = int(params.get("seed") or 0)
            trials = int(params.get("trials") or 100)
            if trials < 1:
                raise InputError(f"--trials must be at least 1, got {trials}")
            suite = params.get("suite") or "all"
            row_scaling = "none" if params.get("break_row_scaling") else "sqrt_area"
            if row_scaling == "none":
                logger.warning("⚠️ [proptest] row scaling disabled: running the negative control")

            verdict = run_suites(None if suite == "all" else [suite], seed=seed, trials=trials, row_scaling=row_scaling)
            verdict.update({"operation": "proptest", "seed": seed, "trials": trials, "row_scaling": row_scaling})
            if self.spec.out is not None:
                verdict["outputs"] = {"verdict": str(dump_json(self.spec.out / "verdict.json", verdict))}

            if not verdict["passed"]:
                failed = [v["suite"] for v in verdict["suites"] if not v["passed"]]
                raise PropertyFailure(f"property suite(s) failed: {failed} (seed {seed})", verdict)
            yield from self._create_success_message(verdict)
        except Exception as e:
            yield from self._handle_error(e)
