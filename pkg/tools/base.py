import csv
import json
import logging
import sys
from collections.abc import Generator
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Optional

import numpy as np

from qcmap.errors import ConfigError, InputError
from qcmap.optimize import OptimConfig

if TYPE_CHECKING:
    from provider.qcmap import JobSpec

logger = logging.getLogger(__name__)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class CommandTool:
    """Base for command tools: each `_invoke` yields JSON-able messages.

    A message with `success: false` carries the process exit code.
    """

    def __init__(self, spec: "JobSpec"):
        self.spec = spec

    def _invoke(self, params: dict[str, Any]) -> Generator[dict]:
        raise NotImplementedError

    def invoke(self) -> int:
        return self.emit(self._invoke(self.spec.params))

    def emit(self, messages) -> int:
        code = 0
        for message in messages:
            sys.stdout.write(json.dumps(message, sort_keys=True, default=_json_default) + "\n")
            if not message.get("success", True):
                code = int(message.get("exit_code", 1))
        sys.stdout.flush()
        return code

    def _handle_error(self, error: Exception) -> Generator[dict]:
        """Standardized error response"""
        details = dict(getattr(error, "details", {}) or {})
        exit_code = getattr(error, "exit_code", 1)
        logger.error(f"❌ [{self.spec.command}] {type(error).__name__}: {error}")
        yield {
            **details,
            "success": False,
            "error": str(error),
            "error_type": type(error).__name__,
            "exit_code": exit_code,
        }

    def _create_success_message(self, data: dict[str, Any]) -> Generator[dict]:
        """Standardized success response"""
        yield {"success": True, **data}

    def _out_dir(self) -> Path:
        if self.spec.out is None:
            raise InputError(f"{self.spec.command} needs --out")
        return self.spec.out

    def _parse_weights(self, entries: Optional[list[str]]) -> dict[str, float]:
        weights = {}
        for entry in entries or []:
            name, sep, value = entry.partition("=")
            if not sep or not name.strip():
                raise ConfigError(f"--weight expects name=value, got {entry!r}")
            try:
                weights[name.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"--weight {name.strip()}: {value!r} is not a number")
        return weights

    def _apply_overrides(self, config: OptimConfig) -> OptimConfig:
        """--config replaces the job's config; flag overrides apply on top."""
        if self.spec.config is not None:
            config = OptimConfig.from_file(self.spec.config)
        params = self.spec.params
        config = config.with_overrides(
            max_iters=params.get("max_iters"),
            step=params.get("step"),
            weights=self._parse_weights(params.get("weight")),
        )
        if params.get("record_timing"):
            config = replace(config, record_timing=True)
        if params.get("seed") is not None:
            config = replace(config, seed=int(params["seed"]))
        return config

    def _write_histogram_csv(self, path: Path, values, bin_width: float, upper: float) -> Path:
        """Fixed-width bins over [0, upper) plus one overflow bin."""
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        edges = np.round(np.arange(0.0, upper + bin_width / 2, bin_width), 10)
        counts, _ = np.histogram(values[values < upper], bins=edges)
        overflow = int(np.sum(values >= upper))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_start", "bin_end", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])
            writer.writerow([repr(float(upper)), "inf", overflow])
        return path
