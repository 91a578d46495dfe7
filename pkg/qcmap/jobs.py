"""Density and registration job files.

Paths inside a job resolve against the job file's directory. Example density job::

    {
      "mesh": "disk.off",
      "population": "population.csv",   // one value per face
      "barrier_omega": 1.5,
      "config": {"max_iters": 800},
    }
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .energies import DensityProblem, RegionPair, RegistrationProblem
from .errors import InputError, ParseError
from .json_utils import load_json_file
from .mesh_core import TriMesh, load_mesh
from .optimize import OptimConfig

logger = logging.getLogger(__name__)

DENSITY_KEYS = {"mesh", "solver_mesh", "population", "barrier_omega", "barrier_weight", "config", "scale_r0"}
REGISTRATION_KEYS = {
    "moving", "moving_intensity", "static", "static_intensity", "solver_mesh", "regions", "weights", "config", "scale_r0",
}


@dataclass(frozen=True, eq=False)
class LoadedJob:
    problem: Union[DensityProblem, RegistrationProblem]
    config: OptimConfig
    solver_mesh: Optional[TriMesh] = None
    scale_r0: bool = False
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict)


def read_real_csv(path: Path) -> np.ndarray:
    """First column of a CSV as floats; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"File not found: {path}", {"path": str(path)})
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"{path}:{lineno}: expected a number, got {row[0]!r}")
    return np.asarray(values, dtype=float)


class _Resolver:
    def __init__(self, job_path: Path, raw: dict, allowed: set[str]):
        self.base = job_path.parent
        self.raw = raw
        unknown = set(raw) - allowed
        if unknown:
            raise InputError(f"{job_path}: unknown job key(s) {sorted(unknown)}", {"allowed": sorted(allowed)})
        self.job_path = job_path

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def require(self, key: str) -> Any:
        if key not in self.raw:
            raise InputError(f"{self.job_path}: missing required key '{key}'")
        return self.raw[key]

    def mesh(self, key: str, required: bool = True) -> Optional[TriMesh]:
        if not required and self.raw.get(key) is None:
            return None
        return load_mesh(self.path(self.require(key)))

    def values(self, key: str) -> np.ndarray:
        value = self.require(key)
        if isinstance(value, str):
            return read_real_csv(self.path(value))
        try:
            return np.asarray(value, dtype=float).reshape(-1)
        except (TypeError, ValueError) as e:
            raise ParseError(f"{self.job_path}: '{key}' must be a path or a list of numbers ({e})")

    def config(self) -> OptimConfig:
        value = self.raw.get("config")
        if value is None:
            return OptimConfig()
        if isinstance(value, str):
            return OptimConfig.from_file(self.path(value))
        if isinstance(value, dict):
            return OptimConfig.from_dict(value)
        raise ParseError(f"{self.job_path}: 'config' must be a path or an object")


def load_density_job(path: Union[str, Path]) -> LoadedJob:
    path = Path(path)
    raw = load_json_file(path, expect_types=(dict,))
    r = _Resolver(path, raw, DENSITY_KEYS)
    mesh = r.mesh("mesh")
    problem = DensityProblem(
        mesh,
        r.values("population"),
        barrier_omega=float(raw.get("barrier_omega", 1.5)),
        barrier_weight=float(raw.get("barrier_weight", 1.0)),
    )
    logger.info(f"[jobs] density job {path}: {mesh.n_faces} faces")
    return LoadedJob(problem, r.config(), r.mesh("solver_mesh", required=False), bool(raw.get("scale_r0", False)), path, raw)


def _region_indices(r: _Resolver, value, what: str) -> np.ndarray:
    if isinstance(value, str):
        return read_real_csv(r.path(value)).astype(np.int64)
    try:
        return np.asarray(value, dtype=np.int64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{r.job_path}: {what} must be an index list or a CSV path ({e})")


def _regions(r: _Resolver, static: TriMesh) -> tuple[RegionPair, ...]:
    pairs = []
    for k, entry in enumerate(r.raw.get("regions", [])):
        if not isinstance(entry, dict) or "moving" not in entry:
            raise ParseError(f"{r.job_path}: region {k} must be an object with 'moving' and 'static' or 'static_points'")
        moving = _region_indices(r, entry["moving"], f"region {k} 'moving'")
        if "static_points" in entry:
            pts = np.asarray(entry["static_points"], dtype=float).reshape(-1, 2)
            static_points = pts[:, 0] + 1j * pts[:, 1]
        else:
            idx = _region_indices(r, entry.get("static", []), f"region {k} 'static'")
            if len(idx) and (idx.min() < 0 or idx.max() >= static.n_vertices):
                raise InputError(f"{r.job_path}: region {k} indexes outside the static mesh")
            static_points = static.complex_vertices[idx]
        pairs.append(RegionPair(moving, static_points))
    return tuple(pairs)


def load_registration_job(path: Union[str, Path]) -> LoadedJob:
    path = Path(path)
    raw = load_json_file(path, expect_types=(dict,))
    r = _Resolver(path, raw, REGISTRATION_KEYS)
    moving = r.mesh("moving")
    static = r.mesh("static")
    weights = raw.get("weights") or {}
    if not isinstance(weights, dict):
        raise ParseError(f"{path}: 'weights' must be an object")
    problem = RegistrationProblem(
        moving,
        r.values("moving_intensity"),
        static,
        r.values("static_intensity"),
        _regions(r, static),
        weights,
    )
    logger.info(f"[jobs] registration job {path}: moving {moving.n_vertices} / static {static.n_vertices} vertices, {len(problem.region_pairs)} region pair(s)")
    return LoadedJob(problem, r.config(), r.mesh("solver_mesh", required=False), bool(raw.get("scale_r0", False)), path, raw)
