import argparse
import importlib
import inspect
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from qcmap.errors import InputError, QcmapError
from tools.base import CommandTool

logger = logging.getLogger(__name__)

ARG_TYPES = {"string": str, "integer": int, "number": float}


@dataclass
class JobSpec:
    """One parsed command line: the command, its parameters and the shared options."""

    command: str
    params: dict[str, Any]
    inputs: dict[str, Path] = field(default_factory=dict)
    out: Optional[Path] = None
    config: Optional[Path] = None
    overrides: dict[str, Any] = field(default_factory=dict)


def _read_yaml(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise InputError(f"Cannot read descriptor {path}: {e}")
    if not isinstance(data, dict):
        raise InputError(f"Descriptor {path} must be a mapping")
    return data


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


class QcmapProvider:
    """Builds the command line from YAML descriptors and dispatches to command tools."""

    def __init__(self, descriptor: dict, root: Path):
        self.root = root
        self.identity = descriptor.get("identity", {})
        self.shared_options: dict[str, dict] = descriptor.get("options_for_provider", {}) or {}
        self.tools: dict[str, dict] = {}
        for rel in descriptor.get("tools", []):
            tool = _read_yaml(root / rel)
            self.tools[tool["identity"]["name"]] = tool

    @classmethod
    def from_manifest(cls, manifest_path: Path) -> "QcmapProvider":
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        manifest = _read_yaml(manifest_path)
        providers = manifest.get("plugins", {}).get("tools", [])
        if len(providers) != 1:
            raise InputError(f"{manifest_path}: expected exactly one provider, got {len(providers)}")
        return cls(_read_yaml(root / providers[0]), root)

    def _add_argument(self, parser: argparse.ArgumentParser, name: str, spec: dict, required: Optional[bool] = None) -> None:
        kwargs: dict[str, Any] = {"dest": name, "help": spec.get("help", {}).get("en_US")}
        kind = spec.get("type", "string")
        if kind == "boolean":
            kwargs["action"] = "store_true"
        else:
            if kind == "select":
                kwargs["choices"] = [str(o["value"]) for o in spec.get("options", [])]
            else:
                kwargs["type"] = ARG_TYPES[kind]
            if spec.get("multiple"):
                kwargs["action"] = "append"
            kwargs["required"] = bool(spec.get("required", False) if required is None else required)
            if "default" in spec:
                kwargs["default"] = spec["default"]
        parser.add_argument(_flag(name), **kwargs)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="qcmap", description=self.identity.get("description", {}).get("en_US"))
        commands = parser.add_subparsers(dest="command", required=True)
        for name, tool in self.tools.items():
            sub = commands.add_parser(name, help=tool.get("description", {}).get("human", {}).get("en_US"))
            for param in tool.get("parameters", []):
                self._add_argument(sub, param["name"], param)
            for option in tool.get("provider_options", []):
                self._add_argument(sub, option["name"], self.shared_options[option["name"]], option.get("required"))
        return parser

    def _job_spec(self, args: argparse.Namespace) -> JobSpec:
        tool = self.tools[args.command]
        params = {k: v for k, v in vars(args).items() if k != "command"}
        declared = list(tool.get("parameters", [])) + [
            {"name": o["name"], **self.shared_options[o["name"]]} for o in tool.get("provider_options", [])
        ]
        inputs = {p["name"]: Path(params[p["name"]]) for p in declared if p.get("file") and params.get(p["name"])}
        overrides = {k: params[k] for k in ("max_iters", "step", "weight") if params.get(k) is not None}
        return JobSpec(
            command=args.command,
            params=params,
            inputs=inputs,
            out=Path(params["out"]) if params.get("out") else None,
            config=Path(params["config"]) if params.get("config") else None,
            overrides=overrides,
        )

    def _validate_job_spec(self, spec: JobSpec) -> None:
        """Referenced files exist and the output directory is writable."""
        for name, path in spec.inputs.items():
            if not path.is_file():
                raise InputError(f"File not found for {_flag(name)}: {path}", {"path": str(path)})
        if spec.out is not None:
            try:
                spec.out.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise InputError(f"Cannot create output directory {spec.out}: {e}", {"path": str(spec.out)})
            if not os.access(spec.out, os.W_OK):
                raise InputError(f"Output directory is not writable: {spec.out}", {"path": str(spec.out)})

    def _tool_class(self, command: str) -> type[CommandTool]:
        source = Path(self.tools[command]["extra"]["python"]["source"])
        module = importlib.import_module(".".join(source.with_suffix("").parts))
        for _, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, CommandTool) and obj is not CommandTool and obj.__module__ == module.__name__:
                return obj
        raise InputError(f"{source} defines no command tool")

    def run(self, argv: Optional[list[str]] = None) -> int:
        args = self.build_parser().parse_args(argv)
        spec = self._job_spec(args)
        tool = self._tool_class(spec.command)(spec)
        logger.info(f"[{spec.command}] dispatching with {sorted(k for k, v in spec.params.items() if v is not None)}")
        try:
            self._validate_job_spec(spec)
        except QcmapError as e:
            return tool.emit(tool._handle_error(e))
        return tool.invoke()
