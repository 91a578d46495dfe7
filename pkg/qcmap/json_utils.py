import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Tuple

import json5  # type: ignore

from .errors import InputError, ParseError

logger = logging.getLogger(__name__)


def parse_json_relaxed(
    data: Any,
    expect_types: Optional[Iterable[type]] = None,
    source: str = "<input>",
) -> Any:
    """Lenient JSON parsing for hand-edited job and config files.

    - Already-parsed objects are returned as-is when their type matches.
    - Strict `json.loads` is tried first (fast path, exact error positions).
    - `json5.loads` then accepts comments, trailing commas, single quotes and
      unquoted keys, which is what people actually type into job files.

    Raises:
        ParseError: if neither parser accepts the text or the top-level type
                    is not one of `expect_types`.
    """
    expect_tuple: Optional[Tuple[type, ...]] = tuple(expect_types) if expect_types else None

    def _ok_type(x: Any) -> bool:
        return expect_tuple is None or isinstance(x, expect_tuple)

    if not isinstance(data, (str, bytes)):
        if _ok_type(data):
            return data
        raise ParseError(f"{source}: expected {_names(expect_tuple)}, got {type(data).__name__}")

    text = data.decode("utf-8") if isinstance(data, bytes) else data
    text = text.strip()

    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as e:
        logger.debug(f"parse_json_relaxed: strict JSON failed for {source}: {e}")
        try:
            parsed = json5.loads(text)
        except Exception as e5:
            raise ParseError(f"{source}: not valid JSON/JSON5 ({e5})")

    if not _ok_type(parsed):
        raise ParseError(f"{source}: expected {_names(expect_tuple)}, got {type(parsed).__name__}")
    return parsed


def _names(types: Optional[Tuple[type, ...]]) -> str:
    return " or ".join(t.__name__ for t in types) if types else "JSON"


def load_json_file(path, expect_types: Optional[Iterable[type]] = None) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"File not found: {path}", {"path": str(path)})
    return parse_json_relaxed(path.read_text(encoding="utf-8"), expect_types, source=str(path))


def dump_json(path, payload: Any) -> Path:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path


def complex_pairs(values) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in values]
