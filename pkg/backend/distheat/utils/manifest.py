"""JSON manifests written next to every output directory"""

import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from distheat import __version__
from distheat.core.errors import DataFormatError

MANIFEST_NAME = "manifest.json"


def _default(value: Any):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_manifest(directory: Union[str, Path], command: str, payload: Dict[str, Any], name: str = MANIFEST_NAME) -> Path:
    """Sorted keys and no timestamps, so reruns produce identical files"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    document = {"tool": "distheat", "version": __version__, "command": command, **payload}
    path = directory / name
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: Union[str, Path], name: str = MANIFEST_NAME) -> Dict[str, Any]:
    path = Path(directory) / name
    if not path.is_file():
        raise DataFormatError(str(path), None, "manifest not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(str(path), exc.lineno, exc.msg) from exc
