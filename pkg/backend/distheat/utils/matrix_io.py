"""
Matrix CSV reading and writing.

One matrix row per line, comma-separated decimals, optional header row.
Values are written with 17 significant digits so they read back bit-exactly.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from distheat.core.config import settings
from distheat.core.errors import DataFormatError

PathLike = Union[str, Path]


def _parse_row(text: str) -> List[float]:
    return [float(cell) for cell in text.split(",")]


def read_matrix(path: PathLike, with_header: bool = False) -> Tuple[np.ndarray, Optional[List[str]]]:
    """
    Read a matrix CSV.

    A non-numeric first line is treated as a header; ``with_header`` makes it
    mandatory. Errors name the file and 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(str(path), None, "file not found")

    header: Optional[List[str]] = None
    rows: List[List[float]] = []
    width: Optional[int] = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values = _parse_row(text)
            except ValueError:
                if header is None and not rows:
                    header = [cell.strip() for cell in text.split(",")]
                    width = len(header)
                    continue
                raise DataFormatError(str(path), lineno, f"non-numeric value in '{text[:60]}'")
            if with_header and header is None:
                raise DataFormatError(str(path), lineno, "missing header row")
            if width is not None and len(values) != width:
                raise DataFormatError(
                    str(path), lineno, f"expected {width} columns, found {len(values)}"
                )
            if not all(np.isfinite(values)):
                raise DataFormatError(str(path), lineno, "non-finite value")
            width = len(values)
            rows.append(values)

    if not rows:
        raise DataFormatError(str(path), None, "no data rows")
    return np.array(rows, dtype=np.float64), header


def write_matrix(path: PathLike, matrix: np.ndarray, header: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    fmt = settings.MATRIX_FLOAT_FORMAT
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        if header is not None:
            handle.write(",".join(header) + "\n")
        for row in matrix:
            handle.write(",".join(fmt % value for value in row) + "\n")
    return path


def data_header(p: int) -> List[str]:
    return [f"x{j}" for j in range(p)]
