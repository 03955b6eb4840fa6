"""Custom exceptions and the shared error handler"""

from typing import Optional

import structlog
from pydantic import ValidationError as PydanticValidationError

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class DistHeatError(Exception):
    """Base toolkit exception"""

    def __init__(self, message: str, exit_code: int = EXIT_RUNTIME):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ValidationError(DistHeatError):
    """Invalid input or configuration"""

    def __init__(self, message: str):
        super().__init__(message, exit_code=EXIT_VALIDATION)


class DimensionError(ValidationError):
    """Shapes or lengths do not line up"""

    def __init__(self, message: str):
        super().__init__(message)


class DataFormatError(ValidationError):
    """Malformed input file"""

    def __init__(self, path: str, line: Optional[int], reason: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class NonContractiveError(ValidationError):
    """Iteration contraction factor is not below one"""

    def __init__(self, factor: float):
        self.factor = factor
        super().__init__(
            f"non-contractive regime: s0*sqrt(log(p)/n) = {factor:.4g} >= 1; "
            "increase n or lower s0"
        )


class FactorizationError(DistHeatError):
    """Cholesky factorization failed at a pivot"""

    def __init__(self, pivot: int, message: Optional[str] = None):
        self.pivot = pivot
        super().__init__(
            message
            or f"matrix is not positive definite: Cholesky failed at pivot {pivot}"
        )


class SiteFailure(DistHeatError):
    """A site's local computation failed; the run is aborted"""

    def __init__(self, site_id: str, cause: Exception):
        self.site_id = site_id
        self.cause = cause
        detail = cause.message if isinstance(cause, DistHeatError) else str(cause)
        exit_code = (
            cause.exit_code if isinstance(cause, DistHeatError) else EXIT_RUNTIME
        )
        super().__init__(f"site '{site_id}' failed: {detail}", exit_code=exit_code)


def handle_exception(exc: BaseException) -> int:
    """Log an exception and map it to a process exit code"""
    if isinstance(exc, DistHeatError):
        log = logger.warning if exc.exit_code == EXIT_VALIDATION else logger.error
        log(
            "Run error",
            error=exc.message,
            error_type=exc.__class__.__name__,
            exit_code=exc.exit_code,
        )
        return exc.exit_code

    if isinstance(exc, PydanticValidationError):
        logger.warning(
            "Validation error",
            errors=exc.errors(include_url=False),
            exit_code=EXIT_VALIDATION,
        )
        return EXIT_VALIDATION

    logger.exception(
        "Unexpected error",
        error=str(exc),
        error_type=exc.__class__.__name__,
    )
    return EXIT_RUNTIME
