"""Exception hierarchy shared across the package.

CLI exit codes: 0 success, 2 configuration error, 3 backend failure,
4 numerical failure.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_NUMERICAL = 4


class SynthctlError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_CONFIG


class ConfigurationError(SynthctlError):
    """Invalid or inconsistent run configuration."""

    exit_code = EXIT_CONFIG


class InvalidActionError(SynthctlError, ValueError):
    """Action indices out of range for the dictionary or simulator."""

    exit_code = EXIT_CONFIG


class InvalidInputError(SynthctlError, ValueError):
    """Malformed data handed to an operation (empty split, bad label, ...)."""

    exit_code = EXIT_CONFIG


class InvalidRequestError(SynthctlError):
    """Request that violates a runtime contract, e.g. budget overflow."""

    exit_code = EXIT_CONFIG


class BackendUnavailableError(SynthctlError):
    """Generation backend unreachable after the configured retries."""

    exit_code = EXIT_BACKEND


class ProtocolError(SynthctlError):
    """Backend reachable but its response violates the wire contract."""

    exit_code = EXIT_BACKEND


class NumericalFailureError(SynthctlError):
    """Non-finite value encountered where the math requires finiteness."""

    exit_code = EXIT_NUMERICAL


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, SynthctlError):
        return exc.exit_code
    return 1
