"""Shared exception types; the CLI maps these onto exit codes."""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (exit code 2)."""


class DomainError(Exception):
    """Point outside the case domain."""


class SolverError(Exception):
    """Forward solver failed (singular system, non-convergence)."""
