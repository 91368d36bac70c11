"""Exception types shared across the package."""

from __future__ import annotations

from typing import Optional


class SearchGrpoError(Exception):
    pass


class DataError(SearchGrpoError):
    """Malformed input data: bad records, duplicate ids, dangling references."""


class ConsistencyError(DataError):
    """Inputs that contradict each other, e.g. a relevance hit without any relevant candidate."""


class TransportError(SearchGrpoError):
    """Infrastructure failure talking to a remote service.

    Never a format violation: rollouts that hit one are aborted and retried,
    not scored.
    """

    def __init__(self, message: str, *, retryable: bool = True, attempts: int = 1, status: Optional[int] = None):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts
        self.status = status


class AuthError(TransportError):
    def __init__(self, message: str, *, env_var: Optional[str] = None, status: Optional[int] = None):
        super().__init__(message, retryable=False, status=status)
        self.env_var = env_var
