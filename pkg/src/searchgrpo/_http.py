from __future__ import annotations

import logging
import time
from typing import Any, Optional

import requests

from .errors import AuthError, TransportError

logger = logging.getLogger(__name__)


def post_json(
    url: str,
    payload: dict,
    *,
    headers: Optional[dict] = None,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff: float = 0.5,
    auth_env_var: Optional[str] = None,
) -> Any:
    """POST ``payload`` and decode a JSON reply.

    Timeouts, connection errors and 5xx replies are retried up to
    ``max_retries`` extra times with exponential backoff. 401/403 raise
    :class:`AuthError` at once, other 4xx raise a non-retryable
    :class:`TransportError`.
    """
    attempts = 0
    last: Optional[TransportError] = None
    while attempts <= max_retries:
        if attempts:
            time.sleep(backoff * 2 ** (attempts - 1))
        attempts += 1
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            last = TransportError(f"timeout calling {url}: {exc}", attempts=attempts)
            logger.warning("attempt %d: %s", attempts, last)
            continue
        except requests.RequestException as exc:
            last = TransportError(f"connection error calling {url}: {exc}", attempts=attempts)
            logger.warning("attempt %d: %s", attempts, last)
            continue
        if resp.status_code in (401, 403):
            hint = f"; set the {auth_env_var} environment variable" if auth_env_var else ""
            raise AuthError(f"{url} rejected credentials (HTTP {resp.status_code}){hint}",
                            env_var=auth_env_var, status=resp.status_code)
        if resp.status_code >= 500:
            last = TransportError(f"{url} returned HTTP {resp.status_code}", attempts=attempts,
                                  status=resp.status_code)
            logger.warning("attempt %d: %s", attempts, last)
            continue
        if not 200 <= resp.status_code < 300:
            raise TransportError(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}",
                                 retryable=False, attempts=attempts, status=resp.status_code)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{url} returned a non-JSON body: {exc}", retryable=False,
                                 attempts=attempts) from exc
    assert last is not None
    last.attempts = attempts
    raise last
