"""Backend selection for the hot kernels.

Every hot kernel ships twice: a numba ``@njit`` version and a plain
numpy version. The njit path is used when numba imports cleanly and the
environment variable ``SHED_LAB_NUMBA`` is not set to ``0``/``false``/
``off``. Selection happens once at import; both implementations stay
importable for tests and benchmarks.
"""

from __future__ import annotations

import os

_FALSY = {"0", "false", "off", "no"}


def _resolve() -> bool:
    flag = os.environ.get("SHED_LAB_NUMBA", "1").strip().lower()
    if flag in _FALSY:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a hard dependency
        return False
    return True


NUMBA_ENABLED = _resolve()


def numba_enabled() -> bool:
    """Report whether the njit kernel path is active."""
    return NUMBA_ENABLED
