"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or ``ICPLAB_PURE_PYTHON`` is set to a non-empty value
other than ``0``. ``backend.NAME`` reports which one is active.
"""

import os

from icplab import _fallback


def _load():
    if os.environ.get("ICPLAB_PURE_PYTHON", "") not in ("", "0"):
        return _fallback
    try:
        from icplab import _kernels
    except ImportError:
        return _fallback
    return _kernels


backend = _load()


def available_backends():
    """All importable backends, compiled first."""
    found = []
    try:
        from icplab import _kernels
        found.append(_kernels)
    except ImportError:
        pass
    found.append(_fallback)
    return found
