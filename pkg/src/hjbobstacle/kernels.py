"""Backend selection for the hot sweep kernels.

The compiled extension is used when it imports; setting
``HJBOBSTACLE_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _sweep_py

BACKEND = "python"
_impl = _sweep_py

if os.environ.get("HJBOBSTACLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _sweep as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled', 'python') or the default."""
    if name is None:
        return _impl
    if name == "python":
        return _sweep_py
    if name == "compiled":
        from . import _sweep  # type: ignore[attr-defined]

        return _sweep
    raise ValueError(f"unknown backend {name!r}")


def sweep(*args):
    return _impl.sweep(*args)


def iterate(*args):
    return _impl.iterate(*args)
