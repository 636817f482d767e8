"""Pick the compiled core when it is built, else the NumPy fallback.

Set LEVYBELLMAN_BACKEND=python to force the fallback."""
import os

from . import _core_py

NAME = "python"
core = _core_py
if os.environ.get("LEVYBELLMAN_BACKEND", "").lower() != "python":
    try:
        from . import _core as core  # noqa: F811
        NAME = "cython"
    except ImportError:
        pass


def get(name=None):
    """Return the core module by name ('cython' or 'python'); default is the active one."""
    if name is None:
        return core
    if name == "python":
        return _core_py
    from . import _core
    return _core
