"""Selects the compiled integrator core when available.

Import order: the Cython extension ``rnsfde._core`` if it built, otherwise the
pure-Python reference in ``rnsfde._core_py``. Setting ``ERGO_FORCE_PY=1``
forces the fallback regardless, which the parity tests and the benchmark use.
"""

import os

from . import _core_py

_impl = _core_py
_name = "python"

if os.environ.get("ERGO_FORCE_PY", "") != "1":
    try:
        from . import _core as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        _name = "compiled"

CODE_OK = _core_py.CODE_OK
CODE_FIXED_POINT = _core_py.CODE_FIXED_POINT
CODE_NONFINITE = _core_py.CODE_NONFINITE

integrate_single = _impl.integrate_single
integrate_coupled = _impl.integrate_coupled


def active_backend() -> str:
    """'compiled' or 'python'."""
    return _name


def backends():
    """(name, module) pairs for every importable backend, compiled first."""
    out = []
    if _name == "compiled":
        out.append(("compiled", _impl))
    out.append(("python", _core_py))
    return out
