"""Kernel selection: compiled extension if importable, numpy otherwise.

Set ``FUNMOTIF_BACKEND=python`` to force the numpy fallback.
"""

import importlib
import os

_NAMES = {"cython": "funmotif._kernels", "python": "funmotif._fallback"}


def load(name: str):
    return importlib.import_module(_NAMES[name])


def _select():
    if os.environ.get("FUNMOTIF_BACKEND", "").lower() != "python":
        try:
            return "cython", load("cython")
        except ImportError:
            pass
    return "python", load("python")


BACKEND, _impl = _select()
distance_profile = _impl.distance_profile
best_shifts = _impl.best_shifts


def available() -> list[str]:
    out = []
    for name in _NAMES:
        try:
            load(name)
        except ImportError:
            continue
        out.append(name)
    return out
