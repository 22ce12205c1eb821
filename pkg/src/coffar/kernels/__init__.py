"""Kernel backend selection.

Two interchangeable implementations of the hot correlation loops exist:
a compiled Cython extension (_convcore) and a pure numpy fallback
(pure). Import picks the extension when it built, unless the
environment variable COFFAR_KERNELS forces a choice:

    COFFAR_KERNELS=auto   extension if available, else pure (default)
    COFFAR_KERNELS=pure   always the numpy fallback
    COFFAR_KERNELS=ext    require the extension, fail loudly if absent
"""

import logging
import os

import numpy as np

from coffar.kernels import pure

_log = logging.getLogger("coffar.kernels")

try:
    from coffar.kernels import _convcore
except ImportError:
    _convcore = None


def _select(choice: str):
    if choice == "pure":
        return pure
    if choice == "ext":
        if _convcore is None:
            raise ImportError(
                "COFFAR_KERNELS=ext but the compiled kernels are not built"
            )
        return _convcore
    if choice == "auto":
        return _convcore if _convcore is not None else pure
    raise ImportError(f"COFFAR_KERNELS must be auto, pure or ext, got {choice!r}")


_active = _select(os.environ.get("COFFAR_KERNELS", "auto").lower())
_log.debug("kernel backend: %s", "ext" if _active is _convcore else "pure")


def backend_name() -> str:
    return "ext" if _active is _convcore else "pure"


def extension_available() -> bool:
    return _convcore is not None


def use_backend(name: str) -> str:
    """Switch the active backend at runtime; returns the previous name.

    Exists for the benchmark and the backend-equivalence tests.
    """
    global _active
    previous = backend_name()
    _active = _select(name)
    return previous


def _prep(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def corr2d_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched zero-padded same-size cross-correlation.

    x: (n, ci, h, w), w: (co, ci, kh, kw) with odd kh, kw. Returns
    (n, co, h, w).
    """
    return np.asarray(_active.corr2d_fwd(_prep(x), _prep(w)))


def corr2d_grad_kernel(x: np.ndarray, gy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of corr2d_fwd with respect to the kernel stack."""
    return np.asarray(_active.corr2d_grad_kernel(_prep(x), _prep(gy), kh, kw))
