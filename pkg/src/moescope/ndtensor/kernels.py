"""Backend selection for the conv2d hot loops.

The compiled ``_ckernels`` extension is preferred; set ``MOESCOPE_PURE_PYTHON=1``
to force the numpy implementation. ``BACKEND`` names the one in use.
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if not os.environ.get("MOESCOPE_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _active is compiled_backend else "numpy"


def im2col(x, kh, kw, stride, pad):
    return _active.im2col(x, kh, kw, stride, pad)


def col2im(cols, B, C, H, W, kh, kw, stride, pad):
    return _active.col2im(cols, B, C, H, W, kh, kw, stride, pad)
