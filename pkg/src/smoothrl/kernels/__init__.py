"""Kernel backend selection.

The elementwise activation kernels, the GAE scan and the Adam update are the
non-BLAS hot spots of training.  They exist twice: a compiled Cython
extension (``_fast``) and a NumPy reference (``_reference``).  The compiled
backend is picked when available; ``SMOOTHRL_KERNELS=reference|fast`` forces
a choice (``fast`` raises if the extension was not built).

Matrix products are delegated to NumPy/BLAS in both backends, so they are
deliberately not part of this interface.
"""

import os

from . import _reference

_FORCE = os.environ.get("SMOOTHRL_KERNELS", "auto").lower()

if _FORCE == "reference":
    _impl = _reference
elif _FORCE == "fast":
    from . import _fast as _impl
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = _reference

BACKEND = _impl.BACKEND

tanh = _impl.tanh
tanh_grad = _impl.tanh_grad
elu = _impl.elu
elu_grad = _impl.elu_grad
softplus = _impl.softplus
softplus_grad = _impl.softplus_grad
sigmoid = _impl.sigmoid
sigmoid_grad = _impl.sigmoid_grad
gae_scan = _impl.gae_scan
adam_step = _impl.adam_step


def backend_name():
    return BACKEND
