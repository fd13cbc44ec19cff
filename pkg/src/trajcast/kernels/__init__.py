"""Hot-kernel backend selection.

Imports the compiled extension when present, otherwise the numpy
fallback. `TRAJCAST_KERNELS=py` forces the fallback, `=c` demands the
extension (raising if it is missing); anything else is auto.
"""

import os

from . import fallback

_choice = os.environ.get("TRAJCAST_KERNELS", "auto").lower()

if _choice == "py":
    _impl = fallback
elif _choice == "c":
    from . import _ckernels as _impl  # noqa: F401
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = fallback

BACKEND = _impl.BACKEND

affine_fwd = _impl.affine_fwd
affine_bwd = _impl.affine_bwd
gru_fwd = _impl.gru_fwd
gru_bwd = _impl.gru_bwd
mogrify_fwd = _impl.mogrify_fwd
mogrify_bwd = _impl.mogrify_bwd
lstm_fwd = _impl.lstm_fwd
lstm_bwd = _impl.lstm_bwd
conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
gaussian_nll_fwd = _impl.gaussian_nll_fwd
gaussian_nll_bwd = _impl.gaussian_nll_bwd
