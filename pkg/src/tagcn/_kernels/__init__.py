"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``TAGCN_KERNELS=python``
to force the numpy path. ``BACKEND`` names the active one.
"""

import os

from . import _reference

try:
    if os.environ.get("TAGCN_KERNELS", "").lower() == "python":
        raise ImportError("numpy kernels requested")
    from . import _ckernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _reference
    BACKEND = "python"

temporal_conv_forward = _impl.temporal_conv_forward
temporal_conv_backward_weight = _impl.temporal_conv_backward_weight
temporal_conv_backward_input = _impl.temporal_conv_backward_input
top_indices = _impl.top_indices

__all__ = [
    "BACKEND",
    "temporal_conv_forward",
    "temporal_conv_backward_weight",
    "temporal_conv_backward_input",
    "top_indices",
]
