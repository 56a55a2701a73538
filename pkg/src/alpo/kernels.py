"""Backend selection for the hot loops.

The compiled extension is used when it imports cleanly; setting
``ALPO_PURE_PYTHON=1`` forces the fallback (the benchmark and the
backend-agreement tests rely on this switch).
"""
import os

from alpo import _pykernels

if os.environ.get("ALPO_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from alpo import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

align_scan = _impl.align_scan
context_class = _impl.context_class
sequence_logprob = _impl.sequence_logprob
accumulate_sequence_grad = _impl.accumulate_sequence_grad

__all__ = [
    "BACKEND",
    "align_scan",
    "context_class",
    "sequence_logprob",
    "accumulate_sequence_grad",
]
