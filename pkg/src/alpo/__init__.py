"""Segment-level adaptive preference optimisation for subtitle translation."""

__version__ = "0.1.0"

from alpo.kernels import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND"]
