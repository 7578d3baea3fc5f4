"""polyalign: multi-parallel segment alignment for comparable document collections."""

__version__ = "0.1.0"
