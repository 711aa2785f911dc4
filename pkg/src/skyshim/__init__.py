"""Scan offload for a programmable object store.

Columnar files are striped over objects; filters and projections run inside
storage nodes through a ``scan_op`` plugin, or on the client in LOCAL mode.
"""

from skyshim.errors import ErrorCode, SkyshimError

__version__ = "0.1.0"

__all__ = ["ErrorCode", "SkyshimError", "__version__"]
