"""Query-kernel backend selection.

Prefers the compiled extension; falls back to the numpy reference when the
extension is unavailable or ADVTRACE_FORCE_PYTHON=1 is set. Both expose the
same packed-net API (see pyref), and `benchmarks/bench_kernels.py` compares
their throughput.
"""

import os

if os.environ.get("ADVTRACE_FORCE_PYTHON") == "1":
    from . import pyref as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pyref as _impl

BACKEND = _impl.BACKEND
net_forward = _impl.net_forward
parallel_query = _impl.parallel_query
parallel_query_batch = _impl.parallel_query_batch
make_session = _impl.make_session

__all__ = ["BACKEND", "make_session", "net_forward", "parallel_query",
           "parallel_query_batch"]
