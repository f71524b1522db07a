"""Pure-numpy reference implementation of the query kernels.

Same packed-net convention as the compiled extension: `params` is the
concatenation of per-layer row-major weights then biases, `dims` the layer
widths (d0..dL), `acts` activation codes (0=identity, 1=relu, 2=tanh).
"""

import numpy as np

BACKEND = "python"


def _layer_views(params, dims):
    views = []
    off = 0
    for i in range(len(dims) - 1):
        din, dout = int(dims[i]), int(dims[i + 1])
        w = params[off:off + dout * din].reshape(dout, din)
        off += dout * din
        b = params[off:off + dout]
        off += dout
        views.append((w, b))
    return views


def _act(code, z):
    if code == 1:
        return np.maximum(z, 0.0)
    if code == 2:
        return np.tanh(z)
    return z


def net_forward(params, dims, acts, x):
    """Forward one input vector through a packed net."""
    h = x
    for (w, b), code in zip(_layer_views(params, dims), acts):
        h = _act(int(code), w @ h + b)
    return h


def net_forward_batch(params, dims, acts, xs):
    h = xs
    for (w, b), code in zip(_layer_views(params, dims), acts):
        h = _act(int(code), h @ w.T + b)
    return h


def parallel_query_batch(cparams, cdims, cacts, tparams, tdims, tacts, alpha, xs):
    """Hard labels of min-max-normalized classifier logits + alpha * tracer
    logits, for a batch of inputs (n, d). Ties resolve to the lowest index."""
    oc = net_forward_batch(cparams, cdims, cacts, xs)
    lo = oc.min(axis=1, keepdims=True)
    hi = oc.max(axis=1, keepdims=True)
    span = hi - lo
    norm = np.where(span > 0.0, (oc - lo) / np.where(span > 0.0, span, 1.0), 0.0)
    ot = net_forward_batch(tparams, tdims, tacts, xs)
    return np.argmax(norm + alpha * ot, axis=1).astype(np.int64)


def parallel_query(cparams, cdims, cacts, tparams, tdims, tacts, alpha, x):
    return int(parallel_query_batch(cparams, cdims, cacts,
                                    tparams, tdims, tacts, alpha, x[None, :])[0])


class QuerySession:
    """Numpy counterpart of the compiled session object."""

    def __init__(self, cparams, cdims, cacts, tparams, tdims, tacts, alpha):
        self._c = (np.ascontiguousarray(cparams, dtype=np.float64),
                   np.ascontiguousarray(cdims, dtype=np.int64),
                   np.ascontiguousarray(cacts, dtype=np.int64))
        self._t = (np.ascontiguousarray(tparams, dtype=np.float64),
                   np.ascontiguousarray(tdims, dtype=np.int64),
                   np.ascontiguousarray(tacts, dtype=np.int64))
        self._alpha = float(alpha)

    def query(self, x):
        return parallel_query(*self._c, *self._t, self._alpha, x)

    def query_batch(self, xs):
        return parallel_query_batch(*self._c, *self._t, self._alpha, xs)


def make_session(cparams, cdims, cacts, tparams, tdims, tacts, alpha):
    return QuerySession(cparams, cdims, cacts, tparams, tdims, tacts, alpha)
