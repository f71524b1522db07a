# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled query kernels over packed dense nets.

Layout matches pyref: params = per-layer row-major weights then biases,
dims = layer widths d0..dL, acts = 0 identity / 1 relu / 2 tanh.
The session class pins the packed nets and scratch buffers so the
single-query hot path has no per-call setup.
"""

from libc.math cimport tanh

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "ext"


cdef int _forward(const double* params, const long* dims, const long* acts,
                  int n_layers, const double* x, double* buf_a, double* buf_b) nogil:
    """Forward pass; result lands in buf_a. Returns output width."""
    cdef int li, i, j, din, dout
    cdef long off = 0
    cdef const double* w
    cdef const double* b
    cdef const double* src
    cdef double* dst
    cdef double acc
    cdef int cur = 0  # 0: x, 1: buf_a, 2: buf_b
    for li in range(n_layers):
        din = <int>dims[li]
        dout = <int>dims[li + 1]
        w = params + off
        off += dout * din
        b = params + off
        off += dout
        src = x if cur == 0 else (buf_a if cur == 1 else buf_b)
        dst = buf_b if cur == 1 else buf_a
        for i in range(dout):
            acc = b[i]
            for j in range(din):
                acc += w[i * din + j] * src[j]
            if acts[li] == 1:
                dst[i] = acc if acc > 0.0 else 0.0
            elif acts[li] == 2:
                dst[i] = tanh(acc)
            else:
                dst[i] = acc
        cur = 2 if cur == 1 else 1
    if cur == 2:
        for i in range(<int>dims[n_layers]):
            buf_a[i] = buf_b[i]
    return <int>dims[n_layers]


cdef long _decide(const double* cp, const long* cd, const long* ca, int cl,
                  const double* tp, const long* td, const long* ta, int tl,
                  double alpha, const double* x,
                  double* c1, double* c2, double* t1, double* t2) nogil:
    cdef int k = _forward(cp, cd, ca, cl, x, c1, c2)
    cdef int i
    cdef double lo = c1[0], hi = c1[0]
    for i in range(1, k):
        if c1[i] < lo:
            lo = c1[i]
        if c1[i] > hi:
            hi = c1[i]
    cdef double span = hi - lo
    _forward(tp, td, ta, tl, x, t1, t2)
    cdef double best = -1e300, v
    cdef long arg = 0
    for i in range(k):
        v = ((c1[i] - lo) / span if span > 0.0 else 0.0) + alpha * t1[i]
        if v > best:
            best = v
            arg = i
    return arg


cdef class QuerySession:
    """Fused hard-label query over one (classifier, tracer, alpha) triple."""

    cdef double[::1] cp, tp
    cdef long[::1] cd, ca, td, ta
    cdef double alpha
    cdef double[::1] b1, b2, b3, b4
    cdef int cl, tl

    def __init__(self, cparams, cdims, cacts, tparams, tdims, tacts, double alpha):
        self.cp = np.ascontiguousarray(cparams, dtype=np.float64)
        self.cd = np.ascontiguousarray(cdims, dtype=np.int64)
        self.ca = np.ascontiguousarray(cacts, dtype=np.int64)
        self.tp = np.ascontiguousarray(tparams, dtype=np.float64)
        self.td = np.ascontiguousarray(tdims, dtype=np.int64)
        self.ta = np.ascontiguousarray(tacts, dtype=np.int64)
        self.alpha = alpha
        self.cl = self.ca.shape[0]
        self.tl = self.ta.shape[0]
        cdef int width = 0, i
        for i in range(self.cd.shape[0]):
            if self.cd[i] > width:
                width = <int>self.cd[i]
        for i in range(self.td.shape[0]):
            if self.td[i] > width:
                width = <int>self.td[i]
        self.b1 = np.empty(width, dtype=np.float64)
        self.b2 = np.empty(width, dtype=np.float64)
        self.b3 = np.empty(width, dtype=np.float64)
        self.b4 = np.empty(width, dtype=np.float64)

    cpdef long query(self, double[::1] x):
        return _decide(&self.cp[0], &self.cd[0], &self.ca[0], self.cl,
                       &self.tp[0], &self.td[0], &self.ta[0], self.tl,
                       self.alpha, &x[0],
                       &self.b1[0], &self.b2[0], &self.b3[0], &self.b4[0])

    def query_batch(self, xs):
        cdef double[:, ::1] xv = np.ascontiguousarray(xs, dtype=np.float64)
        cdef int n = xv.shape[0]
        out = np.empty(n, dtype=np.int64)
        cdef long[::1] ov = out
        cdef int r
        with nogil:
            for r in range(n):
                ov[r] = _decide(&self.cp[0], &self.cd[0], &self.ca[0], self.cl,
                                &self.tp[0], &self.td[0], &self.ta[0], self.tl,
                                self.alpha, &xv[r, 0],
                                &self.b1[0], &self.b2[0], &self.b3[0], &self.b4[0])
        return out


def make_session(cparams, cdims, cacts, tparams, tdims, tacts, alpha):
    return QuerySession(cparams, cdims, cacts, tparams, tdims, tacts, alpha)


def net_forward(params, dims, acts, x):
    cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
    cdef long[::1] dv = np.ascontiguousarray(dims, dtype=np.int64)
    cdef long[::1] av = np.ascontiguousarray(acts, dtype=np.int64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int n_layers = av.shape[0]
    cdef int width = 0, i
    for i in range(dv.shape[0]):
        if dv[i] > width:
            width = <int>dv[i]
    buf_a = np.empty(width, dtype=np.float64)
    buf_b = np.empty(width, dtype=np.float64)
    cdef double[::1] ba = buf_a
    cdef double[::1] bb = buf_b
    cdef int out_dim
    with nogil:
        out_dim = _forward(&pv[0], &dv[0], &av[0], n_layers, &xv[0], &ba[0], &bb[0])
    return buf_a[:out_dim].copy()


def parallel_query(cparams, cdims, cacts, tparams, tdims, tacts, alpha, x):
    s = QuerySession(cparams, cdims, cacts, tparams, tdims, tacts, alpha)
    return int(s.query(np.ascontiguousarray(x, dtype=np.float64)))


def parallel_query_batch(cparams, cdims, cacts, tparams, tdims, tacts, alpha, xs):
    s = QuerySession(cparams, cdims, cacts, tparams, tdims, tacts, alpha)
    return s.query_batch(xs)
