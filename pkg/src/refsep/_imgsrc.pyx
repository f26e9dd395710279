# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tap accumulation for the image-source model.

Semantics identical to ``_imgsrc_py.accumulate_taps``; kept in C because the
inner loop runs once per (image, tap) pair and dominates RIR synthesis.
"""

import numpy as np

from libc.math cimport ceil, cos, floor, sin

COMPILED = True

cdef double _PI = 3.141592653589793


def accumulate_taps(delays, amps, n_out, double half_width=40, double fc_ratio=0.9):
    """Overlap-add windowed-sinc fractional-delay impulses (see numpy twin)."""
    delays_arr = np.ascontiguousarray(delays, dtype=np.float64)
    amps_arr = np.ascontiguousarray(amps, dtype=np.float64)
    if delays_arr.shape != amps_arr.shape or delays_arr.ndim != 1:
        raise ValueError("delays and amps must be 1-D arrays of equal length")
    out_arr = np.zeros(int(n_out), dtype=np.float64)

    cdef double[::1] dl = delays_arr
    cdef double[::1] am = amps_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t n_taps = out.shape[0]
    cdef Py_ssize_t i, n, lo, hi
    cdef double d, a, t, x, s

    for i in range(dl.shape[0]):
        d = dl[i]
        a = am[i]
        lo = <Py_ssize_t>ceil(d - half_width)
        hi = <Py_ssize_t>floor(d + half_width)
        if lo < 0:
            lo = 0
        if hi > n_taps - 1:
            hi = n_taps - 1
        for n in range(lo, hi + 1):
            t = n - d
            x = _PI * fc_ratio * t
            if -1e-10 < x < 1e-10:
                s = 1.0
            else:
                s = sin(x) / x
            out[n] += a * 0.5 * (1.0 + cos(_PI * t / half_width)) * s
    return out_arr
