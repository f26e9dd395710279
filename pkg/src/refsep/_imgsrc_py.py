"""Pure-numpy tap accumulation for the image-source model.

Mirror of the compiled kernel in ``_imgsrc.pyx``; results agree to float
round-off. Selected at import time by :mod:`refsep.acoustics` when the
extension is unavailable (or ``REFSEP_PURE_PYTHON`` is set).
"""

import numpy as np

COMPILED = False


def accumulate_taps(delays, amps, n_out, half_width=40, fc_ratio=0.9, chunk=32768):
    """Overlap-add windowed-sinc fractional-delay impulses.

    Each (delay, amp) pair contributes ``amp * 0.5*(1+cos(pi*t/half_width)) *
    sinc(fc_ratio*t)`` at integer taps ``n`` with ``t = n - delay``,
    ``|t| <= half_width`` (Peterson's low-passed impulse). Delays are in
    samples; taps falling outside ``[0, n_out)`` are dropped.
    """
    delays = np.asarray(delays, dtype=np.float64)
    amps = np.asarray(amps, dtype=np.float64)
    if delays.shape != amps.shape or delays.ndim != 1:
        raise ValueError("delays and amps must be 1-D arrays of equal length")
    out = np.zeros(int(n_out), dtype=np.float64)
    offsets = np.arange(2 * half_width + 1)
    for start in range(0, delays.size, chunk):
        d = delays[start : start + chunk, None]
        a = amps[start : start + chunk, None]
        n = np.ceil(d - half_width).astype(np.int64) + offsets
        t = n - d
        valid = (np.abs(t) <= half_width) & (n >= 0) & (n < n_out)
        vals = a * 0.5 * (1.0 + np.cos(np.pi * t / half_width)) * np.sinc(fc_ratio * t)
        out += np.bincount(n[valid], weights=vals[valid], minlength=int(n_out))
    return out
