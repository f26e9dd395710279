"""Compare the compiled tap-accumulation kernel against the numpy fallback.

Run:  python3 benchmarks/bench_rir.py
"""

import time

import numpy as np

from refsep import _imgsrc_py
from refsep.acoustics import (
    SINC_CUTOFF_RATIO,
    SINC_HALF_WIDTH,
    SPEED_OF_SOUND,
    SceneSpec,
    _calibrate_beta,
    _image_sources,
)

try:
    from refsep import _imgsrc as _imgsrc_c
except ImportError:
    _imgsrc_c = None


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    fs = 8000
    for t60 in (0.3, 0.6, 1.0):
        scene = SceneSpec((6.0, 5.0, 2.8), t60, (3.0, 2.5, 1.5), ((3.9, 3.1, 1.5),))
        beta = _calibrate_beta(scene.room_dims, scene.t60)
        n_taps = int(np.ceil(1.2 * t60 * fs))
        max_dist = (n_taps + SINC_HALF_WIDTH) * SPEED_OF_SOUND / fs
        dists, amps = _image_sources(scene, 0, max_dist, beta)
        delays = dists / SPEED_OF_SOUND * fs
        args = (delays, amps, n_taps, SINC_HALF_WIDTH, SINC_CUTOFF_RATIO)

        t_py = timeit(lambda: _imgsrc_py.accumulate_taps(*args))
        line = f"t60={t60:.1f}s  images={len(delays):>9,}  numpy={t_py*1e3:8.1f} ms"
        if _imgsrc_c is not None:
            t_c = timeit(lambda: _imgsrc_c.accumulate_taps(*args))
            ref = _imgsrc_py.accumulate_taps(*args)
            got = _imgsrc_c.accumulate_taps(*args)
            rel = np.linalg.norm(got - ref) / np.linalg.norm(ref)
            line += f"  cython={t_c*1e3:8.1f} ms  speedup={t_py/t_c:5.1f}x  agree={rel:.1e}"
        else:
            line += "  (compiled kernel unavailable)"
        print(line)


if __name__ == "__main__":
    main()
