"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--pixels 3200]

Both paths are called directly, so the DELTA_METROLOGY_NUMBA flag does not
matter here.  The first numba call (compilation or cache load) is excluded.
"""
import argparse
import time

import numpy as np

from delta_metrology import kernels
from delta_metrology._jit import HAVE_NUMBA
from delta_metrology.transport.models import elastic_field, phase_field
from delta_metrology.xrf import build_design, simulate_scan
from delta_metrology.xrf.analysis import ScatterModel
from delta_metrology.xrf.presets import device_beam, device_detector, hall_bar_layout


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pixels", type=int, default=3200, help="pixels in the NNLS batch")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    b = np.linspace(1e-3, 9.0, 200_000)
    b_phi, b_l = phase_field(73.6), elastic_field(4.8)

    det = device_detector()
    edges = det.bin_edges()
    rng = np.random.default_rng(0)
    centers = rng.uniform(1.0, 12.0, 400)
    areas = rng.uniform(10.0, 1e3, 400)
    sigmas = det.sigma(centers)

    beam = device_beam(1)
    nx = max(1, args.pixels // 40)
    grid = simulate_scan(hall_bar_layout(), beam, det, nx, 40, 3.0, 7, (1.5, 1.5))
    design = build_design(edges, hall_bar_layout().templates, beam, det, ScatterModel(), 2)
    y = np.ascontiguousarray(grid.counts.reshape(-1, edges.size - 1)[:, design.window])
    a = np.ascontiguousarray(design.matrix)
    var = np.maximum(y, 1.0)

    cases = [
        ("hln (200k fields)",
         lambda: kernels.hln_nb(b, b_phi, b_l), lambda: kernels.hln_np(b, b_phi, b_l)),
        ("render_lines (400 lines)",
         lambda: kernels.render_lines_nb(edges, centers, areas, sigmas),
         lambda: kernels.render_lines_np(edges, centers, areas, sigmas)),
        (f"nnls_batch ({y.shape[0]} px x {a.shape[1]} cols)",
         lambda: kernels.nnls_batch_nb(a, y, var, design.constrained, 500),
         lambda: kernels.nnls_batch_np(a, y, var, design.constrained, 500)),
    ]
    print(f"{'kernel':36s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, nb, npf in cases:
        nb()  # compile / load cache
        t_nb, out_nb = best_of(nb, args.repeat)
        t_np, out_np = best_of(npf, args.repeat)
        diff = float(np.max(np.abs(_first(out_nb) - _first(out_np))))
        print(f"{name:36s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
