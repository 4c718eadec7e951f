"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line (shown even when pytest
captures output) and then asserts.  Runtimes exclude the one-time numba
compilation, which the module fixture triggers before any clock starts.

Run on its own with ``python -m pytest tests/test_acceptance.py -v``.
"""
import json
import math
import time

import numpy as np
import pytest

from delta_metrology.core import Measurement, Spectrum
from delta_metrology.errors import DegeneracyError
from delta_metrology.io.cli import main
from delta_metrology.transport.fitting import MagnetoTrace, fit_perp, fit_tilt
from delta_metrology.transport.hall import (THICKNESS_EXPONENTS, HallResult, RunSummary,
                                            compare_runs, gamma_from_thickness, hall_analysis,
                                            hall_slope, mobility_from_mean_free_path,
                                            thickness)
from delta_metrology.transport.models import (SIGMA_0, WlParams, characteristic_fields,
                                              delta_sigma_parallel, delta_sigma_perp,
                                              delta_sigma_tilt)
from delta_metrology.xrf.analysis import activation, fit_spectrum
from delta_metrology.xrf.forward import synth_element_peaks, synth_scatter_peaks
from delta_metrology.xrf.presets import (DEVICE1_AS, DEVICE2_AS, device_beam,
                                         device_detector, device_templates)

# CODATA 2018 values typed in independently of the package
E_CHARGE = 1.602176634e-19
HBAR = 1.054571817e-34

L0, LPHI0, N0 = 4.8, 73.6, 1.31e14
T0 = 0.98
GAMMA0 = 0.0077483


@pytest.fixture(scope="module", autouse=True)
def compiled():
    """Compile the numba kernels once so the timed sections measure work only."""
    beam, det, tpl = device_beam(1), device_detector(), device_templates(("As", "Fe"))
    spec = Spectrum(det.bin_edges(), synth_element_peaks(tpl["As"], 1e14, beam, det).counts)
    fit_spectrum(spec, tpl, beam, det)
    delta_sigma_perp(np.array([1e-3, 1.0]), L0, LPHI0)


def verdict(capsys, number, ok, detail, seconds, limit):
    ok = ok and seconds < limit
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  "
              f"[{seconds:.2f} s, limit {limit:g} s]")
    return ok


# 1 -----------------------------------------------------------------------------------

def test_criterion_1_zero_field_limits(capsys):
    t0 = time.perf_counter()
    s0 = E_CHARGE**2 / (2 * math.pi**2 * HBAR)
    perp0 = float(delta_sigma_perp(0.0, L0, LPHI0))
    par0 = float(delta_sigma_parallel(0.0, GAMMA0))
    checks = {
        "perp(0)": abs(perp0) <= 1e-12 * SIGMA_0,
        "par(0)": abs(par0) <= 1e-12 * SIGMA_0,
        "sigma0 vs oracle": abs(SIGMA_0 / s0 - 1) <= 1e-4,
        # the quoted figure carries four significant digits
        "sigma0 quoted as 1.233e-5 S": float(f"{SIGMA_0:.3e}") == 1.233e-5,
    }
    dt = time.perf_counter() - t0
    ok = verdict(capsys, 1, all(checks.values()),
                 f"perp(0)={perp0:.1e} S, par(0)={par0:.1e} S, sigma0={SIGMA_0:.6e} S "
                 f"(oracle {s0:.6e})", dt, 1.0)
    assert ok, checks


# 2 -----------------------------------------------------------------------------------

def test_criterion_2_hln_limit(capsys):
    t0 = time.perf_counter()
    b_phi = HBAR / (4 * E_CHARGE * (LPHI0 * 1e-9) ** 2)
    b_l = HBAR / (2 * E_CHARGE * (L0 * 1e-9) ** 2)
    f = characteristic_fields(L0, LPHI0)
    sat = float(delta_sigma_perp(1e6 * f.B_L, L0, LPHI0)) / SIGMA_0
    limit = math.log(2 * LPHI0**2 / L0**2)
    checks = {
        "saturation": abs(sat / limit - 1) <= 1e-3,
        "saturation 6.15": abs(sat / 6.15 - 1) <= 1e-3,
        "B_phi": abs(f.B_phi / b_phi - 1) <= 5e-3 and abs(f.B_phi / 0.0304 - 1) <= 5e-3,
        "B_L": abs(f.B_L / b_l - 1) <= 5e-3 and abs(f.B_L / 14.3 - 1) <= 5e-3,
    }
    dt = time.perf_counter() - t0
    ok = verdict(capsys, 2, all(checks.values()),
                 f"perp(1e6 B_L)/sigma0={sat:.5f} (limit {limit:.5f}), "
                 f"B_phi={f.B_phi:.5f} T, B_L={f.B_L:.4f} T", dt, 1.0)
    assert ok, checks


# 3 -----------------------------------------------------------------------------------

def test_criterion_3_fit_recovery(capsys):
    t0 = time.perf_counter()
    fields = np.linspace(0.01, 9.0, 50)
    clean = delta_sigma_perp(fields, L0, LPHI0)
    L_fit, Lphi_fit = [], []
    for seed in range(100):
        noise = np.random.default_rng(seed).standard_normal(fields.size)
        fit = fit_perp(MagnetoTrace("perpendicular", fields, clean * (1 + 0.01 * noise)))
        L_fit.append(fit.L.value)
        Lphi_fit.append(fit.L_phi.value)
    L_med, Lphi_med = float(np.median(L_fit)), float(np.median(Lphi_fit))

    angles = np.concatenate((np.linspace(0, 3, 31), np.linspace(4, 90, 20)))
    y = delta_sigma_tilt(9.0, angles, L0, LPHI0, GAMMA0, 2.0)
    p_fit = []
    for seed in range(100):
        noise = np.random.default_rng(seed).standard_normal(angles.size)
        tr = MagnetoTrace("tilt", np.full(angles.size, 9.0), y * (1 + 0.01 * noise),
                          angle=angles)
        p_fit.append(fit_tilt(tr, L0, LPHI0, GAMMA0).value.value)
    p_med = float(np.median(p_fit))
    dt = time.perf_counter() - t0

    checks = {"L": abs(L_med / L0 - 1) <= 0.02,
              "L_phi": abs(Lphi_med / LPHI0 - 1) <= 0.02,
              "p": abs(p_med - 2.0) <= 0.1}
    ok = verdict(capsys, 3, all(checks.values()),
                 f"median L={L_med:.4f} nm ({100 * (L_med / L0 - 1):+.2f}%), "
                 f"L_phi={Lphi_med:.3f} nm ({100 * (Lphi_med / LPHI0 - 1):+.2f}%), "
                 f"p={p_med:.3f}", dt, 30.0)
    assert ok, checks


# 4 -----------------------------------------------------------------------------------

def test_criterion_4_thickness_round_trip(capsys):
    t0 = time.perf_counter()
    g = gamma_from_thickness(T0, LPHI0, L0, N0)
    t = thickness(LPHI0, L0, N0, g).value

    # dimensional analysis: the exponents measured from the function, together
    # with (hbar/e)^1, must combine the input dimensions into a length
    base = thickness(LPHI0, L0, N0, g).value
    measured = []
    for i in range(4):
        args = [LPHI0, N0, L0, g]
        args[i] *= 2.0
        lphi, n, L, gm = args
        measured.append(math.log2(thickness(lphi, L, n, gm).value / base))
    # (metre, tesla) exponents of L_phi, n, L, gamma and hbar/e
    dims = [(1, 0), (-2, 0), (1, 0), (0, -2)]
    metre = sum(a * d[0] for a, d in zip(measured, dims)) + 2
    tesla = round(sum(a * d[1] for a, d in zip(measured, dims)) + 1, 12) + 0.0
    metre = round(metre, 12)

    # numeric route in nm units: hbar/e = 658.2 T nm^2, n = 1.31 nm^-2
    flux = HBAR / E_CHARGE * 1e18 / LPHI0
    t_nm = (1 / (4 * math.pi)) ** 0.25 * math.sqrt(flux**2 * math.sqrt(N0 * 1e-14) * L0 * g)
    dt = time.perf_counter() - t0
    checks = {
        "round trip": abs(t / T0 - 1) <= 1e-9,
        "exponents": np.allclose(measured, THICKNESS_EXPONENTS, atol=1e-12),
        "dimension is length": abs(metre - 1) < 1e-12 and abs(tesla) < 1e-12,
        "nm arithmetic": abs(t_nm / t - 1) <= 1e-12,
    }
    ok = verdict(capsys, 4, all(checks.values()),
                 f"gamma={g:.6g} T^-2 -> t={t:.12f} nm, dimensions m^{metre:g} T^{tesla:g}",
                 dt, 1.0)
    assert ok, checks


# 5 -----------------------------------------------------------------------------------

def test_criterion_5_hall_oracle(capsys):
    t0 = time.perf_counter()
    b = np.linspace(-9.0, 9.0, 37)
    slope_oracle = 1.0 / (N0 * 1e4 * E_CHARGE)
    mu_oracle = L0 * 1e-9 * E_CHARGE / (HBAR * math.sqrt(2 * math.pi * N0 * 1e4)) * 1e4
    sigma = N0 * 1e4 * E_CHARGE * mu_oracle * 1e-4
    rxy = slope_oracle * b + 1e-3 * np.random.default_rng(0).standard_normal(b.size)
    res = hall_analysis(MagnetoTrace("perpendicular", b, rxy, quantity="R_xy"), sigma)
    mu = mobility_from_mean_free_path(L0, res.n.value)
    dt = time.perf_counter() - t0
    checks = {
        "slope 4.77": abs(res.slope.value / 4.77 - 1) <= 5e-3,
        "slope oracle": abs(hall_slope(N0) / slope_oracle - 1) <= 1e-12,
        "n inversion": abs(res.n.value / N0 - 1) <= 1e-3,
        "mu 25": abs(mu / 25.0 - 1) <= 0.02,
        "mu oracle": abs(mu / mu_oracle - 1) <= 1e-3,
        "L from Hall": abs(res.L.value / L0 - 1) <= 1e-3,
    }
    ok = verdict(capsys, 5, all(checks.values()),
                 f"slope={res.slope.value:.4f} ohm/T, n={res.n.value:.4e} cm^-2, "
                 f"mu={mu:.3f} cm^2/Vs", dt, 1.0)
    assert ok, checks


# 6 -----------------------------------------------------------------------------------

def _quantify(tmp_path, device):
    cfg = tmp_path / f"device{device}.toml"
    cfg.write_text(f"seed = {device}\ndevice = {device}\n")
    out = tmp_path / f"device{device}"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["quantify", str(out / "scan"), "--config", str(cfg), "--out", str(out)]) == 0
    res = json.loads((out / "quantify.json").read_text())["results"]
    return res["n_xrf"]["value"], res["n_xrf"]["error"], res["pixels"]


def test_criterion_6_xrf_closure(tmp_path, capsys):
    t0 = time.perf_counter()
    found = {dev: _quantify(tmp_path, dev) for dev in (1, 2)}
    dt = time.perf_counter() - t0
    truth = {1: DEVICE1_AS, 2: DEVICE2_AS}
    dev = {d: found[d][0] / truth[d] - 1 for d in truth}
    checks = {f"device {d}": abs(dev[d]) <= 0.05 for d in truth}
    ok = verdict(capsys, 6, all(checks.values()),
                 "; ".join(f"device {d}: {found[d][0]:.4e} +/- {found[d][1]:.2e} cm^-2 "
                           f"over {found[d][2]} px ({100 * dev[d]:+.2f}%)" for d in truth),
                 dt / 2, 60.0)
    assert ok, checks


# 7 -----------------------------------------------------------------------------------

def test_criterion_7_snr(tmp_path, capsys):
    t0 = time.perf_counter()
    med = {}
    for device in (1, 2):
        cfg = tmp_path / f"snr{device}.toml"
        cfg.write_text(f"seed = 0\ndevice = {device}\n[snr]\nseeds = 20\n")
        out = tmp_path / f"snr{device}"
        assert main(["snr", "--config", str(cfg), "--out", str(out)]) == 0
        med[device] = json.loads((out / "snr.json").read_text())["results"]["snr_median"]["value"]
    dt = time.perf_counter() - t0
    checks = {"device 1": 5 <= med[1] <= 9, "device 2": 1 <= med[2] <= 3}
    ok = verdict(capsys, 7, all(checks.values()),
                 f"median SNR over 20 seeds: device 1 {med[1]:.2f}, device 2 {med[2]:.2f}",
                 dt, 60.0)
    assert ok, checks


# 8 -----------------------------------------------------------------------------------

def test_criterion_8_activation(capsys):
    t0 = time.perf_counter()
    a = activation(Measurement(1.40e14, 0.07e14), Measurement(1.31e14, 0.03e14))
    oracle = 100 * 1.31 / 1.40
    oracle_err = oracle * math.sqrt((0.07 / 1.40) ** 2 + (0.03 / 1.31) ** 2)
    dt = time.perf_counter() - t0
    checks = {"value": round(a.value) == 94 and abs(a.value - oracle) < 1e-9,
              "error": round(a.error) == 5 and abs(a.error - oracle_err) < 1e-9}
    ok = verdict(capsys, 8, all(checks.values()),
                 f"activation {a.value:.2f} +/- {a.error:.2f} %", dt, 1.0)
    assert ok, checks


# 9 -----------------------------------------------------------------------------------

def _run_summary(n, L, L_phi, p, t):
    n, L = Measurement(*n), Measurement(*L)
    mu = Measurement(mobility_from_mean_free_path(L.value, n.value), 1.0)
    hall = HallResult(n, mu, L, Measurement(1e-3, 0.0), Measurement(hall_slope(n.value), 0.0),
                      Measurement(0.0, 0.0))
    return RunSummary(hall, WlParams(L=L, L_phi=L_phi, p=p, t=t))


def test_criterion_9_non_destructive(capsys):
    t0 = time.perf_counter()
    before = _run_summary(n=(1.31e14, 0.03e14), L=(4.8, 0.1), L_phi=(73.6, 0.4),
                          p=(1.9, 0.3), t=(0.98, 0.02))
    after = _run_summary(n=(1.27e14, 0.06e14), L=(4.9, 0.2), L_phi=(74.2, 0.3),
                         p=(2.3, 0.5), t=(0.97, 0.02))
    rep = compare_runs(before, after)
    dt = time.perf_counter() - t0
    z = {k: rep.z_scores[k] for k in ("n", "L", "L_phi", "t", "p")}
    dt_a = rep.thickness_difference_angstrom
    checks = {"z < 2": max(z.values()) < 2.0,
              "dt = 0.1 A": abs(dt_a - 0.1) < 1e-12,
              "dt < 0.2 A": dt_a < 0.2,
              "consistent": rep.consistent}
    ok = verdict(capsys, 9, all(checks.values()),
                 "z " + ", ".join(f"{k}={v:.2f}" for k, v in z.items())
                 + f"; |dt|={dt_a:.3f} A", dt, 1.0)
    assert ok, checks


# 10 ----------------------------------------------------------------------------------

def test_criterion_10_decomposition(capsys):
    t0 = time.perf_counter()
    beam, det = device_beam(1), device_detector()
    tpl = device_templates()
    sel = {k: tpl[k] for k in ("As", "Fe", "Al")}
    edges = det.bin_edges()

    worst_exact = 0.0
    for el, dens in (("As", 1.4e14), ("Fe", 1e13), ("Al", 6e15)):
        peaks = synth_element_peaks(tpl[el], dens, beam, det)
        res = fit_spectrum(Spectrum(edges, peaks.counts), sel, beam, det, scatter=None,
                           background_order=None)
        worst_exact = max(worst_exact, abs(res.amplitude(el).value / peaks.total - 1))

    want = {"As": 4e4, "Fe": 2e4, "Al": 1e4}
    lam = synth_scatter_peaks(beam, 1.5e4, 1.5e4, 90.0, det).counts.copy()
    for el, n in want.items():
        unit = synth_element_peaks(tpl[el], 1.0, beam, det)
        lam += unit.counts * (n / unit.total)
    worst_noisy = 0.0
    for seed in range(20):
        y = np.random.default_rng(seed).poisson(lam).astype(float)
        res = fit_spectrum(Spectrum(edges, y), sel, beam, det)
        worst_noisy = max(worst_noisy, max(abs(res.amplitude(el).value / n - 1)
                                           for el, n in want.items()))

    spec = Spectrum(edges, synth_element_peaks(tpl["As"], 1e14, beam, det).counts)
    try:
        fit_spectrum(spec, [tpl["As"], tpl["As"]], beam, det)
        degenerate = False
    except DegeneracyError:
        degenerate = True
    dt = time.perf_counter() - t0
    checks = {"exact": worst_exact <= 1e-9,
              "composite 3%": worst_noisy <= 0.03,
              "counts 1e5": abs(lam.sum() / 1e5 - 1) <= 0.01,
              "degeneracy": degenerate}
    ok = verdict(capsys, 10, all(checks.values()),
                 f"worst noise-free error {worst_exact:.1e}, worst composite error "
                 f"{100 * worst_noisy:.2f}% over 20 seeds at {lam.sum():.3g} counts, "
                 f"duplicate templates {'rejected' if degenerate else 'accepted'}", dt, 10.0)
    assert ok, checks
