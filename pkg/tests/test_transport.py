import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delta_metrology import kernels
from delta_metrology.core import CONSTANTS, Measurement
from delta_metrology.errors import (DomainError, FitError, HallSignError,
                                    InsufficientDataError)
from delta_metrology.transport import fitting
from delta_metrology.transport.fitting import (MagnetoTrace, fit_parallel, fit_perp,
                                               fit_tilt, perp_residuals)
from delta_metrology.transport.hall import (HallResult, RunSummary, compare_runs,
                                            gamma_from_thickness, hall_analysis, hall_slope,
                                            mean_free_path, mobility_from_mean_free_path,
                                            thickness)
from delta_metrology.transport.models import (SIGMA_0, WlParams, characteristic_fields,
                                              combine_orientations,
                                              combine_orientations_dp, delta_sigma_parallel,
                                              delta_sigma_perp, delta_sigma_tilt,
                                              elastic_field, phase_field)

L0, LPHI0, N0 = 4.8, 73.6, 1.31e14
FIELDS = np.linspace(0.01, 9.0, 50)

mp.mp.dps = 40


def hln_oracle(B, L_nm, L_phi_nm):
    # small fields cancel ~2 |log10 B| digits between the digamma terms
    with mp.workdps(40 + 2 * max(0, int(-math.log10(B)))):
        return +_hln_oracle(B, L_nm, L_phi_nm)


def _hln_oracle(B, L_nm, L_phi_nm):
    hbar, e = mp.mpf(CONSTANTS.hbar), mp.mpf(CONSTANTS.e)
    b_phi = hbar / (4 * e * (mp.mpf(L_phi_nm) * mp.mpf("1e-9")) ** 2)
    b_l = hbar / (2 * e * (mp.mpf(L_nm) * mp.mpf("1e-9")) ** 2)
    B = mp.mpf(B)
    s0 = e**2 / (2 * mp.pi**2 * hbar)
    return s0 * (mp.digamma(mp.mpf(1) / 2 + b_phi / B) - mp.digamma(mp.mpf(1) / 2 + b_l / B)
                 + mp.log(b_l / b_phi))


def perp_trace(noise=0.0, seed=0, fields=FIELDS, L=L0, L_phi=LPHI0):
    y = delta_sigma_perp(fields, L, L_phi)
    if noise:
        y = y * (1.0 + noise * np.random.default_rng(seed).standard_normal(fields.size))
    return MagnetoTrace("perpendicular", fields, y)


# model -----------------------------------------------------------------------

def test_conductance_prefactor_and_fields():
    assert SIGMA_0 == pytest.approx(1.233e-5, rel=1e-3)
    f = characteristic_fields(L0, LPHI0)
    assert f.B_phi == pytest.approx(0.0304, rel=2e-3)
    assert f.B_L == pytest.approx(14.3, rel=2e-3)
    assert f.B_phi < f.B_L and f.sigma_0 == SIGMA_0
    assert f.log_ratio == pytest.approx(math.log(2 * LPHI0**2 / L0**2), rel=1e-12)
    with pytest.raises(DomainError):
        characteristic_fields(0.0, LPHI0)
    with pytest.raises(DomainError):
        characteristic_fields(L0, -1.0)


@pytest.mark.parametrize("B", [0.1, 1.0, 9.0])
def test_perp_matches_arbitrary_precision(B):
    ref = float(hln_oracle(B, L0, LPHI0))
    assert delta_sigma_perp(B, L0, LPHI0) == pytest.approx(ref, rel=1e-11)


@given(B=st.floats(1e-3, 50.0), L=st.floats(1.0, 30.0), ratio=st.floats(1.5, 100.0))
def test_perp_matches_oracle_everywhere(B, L, ratio):
    ref = float(hln_oracle(B, L, L * ratio))
    assert delta_sigma_perp(B, L, L * ratio) == pytest.approx(ref, rel=1e-9, abs=1e-12 * SIGMA_0)


@pytest.mark.parametrize("route", ["numba", "numpy"])
def test_small_field_branch_matches_oracle(route):
    hln = kernels.hln_nb if route == "numba" else kernels.hln_np
    f = characteristic_fields(L0, LPHI0)
    edge = f.B_phi / kernels.HLN_SERIES_X
    b = np.array([1e-300, 1e-12, 0.5 * edge, 0.999 * edge, 1.001 * edge, 2 * edge, 1e-4])
    got, d_l, d_phi = hln(b, f.B_phi, f.B_L)
    for bi, gi in zip(b, got):
        ref = float(hln_oracle(bi, L0, LPHI0) / SIGMA_0)
        assert gi == pytest.approx(ref, rel=1e-8, abs=1e-300)
    assert np.all(np.isfinite(d_l)) and np.all(np.isfinite(d_phi))


def test_perp_limits():
    assert delta_sigma_perp(0.0, L0, LPHI0) == 0.0
    assert abs(delta_sigma_perp(1e-9, L0, LPHI0)) < 1e-12 * SIGMA_0 * 1e3
    b_high = 1e6 * elastic_field(L0)
    sat = SIGMA_0 * math.log(2 * LPHI0**2 / L0**2)
    assert delta_sigma_perp(b_high, L0, LPHI0) == pytest.approx(sat, rel=1e-3)
    assert sat / SIGMA_0 == pytest.approx(6.15, abs=0.01)
    with pytest.raises(DomainError):
        delta_sigma_perp(-1.0, L0, LPHI0)


def test_perp_strictly_increasing():
    b = np.geomspace(1e-4, 1e3, 2000)
    y = delta_sigma_perp(b, L0, LPHI0)
    assert np.all(np.diff(y) > 0)


def test_parallel_examples():
    assert delta_sigma_parallel(0.0, 0.3) == 0.0
    assert np.all(delta_sigma_parallel(np.linspace(0, 9, 10), 0.0) == 0.0)
    assert delta_sigma_parallel(3.0, 1.0) == pytest.approx(SIGMA_0 * math.log(10.0), rel=1e-14)
    with pytest.raises(DomainError):
        delta_sigma_parallel(1.0, -0.1)


@given(p=st.floats(0.05, 200.0), B=st.floats(0.0, 20.0))
def test_tilt_endpoints(p, B):
    g = 0.0077
    assert delta_sigma_tilt(B, 90.0, L0, LPHI0, g, p) == pytest.approx(
        delta_sigma_perp(B, L0, LPHI0), rel=1e-12, abs=1e-300)
    assert delta_sigma_tilt(B, 0.0, L0, LPHI0, g, p) == pytest.approx(
        delta_sigma_parallel(B, g), rel=1e-12, abs=1e-300)
    assert delta_sigma_tilt(B, 90.0, L0, LPHI0, g, p) == delta_sigma_perp(B, L0, LPHI0)


def test_tilt_sweep_monotone_with_flat_ends():
    angles = np.linspace(0, 90, 91)
    y = delta_sigma_tilt(9.0, angles, L0, LPHI0, 0.0077, 1.9)
    assert np.all(np.diff(y) > 0)
    # zero slope at both ends: in-plane below B_phi / B, and at the normal
    rise = y[-1] - y[0]
    ends = delta_sigma_tilt(9.0, np.array([0.0, 0.01, 89.99, 90.0]), L0, LPHI0, 0.0077, 1.9)
    assert ends[1] - ends[0] < 1e-3 * rise
    assert ends[3] - ends[2] < 1e-6 * rise
    with pytest.raises(DomainError):
        delta_sigma_tilt(9.0, 95.0, L0, LPHI0, 0.0077, 1.9)
    with pytest.raises(DomainError):
        delta_sigma_tilt(9.0, 45.0, L0, LPHI0, 0.0077, 0.0)


def test_combine_orientations_large_exponent_and_zeros():
    assert combine_orientations(np.array([3.0]), np.array([4.0]), 2.0)[0] == pytest.approx(5.0)
    assert combine_orientations(np.array([2.0]), np.array([1.0]), 1000.0)[0] == pytest.approx(
        2.0, rel=1e-12)
    assert combine_orientations(np.array([0.0]), np.array([0.0]), 2.0)[0] == 0.0


# derivatives -----------------------------------------------------------------------

@given(lnL=st.floats(math.log(1.0), math.log(30.0)), ratio=st.floats(math.log(2), math.log(80)))
def test_perp_jacobian_matches_central_differences(lnL, ratio):
    x = np.array([lnL, lnL + ratio])
    b = np.ascontiguousarray(np.geomspace(0.01, 9.0, 25))
    y = np.zeros_like(b)
    w = np.ones_like(b)
    _, jac = perp_residuals(x, b, y, w)
    h = 1e-4
    for k in range(2):
        dx = np.zeros(2)
        dx[k] = h
        rp, _ = perp_residuals(x + dx, b, y, w)
        rm, _ = perp_residuals(x - dx, b, y, w)
        fd = (rp - rm) / (2 * h)
        scale = np.max(np.abs(fd))
        assert np.max(np.abs(jac[:, k] - fd)) <= 1e-6 * scale


@given(p=st.floats(0.3, 20.0))
def test_tilt_p_derivative_matches_central_differences(p):
    perp = np.array([1.0, 2.0, 0.5, 0.0, 3.0])
    par = np.array([0.7, 0.1, 0.5, 1.0, 0.0])
    h = 1e-6 * p
    fd = (combine_orientations(perp, par, p + h) - combine_orientations(perp, par, p - h)) / (2 * h)
    an = combine_orientations_dp(perp, par, p)
    assert np.allclose(an, fd, rtol=1e-6, atol=1e-9)


# perpendicular fit ---------------------------------------------------------------------

def test_perp_fit_noise_free_exact():
    fit = fit_perp(perp_trace())
    assert fit.L.value == pytest.approx(L0, rel=1e-6)
    assert fit.L_phi.value == pytest.approx(LPHI0, rel=1e-6)
    assert fit.valid and not fit.warnings
    assert fit.covariance.shape == (2, 2)


def test_perp_fit_converges_as_noise_vanishes():
    # L is the weakly constrained parameter (B_L lies above the sweep), so the
    # check is on scaling and on agreement with the reported errors
    spread, reported = [], []
    for noise in (1e-2, 1e-3, 1e-4):
        errs, sig = [], []
        for seed in range(10):
            fit = fit_perp(perp_trace(noise, seed))
            errs.append(max(abs(fit.L.value / L0 - 1), abs(fit.L_phi.value / LPHI0 - 1)))
            sig.append(fit.L.error / L0)
        spread.append(np.median(errs))
        reported.append(np.median(sig))
    assert spread[0] > 5 * spread[1] > 25 * spread[2]
    for s, r in zip(spread, reported):
        assert s < 3 * r
    assert reported[0] > 5 * reported[1] > 25 * reported[2]


def test_perp_fit_errors_from_jacobian_shrink_with_noise():
    e1 = fit_perp(perp_trace(1e-2, 3)).L.error
    e2 = fit_perp(perp_trace(1e-3, 3)).L.error
    assert e2 < 0.2 * e1


def test_perp_fit_with_point_errors_not_rescaled():
    tr = perp_trace(1e-3, 1)
    err = np.full(tr.value.size, 1e-3 * np.abs(tr.value).max())
    fit = fit_perp(MagnetoTrace("perpendicular", tr.field, tr.value, err))
    assert fit.reduced_chi2 < 3.0
    assert fit.L.value == pytest.approx(L0, rel=0.05)


def test_perp_fit_flags_inverted_lengths():
    # data from L_phi < L: the fit reports the inversion instead of clamping
    tr = perp_trace(fields=np.geomspace(0.01, 9.0, 50), L=30.0, L_phi=20.0)
    fit = fit_perp(tr)
    assert not fit.valid
    assert any("L_phi <= L" in w for w in fit.warnings)
    assert fit.L_phi.value < fit.L.value


def test_perp_fit_input_checks():
    with pytest.raises(InsufficientDataError):
        fit_perp(perp_trace(fields=np.array([0.1, 1.0, 2.0, 9.0])))
    with pytest.raises(FitError):
        fit_perp(perp_trace(fields=np.linspace(1.0, 5.0, 20)))
    with pytest.raises(DomainError):
        fit_perp(MagnetoTrace("parallel", FIELDS, FIELDS))


def test_perp_fit_reports_non_convergence():
    with pytest.raises(FitError) as exc:
        fit_perp(perp_trace(1e-2, 0), max_iter=1, rtol=1e-16)
    assert exc.value.diagnostics["starts"] > 0


def test_perp_fit_permutation_invariant():
    tr = perp_trace(1e-2, 5)
    order = np.random.default_rng(1).permutation(tr.field.size)
    shuffled = MagnetoTrace("perpendicular", tr.field[order], tr.value[order])
    a, b = fit_perp(tr), fit_perp(shuffled)
    assert a.L.value == pytest.approx(b.L.value, rel=1e-8)
    assert a.L_phi.value == pytest.approx(b.L_phi.value, rel=1e-8)


# parallel and tilt fits ---------------------------------------------------------------------

def par_trace(gamma, noise, seed, fields=FIELDS):
    y = delta_sigma_parallel(fields, gamma)
    y = y * (1.0 + noise * np.random.default_rng(seed).standard_normal(fields.size))
    return MagnetoTrace("parallel", fields, y)


@pytest.mark.parametrize("seed", range(10))
def test_parallel_fit_recovers_gamma(seed):
    fit = fit_parallel(par_trace(0.05, 0.01, seed))
    assert fit.value.value == pytest.approx(0.05, rel=0.03)
    assert not fit.flags


def test_parallel_fit_noise_free_and_null():
    assert fit_parallel(par_trace(0.0077, 0.0, 0)).value.value == pytest.approx(0.0077, rel=1e-9)
    null = fit_parallel(MagnetoTrace("parallel", FIELDS, np.zeros_like(FIELDS)))
    assert null.value.value == 0.0 and math.isinf(null.value.error)
    assert null.flags


def test_parallel_fit_permutation_invariant():
    tr = par_trace(0.05, 0.01, 4)
    order = np.random.default_rng(2).permutation(tr.field.size)
    shuffled = MagnetoTrace("parallel", tr.field[order], tr.value[order])
    assert fit_parallel(shuffled).value.value == fit_parallel(tr).value.value


TILT_ANGLES = np.concatenate((np.linspace(0, 3, 31), np.linspace(4, 90, 20)))


def tilt_trace(p, noise, seed, angles=TILT_ANGLES, gamma=0.0077):
    y = delta_sigma_tilt(9.0, angles, L0, LPHI0, gamma, p)
    y = y * (1.0 + noise * np.random.default_rng(seed).standard_normal(angles.size))
    return MagnetoTrace("tilt", np.full(angles.size, 9.0), y, angle=angles)


def test_tilt_fit_noise_free_exact():
    fit = fit_tilt(tilt_trace(2.0, 0.0, 0), L0, LPHI0, 0.0077)
    assert fit.value.value == pytest.approx(2.0, rel=1e-8)


def test_tilt_fit_recovers_p_with_noise():
    ps = [fit_tilt(tilt_trace(2.0, 0.02, s), L0, LPHI0, 0.0077).value.value for s in range(20)]
    assert abs(np.median(ps) - 2.0) < 0.1


def test_tilt_fit_degenerate_sweep():
    with pytest.raises(FitError):
        fit_tilt(tilt_trace(2.0, 0.0, 0, angles=np.full(10, 90.0)), L0, LPHI0, 0.0077)
    with pytest.raises(DomainError):
        MagnetoTrace("tilt", FIELDS, FIELDS)


# Hall, thickness -------------------------------------------------------------------------

def hall_trace(n, noise=0.0, seed=0):
    b = np.linspace(-9, 9, 37)
    r = hall_slope(n) * b
    if noise:
        r = r + noise * np.random.default_rng(seed).standard_normal(b.size)
    return MagnetoTrace("perpendicular", b, r, quantity="R_xy")


def test_hall_slope_and_mobility_examples():
    assert hall_slope(N0) == pytest.approx(4.77, rel=2e-3)
    mu = mobility_from_mean_free_path(L0, N0)
    assert mu == pytest.approx(25.0, rel=0.02)
    assert mean_free_path(N0, mu) == pytest.approx(L0, rel=1e-12)


def test_hall_analysis_recovers_density_and_length():
    mu = mobility_from_mean_free_path(L0, N0)
    sigma = N0 * 1e4 * CONSTANTS.e * mu * 1e-4
    res = hall_analysis(hall_trace(N0, 0.01, 3), Measurement(sigma, 0.01 * sigma))
    assert res.n.value == pytest.approx(N0, rel=1e-3)
    assert res.mu.value == pytest.approx(mu, rel=1e-3)
    assert res.L.value == pytest.approx(L0, rel=1e-3)
    assert res.L.value == pytest.approx(mean_free_path(res.n.value, res.mu.value), rel=1e-12)
    assert res.n.error > 0 and res.L.error > 0
    assert res.intercept.value == pytest.approx(0.0, abs=0.01)


def test_hall_wrong_sign_raises():
    tr = hall_trace(N0)
    flipped = MagnetoTrace("perpendicular", tr.field, -tr.value, quantity="R_xy")
    with pytest.raises(HallSignError):
        hall_analysis(flipped, 1e-3)
    with pytest.raises(DomainError):
        hall_analysis(tr, 0.0)
    with pytest.raises(DomainError):
        HallResult(Measurement(-1, 0), Measurement(1, 0), Measurement(1, 0), Measurement(1, 0),
                   Measurement(1, 0), Measurement(0, 0))


def test_thickness_units_against_nanometre_arithmetic():
    # hbar / e = 658.2 T nm^2 and n = 1.31 nm^-2; the SI route must agree
    gamma = 0.0077
    flux = CONSTANTS.hbar / CONSTANTS.e * 1e18 / LPHI0  # T nm
    t = (1 / (4 * math.pi)) ** 0.25 * math.sqrt(flux**2 * math.sqrt(N0 * 1e-14) * L0 * gamma)
    assert thickness(LPHI0, L0, N0, gamma).value == pytest.approx(t, rel=1e-12)
    assert t == pytest.approx(0.98, rel=0.01)


@given(k=st.floats(0.1, 10.0))
def test_thickness_power_laws(k):
    base = thickness(LPHI0, L0, N0, 0.0077).value
    assert thickness(k * LPHI0, L0, N0, 0.0077).value == pytest.approx(base / k, rel=1e-12)
    assert thickness(LPHI0, k * L0, N0, 0.0077).value == pytest.approx(base * k**0.5, rel=1e-12)
    assert thickness(LPHI0, L0, k * N0, 0.0077).value == pytest.approx(base * k**0.25, rel=1e-12)
    assert thickness(LPHI0, L0, N0, k * 0.0077).value == pytest.approx(base * k**0.5, rel=1e-12)


def test_thickness_examples():
    assert thickness(LPHI0, L0, N0, 0.0).value == 0.0
    g = gamma_from_thickness(0.98, LPHI0, L0, N0)
    assert thickness(LPHI0, L0, N0, g).value == pytest.approx(0.98, rel=1e-9)
    t = thickness((LPHI0, 0.4), (L0, 0.1), (N0, 0.03e14), (g, 0.02 * g))
    rel = math.sqrt((0.4 / LPHI0) ** 2 + (0.25 * 0.03 / 1.31) ** 2
                    + (0.5 * 0.1 / L0) ** 2 + (0.5 * 0.02) ** 2)
    assert t.error / t.value == pytest.approx(rel, rel=1e-12)
    for bad in ((0.0, L0, N0, g), (LPHI0, -1.0, N0, g), (LPHI0, L0, 0.0, g), (LPHI0, L0, N0, -g)):
        with pytest.raises(DomainError):
            thickness(*bad)


def test_wl_params_constraints():
    w = WlParams(L=(4.8, 0.1), L_phi=Measurement(73.6, 0.4), gamma=0.0077)
    assert w.valid is True and w.L.error == 0.1 and w.gamma.error == 0.0
    assert WlParams(L=80.0, L_phi=73.6).valid is False
    assert WlParams(gamma=0.1).valid is None
    for bad in (dict(L=0.0), dict(L_phi=-1.0), dict(gamma=-0.1), dict(p=0.0), dict(t=-1.0)):
        with pytest.raises(DomainError):
            WlParams(**bad)


def test_magneto_trace_validation():
    with pytest.raises(DomainError):
        MagnetoTrace("diagonal", FIELDS, FIELDS)
    with pytest.raises(DomainError):
        MagnetoTrace("perpendicular", FIELDS, FIELDS[:-1])
    with pytest.raises(DomainError):
        MagnetoTrace("perpendicular", [0.0, np.inf], [0.0, 1.0])
    with pytest.raises(DomainError):
        MagnetoTrace("perpendicular", FIELDS, FIELDS, error=np.zeros_like(FIELDS))
    with pytest.raises(InsufficientDataError):
        fit_parallel(MagnetoTrace("parallel", [1, 2, 3, 4], [1, 2, 3, 4]))
    assert fitting.MIN_POINTS == 5


# comparison ----------------------------------------------------------------------------

def _run(n, L, L_phi, p, t, mu=None):
    n = Measurement(*n)
    L = Measurement(*L)
    mu = mu or Measurement(mobility_from_mean_free_path(L.value, n.value), 1.0)
    hall = HallResult(n, mu, L, Measurement(1e-3, 0.0), Measurement(hall_slope(n.value), 0.0),
                      Measurement(0.0, 0.0))
    return RunSummary(hall, WlParams(L=L, L_phi=L_phi, p=p, t=t))


BEFORE = dict(n=(1.31e14, 0.03e14), L=(4.8, 0.1), L_phi=(73.6, 0.4), p=(1.9, 0.3),
              t=(0.98, 0.02))
AFTER = dict(n=(1.27e14, 0.06e14), L=(4.9, 0.2), L_phi=(74.2, 0.3), p=(2.3, 0.5),
             t=(0.97, 0.02))


def test_compare_identical_runs():
    rep = compare_runs(_run(**BEFORE), _run(**BEFORE))
    assert all(z == 0.0 for z in rep.z_scores.values())
    assert rep.consistent and rep.thickness_difference_angstrom == 0.0
    assert rep.gaps == ("gamma",)


def test_compare_before_after_values_consistent():
    rep = compare_runs(_run(**BEFORE), _run(**AFTER))
    assert rep.consistent
    assert max(rep.z_scores.values()) < 2.0
    assert rep.thickness_difference_angstrom == pytest.approx(0.1, abs=1e-12)
    assert rep.thickness_difference_angstrom < rep.thickness_precision_angstrom
    assert rep.verdict().startswith("unchanged within 2 sigma")


def test_compare_flags_changes_and_gaps():
    after = dict(AFTER, L_phi=(90.0, 0.3))
    rep = compare_runs(_run(**BEFORE), _run(**after))
    assert not rep.consistent and not rep.entry("L_phi").consistent
    assert "L_phi" in rep.verdict()
    partial = compare_runs({"hall": _run(**BEFORE).hall}, _run(**AFTER))
    assert set(partial.gaps) >= {"L_phi", "p", "t"}
    assert partial.thickness_difference_angstrom is None
    with pytest.raises(DomainError):
        compare_runs(_run(**BEFORE), _run(**AFTER), k=0)
