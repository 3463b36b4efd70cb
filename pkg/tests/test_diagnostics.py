import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lucie3d import diagnostics as dg
from lucie3d.data import FieldContainer, VarInfo, read_container
from lucie3d.forcing import DAY_SECONDS, STEPS_PER_YEAR
from lucie3d.synth import SynthConfig, generate_synthetic_climate

SPD = 4


def zonal_container(data, t_step=21600):
    vs = [VarInfo("T", 2, "prognostic"), VarInfo("U", 2, "prognostic"), VarInfo("SH", 2, "prognostic")]
    return FieldContainer(data.shape[2], data.shape[3], (0.3, 0.9), 0, t_step, vs, data)


# ------------------------------------------------------------------ maps


def test_climatology_bias_examples():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((5, 6, 6, 12))
    zero = dg.climatology_bias(zonal_container(ref), zonal_container(ref))
    assert all(np.all(m.values == 0) for m in zero.values())
    warm = ref.copy()
    warm[:, 1] += 1.0
    bias = dg.climatology_bias(zonal_container(warm), zonal_container(ref))["T"].values
    assert np.allclose(bias[1], 1.0, atol=1e-12) and np.allclose(bias[0], 0.0, atol=1e-12)


def test_climatology_bias_nested_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 4, 6, 6, 12))
    got = dg.climatology_bias(zonal_container(a), zonal_container(b), ("U",))["U"]
    T, _, nlat, nlon = a.shape
    for lev in range(2):
        for i in range(nlat):
            s = 0.0
            for t in range(T):
                for j in range(nlon):
                    s += a[t, 2 + lev, i, j] - b[t, 2 + lev, i, j]
            assert abs(got.values[lev, i] - s / (T * nlon)) < 1e-12


def test_climatology_bias_span_mismatch():
    a = np.zeros((4, 6, 6, 12))
    with pytest.raises(dg.DiagnosticError):
        dg.climatology_bias(zonal_container(a), zonal_container(a[:3]))
    with pytest.raises(dg.DiagnosticError):
        dg.climatology_bias(zonal_container(a), zonal_container(a, t_step=3600))


def test_climate_change_map_rules():
    c = zonal_container(np.random.default_rng(2).standard_normal((10, 6, 6, 12)))
    assert np.all(dg.climate_change_map(c, "T", (0, 5), (0, 5)).values == 0)
    with pytest.raises(dg.DiagnosticError):
        dg.climate_change_map(c, "T", (0, 6), (4, 10))
    with pytest.raises(dg.DiagnosticError):
        dg.climate_change_map(c, "T", (0, 5), (5, 11))


@pytest.fixture(scope="module")
def ramp(t3):
    cfg = SynthConfig(seed=4, years=3, noise_amplitude=0.0, include_sst=False)
    return generate_synthetic_climate(cfg, t3)


def test_climate_change_on_ramp(ramp):
    y = STEPS_PER_YEAR
    m = dg.climate_change_map(ramp, "T", (0, y), (2 * y, 3 * y)).values
    dco2 = 2 * 60.0 / 3  # ppm between the span midpoints
    assert np.allclose(m[7], 0.01 * dco2, atol=1e-6)
    assert np.allclose(m[0], -2.0 * 0.01 * dco2, atol=1e-6)
    assert np.all(m[4:] > 0) and np.all(m[:2] < 0)


# ------------------------------------------------------------------ trends


def test_trend_examples():
    t = np.arange(7) * 0.5  # decades
    f = dg.fit_trend(2 * t, times=t * dg.DECADE_SECONDS)
    assert abs(f.slope - 2) < 1e-12 and f.residual_variance < 1e-24
    assert dg.fit_trend(np.full(5, 3.0), step_seconds=21600).slope == 0.0
    with pytest.raises(dg.DiagnosticError):
        dg.fit_trend([1.0], step_seconds=1)
    with pytest.raises(dg.DiagnosticError):
        dg.fit_trend([1.0, 2.0], times=[5.0, 5.0])


def test_trend_matches_normal_equations():
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 3, 40))
    y = 0.7 * t - 2 + 0.1 * rng.standard_normal(40)
    f = dg.fit_trend(y, times=t * dg.DECADE_SECONDS)
    A = np.stack([np.ones_like(t), t], axis=1)
    intercept, slope = np.linalg.solve(A.T @ A, A.T @ y)
    assert abs(f.slope - slope) < 1e-12 and abs(f.intercept - intercept) < 1e-12
    resid = y - (f.intercept + f.slope * t)
    assert abs(resid.sum()) < 1e-10 and abs(resid @ t) < 1e-10


@given(seed=st.integers(0, 1000), shift=st.floats(-1e3, 1e3))
def test_trend_shift_invariance(seed, shift):
    y = np.random.default_rng(seed).standard_normal(30)
    a = dg.fit_trend(y, step_seconds=21600)
    b = dg.fit_trend(y + shift, step_seconds=21600)
    assert abs(a.slope - b.slope) < 1e-8 * max(1.0, abs(a.slope))


# ------------------------------------------------------------------ space-time spectra


def wave(lats, nlon, k, freq, days=360, symmetric=True, width=20.0):
    t = np.arange(SPD * days) / SPD
    lam = np.arange(nlon) * 2 * np.pi / nlon
    g = np.exp(-((lats / width) ** 2))
    if not symmetric:
        g = np.sign(lats) * g
    return g[None, :, None] * np.cos(k * lam[None, None, :] - 2 * np.pi * freq * t[:, None, None])


@pytest.fixture(scope="module")
def lats24():
    return dg.gaussian_lats(24)[0]


def test_wk_planted_waves(lats24):
    spec = dg.wheeler_kiladis(wave(lats24, 48, 3, 0.1), lats24, SPD)
    k, f = spec.peak()
    assert k == 3 and abs(f - 0.1) <= 0.5 / 96
    assert spec.wavenumbers.min() == -15 and spec.wavenumbers.max() == 15
    assert np.all(spec.symmetric >= 0)
    k, f = dg.wheeler_kiladis(wave(lats24, 48, -3, 0.1), lats24, SPD).peak()
    assert k == -3 and abs(f - 0.1) <= 0.5 / 96


def test_wk_antisymmetric_only_in_antisymmetric(lats24):
    spec = dg.wheeler_kiladis(wave(lats24, 48, 3, 0.1, symmetric=False), lats24, SPD)
    peak = spec.antisymmetric.max()
    i, j = np.unravel_index(np.argmax(spec.antisymmetric), spec.antisymmetric.shape)
    assert spec.symmetric[i, j] < 1e-10 * peak
    assert spec.peak("antisymmetric")[0] == 3


def test_wk_power_additive_for_separated_waves(lats24):
    a = wave(lats24, 48, 3, 0.1)
    b = 0.5 * wave(lats24, 48, -5, 0.25)
    sa = dg.wheeler_kiladis(a, lats24, SPD).symmetric
    sb = dg.wheeler_kiladis(b, lats24, SPD).symmetric
    sab = dg.wheeler_kiladis(a + b, lats24, SPD).symmetric
    assert np.max(np.abs(sab - sa - sb)) < 1e-8 * sab.max()


@given(seed=st.integers(0, 1000), nt=st.integers(8, 40), nlon=st.integers(4, 16))
def test_periodogram_conserves_power(seed, nt, nlon):
    seg = np.random.default_rng(seed).standard_normal((nt, nlon))
    _, _, p = dg.space_time_periodogram(seg)
    assert np.all(p >= 0)
    assert abs(p.sum() - np.mean(seg**2)) < 1e-8


def test_wk_errors_and_background(lats24):
    f = wave(lats24, 48, 3, 0.1, days=100)
    with pytest.raises(dg.DiagnosticError):
        dg.wheeler_kiladis(f, lats24, SPD)  # fewer than two segments
    with pytest.raises(dg.DiagnosticError):
        dg.wheeler_kiladis(wave(lats24, 48, 3, 0.1), lats24, SPD, lat_band=(80, 90))
    spec = dg.wheeler_kiladis(wave(lats24, 48, 3, 0.1), lats24, SPD)
    assert spec.background.shape == spec.symmetric.shape and np.all(spec.background > 0)
    assert spec.normalized().shape == spec.symmetric.shape
    x = np.zeros(9)
    x[4] = 1
    assert np.array_equal(dg.smooth_121(x, 0, 1), [0, 0, 0, 0.25, 0.5, 0.25, 0, 0, 0])


def test_dispersion_curves():
    curves = dg.dispersion_curves()
    k, f = curves[("kelvin", 25)]
    c = math.sqrt(9.81 * 25)
    assert np.all(k >= 0)
    assert abs(f[-1] - c * 15 / 6.371e6 * 86400 / (2 * math.pi)) < 1e-3
    assert set(w for w, _ in curves) == {"kelvin", "er1", "mrg", "eig0", "ig1"}


# ------------------------------------------------------------------ EOFs


def djf_times(seasons=3):
    days = [d for y in range(seasons + 1) for d in range(360 * y, 360 * y + 360)
            if (d % 360) // 30 + 1 in (12, 1, 2)]
    return np.array(days, dtype=np.int64) * DAY_SECONDS


@pytest.fixture(scope="module")
def eof_setup():
    lats = dg.gaussian_lats(24)[0]
    times = djf_times()
    rows = lats >= 20
    wt = np.sqrt(np.cos(np.radians(lats[rows])))[:, None]
    return lats, times, rows, wt


def embed(lats, rows, pattern_rows):
    full = np.zeros((len(lats), pattern_rows.shape[1]))
    full[rows] = pattern_rows
    return full


def test_eof_single_mode(eof_setup):
    lats, times, rows, wt = eof_setup
    rng = np.random.default_rng(0)
    p = rng.standard_normal((rows.sum(), 16))
    a = rng.standard_normal(len(times))
    field = a[:, None, None] * embed(lats, rows, p)[None]
    r = dg.leading_eof(field, times, lats, deseasonalize="mean")
    corr = np.corrcoef(r.pattern.ravel(), p.ravel())[0, 1]
    assert abs(abs(corr) - 1) < 1e-10
    assert abs(r.explained - 1) < 1e-10
    assert abs(r.explained_all.sum() - 1) < 1e-10
    # unit norm under the cos-latitude weighting
    assert abs(np.sum((r.pattern * wt) ** 2) - 1) < 1e-10


def test_eof_variance_ratio_and_sign(eof_setup):
    lats, times, rows, wt = eof_setup
    n = len(times)
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((rows.sum() * 8, 2)))
    p1 = q[:, 0].reshape(-1, 8) / wt
    p2 = q[:, 1].reshape(-1, 8) / wt
    ph = 2 * np.pi * np.arange(n) / n
    a1, a2 = 2 * np.cos(ph), np.sin(ph)
    field = a1[:, None, None] * embed(lats, rows, p1) + a2[:, None, None] * embed(lats, rows, p2)
    r = dg.leading_eof(field, times, lats, deseasonalize="mean")
    assert abs(r.explained - 0.8) < 1e-10
    assert abs(r.explained_all.sum() - 1) < 1e-10
    flipped = dg.leading_eof(-field, times, lats, deseasonalize="mean")
    assert np.allclose(flipped.pattern, r.pattern, atol=1e-10)
    polar = r.lats >= 60
    assert r.pattern[polar].mean() < 0


def test_eof_degenerate_and_errors(eof_setup):
    lats, times, rows, wt = eof_setup
    n = len(times)
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.standard_normal((rows.sum() * 8, 2)))
    ph = 2 * np.pi * np.arange(n) / n
    p1, p2 = (q[:, i].reshape(-1, 8) / wt for i in range(2))
    field = np.cos(ph)[:, None, None] * embed(lats, rows, p1) + np.sin(ph)[:, None, None] * embed(lats, rows, p2)
    assert dg.leading_eof(field, times, lats, deseasonalize="mean").degenerate
    with pytest.raises(dg.DiagnosticError):
        dg.leading_eof(field[:80], times[:80], lats)  # one season only
    with pytest.raises(dg.DiagnosticError):
        dg.leading_eof(field, times, lats, hemisphere="east")
    with pytest.raises(dg.DiagnosticError):
        dg.leading_eof(np.zeros_like(field), times, lats)


def test_season_years_attach_december_to_next_year():
    t = np.array([330, 359, 360, 389, 419], dtype=np.int64) * DAY_SECONDS
    mask, sy = dg.season_years(t)
    assert list(mask) == [True, True, True, True, True]
    assert list(sy) == [1, 1, 1, 1, 1]


# ------------------------------------------------------------------ SSW


def test_find_reversals_examples():
    months = np.full(200, 1)
    assert dg.find_reversals(np.full(200, 10.0), months) == []
    u = np.full(60, 10.0)
    u[25:31] = -5.0
    assert dg.find_reversals(u, np.full(60, 1)) == [(25, 6)]
    single = np.full(60, 10.0)
    single[30] = -1.0
    assert dg.find_reversals(single, np.full(60, 1)) == []
    assert dg.find_reversals(u, np.full(60, 7)) == []
    short = np.full(60, 10.0)
    short[5:9] = -5.0
    assert dg.find_reversals(short, np.full(60, 1)) == []


def test_ssw_end_to_end(lats24):
    days = 720
    u = np.full(days, 10.0)
    onsets = [35, 395]  # Feb 6 of the first and second year
    for d in onsets:
        u[d : d + 8] = -5.0
    t_idx = np.full(days, 200.0)
    t_idx[40] = 230.0
    steps = np.repeat(np.arange(days), SPD)
    nlon = 8
    u_field = np.broadcast_to(u[steps][:, None, None], (days * SPD, 24, nlon))
    t_field = np.broadcast_to(t_idx[steps][:, None, None], (days * SPD, 24, nlon))
    times = np.arange(days * SPD) * (DAY_SECONDS // SPD)
    r = dg.ssw_diagnostics(u_field, t_field, times, lats24, SPD)
    assert [e.onset for e in r.events] == onsets
    assert all(e.duration == 8 for e in r.events)
    assert r.events[0].peak_temperature_anomaly == 15.0
    assert r.flags == ()
    lo, hi = r.envelope("u")
    assert lo.shape == (360,) and np.all(lo <= hi)


def test_ssw_constant_index_and_short_run(lats24):
    n = 100 * SPD
    r = dg.ssw_diagnostics(np.full((n, 24, 4), 10.0), np.full((n, 24, 4), 200.0),
                           np.arange(n) * 21600, lats24, SPD)
    assert r.events == [] and "short-for-climatology" in r.flags
    with pytest.raises(dg.DiagnosticError):
        r.envelope()


def test_ssw_envelope_coverage():
    rng = np.random.default_rng(5)
    years = 40
    seasonal = 20 * np.cos(2 * np.pi * np.arange(360) / 360)
    daily = np.tile(seasonal, years) + 3 * rng.standard_normal(360 * years)
    m, s = dg.doy_climatology(daily)
    doy = np.arange(len(daily)) % 360
    inside = np.mean(np.abs(daily - m[doy]) <= 2 * s[doy])
    n = len(daily)
    # binomial tolerance around the nominal 95.45%
    assert abs(inside - 0.9545) < 4 * math.sqrt(0.9545 * 0.0455 / n) + 0.005


# ------------------------------------------------------------------ PDFs


def test_log_pdf_examples():
    r = dg.log_pdf(np.random.default_rng(0).uniform(1.0, 1.5, 1000), [0.0, 1.0, 1.5, 2.0])
    assert r.log_density[1] == math.log10(2.0)
    assert r.flags == ("single-bin",)
    with pytest.raises(dg.DiagnosticError):
        dg.log_pdf([], [0, 1])
    with pytest.raises(dg.DiagnosticError):
        dg.log_pdf([5.0], [0, 1])
    with pytest.raises(dg.DiagnosticError):
        dg.log_pdf([0.5], [1, 0])


def test_log_pdf_gaussian():
    x = np.random.default_rng(1).standard_normal(1_000_000)
    edges = np.linspace(-5.025, 5.025, 202)
    r = dg.log_pdf(x, edges)
    i = np.argmin(np.abs(r.centers))
    assert abs(r.log_density[i] - math.log10(1 / math.sqrt(2 * math.pi))) < 0.02
    assert abs(np.sum(10.0 ** r.log_density * np.diff(edges)) - 1) < 1e-10


def test_field_pdf_uses_quadrature_weights():
    lats, w = dg.gaussian_lats(6)
    field = np.zeros((2, 6, 4))
    field[:, 3:] = 1.0  # northern half
    r = dg.field_log_pdf(field, [-0.5, 0.5, 1.5])
    assert np.allclose(10.0 ** r.log_density, [0.5, 0.5], atol=1e-12)


# ------------------------------------------------------------------ reports


def test_table_round_trip(tmp_path):
    dg.write_table(tmp_path / "t.txt", "trend", ["channel", "slope"], [["T_7", 0.25]], {"preset": "x"})
    kind, meta, cols, rows = dg.read_table(tmp_path / "t.txt")
    assert (kind, meta, cols, rows) == ("trend", {"preset": "x"}, ["channel", "slope"], [["T_7", "0.25"]])
    with pytest.raises(dg.DiagnosticError):
        dg.write_table(tmp_path / "u.txt", "x", ["a"], [[1, 2]])
    (tmp_path / "bad.txt").write_text("hello\n")
    with pytest.raises(dg.DiagnosticError):
        dg.read_table(tmp_path / "bad.txt")


def test_zonal_maps_container(tmp_path):
    maps = {"T": dg.ZonalMap("T", np.arange(12.0).reshape(2, 6), np.ones((2, 6)))}
    dg.write_zonal_maps(tmp_path / "m.luc3", maps, (0.3, 0.9), 6)
    c = read_container(tmp_path / "m.luc3")
    assert c.channel_names == ["T_0", "T_1", "T_reference_0", "T_reference_1"]
    assert np.array_equal(c.variable("T")[0, :, :, 0], maps["T"].values)


def test_diagnostics_are_pure(lats24):
    f = wave(lats24, 16, 2, 0.2) + 0.1 * np.random.default_rng(0).standard_normal((1440, 24, 16))
    a = dg.wheeler_kiladis(f, lats24, SPD)
    b = dg.wheeler_kiladis(f, lats24, SPD)
    assert a.symmetric.tobytes() == b.symmetric.tobytes()
