import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lucie3d.data import read_container
from lucie3d.forcing import (
    LAND_SST,
    STEPS_PER_YEAR,
    Co2Series,
    ForcingError,
    ForcingSeries,
    SmoothingNoOp,
    bias_sst,
    daily_mean_insolation,
    interpolate_co2,
    linear_co2_series,
    smooth_sst,
    tisr_field,
)
from lucie3d.layout import FieldSet
from lucie3d.rollout import (
    RolloutConfig,
    RolloutError,
    co2_series_from_container,
    euler_step,
    forcings_from_container,
    initial_state,
    run_rollout,
)

MONTH = 30 * 86400


def fs(values):
    return FieldSet(tuple(f"c{i}" for i in range(values.shape[0])), values)


def test_euler_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4, 5))
    assert np.array_equal(euler_step(fs(x), fs(np.zeros_like(x)), 21600).values, x)
    c = np.full_like(x, 0.25)
    assert np.array_equal(euler_step(fs(x), fs(c), 1.0).values, x + 0.25)
    half = euler_step(euler_step(fs(x), fs(c), 0.5), fs(c), 0.5).values
    assert np.allclose(half, euler_step(fs(x), fs(c), 1.0).values, atol=1e-15)
    with pytest.raises(RolloutError):
        euler_step(fs(x), fs(np.full_like(x, np.inf)), 1.0)
    with pytest.raises(ValueError):
        euler_step(fs(x), FieldSet(("a", "b", "c"), x), 1.0)


def test_interpolate_co2_examples():
    s = Co2Series((340.0, 342.0, 345.0))
    assert interpolate_co2(s, 0.5 * MONTH) == 340.0
    assert interpolate_co2(s, 1.5 * MONTH) == 342.0
    assert interpolate_co2(s, 1.0 * MONTH) == 341.0
    with pytest.raises(ForcingError):
        interpolate_co2(s, 0.4 * MONTH)
    with pytest.raises(ForcingError):
        interpolate_co2(s, 2.6 * MONTH)


@given(t=st.floats(0.5 * MONTH, 23.5 * MONTH), seed=st.integers(0, 1000))
def test_interpolate_co2_matches_closed_form(t, seed):
    vals = 340 + np.cumsum(np.random.default_rng(seed).uniform(0, 1, 24))
    s = Co2Series(tuple(vals))
    # closed form over the anchor times
    anchors = (np.arange(24) + 0.5) * MONTH
    assert abs(interpolate_co2(s, t) - np.interp(t, anchors, vals)) < 1e-12


def test_linear_series_is_exact():
    s = linear_co2_series(340.0, 400.0, 2)
    for t in np.linspace(0, 2 * 360 * 86400, 17):
        assert abs(interpolate_co2(s, t) - (340.0 + 60.0 * t / (720 * 86400))) < 1e-10


def test_insolation_sanity(t7):
    q = daily_mean_insolation(np.array([0.0]), 80.0)[0]
    assert abs(q - 1361 / math.pi) < 1e-9
    polar_night = daily_mean_insolation(np.array([-89.0]), 170.0)[0]
    assert polar_night == 0.0
    f = tisr_field(t7, 0.0)
    assert f.shape == t7.shape and np.all(f >= 0)


def test_smooth_uniform_all_ocean():
    sst = np.full((6, 12), 290.0)
    out = smooth_sst(sst, np.zeros((6, 12)))
    assert np.max(np.abs(out - 290.0)) < 1e-12


def test_smooth_keeps_inland_points():
    mask = np.ones((20, 40))
    mask[:, :6] = 0.0
    sst = np.random.default_rng(0).uniform(270, 300, mask.shape)
    out = smooth_sst(sst, mask, kernel_sigma=1.0)
    # footprint radius 4 points: columns 10..35 see no ocean
    assert np.array_equal(out[:, 10:36], sst[:, 10:36])


def brute_force(sst, mask, sigma):
    r = int(math.floor(4 * sigma))
    nlat, nlon = sst.shape
    ocean = 1 - mask
    num = np.zeros_like(sst)
    den = np.zeros_like(sst)
    for i in range(nlat):
        for j in range(nlon):
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    w = math.exp(-0.5 * (di / sigma) ** 2) * math.exp(-0.5 * (dj / sigma) ** 2)
                    ii = min(max(i + di, 0), nlat - 1)
                    jj = (j + dj) % nlon
                    num[i, j] += w * sst[ii, jj] * ocean[ii, jj]
                    den[i, j] += w * ocean[ii, jj]
    return np.where(den > 1e-12, num / np.maximum(den, 1e-12), sst)


def test_smooth_step_profile_matches_brute_force():
    mask = np.zeros((5, 16))
    mask[:, 8:] = 1.0
    sst = np.where(mask > 0, LAND_SST, 295.0) + np.linspace(0, 1, 16)[None, :]
    out = smooth_sst(sst, mask, kernel_sigma=1.5)
    assert np.max(np.abs(out - brute_force(sst, mask, 1.5))) < 1e-10


def test_smooth_errors_and_noop():
    with pytest.raises(ForcingError):
        smooth_sst(np.zeros((3, 4)), np.zeros((3, 5)))
    with pytest.raises(ForcingError):
        smooth_sst(np.zeros((3, 4)), np.full((3, 4), 2.0))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        x = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(smooth_sst(x, np.ones((3, 4))), x)
    assert any(issubclass(i.category, SmoothingNoOp) for i in w)


def test_bias_only_over_ocean():
    mask = np.array([[0.0, 1.0]])
    assert np.array_equal(bias_sst(np.array([[280.0, 270.0]]), mask, 2.0), [[282.0, 270.0]])


@given(step=st.integers(0, 5 * STEPS_PER_YEAR))
def test_stationary_co2_is_periodic(step):
    from lucie3d.grid import build_grid

    g = build_grid(1, nlat=2, nlon=4)
    f = ForcingSeries(g, linear_co2_series(340, 400, 3), np.zeros(g.shape), np.zeros(g.shape),
                      co2_stationary_year=1)
    assert f.co2_at(step) == f.co2_at(step + STEPS_PER_YEAR)
    assert 360 < f.co2_at(step) < 380


def test_co2_recovered_from_container(year_t3):
    s = co2_series_from_container(year_t3)
    co2 = year_t3.channel("co2")[:, 0, 0]
    for n in (0, 1, 700, year_t3.t_count - 1):
        assert abs(interpolate_co2(s, float(year_t3.times()[n])) - co2[n]) < 1e-9


def cfg(**kw):
    return RolloutConfig(**{"horizon": 8, **kw})


def test_rollout_config_validation():
    with pytest.raises(ValueError):
        RolloutConfig(horizon=-1)
    with pytest.raises(ValueError):
        RolloutConfig(horizon=1, dt=3600)
    with pytest.raises(ValueError):
        RolloutConfig(horizon=1, co2_mode="stationary")
    with pytest.raises(ValueError):
        RolloutConfig(horizon=1, sst_mode="warm")
    with pytest.raises(ValueError):
        RolloutConfig(horizon=1, init_mode="random")


def setup(year_t3, ckpt, rc):
    f = forcings_from_container(year_t3, ckpt.grid, rc)
    return initial_state(year_t3, ckpt.layout, rc), f


def test_zero_model_keeps_state(year_t3, make_ckpt):
    ck = make_ckpt(zero=True)
    rc = cfg()
    init, f = setup(year_t3, ck, rc)
    traj = run_rollout(ck, init, f, rc)
    assert traj.t_count == 9
    idx = [traj.channel_index(n) for n in ck.layout.prognostic]
    for k in range(9):
        assert np.array_equal(traj.data[k, idx], init.values)


def test_horizon_zero(year_t3, make_ckpt):
    ck = make_ckpt()
    rc = cfg(horizon=0)
    init, f = setup(year_t3, ck, rc)
    traj = run_rollout(ck, init, f, rc)
    assert traj.t_count == 1
    assert np.array_equal(traj.data[0, : ck.layout.n_prognostic], init.values)


def test_rollout_deterministic_and_streamed(year_t3, make_ckpt, tmp_path):
    ck = make_ckpt(seed=5)
    rc = cfg(horizon=6, stride=2)
    init, f = setup(year_t3, ck, rc)
    a = run_rollout(ck, init, f, rc)
    b = run_rollout(ck, init, f, rc, tmp_path / "t.luc3")
    assert a.t_count == 4 and a.t_step == 2 * 21600
    assert np.array_equal(a.data, np.asarray(b.data))
    assert np.array_equal(np.asarray(read_container(tmp_path / "t.luc3").data), a.data)


def test_euler_exactness_from_trajectory(year_t3, make_ckpt):
    from lucie3d import sfno

    ck = make_ckpt(seed=2)
    rc = cfg(horizon=3)
    init, f = setup(year_t3, ck, rc)
    traj = run_rollout(ck, init, f, rc)
    norm = ck.normalizer()
    npro = ck.layout.n_prognostic
    for k in range(3):
        x = traj.data[k, :npro]
        forc = f.at(k)
        inp = norm.normalize_inputs(np.concatenate([x] + [forc[n][None] for n in ck.layout.forcing]))
        y = sfno.forward_array(ck.params, inp, ck.config, ck.grid)
        tend = norm.tendency_per_second(y[:npro])
        recon = (traj.data[k + 1, :npro] - x) / rc.dt
        assert np.max(np.abs(recon - tend) / np.maximum(np.abs(tend), 1e-30)) < 1e-6
        assert np.max(np.abs(recon - tend)) < 1e-12 * max(1.0, np.max(np.abs(x))) / rc.dt * 1e3
        assert np.all(traj.channel("TP")[k + 1] >= 0)


def test_stationary_rollout_repeats_co2(year_t3, make_ckpt):
    ck = make_ckpt(zero=True)
    rc = cfg(horizon=STEPS_PER_YEAR + 4, co2_mode="stationary", co2_year=0, stride=4)
    init, f = setup(year_t3, ck, rc)
    traj = run_rollout(ck, init, f, rc)
    co2 = traj.channel("co2")[:, 0, 0]
    per = STEPS_PER_YEAR // 4
    assert np.array_equal(co2[: len(co2) - per], co2[per:])


def test_init_modes(year_t3, make_ckpt):
    ck = make_ckpt()
    z = initial_state(year_t3, ck.layout, cfg(init_mode="zero"))
    assert np.all(z.values == 0)
    c = initial_state(year_t3, ck.layout, cfg(init_mode="climatology"))
    idx = [year_t3.channel_index(n) for n in ck.layout.prognostic]
    assert np.allclose(c.values, year_t3.data[:, idx].mean(axis=0), atol=1e-10)
    s = initial_state(year_t3, ck.layout, cfg(init_index=7))
    assert np.array_equal(s.values, year_t3.data[7, idx])


def test_sst_modes(year_t3, make_ckpt):
    ck = make_ckpt(use_sst=True)
    mask = year_t3.channel("land_sea_mask")[0]
    obs = year_t3.channel("sst")
    for mode, delta in (("observed", 0.0), ("biased", 2.0), ("smoothed", 4.0)):
        rc = cfg(horizon=2, sst_mode=mode, sst_delta=delta)
        init, f = setup(year_t3, ck, rc)
        traj = run_rollout(ck, init, f, rc)
        got = traj.channel("sst")[1]
        expect = bias_sst(obs[1], mask, delta)
        if mode == "smoothed":
            expect = smooth_sst(expect, mask)
        assert np.allclose(got, expect, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rollout_errors(year_t3, make_ckpt):
    plain, sst = make_ckpt(), make_ckpt(use_sst=True)
    rc = cfg(sst_mode="observed")
    init, f = setup(year_t3, sst, rc)
    with pytest.raises(RolloutError):
        run_rollout(plain, init, f, rc)
    with pytest.raises(RolloutError):
        run_rollout(sst, init, *setup(year_t3, sst, cfg())[1:], cfg())
    long = cfg(horizon=year_t3.t_count + 200)  # past the padded CO2 month
    init, f = setup(year_t3, plain, long)
    with pytest.raises(ForcingError):
        run_rollout(plain, init, f, long)
    bad = FieldSet(init.names, np.full_like(init.values, np.nan))
    with pytest.raises(RolloutError):
        run_rollout(plain, bad, f, cfg())
    blow = make_ckpt(seed=1)
    blow.params["decoder.0.w"] = blow.params["decoder.0.w"] * 1e200
    with pytest.raises((RolloutError, FloatingPointError)):
        run_rollout(blow, init, f, cfg())
