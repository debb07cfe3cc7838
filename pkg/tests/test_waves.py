import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softwave import _kernels as K
from softwave.waves import (
    G,
    HS_GRID,
    WAVE_CASES,
    SeaState,
    WaveComponent,
    calm_sea,
    dispersion_solve,
    elevation,
    jonswap_spectrum,
    load_sea,
    particle_acceleration,
    particle_velocity,
    read_spectrum,
    synthesize_jonswap,
    write_spectrum,
)


def single(A=1.0, T=8.0, phi=0.0, d=20.0):
    w = 2 * np.pi / T
    return SeaState((WaveComponent(A, T, phi, w, dispersion_solve(w, d)),), d)


def fixed_point_k(omega, d, iters=2000):
    # k = omega^2 / (g tanh(k d)), damped fixed-point iteration
    k = omega**2 / G
    for _ in range(iters):
        k = 0.5 * k + 0.5 * omega**2 / (G * np.tanh(k * d))
    return k


def test_deep_water_limit():
    assert dispersion_solve(1.0, 1000.0) == pytest.approx(1.0 / G, rel=1e-3)
    assert dispersion_solve(1.0, 1000.0) == pytest.approx(0.10194, abs=5e-6)


def test_shallow_water_limit():
    w = 2 * np.pi / 60.0
    k = dispersion_solve(w, 0.5)
    assert w == pytest.approx(k * np.sqrt(G * 0.5), rel=1e-3)


def test_intermediate_depth_against_fixed_point():
    w = 2 * np.pi / 8.0
    k = dispersion_solve(w, 20.0)
    assert k == pytest.approx(fixed_point_k(w, 20.0), rel=1e-10)
    assert k == pytest.approx(0.0709, abs=5e-4)


@given(st.floats(0.3, 3.0), st.sampled_from([5.0, 20.0, 1000.0]))
def test_dispersion_residual(w, d):
    k = dispersion_solve(w, d)
    assert abs(w**2 - G * k * np.tanh(k * d)) <= 1e-10


def test_dispersion_rejects_bad_input():
    with pytest.raises(ValueError):
        dispersion_solve(-1.0, 20.0)
    with pytest.raises(ValueError):
        dispersion_solve(1.0, 0.0)


@pytest.mark.parametrize("Tp", list(WAVE_CASES.values()))
@pytest.mark.parametrize("Hs", HS_GRID)
def test_hs_recovery(Hs, Tp):
    sea = synthesize_jonswap(Hs, Tp, seed=7)
    assert sea.significant_height == pytest.approx(Hs, rel=0.02)
    assert np.max(sea.dispersion_residuals()) <= 1e-8


def test_hs_recovery_from_elevation_record():
    # independent check: variance of a long elevation record
    sea = synthesize_jonswap(3.0, 8.0, seed=2)
    t = np.arange(0, 20000, 0.5)
    a = sea._arr
    zeta = np.zeros_like(t)
    for A, w, ph in zip(a["A"], a["omega"], a["phi"]):
        zeta += 0.5 * A * np.cos(-w * t + ph)
    assert 4 * np.std(zeta) == pytest.approx(3.0, rel=0.02)


def test_same_seed_identical():
    a = synthesize_jonswap(2.0, 8.0, seed=11)
    b = synthesize_jonswap(2.0, 8.0, seed=11)
    c = synthesize_jonswap(2.0, 8.0, seed=12)
    assert a.components == b.components
    assert a.components != c.components


@pytest.mark.parametrize("Tp", [6.1, 8.0, 10.0])
def test_spectral_peak(Tp):
    wp = 2 * np.pi / Tp
    omega = np.linspace(0.5 * wp, 3 * wp, 500)
    S = jonswap_spectrum(omega, 3.0, Tp)
    assert abs(omega[np.argmax(S)] - wp) <= omega[1] - omega[0]


def test_elevation_examples():
    assert elevation(single(A=1.0), 0.0, 0.0) == pytest.approx(0.5)
    sea = single(A=1.0, T=8.0)
    t = np.linspace(0, 8.0, 4001)[:-1]
    assert abs(np.mean([elevation(sea, 1.3, ti) for ti in t])) <= 1e-10
    w = 2 * np.pi / 8.0
    k = dispersion_solve(w, 20.0)
    pair = SeaState((WaveComponent(1.0, 8.0, 0.0, w, k), WaveComponent(1.0, 8.0, np.pi, w, k)), 20.0)
    for ti in (0.0, 1.0, 3.3):
        assert abs(elevation(pair, 0.7, ti)) <= 1e-15
    assert elevation(calm_sea(), 0.0, 1.0) == 0.0


def test_velocity_at_bed_and_surface():
    sea = synthesize_jonswap(3.0, 8.0, seed=1)
    for t in (0.0, 2.5, 11.0):
        assert particle_velocity(sea, 0.3, -sea.d, t)[1] == 0.0
    deep = single(A=1.0, T=4.0, d=1000.0)
    u, _ = particle_velocity(deep, 0.0, 0.0, 0.0)
    assert u == pytest.approx(np.pi * 1.0 / 4.0, rel=1e-3)


@given(st.floats(-20.0, 0.0), st.floats(-20.0, 0.0))
def test_depth_decay(z1, z2):
    sea = synthesize_jonswap(2.0, 8.0, seed=4)
    lo, hi = min(z1, z2), max(z1, z2)
    a = sea._arr
    # per-component amplitude envelopes at fixed phase
    for k, A, T in zip(a["k"], a["A"], a["T"]):
        comp = SeaState((WaveComponent(A, T, 0.0, 2 * np.pi / T, k),), sea.d)
        assert abs(particle_velocity(comp, 0.0, lo, 0.0)[0]) <= abs(particle_velocity(comp, 0.0, hi, 0.0)[0]) + 1e-15
        qw = T / 4  # phase where the vertical velocity peaks
        assert abs(particle_velocity(comp, 0.0, lo, -qw)[1]) <= abs(particle_velocity(comp, 0.0, hi, -qw)[1]) + 1e-15


def test_acceleration_matches_finite_difference():
    sea = synthesize_jonswap(3.0, 6.1, seed=5)
    h = 1e-4
    for x, z, t in [(0.0, -4.0, 1.0), (0.5, -3.1, 7.3), (-0.2, -10.0, 33.0)]:
        du, dw = particle_acceleration(sea, x, z, t)
        up, wp = particle_velocity(sea, x, z, t + h)
        um, wm = particle_velocity(sea, x, z, t - h)
        scale = max(abs(du), abs(dw))
        assert du == pytest.approx((up - um) / (2 * h), abs=1e-6 * scale)
        assert dw == pytest.approx((wp - wm) / (2 * h), abs=1e-6 * scale)


def test_single_component_phase_shift():
    sea = single(A=1.2, T=7.0)
    w = 2 * np.pi / 7.0
    for t in np.linspace(0, 7, 9):
        u, _ = particle_velocity(sea, 0.0, -4.0, t)
        du, _ = particle_acceleration(sea, 0.0, -4.0, t)
        u_q, _ = particle_velocity(sea, 0.0, -4.0, t + 7.0 / 4)  # a quarter period later
        assert du == pytest.approx(w * u_q, abs=1e-12)


def test_zero_sea_and_depth_checks():
    assert particle_velocity(calm_sea(), 0.0, -3.0, 1.0) == (0.0, 0.0)
    assert particle_acceleration(calm_sea(), 0.0, -3.0, 1.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        particle_velocity(calm_sea(), 0.0, 0.5, 0.0)
    with pytest.raises(ValueError):
        particle_velocity(calm_sea(20.0), 0.0, -21.0, 0.0)


@pytest.mark.parametrize("Tp", [6.1, 10.0])
def test_series_field_matches_direct_sum(Tp, rng):
    # the compiled kernels expand the field around the mount; compare with the direct sum
    sea = synthesize_jonswap(3.0, Tp, seed=9)
    wf = K.wave_field(sea.arrays(), 0.0, -4.0, 0.9)
    assert wf.order > 0
    for t in (0.0, 13.7):
        mom = K.field_moments(wf, t, True)
        for _ in range(50):
            r, a = 0.9 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
            x, z = r * np.cos(a), -4.0 + r * np.sin(a)
            got = K.field_at(wf, mom, x, z, t, True)
            ref = particle_velocity(sea, x, z, t) + particle_acceleration(sea, x, z, t)
            assert np.allclose(got, ref, atol=1e-13, rtol=0)


def test_short_waves_fall_back_to_direct_sum():
    sea = single(A=0.1, T=1.0, d=20.0)  # k about 4, too short for the series
    wf = K.wave_field(sea.arrays(), 0.0, -1.0, 20.0)
    assert wf.order == -1
    got = K.field_at(wf, K.field_moments(K.empty_field(), 0.0, False), 0.2, -1.2, 0.3, False)
    assert np.allclose(got[:2], particle_velocity(sea, 0.2, -1.2, 0.3), atol=1e-14)


def test_spectrum_file_round_trip(tmp_path):
    sea = synthesize_jonswap(2.5, 8.0, seed=3)
    omega, S = np.array(sea.spectrum).T
    path = tmp_path / "spec.csv"
    write_spectrum(path, omega, S)
    assert path.read_text().splitlines()[0] == "omega,S"
    o2, S2 = read_spectrum(path)
    assert np.allclose(o2, omega, rtol=1e-11) and np.allclose(S2, S, rtol=1e-11)
    again = load_sea(path, seed=3)
    assert again.significant_height == pytest.approx(2.5, rel=1e-6)


def test_spectrum_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("w,S\n1,2\n")
    with pytest.raises(ValueError):
        read_spectrum(bad)
    neg = tmp_path / "neg.csv"
    neg.write_text("omega,S\n1,2\n0.5,1\n")
    with pytest.raises(ValueError):
        load_sea(neg)


def test_synthesis_validation():
    with pytest.raises(ValueError):
        synthesize_jonswap(0.0, 8.0)
    with pytest.raises(ValueError):
        synthesize_jonswap(1.0, 8.0, N=3)
    with pytest.raises(ValueError):
        SeaState((), d=0.0)
