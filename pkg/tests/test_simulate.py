import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specklepty.field import ComplexField, make_kernel
from specklepty.simulate import (DiffuserSpec, FrameStack, SceneSpec, SimulationConfig,
                                 TrajectorySpec, add_noise, bar_chart_layout, forward_frame,
                                 make_object, make_speckle, make_trajectory, simulate_dataset)

from oracles import direct_frame

LAMBDA = 0.532
PITCH = 1.67 / 3


def small_config(**kw):
    base = dict(frame_size=32, trajectory=TrajectorySpec(count=6))
    base.update(kw)
    return SimulationConfig(**base)


def test_flat_scene_is_unit_field():
    obj = make_object(SceneSpec(pattern="flat", grid=16))
    assert np.array_equal(obj.data, np.ones((16, 16), dtype=complex))


def test_phase_disk_construction():
    spec = SceneSpec(pattern="phase_disk", grid=60, phase_height=1.0)
    obj = make_object(spec)
    assert np.allclose(obj.amplitude, 1.0)
    phase = obj.phase
    assert phase[30, 30] == pytest.approx(1.0)
    assert phase[0, 0] == 0.0
    assert set(np.unique(np.round(phase, 12))) == {0.0, 1.0}


def test_period_two_bars_peak_at_half_sampling_frequency():
    spec = SceneSpec(pattern="bars", grid=96, bar_periods=(2,), bar_count=20, bar_length=40)
    obj = make_object(spec)
    (period, axis, (y0, y1, x0, x1)), _ = bar_chart_layout(spec)
    row = np.abs(obj.data[(y0 + y1) // 2, x0:x1])
    spectrum = np.abs(np.fft.rfft(row - row.mean()))
    freqs = np.fft.rfftfreq(row.size, d=spec.pitch)
    assert freqs[np.argmax(spectrum)] == pytest.approx(1 / (2 * spec.pitch))


def test_bar_layout_spans_whole_periods():
    spec = SceneSpec(pattern="bars", grid=384)
    for period, axis, (y0, y1, x0, x1) in bar_chart_layout(spec):
        across = (x1 - x0) if axis == "x" else (y1 - y0)
        assert across == period * spec.bar_count


def test_bars_reject_period_one_and_overflow():
    with pytest.raises(ValueError):
        make_object(SceneSpec(pattern="bars", grid=96, bar_periods=(1,)))
    with pytest.raises(ValueError):
        make_object(SceneSpec(pattern="bars", grid=30, bar_periods=(9,), bar_count=9))


def test_cells_scene_is_seeded_and_bounded():
    a = make_object(SceneSpec(pattern="cells", grid=96, cell_count=6, seed=4))
    b = make_object(SceneSpec(pattern="cells", grid=96, cell_count=6, seed=4))
    assert np.array_equal(a.data, b.data)
    assert a.amplitude.max() <= 1 and a.amplitude.min() >= 0


def test_image_scene(tmp_path):
    amp = np.linspace(0.2, 1, 16 * 16).reshape(16, 16)
    np.save(tmp_path / "amp.npy", amp)
    np.save(tmp_path / "phase.npy", amp[::-1])
    obj = make_object(SceneSpec(pattern="image", grid=16, amplitude_file=str(tmp_path / "amp.npy"),
                                phase_file=str(tmp_path / "phase.npy"), phase_range=1.0))
    assert np.allclose(obj.amplitude, amp)
    assert np.allclose(obj.phase, amp[::-1])
    np.save(tmp_path / "bad.npy", amp * 2)
    with pytest.raises(ValueError):
        make_object(SceneSpec(pattern="image", grid=16, amplitude_file=str(tmp_path / "bad.npy")))
    with pytest.raises(ValueError):
        make_object(SceneSpec(pattern="image", grid=16))


def test_unknown_scene_rejected():
    with pytest.raises(ValueError):
        SceneSpec(pattern="galaxy")


def test_speckle_without_diffuser_is_plane_wave():
    p = make_speckle(DiffuserSpec(phase_depth=0.0), 64, PITCH)
    assert np.allclose(p.amplitude, 1.0)


def test_speckle_is_deterministic():
    a = make_speckle(DiffuserSpec(seed=3), 64, PITCH)
    b = make_speckle(DiffuserSpec(seed=3), 64, PITCH)
    assert np.array_equal(a.data, b.data)


def test_speckle_is_fully_developed():
    contrasts = []
    for seed in range(10):
        inten = make_speckle(DiffuserSpec(seed=seed), 192, PITCH).intensity
        contrasts.append(inten.std() / inten.mean())
    assert 0.7 <= np.mean(contrasts) <= 1.1


def test_speckle_rejects_sub_pitch_features():
    with pytest.raises(ValueError):
        make_speckle(DiffuserSpec(feature_size=0.1), 32, PITCH)


def test_single_frame_trajectory():
    assert np.array_equal(make_trajectory(TrajectorySpec(count=1)).shifts, [[0.0, 0.0]])


def test_random_walk_step_bounds():
    traj = make_trajectory(TrajectorySpec(count=100, mean_step=2.5, jitter=0.2, max_excursion=16))
    steps = np.hypot(*np.diff(traj.shifts, axis=0).T)
    assert steps.min() >= 2 * 0.8 and steps.max() <= 3 * 1.2
    assert np.abs(traj.shifts).max() <= 16


@given(st.integers(0, 1000), st.sampled_from(["random_walk", "raster"]))
@settings(max_examples=20, deadline=None)
def test_trajectory_is_seeded(seed, pattern):
    spec = TrajectorySpec(count=12, seed=seed, pattern=pattern, max_excursion=None)
    a, b = make_trajectory(spec), make_trajectory(spec)
    assert np.array_equal(a.shifts, b.shifts)
    assert np.array_equal(a.shifts[0], [0, 0])


def test_trajectory_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(count=0)
    with pytest.raises(ValueError):
        TrajectorySpec(jitter=1.5)
    with pytest.raises(ValueError):
        TrajectorySpec(pattern="spiral")


def test_zero_object_gives_dark_frame():
    z = np.zeros((24, 24), complex)
    p = make_speckle(DiffuserSpec(), 24, PITCH)
    assert np.all(forward_frame(z, p.data, (1.0, 2.0), 500.0, 3, make_kernel(z.shape, PITCH, LAMBDA, 500.0)) == 0)


@pytest.mark.parametrize("d", [0.0, 250.0, 500.0])
def test_plane_wave_frame_is_uniform(d):
    o = ComplexField(np.ones((24, 24)), PITCH, LAMBDA)
    p = ComplexField(np.full((24, 24), 0.7 + 0j), PITCH, LAMBDA)
    frame = forward_frame(o, p, (2.0, -1.0), d, 3)
    assert np.allclose(frame, 0.49, atol=1e-12)


def test_forward_frame_matches_direct_sum_oracle():
    s, m = 3, 8
    rng = np.random.default_rng(11)
    o = rng.random((s * m, s * m)) * np.exp(1j * rng.random((s * m, s * m)))
    p = rng.standard_normal((s * m, s * m)) + 1j * rng.standard_normal((s * m, s * m))
    shift = (1.34, -0.66)
    frame = forward_frame(ComplexField(o, PITCH, LAMBDA), ComplexField(p, PITCH, LAMBDA),
                          shift, 500.0, s)
    fine = tuple(np.rint(np.array(shift) * s).astype(int))
    ref = direct_frame(o, p, fine, PITCH, LAMBDA, 500.0, s)
    assert np.max(np.abs(frame - ref)) / np.max(ref) < 1e-8


def test_forward_frame_checks_grids():
    with pytest.raises(ValueError):
        forward_frame(np.ones((6, 6)), np.ones((9, 9)), (0, 0), 1.0, 3)
    with pytest.raises(ValueError):
        forward_frame(np.ones((7, 7)), np.ones((7, 7)), (0, 0), 1.0, 3)


def test_energy_sanity_for_unit_object():
    cfg = small_config(scene=SceneSpec(pattern="flat"), diffuser=DiffuserSpec(phase_depth=0.0))
    ds = simulate_dataset(cfg)
    lattice_power = ds.probe.intensity[::cfg.upsampling, ::cfg.upsampling].mean()
    assert abs(ds.frames.frames.mean() - lattice_power) < 1e-6


def test_noise_identity_and_dark_frames():
    frames = np.random.default_rng(0).random((3, 8, 8))
    assert np.array_equal(add_noise(frames), frames)
    assert np.all(add_noise(np.zeros((2, 8, 8)), photons=100.0) == 0)


def test_poisson_noise_statistics():
    frames = np.full((1, 200, 200), 3.0)
    noisy = add_noise(frames, photons=1e4, seed=5)
    rel = noisy.std() / noisy.mean()
    assert rel == pytest.approx(0.01, rel=0.2)
    assert np.array_equal(noisy, add_noise(frames, photons=1e4, seed=5))
    assert noisy.min() >= 0


def test_read_noise_is_clipped():
    noisy = add_noise(np.zeros((1, 16, 16)), read_sigma=0.5, seed=1)
    assert noisy.min() >= 0 and noisy.max() > 0


def test_simulation_is_deterministic_and_shaped():
    a = simulate_dataset(small_config())
    b = simulate_dataset(small_config())
    assert np.array_equal(a.frames.frames, b.frames.frames)
    assert a.frames.frames.shape == (6, 32, 32)
    assert a.obj.shape == (96, 96)
    assert a.frames.wavelength == 0.532 and a.frames.detector_pitch == 1.67


def test_realized_trajectory_is_grid_rounded():
    ds = simulate_dataset(small_config())
    err = np.abs(ds.realized_trajectory.shifts - ds.trajectory.shifts)
    assert err.max() <= 1 / 6 + 1e-12


def test_frame_stack_subset_and_validation():
    st_ = FrameStack(np.ones((4, 8, 8)))
    sub = st_.subset([1, 3])
    assert len(sub) == 2 and list(sub.order) == [1, 3]
    with pytest.raises(ValueError):
        FrameStack(-np.ones((2, 8, 8)))
    with pytest.raises(ValueError):
        FrameStack(np.ones((2, 8, 6)))
