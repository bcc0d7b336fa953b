import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specklepty import _kernels
from specklepty.field import make_kernel
from specklepty.recon import ReconConfig, _Engine

LAMBDA = 0.532
PITCH = 1.67 / 3

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


def rand_complex(shape, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 1000))
def test_polyphase_round_trip(s, m, seed):
    x = rand_complex((s * m, s * m), seed)
    p = _kernels.to_poly(x, s)
    assert p.shape == (s, s, m, m)
    assert p[0, 0].tolist() == x[::s, ::s].tolist()
    assert np.array_equal(_kernels.from_poly(p), x)


def test_polyphase_rejects_indivisible_grid():
    with pytest.raises(ValueError):
        _kernels.to_poly(np.zeros((7, 7)), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(-30, 30), st.integers(-30, 30))
def test_shift_table_reproduces_roll(s, dy, dx):
    m = 5
    probe = rand_complex((s * m, s * m), 1)
    obj = np.ones_like(probe)
    table = _kernels.shift_table(s, dy, dx)
    out = np.empty((s, s, m, m), complex)
    _kernels.exit_wave_np(_kernels.to_poly(obj, s), _kernels.to_poly(probe, s), table, out)
    assert np.array_equal(_kernels.from_poly(out), np.roll(probe, (dy, dx), axis=(0, 1)))


@pytest.mark.parametrize("precision", ["double", "single"])
def test_engine_lattice_matches_fine_grid_propagation(precision):
    s, m = 3, 12
    n = s * m
    cfg = ReconConfig(upsampling=s, precision=precision)
    eng = _Engine((n, n), s, PITCH, LAMBDA, 500.0, cfg)
    phi = rand_complex((n, n), 2)
    kernel = make_kernel((n, n), PITCH, LAMBDA, 500.0).values
    psi = np.fft.ifft2(np.fft.fft2(phi, norm="ortho") * kernel, norm="ortho")
    lattice = eng.detector_lattice(phi)
    tol = 1e-12 if precision == "double" else 1e-4
    assert np.max(np.abs(lattice - psi[::s, ::s])) < tol * np.max(np.abs(psi))


def test_engine_backpropagation_is_adjoint_of_lattice_embedding():
    s, m = 3, 10
    n = s * m
    eng = _Engine((n, n), s, PITCH, LAMBDA, 250.0, ReconConfig(upsampling=s))
    delta = rand_complex((m, m), 3)
    embedded = np.zeros((n, n), complex)
    embedded[::s, ::s] = delta
    kernel = make_kernel((n, n), PITCH, LAMBDA, 250.0).values
    expected = np.fft.ifft2(np.fft.fft2(embedded, norm="ortho") * np.conj(kernel), norm="ortho")
    got = _kernels.from_poly(eng.exit_wave_correction(delta))
    assert np.max(np.abs(got - expected)) < 1e-12


@needs_numba
@pytest.mark.parametrize("joint", [True, False])
@pytest.mark.parametrize("shift", [(0, 0), (4, -7), (-13, 5)])
def test_numba_and_numpy_passes_agree(joint, shift):
    s, m = 3, 8
    obj = _kernels.to_poly(rand_complex((s * m, s * m), 4), s)
    probe = _kernels.to_poly(rand_complex((s * m, s * m), 5), s)
    delta = _kernels.to_poly(rand_complex((s * m, s * m), 6), s)
    table = _kernels.shift_table(s, *shift)
    ew = [np.empty_like(obj), np.empty_like(obj)]
    _kernels.exit_wave_np(obj, probe, table, ew[0])
    _kernels.exit_wave_nb(obj, probe, table, ew[1])
    assert np.allclose(ew[0], ew[1], rtol=1e-14, atol=1e-14)

    weights = _kernels.to_poly(rand_complex((s * m, s * m), 7), s)
    c = [np.empty((m, m), complex), np.empty((m, m), complex)]
    _kernels.combine_np(obj, weights, c[0])
    _kernels.combine_nb(obj, weights, c[1])
    assert np.allclose(c[0], c[1], rtol=1e-13, atol=1e-13)

    sp = [np.empty_like(obj), np.empty_like(obj)]
    _kernels.split_np(c[0], weights, sp[0])
    _kernels.split_nb(c[0], weights, sp[1])
    assert np.allclose(sp[0], sp[1], rtol=1e-14, atol=1e-14)

    amp = np.abs(rand_complex((m, m), 8))
    lattice = c[0].copy()
    lattice[0, 0] = 0
    pr = [np.empty((m, m), complex), np.empty((m, m), complex)]
    e0 = _kernels.project_np(lattice, amp, 1e-12, pr[0])
    e1 = _kernels.project_nb(lattice, amp, 1e-12, pr[1])
    assert e0 == pytest.approx(e1, rel=1e-12)
    assert np.allclose(pr[0], pr[1], rtol=1e-13, atol=1e-13)

    states = [(obj.copy(), probe.copy()), (obj.copy(), probe.copy())]
    p2 = float(np.max(np.abs(probe) ** 2))
    o2 = float(np.max(np.abs(obj) ** 2))
    r0 = _kernels.update_np(*states[0], delta, table, 0.9, 0.5, p2, o2, joint)
    r1 = _kernels.update_nb(*states[1], delta, table, 0.9, 0.5, p2, o2, joint)
    assert np.allclose(states[0][0], states[1][0], rtol=1e-12, atol=1e-12)
    assert np.allclose(states[0][1], states[1][1], rtol=1e-12, atol=1e-12)
    assert r0 == pytest.approx(r1, rel=1e-12)


def test_numba_kernels_unavailable_is_an_import_error(monkeypatch):
    monkeypatch.setattr(_kernels, "HAVE_NUMBA", False)
    with pytest.raises(ImportError):
        _kernels.get_kernels(True)
