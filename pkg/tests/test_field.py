import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from specklepty.field import (ComplexField, circular_shift, dft2_forward, dft2_inverse,
                              fourier_upsample, make_kernel, propagate, subpixel_shift)

from oracles import direct_propagate, second_moment_width

LAMBDA = 0.532
PITCH = 1.67 / 3


def random_field(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def band_limited(shape, pitch, seed=0):
    # zero every frequency the kernel marks evanescent
    data = random_field(shape, seed)
    k = make_kernel(shape, pitch, LAMBDA, 0.0)
    return np.fft.ifft2(np.fft.fft2(data) * k.propagating)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
complex_grids = st.integers(2, 12).flatmap(
    lambda n: arrays(np.complex128, (n, n), elements=st.complex_numbers(max_magnitude=1e3,
                                                                        allow_nan=False,
                                                                        allow_infinity=False)))


def test_dft_of_constant_is_dc_only():
    h, w, c = 6, 10, 1.5 - 0.5j
    spec = dft2_forward(np.full((h, w), c))
    assert spec[0, 0] == pytest.approx(c * np.sqrt(h * w))
    rest = spec.copy()
    rest[0, 0] = 0
    assert np.max(np.abs(rest)) < 1e-12


@given(complex_grids)
def test_dft_round_trip_and_parseval(f):
    back = dft2_inverse(dft2_forward(f))
    scale = max(1.0, np.max(np.abs(f)))
    assert np.max(np.abs(back - f)) < 1e-12 * scale
    energy = np.sum(np.abs(f) ** 2)
    if energy > 0:
        assert abs(np.sum(np.abs(dft2_forward(f)) ** 2) - energy) <= 1e-10 * energy


def test_dft_accepts_fields():
    f = ComplexField(random_field((8, 8)), PITCH, LAMBDA)
    spec = dft2_forward(f)
    assert isinstance(spec, ComplexField)
    assert np.allclose(dft2_inverse(spec).data, f.data, atol=1e-12)


def test_kernel_hand_values():
    k = make_kernel((64, 64), PITCH, LAMBDA, 500.0)
    assert k.values[0, 0] == pytest.approx(np.exp(2j * np.pi * 500.0 / LAMBDA), abs=1e-9)
    zero = make_kernel((64, 64), PITCH, LAMBDA, 0.0)
    assert np.all(zero.values[zero.propagating] == 1)


def test_kernel_zeroes_evanescent_band():
    # pitch below lambda/2 puts the grid corners outside the propagating disk
    k = make_kernel((32, 32), 0.2, LAMBDA, 100.0)
    assert not k.propagating.all()
    assert np.all(k.values[~k.propagating] == 0)
    assert np.allclose(np.abs(k.values[k.propagating]), 1.0)


def test_kernel_rejects_bad_geometry():
    with pytest.raises(ValueError):
        make_kernel((8, 8), 0.0, LAMBDA, 1.0)
    with pytest.raises(ValueError):
        make_kernel((8, 8), 1.0, -1.0, 1.0)


def test_propagate_zero_distance_is_identity():
    f = ComplexField(random_field((32, 32)), PITCH, LAMBDA)
    assert np.max(np.abs(propagate(f, 0.0).data - f.data)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-2000, 2000), st.integers(0, 2**31 - 1))
def test_propagation_is_unitary_and_invertible(d, seed):
    data = band_limited((24, 24), 0.2, seed)
    f = ComplexField(data, 0.2, LAMBDA)
    out = propagate(f, d)
    e0 = np.sum(np.abs(data) ** 2)
    assert abs(np.sum(np.abs(out.data) ** 2) - e0) / e0 < 1e-10
    back = propagate(out, -d)
    assert np.linalg.norm(back.data - data) / np.linalg.norm(data) < 1e-10


def test_propagate_matches_direct_dft_sum():
    data = random_field((12, 12), 3)
    out = propagate(ComplexField(data, PITCH, LAMBDA), 500.0).data
    ref = direct_propagate(data, PITCH, LAMBDA, 500.0)
    assert np.max(np.abs(out - ref)) < 1e-10


def test_gaussian_beam_spreads_like_the_analytic_width():
    n, pitch, w0, d = 512, 0.5, 10.0, 1500.0
    x = (np.arange(n) - n // 2) * pitch
    beam = np.exp(-(x[None, :] ** 2 + x[:, None] ** 2) / w0**2)
    out = propagate(ComplexField(beam, pitch, LAMBDA), d).intensity
    expected = w0 * np.sqrt(1 + (LAMBDA * d / (np.pi * w0**2)) ** 2)
    assert second_moment_width(out, pitch) == pytest.approx(expected, rel=0.01)


def test_propagate_checks_kernel_shape():
    f = ComplexField(random_field((8, 8)), PITCH, LAMBDA)
    with pytest.raises(ValueError):
        propagate(f, 1.0, kernel=make_kernel((4, 4), PITCH, LAMBDA, 1.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 9), st.integers(0, 2**31 - 1), st.booleans())
def test_upsample_is_exact_on_the_lattice(s, m, seed, complex_input):
    img = random_field((m, m), seed) if complex_input else np.random.default_rng(seed).random((m, m))
    up = fourier_upsample(img, s)
    assert up.shape == (s * m, s * m)
    assert np.max(np.abs(up[::s, ::s] - img)) < 1e-10
    assert np.iscomplexobj(up) == complex_input


def test_upsample_constant_and_identity():
    assert np.allclose(fourier_upsample(np.full((5, 5), 2.5), 3), 2.5, atol=1e-12)
    img = random_field((6, 6))
    assert np.array_equal(fourier_upsample(img, 1), img)
    with pytest.raises(ValueError):
        fourier_upsample(img, 0)


@given(st.integers(0, 2**31 - 1), finite, finite)
def test_upsample_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.random((6, 6)), rng.random((6, 6))
    lhs = fourier_upsample(a * x + b * y, 3)
    rhs = a * fourier_upsample(x, 3) + b * fourier_upsample(y, 3)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + abs(a) + abs(b))


def test_upsample_field_keeps_metadata():
    f = ComplexField(random_field((4, 4)), 1.5, LAMBDA)
    up = fourier_upsample(f, 3)
    assert up.pitch == pytest.approx(0.5) and up.shape == (12, 12)


def test_circular_shift_examples():
    f = np.zeros((8, 10))
    f[0, 0] = 1
    moved = circular_shift(f, 5, 3)
    assert moved[3, 5] == 1 and moved.sum() == 1
    g = random_field((8, 10))
    assert np.array_equal(circular_shift(g, 0, 0), g)
    assert np.array_equal(circular_shift(g, 10, 8), g)
    with pytest.raises(ValueError):
        circular_shift(g, 0.5, 0)


@given(st.integers(-20, 20), st.integers(-20, 20))
def test_subpixel_shift_agrees_with_integer_shift(dx, dy):
    g = random_field((8, 10), 1)
    assert np.max(np.abs(subpixel_shift(g, dx, dy) - circular_shift(g, dx, dy))) < 1e-12


def test_complex_field_validation():
    with pytest.raises(ValueError):
        ComplexField(np.zeros(4), 1.0, LAMBDA)
    with pytest.raises(ValueError):
        ComplexField(np.full((2, 2), np.nan), 1.0, LAMBDA)
    with pytest.raises(ValueError):
        ComplexField(np.zeros((2, 2)), -1.0, LAMBDA)
    f = ComplexField(np.full((2, 2), 2.0), 1.0, LAMBDA)
    assert np.iscomplexobj(f.data) and np.all(f.intensity == 4)
