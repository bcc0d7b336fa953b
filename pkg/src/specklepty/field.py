"""Complex wavefields, unitary DFTs and angular-spectrum propagation.

Everything here works on a periodic grid: shifts are toroidal and
propagation is a circular convolution carried out in the Fourier domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import scipy.fft as sfft

__all__ = [
    "ComplexField",
    "PropagationKernel",
    "dft2_forward",
    "dft2_inverse",
    "frequency_grid",
    "make_kernel",
    "propagate",
    "fourier_upsample",
    "circular_shift",
    "subpixel_shift",
]


@dataclass(frozen=True)
class ComplexField:
    """A sampled 2D complex field.

    Parameters
    ----------
    data : ndarray, shape (H, W)
        Complex samples. Row index is y, column index is x.
    pitch : float
        Sample spacing in micrometers.
    wavelength : float
        Illumination wavelength in micrometers.
    """

    data: np.ndarray
    pitch: float
    wavelength: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"field data must be a non-empty 2D array, got shape {data.shape}")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if not (self.pitch > 0):
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if not (self.wavelength > 0):
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite samples")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def amplitude(self):
        return np.abs(self.data)

    @property
    def phase(self):
        return np.angle(self.data)

    @property
    def intensity(self):
        return self.data.real**2 + self.data.imag**2

    def with_data(self, data):
        return replace(self, data=data)


@dataclass(frozen=True)
class PropagationKernel:
    """Angular-spectrum transfer function sampled on the DFT frequency grid."""

    values: np.ndarray
    distance: float
    pitch: float
    wavelength: float
    propagating: np.ndarray = dc_field(repr=False)


def dft2_forward(f, workers=None):
    """Unitary 2D DFT (``norm='ortho'``) over the last two axes.

    Accepts either a :class:`ComplexField` (returned as a field holding the
    spectrum) or a plain array.
    """
    if isinstance(f, ComplexField):
        return f.with_data(sfft.fft2(f.data, norm="ortho", workers=workers))
    return sfft.fft2(f, norm="ortho", workers=workers)


def dft2_inverse(f, workers=None):
    """Inverse of :func:`dft2_forward`."""
    if isinstance(f, ComplexField):
        return f.with_data(sfft.ifft2(f.data, norm="ortho", workers=workers))
    return sfft.ifft2(f, norm="ortho", workers=workers)


def frequency_grid(shape, pitch):
    """Spatial frequencies (cycles/um) in standard DFT ordering.

    Returns ``(fy, fx)`` broadcastable to ``shape``.
    """
    h, w = shape
    fy = sfft.fftfreq(h, d=pitch)[:, None]
    fx = sfft.fftfreq(w, d=pitch)[None, :]
    return fy, fx


def make_kernel(shape, pitch, wavelength, distance):
    """Angular-spectrum transfer function for free-space propagation.

    ``H(fx, fy) = exp(i 2 pi d sqrt(1/lambda^2 - fx^2 - fy^2))`` on the
    propagating disk and zero for evanescent frequencies.

    Parameters
    ----------
    shape : tuple of int
        Grid size ``(H, W)``.
    pitch : float
        Sample spacing in micrometers.
    wavelength : float
        Wavelength in micrometers.
    distance : float
        Propagation distance in micrometers; may be negative.

    Returns
    -------
    PropagationKernel
    """
    if not (pitch > 0):
        raise ValueError(f"pitch must be positive, got {pitch}")
    if not (wavelength > 0):
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    fy, fx = frequency_grid(shape, pitch)
    arg = 1.0 / wavelength**2 - fx**2 - fy**2
    propagating = arg >= 0
    kz = np.sqrt(np.where(propagating, arg, 0.0))
    values = np.where(propagating, np.exp(2j * np.pi * distance * kz), 0.0)
    return PropagationKernel(values=values, distance=float(distance), pitch=float(pitch),
                             wavelength=float(wavelength), propagating=propagating)


def propagate(f, distance, kernel=None, workers=None):
    """Propagate a field by ``distance`` micrometers with the angular spectrum method.

    A precomputed ``kernel`` may be passed to skip rebuilding the transfer
    function; it must match the field's grid, pitch and wavelength.
    """
    if kernel is None:
        kernel = make_kernel(f.shape, f.pitch, f.wavelength, distance)
    elif kernel.values.shape != f.shape:
        raise ValueError(f"kernel shape {kernel.values.shape} does not match field {f.shape}")
    spectrum = sfft.fft2(f.data, norm="ortho", workers=workers)
    spectrum *= kernel.values
    return f.with_data(sfft.ifft2(spectrum, norm="ortho", workers=workers))


def _pad_spectrum(spectrum, out_shape):
    # Symmetric zero padding in DFT ordering; Nyquist bins of even sizes are
    # split in half between +f and -f so real inputs stay real.
    out = np.zeros(out_shape + spectrum.shape[2:], dtype=np.complex128)
    h, w = spectrum.shape[:2]
    H, W = out_shape
    ry = _index_map(h, H)
    rx = _index_map(w, W)
    for src_y, dst_y, wy in ry:
        for src_x, dst_x, wx in rx:
            out[np.ix_(dst_y, dst_x)] += (wy * wx) * spectrum[np.ix_(src_y, src_x)]
    return out


def _index_map(n, big):
    """Source/destination index blocks for embedding an n-point spectrum in a big one."""
    if n % 2:
        half = n // 2
        src = np.r_[0:half + 1, n - half:n]
        dst = np.r_[0:half + 1, big - half:big]
        return [(src, dst, 1.0)]
    half = n // 2
    src = np.r_[0:half, n - half + 1:n]
    dst = np.r_[0:half, big - half + 1:big]
    nyq = np.array([half])
    if big == n:
        return [(np.r_[0:n], np.r_[0:n], 1.0)]
    return [
        (src, dst, 1.0),
        (nyq, np.array([half]), 0.5),
        (nyq, np.array([big - half]), 0.5),
    ]


def fourier_upsample(image, s):
    """Band-limited interpolation onto an ``s`` times finer grid.

    The spectrum is zero padded symmetrically from ``M x M`` to ``sM x sM``
    and scaled by ``s**2`` so the samples at the original lattice points
    (every ``s``-th sample, offset 0) are reproduced exactly.

    Parameters
    ----------
    image : ndarray or ComplexField
        Real or complex 2D array. A field is returned with ``pitch / s``.
    s : int
        Integer upsampling factor, ``s >= 1``.
    """
    if int(s) != s or s < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {s}")
    s = int(s)
    if isinstance(image, ComplexField):
        up = fourier_upsample(image.data, s)
        return ComplexField(up, image.pitch / s, image.wavelength)
    arr = np.asarray(image)
    if s == 1:
        return arr.copy()
    h, w = arr.shape
    spectrum = sfft.fft2(arr)
    out = sfft.ifft2(_pad_spectrum(spectrum, (s * h, s * w))) * (s * s)
    if not np.iscomplexobj(arr):
        return out.real
    return out


def circular_shift(f, dx, dy):
    """Toroidal shift by integer samples; ``dx`` moves along columns, ``dy`` along rows.

    Works on a :class:`ComplexField` or a plain array.
    """
    if int(dx) != dx or int(dy) != dy:
        raise ValueError("circular_shift takes integer shifts; use subpixel_shift otherwise")
    if isinstance(f, ComplexField):
        return f.with_data(np.roll(f.data, (int(dy), int(dx)), axis=(0, 1)))
    return np.roll(f, (int(dy), int(dx)), axis=(-2, -1))


def subpixel_shift(f, dx, dy):
    """Circular shift by a fractional number of samples via a Fourier phase ramp."""
    data = f.data if isinstance(f, ComplexField) else np.asarray(f)
    fy, fx = frequency_grid(data.shape, 1.0)
    ramp = np.exp(-2j * np.pi * (fx * dx + fy * dy))
    out = sfft.ifft2(sfft.fft2(data) * ramp)
    if isinstance(f, ComplexField):
        return f.with_data(out)
    return out if np.iscomplexobj(data) else out.real
