"""Unitary 2D FFT backends (over the last two axes) for the reconstruction inner loop.

``scipy`` (pocketfft) is the default and is bit-reproducible across
processes. ``fftw`` uses measured pyFFTW plans, which are faster on large
grids but may pick a different algorithm in a new process, so outputs are
only reproducible within one process.

Both expose preallocated input buffers (``forward_input``,
``inverse_input``) so callers can fill them in place; ``run_forward`` and
``run_inverse`` transform the buffer contents and return an array that
may be reused by the next call.
"""

import logging
import os
import pickle
from pathlib import Path

import numpy as np
import scipy.fft as sfft

logger = logging.getLogger(__name__)

BACKENDS = ("scipy", "fftw")
EFFORTS = ("estimate", "measure", "patient")


def wisdom_path():
    """FFTW wisdom cache file (``$SPECKLEPTY_FFTW_WISDOM`` or ``~/.cache/specklepty``)."""
    env = os.environ.get("SPECKLEPTY_FFTW_WISDOM")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "specklepty" / "fftw_wisdom.pkl"


def _load_wisdom(pyfftw):
    path = wisdom_path()
    try:
        pyfftw.import_wisdom(pickle.loads(path.read_bytes()))
    except (OSError, pickle.UnpicklingError, ValueError, TypeError):
        logger.debug("no usable FFTW wisdom at %s", path)


def _save_wisdom(pyfftw):
    path = wisdom_path()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(pickle.dumps(pyfftw.export_wisdom()))
    except OSError as exc:
        logger.debug("cannot store FFTW wisdom at %s: %s", path, exc)


class ScipyFFT:
    def __init__(self, shape, dtype, threads=1, effort=None):
        self.workers = threads
        self.forward_input = np.empty(shape, dtype=dtype)
        self.inverse_input = np.empty(shape, dtype=dtype)

    def run_forward(self):
        return sfft.fft2(self.forward_input, norm="ortho", workers=self.workers)

    def run_inverse(self):
        return sfft.ifft2(self.inverse_input, norm="ortho", workers=self.workers)

    def forward(self, a):
        return sfft.fft2(a, norm="ortho", workers=self.workers)

    def inverse(self, a):
        return sfft.ifft2(a, norm="ortho", workers=self.workers)


class FFTWPlan:
    _cache = {}
    _wisdom_loaded = False

    def __init__(self, shape, dtype, threads=1, effort="measure"):
        import pyfftw

        if effort not in EFFORTS:
            raise ValueError(f"FFTW effort must be one of {EFFORTS}, got {effort!r}")
        if not FFTWPlan._wisdom_loaded:
            _load_wisdom(pyfftw)
            FFTWPlan._wisdom_loaded = True
        key = (tuple(shape), np.dtype(dtype).str, threads, effort)
        if key not in self._cache:
            flags = ("FFTW_" + effort.upper(), "FFTW_DESTROY_INPUT")
            arrays = [pyfftw.empty_aligned(shape, dtype=dtype) for _ in range(4)]
            fwd = pyfftw.FFTW(arrays[0], arrays[1], axes=(-2, -1), direction="FFTW_FORWARD",
                              flags=flags, threads=threads, normalise_idft=False, ortho=True)
            inv = pyfftw.FFTW(arrays[2], arrays[3], axes=(-2, -1), direction="FFTW_BACKWARD",
                              flags=flags, threads=threads, normalise_idft=False, ortho=True)
            self._cache[key] = (fwd, inv)
            if effort != "estimate":
                _save_wisdom(pyfftw)
        self._fwd, self._inv = self._cache[key]
        self.forward_input = self._fwd.input_array
        self.inverse_input = self._inv.input_array

    def run_forward(self):
        return self._fwd()

    def run_inverse(self):
        return self._inv()

    def forward(self, x):
        self.forward_input[...] = x
        return self._fwd().copy()

    def inverse(self, x):
        self.inverse_input[...] = x
        return self._inv().copy()


def get_backend(name, shape, dtype, threads=1, effort="measure"):
    if name == "scipy":
        return ScipyFFT(shape, dtype, threads)
    if name == "fftw":
        try:
            return FFTWPlan(shape, dtype, threads, effort)
        except ImportError as exc:
            raise ImportError("fft_backend='fftw' needs the pyfftw package") from exc
    raise ValueError(f"unknown FFT backend {name!r}")
