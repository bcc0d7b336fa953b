"""Sub-sampled ptychographic reconstruction of object and speckle probe.

The object ``O`` and probe ``P`` live on an ``s``-times finer grid than the
detector. For every frame the probe is shifted, multiplied with the object,
propagated to the detector, and the modelled intensity is replaced by the
measurement only on the stride-``s`` lattice where a detector pixel exists.
Object and probe are then corrected with rPIE steps and, after each pass
through the frames, extrapolated with Nesterov-style momentum.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _fft, _kernels
from ._validation import check_frames, check_int, check_positive
from .field import fourier_upsample, make_kernel, subpixel_shift
from .register import ScanTrajectory

logger = logging.getLogger(__name__)

__all__ = [
    "ReconConfig",
    "ReconState",
    "ReconResult",
    "NonFiniteStateError",
    "initialize",
    "subsampled_projection",
    "rpie_update_object",
    "rpie_update_probe",
    "iterate",
    "reconstruct",
    "autofocus",
]

PHASE_FLOOR = 1e-12


class NonFiniteStateError(FloatingPointError):
    """The reconstruction produced NaN or Inf samples."""

    def __init__(self, iteration, frame):
        super().__init__(f"non-finite object/probe at iteration {iteration}, frame {frame}")
        self.iteration = iteration
        self.frame = frame


@dataclass
class ReconConfig:
    """Solver settings.

    Attributes
    ----------
    upsampling : int
        Fine-grid factor ``s`` between detector and object grid.
    iterations : int
        Number of passes ``N`` through all frames.
    alpha_obj, alpha_probe : float
        rPIE weights in ``(0, 1]``.
    momentum : float
        Momentum factor ``beta`` in ``[0, 1)``; 0 disables momentum.
    momentum_object, momentum_probe : bool
        Which fields receive momentum.
    probe_mode : {'joint', 'fixed'}
        ``'fixed'`` keeps a supplied probe unchanged.
    order_seed : int
        Seed of the random frame order (drawn once per run).
    distance : float or None
        Object-to-detector distance in micrometers; ``None`` uses the
        dataset's nominal distance.
    autofocus_range : (float, float) or None
        Search interval for the distance; enables :func:`autofocus`.
    object_init : {'mean', 'flat'}
        ``'mean'`` starts from the root of the mean frame. ``'flat'`` starts
        from a constant amplitude matched to the mean intensity, which
        avoids printing the illumination envelope into the object when few
        frames are available.
    threads : int
        Worker count for the FFTs.
    fft_backend : {'scipy', 'fftw'}
    fft_effort : {'estimate', 'measure', 'patient'}
        FFTW planning effort; plans are cached as FFTW wisdom on disk.
    precision : {'double', 'single'}
        Working precision of the inner loop.
    kernels : {'auto', 'numba', 'numpy'}
        Implementation of the element-wise passes; ``'auto'`` uses numba
        when it is installed.
    """

    upsampling: int = 3
    iterations: int = 10
    alpha_obj: float = 0.9
    alpha_probe: float = 0.5
    momentum: float = 0.9
    momentum_object: bool = True
    momentum_probe: bool = True
    probe_mode: str = "joint"
    order_seed: int = 0
    distance: float | None = None
    autofocus_range: tuple | None = None
    autofocus_steps: int = 21
    autofocus_levels: int = 8
    autofocus_iterations: int = 3
    autofocus_frames: int = 20
    object_init: str = "mean"
    kernels: str = "auto"
    threads: int = 1
    fft_backend: str = "scipy"
    fft_effort: str = "measure"
    precision: str = "double"

    def __post_init__(self):
        check_int(self.upsampling, "upsampling", 1)
        check_int(self.iterations, "iterations", 1)
        for name in ("alpha_obj", "alpha_probe"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.probe_mode not in ("joint", "fixed"):
            raise ValueError(f"probe_mode must be 'joint' or 'fixed', got {self.probe_mode!r}")
        if self.distance is not None:
            check_positive(abs(self.distance), "distance", strict=False)
        if self.autofocus_range is not None:
            lo, hi = self.autofocus_range
            if not lo < hi:
                raise ValueError(f"autofocus range must satisfy d_min < d_max, got {self.autofocus_range}")
            check_int(self.autofocus_steps, "autofocus_steps", 2)
        check_int(self.autofocus_levels, "autofocus_levels", 0)
        check_int(self.autofocus_iterations, "autofocus_iterations", 1)
        check_int(self.autofocus_frames, "autofocus_frames", 1)
        if self.object_init not in ("mean", "flat"):
            raise ValueError(f"object_init must be 'mean' or 'flat', got {self.object_init!r}")
        check_int(self.threads, "threads", 1)
        if self.fft_backend not in _fft.BACKENDS:
            raise ValueError(f"fft_backend must be one of {_fft.BACKENDS}, got {self.fft_backend!r}")
        if self.kernels not in ("auto", "numba", "numpy"):
            raise ValueError(f"kernels must be 'auto', 'numba' or 'numpy', got {self.kernels!r}")
        if self.fft_effort not in _fft.EFFORTS:
            raise ValueError(f"fft_effort must be one of {_fft.EFFORTS}, got {self.fft_effort!r}")
        if self.precision not in ("double", "single"):
            raise ValueError(f"precision must be 'double' or 'single', got {self.precision!r}")


@dataclass
class ReconState:
    """Mutable solver state on the fine grid."""

    obj: np.ndarray
    probe: np.ndarray
    obj_velocity: np.ndarray = None
    probe_velocity: np.ndarray = None
    iteration: int = 0
    residuals: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.obj.shape != self.probe.shape:
            raise ValueError(f"object {self.obj.shape} and probe {self.probe.shape} grids differ")
        if self.obj_velocity is None:
            self.obj_velocity = np.zeros_like(self.obj)
        if self.probe_velocity is None:
            self.probe_velocity = np.zeros_like(self.probe)


@dataclass
class ReconResult:
    obj: np.ndarray
    probe: np.ndarray
    residuals: np.ndarray
    distance: float
    trajectory: ScanTrajectory
    pitch: float
    wavelength: float
    elapsed: float = 0.0
    autofocus_curve: tuple | None = None

    @property
    def residual(self):
        return float(self.residuals[-1])


# --------------------------------------------------------------------------- building blocks

def initialize(frames, trajectory, s, object_init="mean", probe=None):
    """Starting guesses for object and probe.

    The probe amplitude is the square root of the mean of the frames
    shifted back by the trajectory; the object amplitude is the square root
    of the plain frame mean. Both are Fourier-upsampled by ``s`` and carry
    zero phase.

    With ``object_init='flat'`` the object is the constant amplitude that
    reproduces the mean frame intensity under ``probe`` (or under the
    estimated probe if none is given).
    """
    stack = check_frames(getattr(frames, "frames", frames))
    if len(trajectory) != len(stack):
        raise ValueError(f"trajectory has {len(trajectory)} shifts for {len(stack)} frames")
    back = np.zeros(stack.shape[1:])
    for frame, (x, y) in zip(stack, trajectory.shifts):
        back += subpixel_shift(frame, -x, -y) if (x or y) else frame
    back = np.clip(back / len(stack), 0, None)
    probe_guess = np.abs(fourier_upsample(np.sqrt(back), s)).astype(np.complex128)
    if probe is None:
        probe = probe_guess
    else:
        probe = np.array(probe, dtype=np.complex128)
        if probe.shape != probe_guess.shape:
            raise ValueError(f"probe shape {probe.shape} does not match grid {probe_guess.shape}")
    if object_init == "mean":
        obj = np.abs(fourier_upsample(np.sqrt(stack.mean(axis=0)), s)).astype(np.complex128)
    elif object_init == "flat":
        power = float(np.mean(np.abs(probe) ** 2))
        if power == 0:
            raise ValueError("probe is identically zero")
        obj = np.full(probe.shape, math.sqrt(stack.mean() / power), dtype=np.complex128)
    else:
        raise ValueError(f"object_init must be 'mean' or 'flat', got {object_init!r}")
    return ReconState(obj, probe)


def subsampled_projection(psi, measured, s):
    """Replace the modelled amplitude by the measured one on the stride-``s`` lattice.

    Samples off the lattice are returned unchanged. Where ``|psi|`` is
    below 1e-12 the phase factor is taken as 1.
    """
    psi = np.asarray(psi)
    measured = np.asarray(measured, dtype=np.float64)
    if (psi.shape[0] != s * measured.shape[0]) or (psi.shape[1] != s * measured.shape[1]):
        raise ValueError(f"psi {psi.shape} is not {s}x the frame {measured.shape}")
    out = psi.copy()
    out[::s, ::s] = _project_lattice(psi[::s, ::s], measured)
    return out


def _project_lattice(lattice, measured):
    mag = np.abs(lattice)
    unit = np.where(mag < PHASE_FLOOR, 1.0, lattice / np.where(mag < PHASE_FLOOR, 1.0, mag))
    return unit * np.sqrt(measured)


def rpie_update_object(obj, probe, exit_wave, revised, alpha):
    """rPIE object step::

        O + conj(P) (phi' - phi) / ((1 - a)|P|^2 + a max|P|^2)
    """
    p2 = np.abs(probe) ** 2
    top = p2.max()
    if top == 0:
        raise ValueError("probe is identically zero")
    return obj + np.conj(probe) * (revised - exit_wave) / ((1 - alpha) * p2 + alpha * top)


def rpie_update_probe(probe, obj, exit_wave, revised, alpha):
    """rPIE probe step, the object step with the roles of object and probe swapped."""
    o2 = np.abs(obj) ** 2
    top = o2.max()
    if top == 0:
        raise ValueError("object is identically zero")
    return probe + np.conj(obj) * (revised - exit_wave) / ((1 - alpha) * o2 + alpha * top)


# --------------------------------------------------------------------------- engine

class _Engine:
    """Per-frame forward model and back-propagation in polyphase layout.

    Object, probe and exit wave are kept as ``(s, s, M, M)`` polyphase
    arrays (see :mod:`specklepty._kernels`). The detector lattice then is
    ``IFFT_M(sum_rc FFT_M(phi_rc) * W_rc)`` and the exit-wave correction
    of a lattice update is ``IFFT_M(FFT_M(delta) * conj(W_rc))`` per
    component, where ``W`` folds the transfer function with the
    polyphase twiddles. Both are exact rewrites of propagating on the fine
    grid, at the cost of ``s*s`` small FFTs instead of one large one.
    """

    def __init__(self, shape, s, pitch, wavelength, distance, config):
        self.s = s
        n = shape[0]
        self.m = m = n // s
        cdt = np.complex64 if config.precision == "single" else np.complex128
        self.dtype = cdt
        kernel = make_kernel(shape, pitch, wavelength, distance).values
        self.weights = _polyphase_weights(kernel, s).astype(cdt)
        self.fft = _fft.get_backend(config.fft_backend, (s, s, m, m), cdt, config.threads,
                                    config.fft_effort)
        self.small_fft = _fft.get_backend(config.fft_backend, (m, m), cdt, config.threads,
                                          config.fft_effort)
        use_numba = config.kernels == "numba" or (config.kernels == "auto" and _kernels.HAVE_NUMBA)
        (self.exit_wave, self._combine, self._split, self._project,
         self._update) = _kernels.get_kernels(use_numba)

    def form_exit_wave(self, obj, probe, dy, dx):
        """Write ``O * roll(P, (dy, dx))`` into the forward FFT buffer; returns the shift table."""
        table = _kernels.shift_table(self.s, dy, dx)
        self.exit_wave(obj, probe, table, self.fft.forward_input)
        return table

    def detector_lattice(self, exit_wave=None):
        """Detector field on the lattice; ``None`` uses the prepared buffer."""
        if exit_wave is not None:
            self.fft.forward_input[...] = _kernels.to_poly(np.asarray(exit_wave), self.s)
        spec = self.fft.run_forward()
        self._combine(spec, self.weights, self.small_fft.inverse_input)
        return self.small_fft.run_inverse()

    def project(self, lattice, amp):
        """Amplitude correction on the lattice, written to the small FFT buffer.

        Returns the squared amplitude misfit of this frame.
        """
        return self._project(lattice, amp, PHASE_FLOOR, self.small_fft.forward_input)

    def exit_wave_correction(self, lattice_delta=None):
        """Back-propagated exit-wave correction; ``None`` uses the projected buffer."""
        if lattice_delta is not None:
            self.small_fft.forward_input[...] = lattice_delta
        g = self.small_fft.run_forward()
        self._split(g, self.weights, self.fft.inverse_input)
        return self.fft.run_inverse()

    def update(self, obj, probe, delta, table, alpha_obj, alpha_probe, p2max, o2max, joint):
        return self._update(obj, probe, delta, table, alpha_obj, alpha_probe, p2max, o2max, joint)


def _polyphase_weights(kernel, s):
    n = kernel.shape[0]
    m = n // s
    u = np.arange(n)
    out = np.empty((s, s, m, m), dtype=np.complex128)
    for r in range(s):
        row = np.exp(-2j * np.pi * u * r / n)
        for c in range(s):
            col = np.exp(-2j * np.pi * u * c / n)
            full = kernel * row[:, None] * col[None, :]
            out[r, c] = full.reshape(s, m, s, m).sum(axis=(0, 2)) / s**2
    return out


def _zero_or_nonfinite(a, name, iteration, frame):
    if not np.isfinite(a).all():
        raise NonFiniteStateError(iteration, frame)
    raise ValueError(f"{name} is identically zero")


def _max_power(a):
    return float(np.max(a.real ** 2 + a.imag ** 2))


def iterate(state, frames, trajectory, config, distance, pitch, wavelength, callback=None):
    """Run ``config.iterations`` passes of the reconstruction in place.

    Parameters
    ----------
    state : ReconState
        Initial guess, updated in place.
    frames : ndarray, shape (J, M, M)
    trajectory : ScanTrajectory
    config : ReconConfig
    distance, pitch, wavelength : float
        Propagation distance, fine-grid pitch and wavelength in micrometers.
    callback : callable, optional
        Called as ``callback(iteration, state)`` after every pass.

    Returns
    -------
    ReconState
    """
    stack = check_frames(frames)
    s = config.upsampling
    n_frames, m, _ = stack.shape
    if state.obj.shape != (s * m, s * m):
        raise ValueError(f"state grid {state.obj.shape} does not match {s}x{m} frames")
    if len(trajectory) != n_frames:
        raise ValueError(f"trajectory has {len(trajectory)} shifts for {n_frames} frames")

    if not (np.isfinite(state.obj).all() and np.isfinite(state.probe).all()):
        raise ValueError("initial object/probe contains non-finite samples")
    engine = _Engine(state.obj.shape, s, pitch, wavelength, distance, config)
    cdt = engine.dtype
    obj = _kernels.to_poly(state.obj.astype(cdt), s)
    probe = _kernels.to_poly(state.probe.astype(cdt), s)
    amp = np.sqrt(stack).astype(cdt().real.dtype)
    total = float(stack.sum()) or 1.0
    shifts = trajectory.grid_shifts(s)
    order = np.random.default_rng(config.order_seed).permutation(n_frames)
    joint = config.probe_mode == "joint"
    beta = config.momentum
    v_obj = _kernels.to_poly(state.obj_velocity.astype(cdt), s)
    v_probe = _kernels.to_poly(state.probe_velocity.astype(cdt), s)

    for _ in range(config.iterations):
        n = state.iteration + 1
        obj_prev = obj.copy() if beta > 0 and config.momentum_object else None
        probe_prev = probe.copy() if beta > 0 and joint and config.momentum_probe else None
        o2max, p2max = _max_power(obj), _max_power(probe)
        if not p2max > 0:
            _zero_or_nonfinite(probe, "probe", n, int(order[0]))
        err = 0.0
        for j in order:
            dx, dy = shifts[j]
            table = engine.form_exit_wave(obj, probe, dy, dx)
            lattice = engine.detector_lattice()
            err += engine.project(lattice, amp[j])
            delta = engine.exit_wave_correction()
            if joint and not o2max > 0:
                _zero_or_nonfinite(obj, "object", n, int(j))
            o2max, p2max = engine.update(obj, probe, delta, table, config.alpha_obj,
                                         config.alpha_probe, p2max, o2max, joint)
        if obj_prev is not None:
            v_obj *= beta
            v_obj += obj - obj_prev
            obj += beta * v_obj
        if probe_prev is not None:
            v_probe *= beta
            v_probe += probe - probe_prev
            probe += beta * v_probe
        if not (np.isfinite(obj).all() and np.isfinite(probe).all()):
            raise NonFiniteStateError(n, int(order[-1]))
        state.iteration = n
        state.residuals.append(err / total)
        logger.debug("iteration %d residual %.4e", n, err / total)
        if callback is not None:
            _store(state, obj, probe, v_obj, v_probe)
            callback(n, state)
    _store(state, obj, probe, v_obj, v_probe)
    return state


def _store(state, obj, probe, v_obj, v_probe):
    state.obj = _kernels.from_poly(obj)
    state.probe = _kernels.from_poly(probe)
    state.obj_velocity = _kernels.from_poly(v_obj)
    state.probe_velocity = _kernels.from_poly(v_probe)


def _resolve_distance(config, frames):
    if config.distance is not None:
        return float(config.distance)
    return float(getattr(frames, "distance", None) or 0.0)


def reconstruct(frames, trajectory, config=None, probe=None, callback=None):
    """Full reconstruction from a :class:`~specklepty.simulate.FrameStack`.

    Parameters
    ----------
    frames : FrameStack
    trajectory : ScanTrajectory
        Speckle shifts in detector pixels, e.g. from
        :func:`~specklepty.register.estimate_trajectory`.
    config : ReconConfig, optional
    probe : ndarray, optional
        Known probe on the fine grid; required when ``probe_mode='fixed'``
        and used as the starting probe otherwise.

    Returns
    -------
    ReconResult
    """
    config = config or ReconConfig()
    t0 = time.perf_counter()
    s = config.upsampling
    pitch = frames.detector_pitch / s
    curve = None
    if config.autofocus_range is not None:
        distance, curve = autofocus(frames, trajectory, config, probe=probe)
    else:
        distance = _resolve_distance(config, frames)
    if probe is None and config.probe_mode == "fixed":
        raise ValueError("probe_mode='fixed' needs a probe")
    state = initialize(frames, trajectory, s, config.object_init, probe)
    iterate(state, frames.frames, trajectory, config, distance, pitch, frames.wavelength,
            callback=callback)
    return ReconResult(
        obj=state.obj.astype(np.complex128),
        probe=state.probe.astype(np.complex128),
        residuals=np.asarray(state.residuals),
        distance=distance,
        trajectory=trajectory,
        pitch=pitch,
        wavelength=frames.wavelength,
        elapsed=time.perf_counter() - t0,
        autofocus_curve=curve,
    )


# --------------------------------------------------------------------------- autofocus

def autofocus(frames, trajectory, config, probe=None):
    """Search the object-to-detector distance that best explains the data.

    Every candidate distance gets a short reconstruction on a frame subset;
    its score is minus the final detector-plane residual. A coarse grid is
    refined by golden-section search around the best grid point.

    Returns
    -------
    distance : float
    curve : tuple of ndarray
        ``(distances, scores)`` of every evaluated candidate, sorted.
    """
    if config.autofocus_range is None:
        raise ValueError("autofocus needs config.autofocus_range")
    if len(frames) < 2:
        raise ValueError("autofocus needs at least 2 frames")
    lo, hi = map(float, config.autofocus_range)
    n_sub = min(config.autofocus_frames, len(frames))
    sub = np.arange(n_sub)
    sub_frames = frames.subset(sub)
    sub_traj = trajectory.subset(sub)
    s = config.upsampling
    pitch = frames.detector_pitch / s
    short = ReconConfig(**{**config.__dict__, "iterations": config.autofocus_iterations,
                           "autofocus_range": None})
    start = initialize(sub_frames, sub_traj, s, config.object_init, probe)
    cache = {}

    def score(d):
        d = float(d)
        if d not in cache:
            st = ReconState(start.obj.copy(), start.probe.copy())
            iterate(st, sub_frames.frames, sub_traj, short, d, pitch, frames.wavelength)
            cache[d] = -st.residuals[-1]
            logger.debug("autofocus d=%.3f score=%.5e", d, cache[d])
        return cache[d]

    grid = np.linspace(lo, hi, config.autofocus_steps)
    scores = np.array([score(d) for d in grid])
    k = int(np.argmax(scores))
    if k in (0, len(grid) - 1):
        warnings.warn(f"autofocus optimum lies on the search boundary ({grid[k]:.2f} um)",
                      RuntimeWarning, stacklevel=2)
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    for _ in range(config.autofocus_levels):
        if score(c) > score(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best = max(cache, key=cache.get)
    ds = np.array(sorted(cache))
    return best, (ds, np.array([cache[x] for x in ds]))
