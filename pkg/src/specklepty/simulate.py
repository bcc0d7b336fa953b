"""Synthetic scenes, diffuser speckle, scan trajectories and detector frames.

The forward model is::

    I_j = | propagate(O * shift(P, x_j, y_j), d) |^2   sampled every s samples

with all fields living on one ``sM x sM`` periodic grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.special import ndtr

from ._validation import check_frames, check_int, check_positive
from .field import ComplexField, circular_shift, frequency_grid, make_kernel, propagate
from .register import ScanTrajectory

logger = logging.getLogger(__name__)

WAVELENGTH_UM = 0.532
DETECTOR_PITCH_UM = 1.67
DISTANCE_UM = 500.0
UPSAMPLING = 3

PATTERNS = ("flat", "bars", "phase_disk", "cells", "image")


@dataclass
class SceneSpec:
    """Description of the ground-truth object.

    ``pattern`` is one of ``flat``, ``bars``, ``phase_disk``, ``cells`` or
    ``image``. Only the fields relevant to the chosen pattern are read.
    """

    pattern: str = "cells"
    grid: int = 384
    pitch: float = DETECTOR_PITCH_UM / UPSAMPLING
    # bars
    bar_periods: tuple = (3, 6, 9)
    bar_count: int = 3
    bar_length: int = 30
    bar_amplitude: float = 0.0
    # phase disk
    phase_height: float = 1.0
    disk_radius: float | None = None
    # cells
    cell_count: int = 40
    cell_radius: tuple = (7.0, 11.0)
    cell_amplitude: float = 0.7
    cell_phase: float = 1.0
    seed: int = 0
    # image
    amplitude_file: str | None = None
    phase_file: str | None = None
    phase_range: float = np.pi

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown scene pattern {self.pattern!r}; choose from {PATTERNS}")
        check_int(self.grid, "grid", 1)
        check_positive(self.pitch, "pitch")


@dataclass
class DiffuserSpec:
    """Random phase screen followed by free-space propagation to the object."""

    seed: int = 0
    feature_size: float = 5.0
    phase_depth: float = 2 * np.pi
    distance: float = 3000.0

    def __post_init__(self):
        check_positive(self.feature_size, "feature_size")
        check_positive(self.phase_depth, "phase_depth", strict=False)


@dataclass
class TrajectorySpec:
    """Speckle scan: ``count`` frames with steps of about ``mean_step`` detector pixels."""

    count: int = 100
    mean_step: float = 2.5
    jitter: float = 0.2
    pattern: str = "random_walk"
    seed: int = 0
    max_excursion: float | None = None

    def __post_init__(self):
        check_int(self.count, "count", 1)
        check_positive(self.mean_step, "mean_step")
        if not 0 <= self.jitter < 1:
            raise ValueError(f"jitter must be in [0, 1), got {self.jitter}")
        if self.pattern not in ("random_walk", "raster"):
            raise ValueError(f"unknown trajectory pattern {self.pattern!r}")


@dataclass
class FrameStack:
    """Detector frames ``I_j`` with acquisition metadata."""

    frames: np.ndarray
    detector_pitch: float = DETECTOR_PITCH_UM
    wavelength: float = WAVELENGTH_UM
    distance: float = DISTANCE_UM
    order: np.ndarray | None = None

    def __post_init__(self):
        self.frames = check_frames(self.frames)
        check_positive(self.detector_pitch, "detector_pitch")
        check_positive(self.wavelength, "wavelength")
        if self.order is None:
            self.order = np.arange(len(self.frames))
        self.order = np.asarray(self.order, dtype=np.int64)
        if self.order.shape != (len(self.frames),):
            raise ValueError("order tags must have one entry per frame")

    def __len__(self):
        return len(self.frames)

    @property
    def frame_size(self):
        return self.frames.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return FrameStack(self.frames[index], self.detector_pitch, self.wavelength,
                          self.distance, self.order[index])


# --------------------------------------------------------------------------- objects

def _disk(shape, cy, cx, r):
    yy, xx = np.ogrid[:shape[0], :shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def bar_chart_layout(spec):
    """Regions of the bar groups as ``(period, orientation, (y0, y1, x0, x1))``.

    ``orientation`` is ``'x'`` for bars varying along x (vertical bars).
    Each region spans exactly ``bar_count`` periods across the bars.
    """
    n = spec.grid
    layout = []
    periods = tuple(int(p) for p in spec.bar_periods)
    slot = n // (len(periods) + 1)
    for i, p in enumerate(periods):
        width = p * spec.bar_count
        cx = slot * (i + 1)
        y0 = n // 4 - spec.bar_length // 2
        x0 = cx - width // 2
        layout.append((p, "x", (y0, y0 + spec.bar_length, x0, x0 + width)))
        y0 = 3 * n // 4 - width // 2
        x0 = cx - spec.bar_length // 2
        layout.append((p, "y", (y0, y0 + width, x0, x0 + spec.bar_length)))
    return layout


def _bar_chart(spec):
    amp = np.ones((spec.grid, spec.grid))
    for p, orient, (y0, y1, x0, x1) in bar_chart_layout(spec):
        if p < 2:
            raise ValueError("bar period must be at least 2 samples")
        if min(y0, x0) < 0 or max(y1, x1) > spec.grid:
            raise ValueError(f"bar group of period {p} does not fit in a {spec.grid} grid")
        bar = max(p // 2, 1)
        if orient == "x":
            for k in range(spec.bar_count):
                amp[y0:y1, x0 + k * p:x0 + k * p + bar] = spec.bar_amplitude
        else:
            for k in range(spec.bar_count):
                amp[y0 + k * p:y0 + k * p + bar, x0:x1] = spec.bar_amplitude
    return amp, np.zeros_like(amp)


def _cells(spec):
    rng = np.random.default_rng(spec.seed)
    n = spec.grid
    amp = np.ones((n, n))
    phase = np.zeros((n, n))
    yy, xx = np.mgrid[:n, :n]
    placed = []
    tries = 0
    while len(placed) < spec.cell_count and tries < 200 * spec.cell_count:
        tries += 1
        r = rng.uniform(*spec.cell_radius)
        cy, cx = rng.uniform(r + 1, n - r - 1, size=2)
        if any(np.hypot(cy - y, cx - x) < r + q + 2 for y, x, q in placed):
            continue
        placed.append((cy, cx, r))
        rho2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
        inside = rho2 <= 1
        # biconcave disk: thicker rim, thinner centre
        profile = np.where(inside, 0.6 + 0.4 * rho2, 0.0) * np.sqrt(np.clip(1 - rho2**4, 0, 1))
        amp = np.where(inside, 1 - (1 - spec.cell_amplitude) * profile / 1.0, amp)
        phase = np.where(inside, spec.cell_phase * profile, phase)
    return np.clip(amp, 0, 1), phase


def _load_image(path, shape):
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
    else:
        from PIL import Image

        with Image.open(path) as im:
            im = im.convert("I;16") if im.mode in ("I;16", "I;16B", "I") else im.convert("L")
            maxval = 65535.0 if im.mode.startswith("I") else 255.0
            arr = np.asarray(im, dtype=np.float64) / maxval
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image")
    if arr.shape != shape:
        from PIL import Image

        im = Image.fromarray(arr.astype(np.float32), mode="F").resize(shape[::-1], Image.BICUBIC)
        arr = np.asarray(im, dtype=np.float64)
    return arr


def make_object(spec, wavelength=WAVELENGTH_UM):
    """Build the complex ground-truth object ``amplitude * exp(i phase)``.

    Returns
    -------
    ComplexField
        ``spec.grid x spec.grid`` samples at ``spec.pitch``.
    """
    shape = (spec.grid, spec.grid)
    if spec.pattern == "flat":
        amp, phase = np.ones(shape), np.zeros(shape)
    elif spec.pattern == "bars":
        amp, phase = _bar_chart(spec)
    elif spec.pattern == "phase_disk":
        r = spec.disk_radius if spec.disk_radius is not None else spec.grid / 6
        amp = np.ones(shape)
        phase = np.where(_disk(shape, spec.grid // 2, spec.grid // 2, r), spec.phase_height, 0.0)
    elif spec.pattern == "cells":
        amp, phase = _cells(spec)
    else:
        if spec.amplitude_file is None and spec.phase_file is None:
            raise ValueError("image scene needs amplitude_file and/or phase_file")
        amp = np.ones(shape) if spec.amplitude_file is None else _load_image(spec.amplitude_file, shape)
        if spec.phase_file is None:
            phase = np.zeros(shape)
        else:
            unit = _load_image(spec.phase_file, shape)
            if unit.min() < 0 or unit.max() > 1:
                raise ValueError(f"{spec.phase_file}: phase image must be normalized to [0, 1]")
            phase = unit * spec.phase_range
        if amp.min() < 0 or amp.max() > 1:
            raise ValueError(f"{spec.amplitude_file}: amplitude values must lie in [0, 1]")
    if np.any(np.abs(phase) > np.pi + 1e-12):
        raise ValueError("object phase must lie in (-pi, pi]")
    return ComplexField(amp * np.exp(1j * phase), spec.pitch, wavelength)


# --------------------------------------------------------------------------- speckle

def make_speckle(spec, grid, pitch, wavelength=WAVELENGTH_UM):
    """Speckle probe behind a random phase diffuser.

    A white Gaussian screen is low-pass filtered to ``feature_size``,
    mapped to a uniform distribution on ``[0, phase_depth]`` and
    propagated ``spec.distance`` micrometers to the object plane.
    """
    if spec.feature_size < pitch:
        raise ValueError(f"feature size {spec.feature_size} um is below the grid pitch {pitch} um")
    shape = (grid, grid) if np.isscalar(grid) else tuple(grid)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(shape)
    fy, fx = frequency_grid(shape, pitch)
    sigma = spec.feature_size / 2.0
    lowpass = np.exp(-2 * (np.pi * sigma) ** 2 * (fx**2 + fy**2))
    smooth = sfft.ifft2(sfft.fft2(noise) * lowpass).real
    std = smooth.std()
    unit = ndtr(smooth / std) if std > 0 else np.full(shape, 0.5)
    screen = ComplexField(np.exp(1j * spec.phase_depth * unit), pitch, wavelength)
    return propagate(screen, spec.distance)


# --------------------------------------------------------------------------- trajectory

def make_trajectory(spec):
    """Speckle positions in detector pixels, first frame at ``(0, 0)``.

    Steps have length ``mean_step * (1 + jitter * u)`` with ``u`` uniform on
    ``[-1, 1]``. A random walk picks step directions at random and redraws
    any that would leave the ``max_excursion`` box.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.count
    bound = np.inf if spec.max_excursion is None else float(spec.max_excursion)
    pos = np.zeros((n, 2))
    if spec.pattern == "random_walk":
        for j in range(1, n):
            length = spec.mean_step * (1 + spec.jitter * rng.uniform(-1, 1))
            for _ in range(64):
                theta = rng.uniform(0, 2 * np.pi)
                step = length * np.array([np.cos(theta), np.sin(theta)])
                if np.all(np.abs(pos[j - 1] + step) <= bound):
                    break
            else:
                back = -pos[j - 1]
                step = length * back / np.linalg.norm(back)
            pos[j] = pos[j - 1] + step
    else:
        side = int(np.ceil(np.sqrt(n)))
        for j in range(n):
            row, col = divmod(j, side)
            col = col if row % 2 == 0 else side - 1 - col
            pos[j] = spec.mean_step * np.array([col, row], dtype=float)
        pos += spec.jitter * spec.mean_step * rng.uniform(-0.5, 0.5, size=pos.shape)
        pos -= pos[0]
    if np.any(np.abs(pos) > bound + 1e-9):
        raise ValueError(f"trajectory exceeds the +/-{bound} pixel margin")
    return ScanTrajectory(pos)


# --------------------------------------------------------------------------- frames

def forward_frame(obj, probe, shift, distance, s, kernel=None):
    """One detector frame of the forward model.

    Parameters
    ----------
    obj, probe : ComplexField or ndarray
        Object and probe on the same ``sM x sM`` grid.
    shift : (float, float)
        Probe shift ``(x_j, y_j)`` in detector pixels; realized as the
        nearest integer shift on the fine grid.
    distance : float
        Object-to-detector distance in micrometers.
    s : int
        Upsampling factor between detector and object grid.

    Returns
    -------
    ndarray, shape (M, M)
    """
    o = obj.data if isinstance(obj, ComplexField) else np.asarray(obj)
    p = probe.data if isinstance(probe, ComplexField) else np.asarray(probe)
    if o.shape != p.shape:
        raise ValueError(f"object {o.shape} and probe {p.shape} grids differ")
    if o.shape[0] % s or o.shape[1] % s:
        raise ValueError(f"grid {o.shape} is not a multiple of s={s}")
    if kernel is None:
        pitch = getattr(obj, "pitch", None) or getattr(probe, "pitch")
        wl = getattr(obj, "wavelength", None) or getattr(probe, "wavelength")
        kernel = make_kernel(o.shape, pitch, wl, distance)
    dx, dy = np.rint(np.asarray(shift, dtype=float) * s).astype(int)
    exit_wave = o * circular_shift(p, dx, dy)
    psi = sfft.ifft2(sfft.fft2(exit_wave, norm="ortho") * kernel.values, norm="ortho")
    lattice = psi[::s, ::s]
    return lattice.real**2 + lattice.imag**2


def add_noise(frames, photons=None, read_sigma=0.0, seed=0):
    """Poisson shot noise plus Gaussian read noise, clipped at zero.

    ``photons`` is the expected photon count for a pixel at the frame's
    mean intensity (``None`` disables shot noise); ``read_sigma`` is in
    intensity units. Each frame draws from its own ``(seed, j)`` stream.
    """
    arr = check_frames(frames)
    if photons is None and read_sigma == 0:
        return arr.copy()
    if photons is not None:
        check_positive(photons, "photons")
    check_positive(read_sigma, "read_sigma", strict=False)
    out = np.empty_like(arr)
    for j, frame in enumerate(arr):
        rng = np.random.default_rng([seed, j])
        noisy = frame
        mean = frame.mean()
        if photons is not None and mean > 0:
            gain = photons / mean
            noisy = rng.poisson(frame * gain) / gain
        if read_sigma > 0:
            noisy = noisy + rng.normal(0.0, read_sigma, size=frame.shape)
        out[j] = np.clip(noisy, 0, None)
    return out


# --------------------------------------------------------------------------- pipeline

@dataclass
class SimulationConfig:
    """Everything needed to synthesize one dataset."""

    frame_size: int = 128
    upsampling: int = UPSAMPLING
    wavelength: float = WAVELENGTH_UM
    detector_pitch: float = DETECTOR_PITCH_UM
    distance: float = DISTANCE_UM
    scene: SceneSpec = dc_field(default_factory=SceneSpec)
    diffuser: DiffuserSpec = dc_field(default_factory=DiffuserSpec)
    trajectory: TrajectorySpec = dc_field(default_factory=TrajectorySpec)
    photons: float | None = None
    read_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        check_int(self.frame_size, "frame_size", 1)
        check_int(self.upsampling, "upsampling", 1)
        self.scene.grid = self.frame_size * self.upsampling
        self.scene.pitch = self.detector_pitch / self.upsampling
        if self.trajectory.max_excursion is None:
            self.trajectory.max_excursion = self.frame_size / 8


@dataclass
class SimulatedDataset:
    frames: FrameStack
    trajectory: ScanTrajectory
    obj: ComplexField
    probe: ComplexField
    upsampling: int

    @property
    def realized_trajectory(self):
        """Shifts actually applied: the fine-grid rounding of ``trajectory``."""
        s = self.upsampling
        return ScanTrajectory(self.trajectory.grid_shifts(s) / s)


def simulate_dataset(config=None):
    """Synthesize object, probe, trajectory and frames for ``config``."""
    config = config or SimulationConfig()
    s = config.upsampling
    obj = make_object(config.scene, config.wavelength)
    probe = make_speckle(config.diffuser, obj.shape, obj.pitch, config.wavelength)
    traj = make_trajectory(config.trajectory)
    kernel = make_kernel(obj.shape, obj.pitch, config.wavelength, config.distance)
    frames = np.stack([forward_frame(obj, probe, xy, config.distance, s, kernel)
                       for xy in traj.shifts])
    frames = add_noise(frames, config.photons, config.read_sigma, config.noise_seed)
    stack = FrameStack(frames, config.detector_pitch, config.wavelength, config.distance)
    logger.info("simulated %d frames of %dx%d (object grid %d)", len(stack),
                config.frame_size, config.frame_size, obj.shape[0])
    return SimulatedDataset(stack, traj, obj, probe, s)
