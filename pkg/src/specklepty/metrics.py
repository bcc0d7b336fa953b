"""Error metrics against simulator ground truth.

Phase retrieval recovers the object only up to a global complex factor, so
every comparison first solves for the factor that best maps the
reconstruction onto the truth.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

__all__ = [
    "EvalReport",
    "central_mask",
    "phase_aligned_rmse",
    "align_gauge",
    "amplitude_rmse",
    "phase_rms_error",
    "bar_contrast",
    "phase_height_profile",
    "HeightProfile",
    "plateau_height",
    "trajectory_errors",
    "evaluate",
    "write_profile_csv",
]


def central_mask(shape, fraction=0.5):
    """Boolean mask of the central ``fraction x fraction`` region."""
    if not 0 < fraction <= 1:
        raise ValueError(f"mask fraction must lie in (0, 1], got {fraction}")
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    dh = int(round(h * (1 - fraction) / 2))
    dw = int(round(w * (1 - fraction) / 2))
    mask[dh:h - dh, dw:w - dw] = True
    return mask


def _prepare(recovered, truth, mask):
    rec = np.asarray(recovered)
    tru = np.asarray(truth)
    if rec.shape != tru.shape:
        raise ValueError(f"grid mismatch: recovered {rec.shape}, truth {tru.shape}")
    if mask is None:
        mask = central_mask(tru.shape)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tru.shape:
        raise ValueError(f"mask {mask.shape} does not match grid {tru.shape}")
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    return rec[mask], tru[mask]


def _gauge(r, t):
    norm = np.vdot(r, r).real
    return np.vdot(r, t) / norm if norm > 0 else 0.0


def align_gauge(recovered, truth, mask=None):
    """``recovered`` multiplied by the complex factor that best matches ``truth`` on the mask."""
    r, t = _prepare(recovered, truth, mask)
    return _gauge(r, t) * np.asarray(recovered)


def phase_aligned_rmse(recovered, truth, mask=None):
    """Relative RMSE after the optimal global complex rescaling.

    ``c = sum(conj(rec) * truth) / sum(|rec|^2)`` over the mask, then
    ``sqrt(sum|c rec - truth|^2 / sum|truth|^2)``.

    Parameters
    ----------
    recovered, truth : ndarray of complex
    mask : ndarray of bool, optional
        Defaults to the central half of the grid in each direction.
    """
    r, t = _prepare(recovered, truth, mask)
    energy = np.vdot(t, t).real
    if energy == 0:
        raise ValueError("truth has zero energy on the evaluation mask")
    c = _gauge(r, t)
    return float(np.sqrt(np.sum(np.abs(c * r - t) ** 2) / energy))


def amplitude_rmse(recovered, truth, mask=None):
    """Relative RMSE of ``|O|`` after the optimal positive rescaling."""
    r, t = _prepare(recovered, truth, mask)
    r, t = np.abs(r), np.abs(t)
    energy = np.dot(t, t)
    if energy == 0:
        raise ValueError("truth has zero energy on the evaluation mask")
    rr = np.dot(r, r)
    a = np.dot(r, t) / rr if rr > 0 else 0.0
    return float(np.sqrt(np.sum((a * r - t) ** 2) / energy))


def phase_rms_error(recovered, truth, mask=None):
    """RMS of the wrapped phase difference after removing the global piston (radians)."""
    r, t = _prepare(recovered, truth, mask)
    cross = r * np.conj(t)
    piston = np.angle(np.sum(cross))
    diff = np.angle(cross * np.exp(-1j * piston))
    return float(np.sqrt(np.mean(diff ** 2)))


def bar_contrast(image, period, region, axis="x"):
    """Michelson contrast of a bar group.

    The intensity ``|image|^2`` (or ``image`` itself when real) is averaged
    along the bars, the resulting profile across the bars is folded modulo
    ``period`` and the contrast of the folded profile is returned.

    Parameters
    ----------
    image : ndarray
        Complex field or real intensity.
    period : int
        Bar period in samples (>= 2).
    region : (y0, y1, x0, x1)
        Rows and columns holding the bar group.
    axis : {'x', 'y'}
        Direction along which the bars alternate.
    """
    if period < 2:
        raise ValueError(f"bar period must be at least 2 samples, got {period}")
    img = np.asarray(image)
    inten = np.abs(img) ** 2 if np.iscomplexobj(img) else img.astype(np.float64)
    y0, y1, x0, x1 = (int(v) for v in region)
    patch = inten[y0:y1, x0:x1]
    if patch.size == 0:
        raise ValueError(f"region {region} is empty")
    if axis == "x":
        profile, start = patch.mean(axis=0), x0
    elif axis == "y":
        profile, start = patch.mean(axis=1), y0
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    phase = (start + np.arange(profile.size)) % period
    folded = np.array([profile[phase == k].mean() for k in range(period) if np.any(phase == k)])
    hi, lo = folded.max(), folded.min()
    if hi + lo <= 0:
        return 0.0
    return float((hi - lo) / (hi + lo))


@dataclass
class HeightProfile:
    """Height along a line; ``ambiguous`` marks samples after a step above pi/2."""

    position: np.ndarray
    height: np.ndarray
    phase: np.ndarray
    ambiguous: np.ndarray

    @property
    def has_ambiguity(self):
        return bool(self.ambiguous.any())


def phase_height_profile(field, start, end, wavelength, delta_n, pitch=1.0, samples=None):
    """Height profile of a phase object along a straight line.

    The complex field is interpolated bilinearly along the line from
    ``start`` to ``end`` (``(row, col)`` in samples), its phase unwrapped in
    1D and converted to height ``phase * wavelength / (2 pi delta_n)``.

    Returns
    -------
    HeightProfile
        Positions in the units of ``pitch`` (micrometers for physical
        pitches) measured from ``start``.
    """
    if delta_n == 0:
        raise ValueError("refractive index difference must be nonzero")
    f = np.asarray(field)
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    length = float(np.hypot(*(end - start)))
    n = int(samples or max(int(np.ceil(length)) + 1, 2))
    t = np.linspace(0.0, 1.0, n)
    coords = start[:, None] + (end - start)[:, None] * t
    re = ndimage.map_coordinates(f.real.astype(np.float64), coords, order=1, mode="grid-wrap")
    im = ndimage.map_coordinates(np.imag(f).astype(np.float64), coords, order=1, mode="grid-wrap")
    values = re + 1j * im
    if np.any(np.abs(values) == 0):
        raise ValueError("field vanishes on the profile path; phase is undefined there")
    phase = np.unwrap(np.angle(values))
    step = np.abs(np.diff(phase))
    ambiguous = np.concatenate([[False], step > np.pi / 2])
    if ambiguous.any():
        logger.warning("phase profile has %d steps above pi/2; unwrapping may be ambiguous",
                       int(ambiguous.sum()))
    height = phase * wavelength / (2 * np.pi * delta_n)
    return HeightProfile(t * length * pitch, height, phase, ambiguous)


def plateau_height(profile, inside, outside):
    """Mean height where ``inside`` minus mean height where ``outside``."""
    inside = np.asarray(inside, dtype=bool)
    outside = np.asarray(outside, dtype=bool)
    if not inside.any() or not outside.any():
        raise ValueError("plateau and background selections must be nonempty")
    return float(profile.height[inside].mean() - profile.height[outside].mean())


def trajectory_errors(estimated, truth):
    """RMS and maximum Euclidean error between two trajectories (detector pixels).

    Both are first referenced to their own frame 0.
    """
    est = np.asarray(getattr(estimated, "shifts", estimated), dtype=np.float64)
    tru = np.asarray(getattr(truth, "shifts", truth), dtype=np.float64)
    if est.shape != tru.shape:
        raise ValueError(f"trajectory lengths differ: {est.shape} vs {tru.shape}")
    err = np.hypot(*((est - est[0]) - (tru - tru[0])).T)
    return float(np.sqrt(np.mean(err ** 2))), float(err.max())


@dataclass
class EvalReport:
    """Summary of a reconstruction against ground truth."""

    rmse: float
    amplitude_rmse: float
    phase_rms: float
    mask_fraction: float
    mask_pixels: int
    bar_contrast: dict = dc_field(default_factory=dict)
    trajectory_rms: float | None = None
    trajectory_max: float | None = None
    extra: dict = dc_field(default_factory=dict)

    def to_dict(self):
        doc = asdict(self)
        doc["bar_contrast"] = {str(k): v for k, v in self.bar_contrast.items()}
        return doc

    def to_json(self, path):
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_dict(), indent=1))
        except OSError as exc:
            raise OSError(f"cannot write report {path}: {exc}") from exc
        return path


def evaluate(recovered, truth, mask_fraction=0.5, bars=None, trajectory=None,
             true_trajectory=None):
    """Build an :class:`EvalReport`.

    Parameters
    ----------
    recovered, truth : ndarray of complex
    mask_fraction : float
        Side fraction of the central evaluation region.
    bars : iterable of (period, axis, region), optional
        Bar groups to measure on the aligned reconstruction.
    trajectory, true_trajectory : ScanTrajectory or array, optional
        Include registration errors when both are given.
    """
    mask = central_mask(np.shape(truth), mask_fraction)
    report = EvalReport(
        rmse=phase_aligned_rmse(recovered, truth, mask),
        amplitude_rmse=amplitude_rmse(recovered, truth, mask),
        phase_rms=phase_rms_error(recovered, truth, mask),
        mask_fraction=mask_fraction,
        mask_pixels=int(mask.sum()),
    )
    for period, axis, region in bars or ():
        report.bar_contrast[int(period)] = bar_contrast(recovered, period, region, axis)
    if trajectory is not None and true_trajectory is not None:
        report.trajectory_rms, report.trajectory_max = trajectory_errors(trajectory, true_trajectory)
    return report


def write_profile_csv(profile, path):
    """Write ``position_um,height_um`` rows."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position_um", "height_um"])
            for p, h in zip(profile.position, profile.height):
                writer.writerow([f"{p:.6f}", f"{h:.9f}"])
    except OSError as exc:
        raise OSError(f"cannot write profile {path}: {exc}") from exc
    return path
