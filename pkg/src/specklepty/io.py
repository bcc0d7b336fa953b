"""On-disk formats: datasets, truth sidecars, reconstruction results.

Dataset directory::

    manifest.json           schema_version, wavelength_um, detector_pitch_um,
                            nominal_distance_um, frame_count, frame_size,
                            upsampling_hint, intensity_scale, frames
    frames/frame_0000.pgm   16-bit big-endian binary PGM, pixel = I * scale
    truth/object.spty       ground truth (only written on request)
    truth/probe.spty
    truth/trajectory.json   [[x_j, y_j], ...] in detector pixels

``.spty`` files hold one complex array: the magic ``b"SPTY"``, ``u32 H``,
``u32 W`` (little endian), then ``H*W`` interleaved little-endian float64
``(re, im)`` pairs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .register import ScanTrajectory, read_trajectory
from .simulate import FrameStack

__all__ = [
    "SCHEMA_VERSION",
    "write_spty",
    "read_spty",
    "write_pgm",
    "read_pgm",
    "write_dataset",
    "read_dataset",
    "read_manifest",
    "write_truth",
    "read_truth",
    "write_result",
    "read_result",
    "write_preview",
]

SCHEMA_VERSION = 1
MAGIC = b"SPTY"
PGM_MAX = 65535


def _fail(action, path, exc):
    raise OSError(f"cannot {action} {path}: {exc}") from exc


# --------------------------------------------------------------------------- raw complex arrays

def write_spty(array, path):
    """Write a 2D complex array as a ``.spty`` file."""
    a = np.asarray(array, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {a.shape}")
    path = Path(path)
    header = MAGIC + struct.pack("<II", *a.shape)
    try:
        path.write_bytes(header + a.astype("<c16").tobytes())
    except OSError as exc:
        _fail("write", path, exc)
    return path


def read_spty(path):
    """Read a ``.spty`` file into a complex128 array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        _fail("read", path, exc)
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ValueError(f"{path} is not a SPTY file")
    h, w = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 16 * h * w:
        raise ValueError(f"{path}: header says {h}x{w} but payload has {len(raw) - 12} bytes")
    return np.frombuffer(raw, dtype="<c16", offset=12).reshape(h, w).astype(np.complex128)


# --------------------------------------------------------------------------- 16-bit PGM

def write_pgm(pixels, path):
    """Write integer pixels in ``[0, 65535]`` as binary 16-bit PGM (P5)."""
    p = np.asarray(pixels)
    if p.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {p.shape}")
    if p.min(initial=0) < 0 or p.max(initial=0) > PGM_MAX:
        raise ValueError("PGM pixels must lie in [0, 65535]")
    path = Path(path)
    header = f"P5\n{p.shape[1]} {p.shape[0]}\n{PGM_MAX}\n".encode("ascii")
    try:
        path.write_bytes(header + p.astype(">u2").tobytes())
    except OSError as exc:
        _fail("write", path, exc)
    return path


def _pgm_tokens(raw, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(int(raw[pos:end]))
        pos = end
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary PGM (8 or 16 bit) into an integer array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        _fail("read", path, exc)
    if raw[:2] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    try:
        (w, h, maxval), start = _pgm_tokens(raw, 3)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    dtype = ">u2" if maxval > 255 else "u1"
    size = h * w * np.dtype(dtype).itemsize
    if len(raw) - start < size:
        raise ValueError(f"{path}: truncated PGM payload")
    return np.frombuffer(raw, dtype=dtype, count=h * w, offset=start).reshape(h, w).astype(np.uint16)


# --------------------------------------------------------------------------- datasets

def _quantize(frames, scale):
    return np.rint(frames * scale).astype(np.uint16)


def write_dataset(frames, path, upsampling=3, truth=None, intensity_scale=None):
    """Write a frame stack (and optionally its ground truth) as a dataset directory.

    Parameters
    ----------
    frames : FrameStack
    path : path-like
        Target directory, created if needed.
    upsampling : int
        Stored as ``upsampling_hint``.
    truth : tuple (obj, probe, trajectory), optional
        Complex ground-truth fields and the applied trajectory.
    intensity_scale : float, optional
        Pixel value per unit intensity; by default the brightest pixel maps
        to 65535.

    Returns
    -------
    Path
    """
    path = Path(path)
    stack = frames.frames
    if intensity_scale is None:
        peak = float(stack.max())
        intensity_scale = PGM_MAX / peak if peak > 0 else 1.0
    if not np.isfinite(intensity_scale) or intensity_scale <= 0:
        raise ValueError(f"intensity_scale must be positive, got {intensity_scale}")
    if stack.max() * intensity_scale > PGM_MAX + 0.5:
        raise ValueError("intensity_scale saturates the 16-bit range")
    try:
        (path / "frames").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail("create dataset directory", path, exc)
    names = []
    for j, frame in enumerate(stack):
        name = f"frames/frame_{j:04d}.pgm"
        write_pgm(_quantize(frame, intensity_scale), path / name)
        names.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "wavelength_um": frames.wavelength,
        "detector_pitch_um": frames.detector_pitch,
        "nominal_distance_um": frames.distance,
        "frame_count": len(stack),
        "frame_size": int(stack.shape[1]),
        "upsampling_hint": int(upsampling),
        "intensity_scale": float(intensity_scale),
        "frames": names,
    }
    try:
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    except OSError as exc:
        _fail("write manifest in", path, exc)
    if truth is not None:
        write_truth(path / "truth", *truth)
    return path


def read_manifest(path):
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    if not mpath.exists():
        raise FileNotFoundError(f"no dataset manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except OSError as exc:
        _fail("read", mpath, exc)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{mpath}: invalid JSON ({exc})") from exc
    required = ("schema_version", "wavelength_um", "detector_pitch_um", "nominal_distance_um",
                "frame_count", "frame_size", "intensity_scale", "frames")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise ValueError(f"{mpath}: manifest lacks {', '.join(missing)}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"{mpath}: unsupported schema_version {manifest['schema_version']}")
    return manifest


def read_dataset(path):
    """Read a dataset directory.

    Returns
    -------
    frames : FrameStack
    manifest : dict
    """
    path = Path(path)
    manifest = read_manifest(path)
    root = path if path.is_dir() else path.parent
    scale = float(manifest["intensity_scale"])
    m = int(manifest["frame_size"])
    frames = []
    for name in manifest["frames"]:
        pix = read_pgm(root / name)
        if pix.shape != (m, m):
            raise ValueError(f"{root / name}: frame is {pix.shape}, manifest says {m}x{m}")
        frames.append(pix.astype(np.float64) / scale)
    if len(frames) != manifest["frame_count"]:
        raise ValueError(f"{path}: manifest lists {len(frames)} frames but frame_count is "
                         f"{manifest['frame_count']}")
    stack = FrameStack(np.stack(frames), manifest["detector_pitch_um"], manifest["wavelength_um"],
                       manifest["nominal_distance_um"])
    return stack, manifest


def write_truth(path, obj, probe, trajectory):
    """Write the ground-truth sidecar directory."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail("create truth directory", path, exc)
    write_spty(getattr(obj, "data", obj), path / "object.spty")
    write_spty(getattr(probe, "data", probe), path / "probe.spty")
    shifts = np.asarray(getattr(trajectory, "shifts", trajectory), dtype=np.float64)
    try:
        (path / "trajectory.json").write_text(json.dumps(shifts.tolist()))
    except OSError as exc:
        _fail("write", path / "trajectory.json", exc)
    return path


def read_truth(path):
    """Read a truth sidecar; returns ``(obj, probe, trajectory)``."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no truth sidecar directory at {path}")
    return (read_spty(path / "object.spty"), read_spty(path / "probe.spty"),
            read_trajectory(path / "trajectory.json"))


# --------------------------------------------------------------------------- results

def write_preview(image, path):
    """8-bit grayscale PNG of a real image, min-max scaled."""
    a = np.asarray(image, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros(a.shape) if hi <= lo else (a - lo) / (hi - lo)
    try:
        Image.fromarray(np.rint(scaled * 255).astype(np.uint8)).save(path)
    except OSError as exc:
        _fail("write", path, exc)
    return Path(path)


def write_result(result, path, report=None):
    """Write a reconstruction result directory.

    Files: ``object.spty``, ``probe.spty``, amplitude and wrapped-phase
    previews of both, and ``report.json`` with the residual history, the
    distance used and the wall time.
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _fail("create result directory", path, exc)
    write_spty(result.obj, path / "object.spty")
    write_spty(result.probe, path / "probe.spty")
    for name, field in (("object", result.obj), ("probe", result.probe)):
        write_preview(np.abs(field), path / f"{name}_amplitude.png")
        write_preview(np.angle(field), path / f"{name}_phase.png")
    doc = {
        "distance_um": float(result.distance),
        "pitch_um": float(result.pitch),
        "wavelength_um": float(result.wavelength),
        "residuals": [float(r) for r in result.residuals],
        "wall_time_s": float(result.elapsed),
        "shifts": result.trajectory.shifts.tolist(),
    }
    if result.autofocus_curve is not None:
        ds, scores = result.autofocus_curve
        doc["autofocus"] = {"distance_um": [float(d) for d in ds],
                            "score": [float(v) for v in scores]}
    doc.update(report or {})
    try:
        (path / "report.json").write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        _fail("write", path / "report.json", exc)
    return path


def read_result(path):
    """Read ``(obj, probe, report)`` from a result directory."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no result directory at {path}")
    report_path = path / "report.json"
    try:
        report = json.loads(report_path.read_text()) if report_path.exists() else {}
    except OSError as exc:
        _fail("read", report_path, exc)
    return read_spty(path / "object.spty"), read_spty(path / "probe.spty"), report


def trajectory_from(obj):
    """Coerce arrays or trajectories to :class:`ScanTrajectory`."""
    if isinstance(obj, ScanTrajectory):
        return obj
    return ScanTrajectory(np.asarray(obj, dtype=np.float64))
