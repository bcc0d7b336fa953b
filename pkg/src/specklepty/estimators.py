"""scikit-learn style wrappers around registration and reconstruction.

Frames play the role of ``X`` (shape ``(J, M, M)``); there is no target.
The fitted attributes follow the trailing-underscore convention, and
``get_params``/``set_params`` come from :class:`sklearn.base.BaseEstimator`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frames
from .field import make_kernel
from .recon import ReconConfig, reconstruct
from .register import DEFAULT_BANDLIMIT, ScanTrajectory, estimate_trajectory
from .simulate import DETECTOR_PITCH_UM, DISTANCE_UM, WAVELENGTH_UM, FrameStack, forward_frame

__all__ = ["PhaseCorrelationRegistration", "SubsampledPtychography"]


def _as_trajectory(shifts, n_frames):
    traj = shifts if isinstance(shifts, ScanTrajectory) else ScanTrajectory(np.asarray(shifts))
    if len(traj) != n_frames:
        raise ValueError(f"got {len(traj)} shifts for {n_frames} frames")
    return traj


class PhaseCorrelationRegistration(TransformerMixin, BaseEstimator):
    """Estimate per-frame speckle shifts by phase correlation.

    Parameters
    ----------
    mode : {'chain', 'to-reference'}
    window : bool
        Hann-window the frames before correlating.
    bandlimit : float or None
        Radial frequency cutoff (cycles per pixel) of the cross-power.

    Attributes
    ----------
    trajectory_ : ScanTrajectory
    shifts_ : ndarray, shape (J, 2)
    sharpness_ : ndarray, shape (J,)
    """

    def __init__(self, mode="chain", window=True, bandlimit=DEFAULT_BANDLIMIT):
        self.mode = mode
        self.window = window
        self.bandlimit = bandlimit

    def fit(self, X, y=None):
        frames = check_frames(getattr(X, "frames", X), allow_single=False)
        self.trajectory_ = estimate_trajectory(frames, mode=self.mode, window=self.window,
                                               bandlimit=self.bandlimit)
        self.shifts_ = self.trajectory_.shifts
        self.sharpness_ = self.trajectory_.sharpness
        self.n_features_in_ = frames.shape[1] * frames.shape[2]
        return self

    def transform(self, X):
        """Shifts of ``X``; fitting again since shifts are per-stack quantities."""
        check_is_fitted(self, "trajectory_")
        return self.fit(X).shifts_


class SubsampledPtychography(BaseEstimator):
    """Joint object/probe recovery on an ``upsampling``-times finer grid.

    Parameters
    ----------
    upsampling, iterations, alpha_obj, alpha_probe, momentum, probe_mode, order_seed
        See :class:`~specklepty.recon.ReconConfig`.
    distance : float or None
        Object-to-detector distance in micrometers; with ``None`` the
        ``autofocus_range`` must be set or the nominal 500 um is used.
    autofocus_range : (float, float) or None
    wavelength, detector_pitch : float
        Micrometers.
    object_init : {'mean', 'flat'}
    precision : {'double', 'single'}

    Attributes
    ----------
    object_, probe_ : ndarray of complex, shape (sM, sM)
    residuals_ : ndarray
        Detector-plane residual after every pass.
    distance_ : float
    trajectory_ : ScanTrajectory
    """

    def __init__(self, upsampling=3, iterations=10, alpha_obj=0.9, alpha_probe=0.5, momentum=0.9,
                 probe_mode="joint", order_seed=0, distance=None, autofocus_range=None,
                 wavelength=WAVELENGTH_UM, detector_pitch=DETECTOR_PITCH_UM, object_init="mean",
                 precision="double"):
        self.upsampling = upsampling
        self.iterations = iterations
        self.alpha_obj = alpha_obj
        self.alpha_probe = alpha_probe
        self.momentum = momentum
        self.probe_mode = probe_mode
        self.order_seed = order_seed
        self.distance = distance
        self.autofocus_range = autofocus_range
        self.wavelength = wavelength
        self.detector_pitch = detector_pitch
        self.object_init = object_init
        self.precision = precision

    def _config(self):
        return ReconConfig(
            upsampling=self.upsampling, iterations=self.iterations, alpha_obj=self.alpha_obj,
            alpha_probe=self.alpha_probe, momentum=self.momentum, probe_mode=self.probe_mode,
            order_seed=self.order_seed, distance=self.distance,
            autofocus_range=self.autofocus_range, object_init=self.object_init,
            precision=self.precision)

    def _stack(self, X):
        if isinstance(X, FrameStack):
            return X
        distance = DISTANCE_UM if self.distance is None else self.distance
        return FrameStack(check_frames(X), self.detector_pitch, self.wavelength, distance)

    def fit(self, X, y=None, shifts=None, probe=None):
        """Reconstruct from frames ``X``.

        Parameters
        ----------
        X : ndarray, shape (J, M, M) or FrameStack
        shifts : ScanTrajectory or array (J, 2), optional
            Speckle shifts in detector pixels; estimated by chained phase
            correlation when omitted.
        probe : ndarray, optional
            Known probe (required when ``probe_mode='fixed'``).
        """
        config = self._config()
        stack = self._stack(X)
        if shifts is None:
            traj = estimate_trajectory(stack.frames)
        else:
            traj = _as_trajectory(shifts, len(stack))
        result = reconstruct(stack, traj, config, probe=probe)
        self.object_ = result.obj
        self.probe_ = result.probe
        self.residuals_ = result.residuals
        self.distance_ = result.distance
        self.trajectory_ = traj
        self.pitch_ = result.pitch
        self.n_features_in_ = stack.frames.shape[1] * stack.frames.shape[2]
        return self

    def predict(self, shifts):
        """Frames the fitted object and probe produce at ``shifts``."""
        if not hasattr(self, "object_"):
            raise NotFittedError("SubsampledPtychography is not fitted yet")
        traj = shifts if isinstance(shifts, ScanTrajectory) else ScanTrajectory(np.asarray(shifts))
        kernel = make_kernel(self.object_.shape, self.pitch_, self.wavelength, self.distance_)
        return np.stack([forward_frame(self.object_, self.probe_, xy, self.distance_,
                                       self.upsampling, kernel) for xy in traj.shifts])

    def score(self, X, y=None, shifts=None):
        """Negative relative amplitude residual of ``X`` under the fitted model."""
        frames = check_frames(getattr(X, "frames", X))
        traj = self.trajectory_ if shifts is None else _as_trajectory(shifts, len(frames))
        model = self.predict(traj)
        total = float(frames.sum()) or 1.0
        return -float(np.sum((np.sqrt(model) - np.sqrt(frames)) ** 2) / total)
