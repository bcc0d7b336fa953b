"""Independent reference implementations used as test oracles.

Nothing here shares code with the package beyond the transfer function
formula, which is restated from scratch.
"""

import numpy as np


def dft_matrix(n, inverse=False):
    k = np.arange(n)
    sign = 1 if inverse else -1
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def direct_propagate(field, pitch, wavelength, distance):
    """Angular-spectrum propagation by explicit DFT matrix products."""
    h, w = field.shape
    fy = np.fft.fftfreq(h, d=pitch)[:, None]
    fx = np.fft.fftfreq(w, d=pitch)[None, :]
    arg = 1.0 / wavelength**2 - fx**2 - fy**2
    transfer = np.where(arg >= 0, np.exp(2j * np.pi * distance * np.sqrt(np.clip(arg, 0, None))), 0)
    fh, fw = dft_matrix(h), dft_matrix(w)
    spectrum = fh @ field @ fw.T
    return dft_matrix(h, True) @ (spectrum * transfer) @ dft_matrix(w, True).T


def direct_frame(obj, probe, shift_fine, pitch, wavelength, distance, s):
    """Detector frame from the forward model, computed without FFTs."""
    dx, dy = shift_fine
    exit_wave = obj * np.roll(probe, (dy, dx), axis=(0, 1))
    psi = direct_propagate(exit_wave, pitch, wavelength, distance)
    return np.abs(psi[::s, ::s]) ** 2


def reference_iterate(obj, probe, frames, shifts_fine, order, iterations, alpha_obj, alpha_probe,
                      beta, kernel, s, joint=True):
    """Straightforward fine-grid rPIE loop with pass-level momentum."""
    fft2, ifft2 = np.fft.fft2, np.fft.ifft2
    obj = np.array(obj, dtype=complex)
    probe = np.array(probe, dtype=complex)
    v_obj = np.zeros_like(obj)
    v_probe = np.zeros_like(probe)
    residuals = []
    for _ in range(iterations):
        obj_prev, probe_prev = obj.copy(), probe.copy()
        err = 0.0
        for j in order:
            dx, dy = shifts_fine[j]
            pj = np.roll(probe, (dy, dx), axis=(0, 1))
            phi = obj * pj
            psi = ifft2(fft2(phi, norm="ortho") * kernel, norm="ortho")
            lattice = psi[::s, ::s]
            mag = np.abs(lattice)
            amp = np.sqrt(frames[j])
            err += np.sum((mag - amp) ** 2)
            revised = psi.copy()
            safe = np.where(mag < 1e-12, 1.0, mag)
            revised[::s, ::s] = np.where(mag < 1e-12, 1.0, lattice / safe) * amp
            dphi = ifft2(fft2(revised - psi, norm="ortho") * np.conj(kernel), norm="ortho")
            p2 = np.abs(pj) ** 2
            o2 = np.abs(obj) ** 2
            new_obj = obj + np.conj(pj) * dphi / ((1 - alpha_obj) * p2 + alpha_obj * p2.max())
            if joint:
                new_pj = pj + np.conj(obj) * dphi / ((1 - alpha_probe) * o2 + alpha_probe * o2.max())
                probe = np.roll(new_pj, (-dy, -dx), axis=(0, 1))
            obj = new_obj
        if beta > 0:
            v_obj = beta * v_obj + (obj - obj_prev)
            obj = obj + beta * v_obj
            if joint:
                v_probe = beta * v_probe + (probe - probe_prev)
                probe = probe + beta * v_probe
        residuals.append(err / frames.sum())
    return obj, probe, residuals


def second_moment_width(intensity, pitch):
    """1/e^2 radius of a centred beam from its second moment along x."""
    h, w = intensity.shape
    x = (np.arange(w) - w // 2) * pitch
    marginal = intensity.sum(axis=0)
    return 2.0 * np.sqrt(np.sum(marginal * x**2) / marginal.sum())
