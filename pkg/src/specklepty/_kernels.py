"""Inner-loop passes of the reconstruction on polyphase-ordered grids.

A fine ``(s*M, s*M)`` array ``x`` is stored as ``x_p[r, c, i, k] =
x[s*i + r, s*k + c]``. In that layout the detector lattice is component
``(0, 0)``, the big propagation FFT splits into ``s*s`` batched ``M x M``
FFTs, and a fine-grid circular shift becomes a permutation of components
plus small circular shifts.

Each pass exists as a numba kernel and a numpy fallback with identical
semantics.
"""

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None


def to_poly(x, s):
    """Fine ``(s*M, s*M)`` array to polyphase ``(s, s, M, M)`` order (a copy)."""
    n0, n1 = x.shape
    if n0 % s or n1 % s:
        raise ValueError(f"grid {x.shape} is not divisible by {s}")
    return np.ascontiguousarray(x.reshape(n0 // s, s, n1 // s, s).transpose(1, 3, 0, 2))


def from_poly(p):
    """Inverse of :func:`to_poly`."""
    s0, s1, m0, m1 = p.shape
    return np.ascontiguousarray(p.transpose(2, 0, 3, 1).reshape(m0 * s0, m1 * s1))


def shift_table(s, dy, dx):
    """Source component and row/column offset of a fine-grid shift.

    ``roll(x, (dy, dx))`` in polyphase order takes component ``(r, c)``
    from component ``(src_r[r], src_c[c])`` advanced by
    ``(off_r[r], off_c[c])`` coarse samples.
    """
    rows = np.array([divmod(r - dy, s) for r in range(s)], dtype=np.int64)
    cols = np.array([divmod(c - dx, s) for c in range(s)], dtype=np.int64)
    return rows[:, 1].copy(), rows[:, 0].copy(), cols[:, 1].copy(), cols[:, 0].copy()


def _shifted(probe, table, r, c):
    src_r, off_r, src_c, off_c = table
    return np.roll(probe[src_r[r], src_c[c]], (-off_r[r], -off_c[c]), axis=(0, 1))


def exit_wave_np(obj, probe, table, out):
    s = obj.shape[0]
    for r in range(s):
        for c in range(s):
            np.multiply(obj[r, c], _shifted(probe, table, r, c), out=out[r, c])
    return out


def combine_np(spec, weights, out):
    out[...] = np.sum(spec * weights, axis=(0, 1))
    return out


def split_np(g, weights, out):
    np.multiply(g, np.conj(weights), out=out)
    return out


def project_np(lattice, amp, floor, out):
    """Write the amplitude correction ``unit * amp - lattice`` and return the squared misfit."""
    mag = np.abs(lattice)
    small = mag < floor
    unit = np.where(small, 1.0, lattice / np.where(small, 1.0, mag))
    out[...] = unit * amp - lattice
    return float(np.sum((mag - amp) ** 2))


def update_np(obj, probe, delta, table, a_obj, a_probe, p2max, o2max, joint):
    """rPIE steps for object and (optionally) probe from old values.

    Returns the new ``max|O|^2`` and ``max|P|^2``.
    """
    s = obj.shape[0]
    src_r, off_r, src_c, off_c = table
    for r in range(s):
        for c in range(s):
            probe_j = _shifted(probe, table, r, c)
            o = obj[r, c]
            d = delta[r, c]
            p2 = probe_j.real ** 2 + probe_j.imag ** 2
            o_step = np.conj(probe_j) * d / ((1 - a_obj) * p2 + a_obj * p2max)
            if joint:
                o2 = o.real ** 2 + o.imag ** 2
                p_step = np.conj(o) * d / ((1 - a_probe) * o2 + a_probe * o2max)
                probe[src_r[r], src_c[c]] = np.roll(probe_j + p_step, (off_r[r], off_c[c]),
                                                    axis=(0, 1))
            o += o_step
    return (float(np.max(obj.real ** 2 + obj.imag ** 2)),
            float(np.max(probe.real ** 2 + probe.imag ** 2)))


if HAVE_NUMBA:
    # IEEE division semantics so NaN/Inf propagate to the solver's finiteness
    # check instead of raising ZeroDivisionError mid-pass.
    _jit = numba.njit(cache=True, nogil=True, error_model="numpy")
    # Reassociation lets the max reductions and divisions vectorize; the
    # result is still deterministic for a given build.
    _jit_fast = numba.njit(cache=True, nogil=True, fastmath=True, error_model="numpy")

    @_jit
    def _exit_wave_nb(obj, probe, src_r, off_r, src_c, off_c, out):
        s = obj.shape[0]
        m0, m1 = obj.shape[2], obj.shape[3]
        for r in range(s):
            for c in range(s):
                cut = off_c[c] % m1
                for i in range(m0):
                    orow = obj[r, c, i]
                    prow = probe[src_r[r], src_c[c], (i + off_r[r]) % m0]
                    dst = out[r, c, i]
                    for k in range(m1 - cut):
                        dst[k] = orow[k] * prow[k + cut]
                    for k in range(m1 - cut, m1):
                        dst[k] = orow[k] * prow[k + cut - m1]
        return out

    @_jit
    def _combine_nb(spec, weights, out):
        s = spec.shape[0]
        m0, m1 = out.shape
        out[:, :] = 0
        for r in range(s):
            for c in range(s):
                for i in range(m0):
                    for k in range(m1):
                        out[i, k] += spec[r, c, i, k] * weights[r, c, i, k]
        return out

    @_jit
    def _split_nb(g, weights, out):
        s = weights.shape[0]
        m0, m1 = g.shape
        for r in range(s):
            for c in range(s):
                for i in range(m0):
                    for k in range(m1):
                        out[r, c, i, k] = g[i, k] * np.conj(weights[r, c, i, k])
        return out

    @_jit
    def _project_nb(lattice, amp, floor, out):
        err = 0.0
        m0, m1 = lattice.shape
        for i in range(m0):
            for k in range(m1):
                z = lattice[i, k]
                a = amp[i, k]
                mag = abs(z)
                if mag < floor:
                    out[i, k] = a - z
                else:
                    out[i, k] = z * (a / mag) - z
                err += (float(mag) - float(a)) ** 2
        return err

    @_jit_fast
    def _update_row(orow, prow, drow, lo, hi, shift, one, w_obj, c_obj, w_probe, c_probe, joint):
        # orow[k] pairs with prow[k + shift] for k in [lo, hi)
        top_o = one - one
        top_p = one - one
        if joint:
            for k in range(lo, hi):
                o = orow[k]
                p = prow[k + shift]
                d = drow[k]
                ore, oim = o.real, o.imag
                pre, pim = p.real, p.imag
                dre, dim = d.real, d.imag
                inv_o = one / (w_obj * (pre * pre + pim * pim) + c_obj)
                inv_p = one / (w_probe * (ore * ore + oim * oim) + c_probe)
                nre = ore + (pre * dre + pim * dim) * inv_o
                nim = oim + (pre * dim - pim * dre) * inv_o
                qre = pre + (ore * dre + oim * dim) * inv_p
                qim = pim + (ore * dim - oim * dre) * inv_p
                orow[k] = complex(nre, nim)
                prow[k + shift] = complex(qre, qim)
                top_o = max(top_o, nre * nre + nim * nim)
                top_p = max(top_p, qre * qre + qim * qim)
        else:
            for k in range(lo, hi):
                o = orow[k]
                p = prow[k + shift]
                d = drow[k]
                pre, pim = p.real, p.imag
                dre, dim = d.real, d.imag
                inv_o = one / (w_obj * (pre * pre + pim * pim) + c_obj)
                nre = o.real + (pre * dre + pim * dim) * inv_o
                nim = o.imag + (pre * dim - pim * dre) * inv_o
                orow[k] = complex(nre, nim)
                top_o = max(top_o, nre * nre + nim * nim)
        return top_o, top_p

    @_jit
    def _update_nb(obj, probe, delta, src_r, off_r, src_c, off_c,
                   one, w_obj, c_obj, w_probe, c_probe, joint):
        s = obj.shape[0]
        m0, m1 = obj.shape[2], obj.shape[3]
        new_o2 = one - one
        new_p2 = one - one
        for r in range(s):
            for c in range(s):
                cut = off_c[c] % m1
                for i in range(m0):
                    orow = obj[r, c, i]
                    drow = delta[r, c, i]
                    prow = probe[src_r[r], src_c[c], (i + off_r[r]) % m0]
                    a1, b1 = _update_row(orow, prow, drow, 0, m1 - cut, cut,
                                         one, w_obj, c_obj, w_probe, c_probe, joint)
                    a2, b2 = _update_row(orow, prow, drow, m1 - cut, m1, cut - m1,
                                         one, w_obj, c_obj, w_probe, c_probe, joint)
                    new_o2 = max(new_o2, a1, a2)
                    new_p2 = max(new_p2, b1, b2)
        if not joint:
            for p in probe.ravel():
                new_p2 = max(new_p2, p.real * p.real + p.imag * p.imag)
        return new_o2, new_p2

    def exit_wave_nb(obj, probe, table, out):
        return _exit_wave_nb(obj, probe, *table, out)

    def combine_nb(spec, weights, out):
        return _combine_nb(spec, weights, out)

    def split_nb(g, weights, out):
        return _split_nb(g, weights, out)

    def project_nb(lattice, amp, floor, out):
        return float(_project_nb(lattice, amp, floor, out))

    def update_nb(obj, probe, delta, table, a_obj, a_probe, p2max, o2max, joint):
        real = obj.real.dtype.type
        o2, p2 = _update_nb(obj, probe, delta, *table, real(1), real(1 - a_obj),
                            real(a_obj * p2max), real(1 - a_probe), real(a_probe * o2max),
                            bool(joint))
        return float(o2), float(p2)


def get_kernels(use_numba):
    """Return ``(exit_wave, combine, split, project, update)`` implementations."""
    if use_numba:
        if not HAVE_NUMBA:
            raise ImportError("the numba kernels need the numba package")
        return exit_wave_nb, combine_nb, split_nb, project_nb, update_nb
    return exit_wave_np, combine_np, split_np, project_np, update_np
