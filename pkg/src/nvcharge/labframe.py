"""Brute-force lab-frame integration of the driven master equation.

Fixed-step fourth-order Runge-Kutta on d rho / dt = -2i pi [H(t), rho] with
H(t) = H0 + cos(2 pi f t + phi) W, no rotating-wave approximation and no
dissipation.  This is the slow reference the fast rotating-frame path is
checked against.  The step size resolves the fastest frequency in the
problem: max(spectral radius of H0, drive frequency), divided further so
every requested sample time is hit exactly.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


__all__ = ["evolve_lab_frame"]


@njit(cache=True)
def _rk4_span(h0, w, f_mhz, phi, rho, t0, n_steps, dt):  # pragma: no cover - jitted
    n = h0.shape[0]
    two_pi = 2.0 * np.pi
    k = np.empty((4, n, n), dtype=np.complex128)
    stage = np.empty((n, n), dtype=np.complex128)
    t = t0
    for _ in range(n_steps):
        for s in range(4):
            if s == 0:
                ts = t
                for i in range(n):
                    for j in range(n):
                        stage[i, j] = rho[i, j]
            elif s == 1 or s == 2:
                ts = t + 0.5 * dt
                for i in range(n):
                    for j in range(n):
                        stage[i, j] = rho[i, j] + 0.5 * dt * k[s - 1, i, j]
            else:
                ts = t + dt
                for i in range(n):
                    for j in range(n):
                        stage[i, j] = rho[i, j] + dt * k[2, i, j]
            c = math.cos(two_pi * f_mhz * ts + phi)
            for i in range(n):
                for j in range(n):
                    acc = 0.0 + 0.0j
                    for m in range(n):
                        hm = h0[i, m] + c * w[i, m]
                        mh = h0[m, j] + c * w[m, j]
                        acc += hm * stage[m, j] - stage[i, m] * mh
                    k[s, i, j] = -1j * two_pi * acc
        for i in range(n):
            for j in range(n):
                rho[i, j] += (dt / 6.0) * (
                    k[0, i, j] + 2.0 * k[1, i, j] + 2.0 * k[2, i, j] + k[3, i, j]
                )
        t += dt
    return rho


def evolve_lab_frame(
    h0: np.ndarray,
    drive,
    rho0: np.ndarray,
    times_us: np.ndarray,
    steps_per_cycle: int = 50,
) -> np.ndarray:
    times = np.asarray(times_us, dtype=float)
    w = np.ascontiguousarray(drive.matrix_mhz, dtype=np.complex128)
    h = np.ascontiguousarray(h0, dtype=np.complex128)
    f_char = max(float(np.abs(np.linalg.eigvalsh(h)).max()), drive.frequency_mhz)
    dt_target = 1.0 / (steps_per_cycle * f_char)
    rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
    out = np.empty((len(times), h.shape[0], h.shape[0]), dtype=complex)
    t_prev = 0.0
    for i, t in enumerate(times):
        gap = t - t_prev
        if gap > 0:
            n_steps = max(1, int(math.ceil(gap / dt_target)))
            rho = _rk4_span(
                h, w, drive.frequency_mhz, drive.phase_rad, rho, t_prev, n_steps, gap / n_steps
            )
            t_prev = t
        out[i] = rho
    return out
