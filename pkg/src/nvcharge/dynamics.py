"""Density-matrix evolution: coherent, driven, and relaxing.

Propagators carry the 2*pi: U = exp(-2i pi H t) for H in MHz and t in
microseconds.  Dissipation rates are plain inverse microseconds.

The driven fast path works in the rotating frame of the addressed
transition.  It diagonalizes the static Hamiltonian once, picks the
eigenpair whose gap is nearest the drive frequency among pairs the drive
actually couples, and keeps only the co-rotating half of the drive.  The
resulting Liouvillian is time independent, so arbitrary sample grids cost
one matrix exponential per distinct gap.  Counter-rotating corrections are
bounded by the drive amplitude over the transition frequency; the lab-frame
integrator in :mod:`nvcharge.labframe` provides the brute-force check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .physics import (
    ChargeState,
    Isotope,
    PhysicalParams,
    TransitionLine,
    build_hamiltonian,
    eigensystem,
    electron_sector_labels,
    transverse_drive_operator,
)

__all__ = [
    "DetuningWarning",
    "DriveField",
    "RelaxationParams",
    "make_drive",
    "validate_density_matrix",
    "partial_trace",
    "evolve_unitary",
    "evolve_driven",
    "apply_relaxation",
    "simulate_rabi",
    "simulate_echo",
    "simulate_t1",
    "RabiTrace",
    "DecayTrace",
]


class DetuningWarning(UserWarning):
    """Drive frequency is far from every coupled transition."""


@dataclass(frozen=True)
class DriveField:
    """Oscillating transverse field: amplitude_t * coupling * cos(2 pi f t + phi)."""

    frequency_mhz: float
    amplitude_t: float
    phase_rad: float
    coupling: np.ndarray  # MHz per tesla, Hermitian

    def __post_init__(self) -> None:
        if self.frequency_mhz <= 0:
            raise ValueError("drive frequency must be positive")
        if self.amplitude_t < 0:
            raise ValueError("drive amplitude must be non-negative")

    @property
    def matrix_mhz(self) -> np.ndarray:
        return self.amplitude_t * self.coupling


def make_drive(
    charge: ChargeState,
    isotope: Isotope,
    p: PhysicalParams,
    b1_t: float,
    frequency_mhz: float,
    phase_rad: float = 0.0,
) -> DriveField:
    return DriveField(
        frequency_mhz=frequency_mhz,
        amplitude_t=b1_t,
        phase_rad=phase_rad,
        coupling=transverse_drive_operator(charge, isotope, p),
    )


@dataclass(frozen=True)
class RelaxationParams:
    """Single-subsystem relaxation: populations relax toward the uniform
    mixture with time constant t1_us, every coherence decays with t2_us."""

    t1_us: float
    t2_us: float

    def __post_init__(self) -> None:
        if self.t1_us <= 0 or self.t2_us <= 0:
            raise ValueError("relaxation times must be positive")

    def check_cp(self, dim: int) -> None:
        # Choi positivity of the combined channel requires
        # 1/t2 >= (1 - 1/d)/t1, i.e. t2 <= t1 * d/(d-1)
        if dim < 2:
            return
        if 1.0 / self.t2_us < (1.0 - 1.0 / dim) / self.t1_us * (1 - 1e-12):
            raise ValueError(
                f"t2={self.t2_us} exceeds {dim / (dim - 1):g}*t1={self.t1_us}; "
                "channel is not completely positive"
            )


def validate_density_matrix(
    rho: np.ndarray, trace_atol: float = 1e-10, psd_floor: float = -1e-9
) -> None:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if abs(np.trace(rho) - 1.0) > trace_atol:
        raise ValueError(f"trace {np.trace(rho)} is not 1 within {trace_atol}")
    if np.abs(rho - rho.conj().T).max() > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    lo = float(np.linalg.eigvalsh(rho).min())
    if lo < psd_floor:
        raise ValueError(f"density matrix has negative eigenvalue {lo}")


def partial_trace(rho: np.ndarray, dims: tuple[int, int], keep: int) -> np.ndarray:
    de, dn = dims
    r = rho.reshape(de, dn, de, dn)
    if keep == 0:
        return np.einsum("ikjk->ij", r)
    if keep == 1:
        return np.einsum("kikj->ij", r)
    raise ValueError("keep must be 0 (first factor) or 1 (second factor)")


def evolve_unitary(h: np.ndarray, rho: np.ndarray, t_us: float) -> np.ndarray:
    evals, evecs = eigensystem(h)
    phases = np.exp(-2j * np.pi * evals * t_us)
    u = (evecs * phases[None, :]) @ evecs.conj().T
    return u @ rho @ u.conj().T


def _addressed_pair(
    evals: np.ndarray, w: np.ndarray, frequency_mhz: float
) -> tuple[int, int, float]:
    n = len(evals)
    wmax = float(np.abs(w).max())
    if wmax == 0:
        raise ValueError("drive couples no transition")
    best = None
    for a in range(n):
        for b in range(a + 1, n):
            if abs(w[a, b]) < 1e-12 * wmax:
                continue
            det = abs(frequency_mhz - (evals[b] - evals[a]))
            if best is None or det < best[0]:
                best = (det, a, b)
    if best is None:
        raise ValueError("drive couples no transition")
    return best[1], best[2], best[0]


def evolve_driven(
    h0: np.ndarray,
    drive: DriveField,
    rho0: np.ndarray,
    times_us: np.ndarray,
    rabi_decay_us: float | None = None,
    method: str = "rotating",
    detuning_window_mhz: float = 1.0,
    steps_per_cycle: int = 50,
) -> np.ndarray:
    """Density matrices at the requested times under a monochromatic drive.

    method="rotating" is the fast co-rotating-frame path described in the
    module docstring; method="lab" integrates the full time-dependent
    equation and accepts no dissipation.  Times must be non-negative and
    ascending.
    """
    times = np.asarray(times_us, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("times_us must be a non-empty 1-d array")
    if times[0] < 0 or np.any(np.diff(times) < 0):
        raise ValueError("times_us must be ascending and non-negative")

    if method == "lab":
        if rabi_decay_us is not None:
            raise ValueError("the lab-frame integrator is unitary only")
        from .labframe import evolve_lab_frame

        return evolve_lab_frame(h0, drive, rho0, times, steps_per_cycle)
    if method != "rotating":
        raise ValueError(f"unknown method {method!r}")

    evals, evecs, g, liou, det = _rotating_frame(h0, drive, rabi_decay_us)
    n = len(evals)
    if det > detuning_window_mhz:
        warnings.warn(
            f"drive at {drive.frequency_mhz:.6f} MHz is {det:.6f} MHz away from "
            "the nearest coupled transition",
            DetuningWarning,
            stacklevel=2,
        )

    rho_rot = (evecs.conj().T @ rho0 @ evecs).reshape(-1)
    props: dict[float, np.ndarray] = {}
    out = np.empty((len(times), n, n), dtype=complex)
    t_prev = 0.0
    for i, t in enumerate(times):
        gap = t - t_prev
        if gap > 0:
            key = round(gap, 15)
            if key not in props:
                props[key] = expm(liou * gap)
            rho_rot = props[key] @ rho_rot
            t_prev = t
        phases = np.exp(-2j * np.pi * g * t)
        rho_eig = (phases[:, None] * rho_rot.reshape(n, n)) * phases.conj()[None, :]
        out[i] = evecs @ rho_eig @ evecs.conj().T
    return out


def _rotating_frame(
    h0: np.ndarray, drive: DriveField, rabi_decay_us: float | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Frame data for a monochromatic drive near one coupled transition.

    Returns (eigenvalues, eigenvectors, frame generator diagonal g,
    rotating-frame Liouvillian, detuning of the nearest coupled line).
    """
    evals, evecs = eigensystem(h0)
    n = len(evals)
    w = evecs.conj().T @ drive.matrix_mhz @ evecs
    a, b, det = _addressed_pair(evals, w, drive.frequency_mhz)

    delta = drive.frequency_mhz - (evals[b] - evals[a])
    g = evals.copy()
    g[a] -= delta / 2
    g[b] += delta / 2

    h_rot = np.diag(evals - g).astype(complex)
    h_rot[a, b] += 0.5 * w[a, b] * np.exp(1j * drive.phase_rad)
    h_rot[b, a] = np.conj(h_rot[a, b])

    eye = np.eye(n)
    liou = -2j * np.pi * (np.kron(h_rot, eye) - np.kron(eye, h_rot.T))
    if rabi_decay_us is not None:
        if rabi_decay_us <= 0:
            raise ValueError("rabi_decay_us must be positive")
        # dephasing across the dressed splitting of the addressed pair;
        # resonant envelope is exp(-t/rabi_decay), while a far-detuned pair
        # has near-bare dressed states so its populations stay put
        block = np.array(
            [[h_rot[a, a], h_rot[a, b]], [h_rot[b, a], h_rot[b, b]]], dtype=complex
        )
        _, bv = np.linalg.eigh(block)
        lo, hi = bv[:, 0], bv[:, 1]
        sig = np.zeros((n, n), dtype=complex)
        for (i, vi) in ((a, 0), (b, 1)):
            for (j, vj) in ((a, 0), (b, 1)):
                sig[i, j] = hi[vi] * np.conj(hi[vj]) - lo[vi] * np.conj(lo[vj])
        gamma = 1.0 / (2.0 * rabi_decay_us)
        sgs = sig.conj().T @ sig
        liou = liou + gamma * (
            np.kron(sig, sig.conj())
            - 0.5 * (np.kron(sgs, eye) + np.kron(eye, sgs.T))
        )
    return evals, evecs, g, liou, det


def driven_propagator(
    h0: np.ndarray,
    drive: DriveField,
    duration_us: float,
    rabi_decay_us: float | None = None,
) -> np.ndarray:
    """Superoperator of one fixed-length pulse, lab frame in and out.

    Returns the (d^2, d^2) matrix S with vec(rho_out) = S vec(rho_in) in
    row-major vectorization of the computational basis.  Precomputing S
    once lets shot loops replay the same pulse as a single matrix-vector
    product.  No detuning warning is raised: far-detuned propagators are
    legitimate when modelling how a probe ignores off-resonant charge
    states.
    """
    if duration_us < 0:
        raise ValueError("duration_us must be nonnegative")
    evals, evecs, g, liou, _ = _rotating_frame(h0, drive, rabi_decay_us)
    step = expm(liou * duration_us)
    phases = np.exp(-2j * np.pi * g * duration_us)
    to_eig = np.kron(evecs.conj().T, evecs.T)
    from_eig = np.kron(evecs, evecs.conj())
    frame = np.kron(np.diag(phases), np.diag(phases.conj()))
    return from_eig @ frame @ step @ to_eig


def _factor_channel(
    rho: np.ndarray, dims: tuple[int, int], axis: int, pars: RelaxationParams, t_us: float
) -> np.ndarray:
    de, dn = dims
    d = de if axis == 0 else dn
    pars.check_cp(d)
    p = np.exp(-t_us / pars.t1_us)
    q = np.exp(-t_us / pars.t2_us)
    r = rho.reshape(de, dn, de, dn)
    out = np.empty_like(r)
    if axis == 0:
        tr = np.einsum("kikj->ij", r)
        for x in range(de):
            for y in range(de):
                out[x, :, y, :] = (p if x == y else q) * r[x, :, y, :]
            out[x, :, x, :] += ((1.0 - p) / de) * tr
    else:
        tr = np.einsum("ikjk->ij", r)
        for x in range(dn):
            for y in range(dn):
                out[:, x, :, y] = (p if x == y else q) * r[:, x, :, y]
            out[:, x, :, x] += ((1.0 - p) / dn) * tr
    return out.reshape(de * dn, de * dn)


def apply_relaxation(
    rho: np.ndarray,
    t_us: float,
    nuclear: RelaxationParams,
    electron: RelaxationParams | None = None,
    dims: tuple[int, int] | None = None,
) -> np.ndarray:
    """Relax for t_us.  Without dims the matrix is a bare nuclear system;
    with dims=(de, dn) the electron and nuclear channels act on their own
    tensor factors (they commute, so the order is irrelevant)."""
    if t_us < 0:
        raise ValueError("t_us must be non-negative")
    if dims is None:
        if electron is not None:
            raise ValueError("electron channel requires explicit dims")
        dims = (1, rho.shape[0])
    if rho.shape[0] != dims[0] * dims[1]:
        raise ValueError("dims do not match the density matrix")
    if t_us == 0:
        return rho.copy()
    out = _factor_channel(rho, dims, 1, nuclear, t_us)
    if electron is not None:
        out = _factor_channel(out, dims, 0, electron, t_us)
    return out


@dataclass(frozen=True)
class RabiTrace:
    times_us: np.ndarray
    flip_probability: np.ndarray
    line: TransitionLine
    b1_t: float


@dataclass(frozen=True)
class DecayTrace:
    times_us: np.ndarray
    probability: np.ndarray


def _sector_electron_index(charge: ChargeState, sector: str) -> int:
    return electron_sector_labels(charge).index(sector)


def simulate_rabi(
    charge: ChargeState,
    isotope: Isotope,
    p: PhysicalParams,
    line: TransitionLine,
    b1_t: float,
    times_us: np.ndarray,
    rabi_decay_us: float | None = None,
    method: str = "rotating",
    frequency_mhz: float | None = None,
) -> RabiTrace:
    """Probability of finding the nucleus in the line's lower-m level after
    driving for each requested duration, starting from the higher-m level
    with the electron parked in the line's sector."""
    h0 = build_hamiltonian(charge, isotope, p)
    drive = make_drive(
        charge,
        isotope,
        p,
        b1_t,
        line.frequency_mhz if frequency_mhz is None else frequency_mhz,
    )
    dn = isotope.nuclear_dim
    e_idx = _sector_electron_index(charge, line.sector)
    n_a, n_b = line.level_indices
    dim = h0.shape[0]
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[e_idx * dn + n_a, e_idx * dn + n_a] = 1.0
    target = np.zeros(dim)
    for e in range(dim // dn):
        target[e * dn + n_b] = 1.0
    rhos = evolve_driven(
        h0, drive, rho0, np.asarray(times_us, dtype=float), rabi_decay_us, method
    )
    flip = np.einsum("tii,i->t", rhos, target).real
    return RabiTrace(
        times_us=np.asarray(times_us, dtype=float),
        flip_probability=flip,
        line=line,
        b1_t=b1_t,
    )


def _pair_rotation(dim: int, pair: tuple[int, int], theta: float, axis: str) -> np.ndarray:
    i, j = pair
    u = np.eye(dim, dtype=complex)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if axis == "x":
        u[i, i] = c
        u[j, j] = c
        u[i, j] = -1j * s
        u[j, i] = -1j * s
    elif axis == "y":
        u[i, i] = c
        u[j, j] = c
        u[i, j] = -s
        u[j, i] = s
    else:
        raise ValueError("axis must be 'x' or 'y'")
    return u


def simulate_echo(
    relax: RelaxationParams,
    dim: int,
    taus_us: np.ndarray,
    pair: tuple[int, int] = (0, 1),
    detuning_mhz: float = 0.0,
) -> DecayTrace:
    """Two-pulse echo on one nuclear transition with ideal instantaneous
    rotations: 90x - tau - 180y - tau - 90x, reading out the flipped level.

    A constant detuning between the pair levels cancels exactly; the
    returned probability is (1 + exp(-2 tau / t2)) / 2 up to the slow
    population drift of the d-level system.
    """
    i, j = pair
    u90 = _pair_rotation(dim, pair, np.pi / 2, "x")
    u180 = _pair_rotation(dim, pair, np.pi, "y")
    taus = np.asarray(taus_us, dtype=float)
    probs = np.empty(len(taus))
    rho_init = np.zeros((dim, dim), dtype=complex)
    rho_init[i, i] = 1.0
    h_det = np.zeros((dim, dim))
    h_det[i, i] = +detuning_mhz / 2
    h_det[j, j] = -detuning_mhz / 2
    for k, tau in enumerate(taus):
        rho = u90 @ rho_init @ u90.conj().T
        rho = evolve_unitary(h_det, rho, tau)
        rho = apply_relaxation(rho, tau, relax)
        rho = u180 @ rho @ u180.conj().T
        rho = evolve_unitary(h_det, rho, tau)
        rho = apply_relaxation(rho, tau, relax)
        rho = u90 @ rho @ u90.conj().T
        probs[k] = rho[j, j].real
    return DecayTrace(times_us=2 * taus, probability=probs)


def simulate_t1(
    relax: RelaxationParams,
    dim: int,
    times_us: np.ndarray,
    level: int = 0,
) -> DecayTrace:
    """Population survival of one nuclear level: 1/d + (1-1/d) exp(-t/t1)."""
    times = np.asarray(times_us, dtype=float)
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[level, level] = 1.0
    probs = np.array(
        [apply_relaxation(rho0, t, relax)[level, level].real for t in times]
    )
    return DecayTrace(times_us=times, probability=probs)
