"""Spin operators, charge-dependent Hamiltonians, and closed-form spectroscopy.

Conventions used throughout the package:

* Energies and couplings are plain frequencies in MHz (no angular factors);
  the 2*pi appears only inside propagators.
* Magnetic fields are in tesla, times in microseconds.
* Spin matrices are written in the basis of descending magnetic quantum
  number, so index 0 is the largest m.
* Composite spaces are ordered electron (x) nuclear.
* Gyromagnetic ratios are stored as the positive magnitudes that enter the
  dynamical formulas; the physical sign of the nuclear moment is kept as
  metadata on :class:`Isotope`.  With the magnitude convention the
  closed-form drive-enhancement ratio and the exact-diagonalization drive
  matrix elements agree with each other, which is what every calibrated
  quantity in this package is pinned against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "ELEMENTARY_CHARGE",
    "PLANCK_CONSTANT",
    "BARN",
    "N_QUADRUPOLE_MOMENT_BARN_RANGE",
    "ChargeState",
    "Isotope",
    "PhysicalParams",
    "SpinOperators",
    "TransitionLine",
    "spin_operators",
    "build_hamiltonian",
    "eigensystem",
    "dressed_states_first_order",
    "rabi_ratio_closed_form",
    "electron_sector_labels",
    "nuclear_level_labels",
    "nmr_transition_frequencies",
    "transition_name",
    "transverse_drive_operator",
    "quadrupole_from_efg",
    "efg_from_quadrupole",
]

ELEMENTARY_CHARGE = 1.602176634e-19  # C
PLANCK_CONSTANT = 6.62607015e-34  # J s
BARN = 1e-28  # m^2

# Reported scatter of the 14N electric quadrupole moment, in barn.
N_QUADRUPOLE_MOMENT_BARN_RANGE = (0.0193, 0.0208)

_HERMITICITY_RTOL = 1e-12


class ChargeState(Enum):
    """Defect charge state; fixes the electron spin quantum number."""

    MINUS = "minus"
    ZERO = "zero"
    PLUS = "plus"

    @property
    def electron_spin(self) -> float | None:
        """Electron spin S, or None for the spinless positive state."""
        return _ELECTRON_SPIN[self]

    @property
    def electron_dim(self) -> int:
        s = self.electron_spin
        return 1 if s is None else int(round(2 * s + 1))


_ELECTRON_SPIN = {ChargeState.MINUS: 1.0, ChargeState.ZERO: 0.5, ChargeState.PLUS: None}


class Isotope(Enum):
    """Nitrogen isotope; fixes the nuclear spin and quadrupole bookkeeping."""

    N14 = "N14"
    N15 = "N15"

    @property
    def nuclear_spin(self) -> float:
        return 1.0 if self is Isotope.N14 else 0.5

    @property
    def nuclear_dim(self) -> int:
        return int(round(2 * self.nuclear_spin + 1))

    @property
    def gyromagnetic_sign(self) -> int:
        """Sign of the physical nuclear gyromagnetic ratio (metadata only)."""
        return +1 if self is Isotope.N14 else -1

    @property
    def has_quadrupole(self) -> bool:
        return self.nuclear_spin >= 1.0


@dataclass(frozen=True)
class PhysicalParams:
    """Static spin-Hamiltonian parameters for one isotope.

    Frequencies in MHz, gyromagnetic ratios in MHz/T, field in T.  The
    quadrupole constants are only used for spin-1 nitrogen; they are carried
    regardless so a single params object can serve every charge state.
    """

    isotope: Isotope = Isotope.N15
    d_mhz: float = 2870.0
    gamma_e_mhz_per_t: float = 28024.0
    gamma_n_mhz_per_t: float = 4.3156
    b_z_t: float = 0.47
    a_par_mhz: float = 3.03
    a_perp_mhz: float = 3.689
    a_iso_zero_mhz: float = 10.0
    q_minus_mhz: float = -4.945
    q_zero_mhz: float = -4.655
    q_plus_mhz: float = -4.619

    def __post_init__(self) -> None:
        values = (
            self.d_mhz,
            self.gamma_e_mhz_per_t,
            self.gamma_n_mhz_per_t,
            self.b_z_t,
            self.a_par_mhz,
            self.a_perp_mhz,
            self.a_iso_zero_mhz,
            self.q_minus_mhz,
            self.q_zero_mhz,
            self.q_plus_mhz,
        )
        if not all(np.isfinite(v) for v in values):
            raise ValueError("physical parameters must be finite")
        if self.b_z_t < 0:
            raise ValueError("b_z_t must be non-negative")
        if self.gamma_n_mhz_per_t == 0:
            raise ValueError("gamma_n_mhz_per_t must be nonzero")

    @classmethod
    def defaults(cls, isotope: Isotope) -> "PhysicalParams":
        """Calibrated defaults for the given isotope."""
        if isotope is Isotope.N14:
            return cls(
                isotope=Isotope.N14,
                gamma_n_mhz_per_t=3.0766,
                a_par_mhz=-2.14,
                a_perp_mhz=-2.630,
                a_iso_zero_mhz=-4.0,
            )
        return cls(isotope=Isotope.N15)

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    def q_for(self, charge: ChargeState) -> float:
        return {
            ChargeState.MINUS: self.q_minus_mhz,
            ChargeState.ZERO: self.q_zero_mhz,
            ChargeState.PLUS: self.q_plus_mhz,
        }[charge]

    @property
    def electron_zeeman_mhz(self) -> float:
        return self.gamma_e_mhz_per_t * self.b_z_t

    @property
    def nuclear_zeeman_mhz(self) -> float:
        return self.gamma_n_mhz_per_t * self.b_z_t


@dataclass(frozen=True)
class SpinOperators:
    """Angular momentum matrices for one spin, basis ordered by descending m."""

    s: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def dim(self) -> int:
        return self.z.shape[0]


def spin_operators(s: float) -> SpinOperators:
    """Construct Sx, Sy, Sz, S+, S- for spin quantum number ``s``.

    ``2s`` must be a non-negative integer.  Matrix elements follow the
    standard ladder convention ``S+|s,m> = sqrt(s(s+1) - m(m+1)) |s,m+1>``.
    """
    two_s = 2 * s
    if two_s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise ValueError(f"spin must be a non-negative half-integer, got {s}")
    dim = int(round(two_s)) + 1
    m = s - np.arange(dim)  # descending
    sz = np.diag(m).astype(complex)
    sp = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        sp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    return SpinOperators(s=s, x=sx, y=sy, z=sz, plus=sp, minus=sm)


def _check_hermitian(h: np.ndarray) -> np.ndarray:
    scale = max(np.abs(h).max(), 1.0)
    if np.abs(h - h.conj().T).max() > _HERMITICITY_RTOL * scale:
        raise ValueError("operator is not Hermitian")
    return h


def hilbert_dim(charge: ChargeState, isotope: Isotope) -> int:
    return charge.electron_dim * isotope.nuclear_dim


def build_hamiltonian(
    charge: ChargeState, isotope: Isotope, p: PhysicalParams
) -> np.ndarray:
    """Static spin Hamiltonian for one charge state, in MHz.

    The negative state carries the full electron-nuclear Hamiltonian: the
    S=1 zero-field and Zeeman terms, the nuclear quadrupole and Zeeman
    terms, and the hyperfine coupling written as a longitudinal part plus a
    flip-flop exchange ``A_perp/2 (S+I- + S-I+)``.  The neutral state is an
    S=1/2 Zeeman doublet with a configurable isotropic hyperfine contact
    term.  The positive state is diamagnetic, so only the bare nuclear terms
    survive and the matrix acts on the nuclear space alone.  Spin-1/2
    nitrogen has no quadrupole moment, so every N15 spectrum is built
    without a quadrupole term.
    """
    if isotope is not p.isotope:
        raise ValueError(
            f"params are calibrated for {p.isotope.value}, requested {isotope.value}"
        )
    nuc = spin_operators(isotope.nuclear_spin)
    h_nuclear = p.nuclear_zeeman_mhz * nuc.z
    if isotope.has_quadrupole:
        h_nuclear = h_nuclear + p.q_for(charge) * (nuc.z @ nuc.z)

    if charge is ChargeState.PLUS:
        return _check_hermitian(h_nuclear)

    ele = spin_operators(charge.electron_spin)
    eye_e = np.eye(ele.dim)
    eye_n = np.eye(nuc.dim)
    h = p.electron_zeeman_mhz * np.kron(ele.z, eye_n) + np.kron(eye_e, h_nuclear)
    if charge is ChargeState.MINUS:
        h = h + p.d_mhz * np.kron(ele.z @ ele.z, eye_n)
        h = h + p.a_par_mhz * np.kron(ele.z, nuc.z)
        h = h + 0.5 * p.a_perp_mhz * (
            np.kron(ele.plus, nuc.minus) + np.kron(ele.minus, nuc.plus)
        )
    else:
        h = h + p.a_iso_zero_mhz * (
            np.kron(ele.x, nuc.x) + np.kron(ele.y, nuc.y) + np.kron(ele.z, nuc.z)
        )
    return _check_hermitian(h)


def fix_eigenvector_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive.

    Ties go to the lowest index, which makes repeated diagonalizations of
    the same matrix byte-reproducible.
    """
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        idx = int(np.argmax(np.abs(col) - 1e-15 * np.arange(col.size)))
        pivot = col[idx]
        if abs(pivot) > 0:
            out[:, k] = col * (abs(pivot) / pivot)
    return out


def eigensystem(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and phase-fixed eigenvector columns of ``h``."""
    _check_hermitian(h)
    evals, evecs = np.linalg.eigh(h)
    return evals, fix_eigenvector_phases(evecs)


def dressed_states_first_order(p: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """First-order hyperfine-dressed mS=0 nuclear states for spin-1/2 nitrogen.

    In the product basis of the negative charge state the flip-flop coupling
    admixes ``|+1,down>`` into ``|0,up>`` and ``|-1,up>`` into ``|0,down>``:

        |0,up>   ->  |0,up>   - A_perp / (sqrt(2) (ge*Bz + D)) |+1,down>
        |0,down> ->  |0,down> + A_perp / (sqrt(2) (ge*Bz - D)) |-1,up>

    both normalized.  The denominators use the bare electron gaps, which is
    the leading-order expression; the exact eigenvectors differ at relative
    order (nuclear Zeeman + A_par/2)/(electron gap).
    """
    if p.isotope is not Isotope.N15:
        raise ValueError("dressed-state formula applies to spin-1/2 nitrogen only")
    gap_plus = p.electron_zeeman_mhz + p.d_mhz
    gap_minus = p.electron_zeeman_mhz - p.d_mhz
    if abs(gap_plus) < 1e-9 or abs(gap_minus) < 1e-9:
        raise ValueError(
            "degenerate electron gap |gamma_e*B_z| = D; first-order formula is singular"
        )
    # basis (mS, mI) descending: (+1,up), (+1,down), (0,up), (0,down), (-1,up), (-1,down)
    up = np.zeros(6, dtype=complex)
    up[2] = 1.0
    up[1] = -p.a_perp_mhz / (np.sqrt(2.0) * gap_plus)
    down = np.zeros(6, dtype=complex)
    down[3] = 1.0
    down[4] = p.a_perp_mhz / (np.sqrt(2.0) * gap_minus)
    return up / np.linalg.norm(up), down / np.linalg.norm(down)


def rabi_ratio_closed_form(p: PhysicalParams) -> float:
    """Closed-form nuclear Rabi enhancement of the negative over the positive state.

    Returns ``1 + (gamma_e/gamma_n) * 2*A_perp*D / (gamma_e^2 Bz^2 - D^2)``,
    the first-order dressed-state result.  Uses the stored parameter values
    directly; with the package's magnitude convention for the gyromagnetic
    ratios the calibrated defaults give 1.832.
    """
    denom = p.electron_zeeman_mhz**2 - p.d_mhz**2
    if abs(denom) < 1e-9:
        raise ValueError("singular denominator: gamma_e^2 Bz^2 = D^2")
    return 1.0 + (p.gamma_e_mhz_per_t / p.gamma_n_mhz_per_t) * (
        2.0 * p.a_perp_mhz * p.d_mhz / denom
    )


def electron_sector_labels(charge: ChargeState) -> tuple[str, ...]:
    """Valid electron-sector labels, ordered by basis index (descending m)."""
    if charge is ChargeState.MINUS:
        return ("ms+1", "ms0", "ms-1")
    if charge is ChargeState.ZERO:
        return ("ms+1/2", "ms-1/2")
    return ("n",)


def nuclear_level_labels(isotope: Isotope) -> tuple[str, ...]:
    """Nuclear level labels, ordered by basis index (descending m)."""
    return ("+1", "0", "-1") if isotope is Isotope.N14 else ("up", "down")


@dataclass(frozen=True)
class TransitionLine:
    """One nuclear magnetic-resonance line of a given charge state."""

    charge: ChargeState
    sector: str
    levels: tuple[str, str]
    frequency_mhz: float
    level_indices: tuple[int, int] = field(compare=False, default=(0, 0))

    @property
    def name(self) -> str:
        return transition_name(self.charge, self.sector, self.levels)


def transition_name(
    charge: ChargeState, sector: str, levels: tuple[str, str]
) -> str:
    """Canonical program-text name, e.g. ``minus:ms0:up..down``."""
    return f"{charge.value}:{sector}:{levels[0]}..{levels[1]}"


def _classify_eigenvectors(
    evecs: np.ndarray, e_dim: int, n_dim: int
) -> list[tuple[int, int]]:
    """Dominant (electron index, nuclear index) of each eigenvector column."""
    out = []
    for k in range(evecs.shape[1]):
        flat = int(np.argmax(np.abs(evecs[:, k])))
        out.append(divmod(flat, n_dim))
    return out


def sector_eigenstates(
    charge: ChargeState,
    isotope: Isotope,
    electron_sector: str,
    p: PhysicalParams,
) -> list[tuple[float, np.ndarray]]:
    """Exact (energy, eigenvector) per nuclear level within one electron sector.

    Eigenstates are assigned by their dominant product-basis component, so
    hyperfine admixture is retained.  The list is indexed by nuclear level
    (descending m).
    """
    sectors = electron_sector_labels(charge)
    if electron_sector not in sectors:
        raise ValueError(
            f"unknown electron sector {electron_sector!r} for {charge.value}; "
            f"expected one of {sectors}"
        )
    h = build_hamiltonian(charge, isotope, p)
    evals, evecs = eigensystem(h)
    n_dim = isotope.nuclear_dim
    e_dim = charge.electron_dim
    sector_index = sectors.index(electron_sector)
    assignment = _classify_eigenvectors(evecs, e_dim, n_dim)

    by_nuc: dict[int, tuple[float, np.ndarray]] = {}
    for k, (ei, ni) in enumerate(assignment):
        if ei == sector_index:
            if ni in by_nuc:
                raise RuntimeError(
                    "ambiguous eigenstate assignment; parameters too close to degeneracy"
                )
            by_nuc[ni] = (float(evals[k]), evecs[:, k])
    if len(by_nuc) != n_dim:
        raise RuntimeError("sector classification did not find every nuclear level")
    return [by_nuc[ni] for ni in range(n_dim)]


def drive_element_per_tesla(
    charge: ChargeState,
    isotope: Isotope,
    electron_sector: str,
    level_pair: tuple[int, int],
    p: PhysicalParams,
) -> float:
    """|<a| (ge Sx + gn Ix) |b>| between two exact sector eigenstates, MHz/T.

    Multiplied by the drive amplitude this is the Rabi frequency of the
    transition, enhancement included; the pi time is 1/(2 B1 element).
    """
    states = sector_eigenstates(charge, isotope, electron_sector, p)
    v = transverse_drive_operator(charge, isotope, p)
    a, b = level_pair
    return float(abs(np.vdot(states[a][1], v @ states[b][1])))


def nmr_transition_frequencies(
    charge: ChargeState,
    isotope: Isotope,
    electron_sector: str,
    p: PhysicalParams,
) -> list[TransitionLine]:
    """Nuclear transition lines within one electron sector, from exact eigenvalues.

    Lines connect nuclear levels adjacent in m (the transitions a transverse
    drive addresses).  For the diamagnetic positive state the sector label
    is ignored apart from validation.
    """
    states = sector_eigenstates(charge, isotope, electron_sector, p)
    labels = nuclear_level_labels(isotope)
    lines = []
    for ni in range(isotope.nuclear_dim - 1):
        f = abs(states[ni][0] - states[ni + 1][0])
        lines.append(
            TransitionLine(
                charge=charge,
                sector=electron_sector,
                levels=(labels[ni], labels[ni + 1]),
                frequency_mhz=f,
                level_indices=(ni, ni + 1),
            )
        )
    return lines


def transverse_drive_operator(
    charge: ChargeState, isotope: Isotope, p: PhysicalParams
) -> np.ndarray:
    """Coupling operator for a transverse oscillating field, per tesla of B1.

    Returns ``gamma_e Sx (x) 1 + gamma_n 1 (x) Ix`` in MHz/T on the Hilbert
    space of the given charge state (nuclear part only when diamagnetic).
    Multiply by the drive amplitude in tesla to get the MHz coupling matrix
    that multiplies ``cos(2 pi f t + phi)``.
    """
    if isotope is not p.isotope:
        raise ValueError(
            f"params are calibrated for {p.isotope.value}, requested {isotope.value}"
        )
    nuc = spin_operators(isotope.nuclear_spin)
    if charge is ChargeState.PLUS:
        return p.gamma_n_mhz_per_t * nuc.x
    ele = spin_operators(charge.electron_spin)
    return p.gamma_e_mhz_per_t * np.kron(ele.x, np.eye(nuc.dim)) + (
        p.gamma_n_mhz_per_t * np.kron(np.eye(ele.dim), nuc.x)
    )


def quadrupole_from_efg(v_zz: float, q_n_barn: float) -> float:
    """Quadrupole coupling Cq = 3 e Q_N V_zz / (4 h), returned in MHz.

    ``v_zz`` is the electric field gradient in V/m^2 and ``q_n_barn`` the
    nuclear quadrupole moment in barn.
    """
    if not (np.isfinite(v_zz) and np.isfinite(q_n_barn)):
        raise ValueError("inputs must be finite")
    cq_hz = 3.0 * ELEMENTARY_CHARGE * (q_n_barn * BARN) * v_zz / (4.0 * PLANCK_CONSTANT)
    return cq_hz / 1e6


def efg_from_quadrupole(cq_mhz: float, q_n_barn: float) -> float:
    """Invert :func:`quadrupole_from_efg` for the field gradient in V/m^2."""
    if not (np.isfinite(cq_mhz) and np.isfinite(q_n_barn)):
        raise ValueError("inputs must be finite")
    if q_n_barn == 0:
        raise ValueError("quadrupole moment must be nonzero")
    return (cq_mhz * 1e6) * 4.0 * PLANCK_CONSTANT / (
        3.0 * ELEMENTARY_CHARGE * q_n_barn * BARN
    )
