"""Gate-voltage control of the defect charge state.

The steady-state occupation of the three charge states follows two logistic
steps along the gate voltage axis: stepping up from negative voltages
depletes the negative state toward neutral, stepping further converts
neutral to positive.  After a voltage change the distribution relaxes
toward the new steady state exponentially with a single settling time; the
telegraph sampler reproduces exactly that marginal, one shot at a time.

Switching the charge state of a live density matrix keeps the nuclear part
untouched: the electron factor is traced out and a fresh electron state for
the new charge is attached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import partial_trace
from .physics import ChargeState, Isotope

__all__ = [
    "ChargeDistribution",
    "VoltageProfile",
    "steady_state_distribution",
    "settle",
    "switch_charge",
    "attach_electron",
    "depletion_radius",
    "TelegraphSampler",
]

_ORDER = (ChargeState.MINUS, ChargeState.ZERO, ChargeState.PLUS)


@dataclass(frozen=True)
class ChargeDistribution:
    """Probability simplex over the three charge states."""

    w_minus: float
    w_zero: float
    w_plus: float

    def __post_init__(self) -> None:
        w = np.array([self.w_minus, self.w_zero, self.w_plus])
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability distribution: {w}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_minus, self.w_zero, self.w_plus])

    def weight(self, charge: ChargeState) -> float:
        return float(self.as_array()[_ORDER.index(charge)])

    def dominant(self) -> ChargeState:
        return _ORDER[int(np.argmax(self.as_array()))]

    @classmethod
    def from_array(cls, w: np.ndarray) -> "ChargeDistribution":
        return cls(w_minus=float(w[0]), w_zero=float(w[1]), w_plus=float(w[2]))

    @classmethod
    def pure(cls, charge: ChargeState) -> "ChargeDistribution":
        w = [0.0, 0.0, 0.0]
        w[_ORDER.index(charge)] = 1.0
        return cls(*w)


@dataclass(frozen=True)
class VoltageProfile:
    """Two-step logistic map from gate voltage to charge steady state.

    w_minus falls from w_minus_max to zero around v_minus_zero; w_plus
    rises from zero to w_plus_max around v_zero_plus; the neutral state
    takes the remainder.  Voltages in volts, settle time in microseconds.
    """

    v_minus_zero: float = -2.0
    width_minus_v: float = 1.0
    v_zero_plus: float = 5.5
    width_plus_v: float = 0.5
    w_minus_max: float = 0.7
    w_plus_max: float = 1.0
    settle_tau_us: float = 540.0

    def __post_init__(self) -> None:
        if self.width_minus_v <= 0 or self.width_plus_v <= 0:
            raise ValueError("logistic widths must be positive")
        if not (0 <= self.w_minus_max <= 1 and 0 <= self.w_plus_max <= 1):
            raise ValueError("asymptotic weights must lie in [0, 1]")
        if self.v_minus_zero >= self.v_zero_plus:
            raise ValueError("the minus->zero step must sit below the zero->plus step")
        if self.settle_tau_us <= 0:
            raise ValueError("settle_tau_us must be positive")


def _sigmoid(x: float) -> float:
    # guarded against overflow for large negative arguments
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def steady_state_distribution(profile: VoltageProfile, voltage_v: float) -> ChargeDistribution:
    w_m = profile.w_minus_max * _sigmoid((profile.v_minus_zero - voltage_v) / profile.width_minus_v)
    w_p = profile.w_plus_max * _sigmoid((voltage_v - profile.v_zero_plus) / profile.width_plus_v)
    if w_m + w_p > 1.0 + 1e-12:
        raise ValueError(
            f"profile is inconsistent at {voltage_v} V: w_minus + w_plus = {w_m + w_p}"
        )
    return ChargeDistribution(w_minus=w_m, w_zero=1.0 - w_m - w_p, w_plus=w_p)


def settle(
    start: ChargeDistribution,
    profile: VoltageProfile,
    voltage_v: float,
    t_us: float,
) -> ChargeDistribution:
    """Exponential approach to the steady state at the given voltage."""
    if t_us < 0:
        raise ValueError("t_us must be non-negative")
    ss = steady_state_distribution(profile, voltage_v).as_array()
    decay = np.exp(-t_us / profile.settle_tau_us)
    return ChargeDistribution.from_array(ss + (start.as_array() - ss) * decay)


def attach_electron(charge: ChargeState) -> np.ndarray | None:
    """Electron state attached after a charge switch.

    The negative state comes out of optical cycling in mS=0; the neutral
    state carries no preferred orientation and enters maximally mixed; the
    positive state has no electron factor at all.
    """
    if charge is ChargeState.MINUS:
        rho = np.zeros((3, 3), dtype=complex)
        rho[1, 1] = 1.0
        return rho
    if charge is ChargeState.ZERO:
        return np.eye(2, dtype=complex) / 2
    return None


def switch_charge(
    rho: np.ndarray,
    old_charge: ChargeState,
    new_charge: ChargeState,
    isotope: Isotope,
    electron_state: np.ndarray | None = None,
) -> np.ndarray:
    """Move a density matrix between charge-state Hilbert spaces.

    The nuclear factor is preserved exactly; the old electron factor is
    discarded and replaced by electron_state (default per charge via
    :func:`attach_electron`).
    """
    dn = isotope.nuclear_dim
    de_old = old_charge.electron_dim
    if rho.shape != (de_old * dn, de_old * dn):
        raise ValueError("density matrix does not match the old charge state")
    nuclear = partial_trace(rho, (de_old, dn), 1) if de_old > 1 else rho
    if new_charge is old_charge and de_old == 1:
        return nuclear.copy()
    fresh = attach_electron(new_charge) if electron_state is None else electron_state
    if fresh is None:
        return nuclear
    de_new = new_charge.electron_dim
    if fresh.shape != (de_new, de_new):
        raise ValueError("electron_state does not match the new charge state")
    return np.kron(fresh, nuclear)


def depletion_radius(
    voltage_v: float,
    donor_density_per_cm3: float,
    r0_nm: float = 100.0,
    voltage_exponent: float = 0.75,
    density_exponent: float = 0.75,
    v_ref_v: float = 1.0,
    n_ref_per_cm3: float = 1e16,
) -> float:
    """Depletion region radius r0 * (V/Vref)^a / (n/nref)^b in nanometres.

    Both exponents must lie in [0.5, 1]; the power-law form interpolates
    between the abrupt-junction limits in one and three dimensions.
    """
    if not (0.5 <= voltage_exponent <= 1.0 and 0.5 <= density_exponent <= 1.0):
        raise ValueError("exponents must lie in [0.5, 1]")
    if voltage_v <= 0 or donor_density_per_cm3 <= 0:
        raise ValueError("voltage and donor density must be positive")
    return (
        r0_nm
        * (voltage_v / v_ref_v) ** voltage_exponent
        / (donor_density_per_cm3 / n_ref_per_cm3) ** density_exponent
    )


class TelegraphSampler:
    """Per-shot charge-state trajectory consistent with the settling law.

    Over an interval dt the state is kept with probability exp(-dt/tau) and
    otherwise redrawn from the steady state at the current voltage, which
    reproduces the ensemble settle() marginal exactly.
    """

    def __init__(self, state: ChargeState):
        self.state = state

    def advance(
        self,
        profile: VoltageProfile,
        voltage_v: float,
        t_us: float,
        rng: np.random.Generator,
    ) -> ChargeState:
        if t_us < 0:
            raise ValueError("t_us must be non-negative")
        if t_us > 0 and rng.random() >= np.exp(-t_us / profile.settle_tau_us):
            w = steady_state_distribution(profile, voltage_v).as_array()
            self.state = _ORDER[rng.choice(3, p=w / w.sum())]
        return self.state
