"""Optical initialization and nuclear-state readout.

Readout answers one binary question per shot: did the nuclear spin flip?
The answer channel is asymmetric only through a baseline: the raw yes
probability is baseline + contrast * p_flip, so the inverse estimator is
(p_raw - baseline) / contrast.  Fluorescence levels distinguish charge
states: the negative state is bright, the neutral state sits at a fixed
fraction of that, and the positive state is optically dark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charge import ChargeDistribution, switch_charge
from .physics import ChargeState, Isotope

__all__ = [
    "ReadoutModel",
    "laser_distribution",
    "laser_init",
    "signal_from_flip_probability",
    "estimate_flip_probability",
    "sample_yes_count",
    "single_shot_readout",
    "fluorescence_rate_cps",
    "fluorescence_counts",
]


@dataclass(frozen=True)
class ReadoutModel:
    baseline: float = 0.3
    contrast: float = 0.4
    init_nv_minus_fraction: float = 0.7
    init_nuclear_depolarization: float = 0.0
    rate_minus_cps: float = 50_000.0
    rate_zero_factor: float = 0.5

    def __post_init__(self) -> None:
        if not (0 <= self.baseline and self.baseline + self.contrast <= 1):
            raise ValueError("baseline and baseline+contrast must lie in [0, 1]")
        if self.contrast <= 0:
            raise ValueError("contrast must be positive")
        if not 0 <= self.init_nv_minus_fraction <= 1:
            raise ValueError("init_nv_minus_fraction must lie in [0, 1]")
        if not 0 <= self.init_nuclear_depolarization <= 1:
            raise ValueError("init_nuclear_depolarization must lie in [0, 1]")
        if self.rate_minus_cps < 0 or not 0 <= self.rate_zero_factor <= 1:
            raise ValueError("invalid fluorescence rates")


def laser_distribution(model: ReadoutModel) -> ChargeDistribution:
    """Charge distribution right after the green initialization pulse.

    Optical cycling pumps into the negative state with the configured
    fraction and leaves the remainder neutral; it never ionizes further.
    """
    f = model.init_nv_minus_fraction
    return ChargeDistribution(w_minus=f, w_zero=1.0 - f, w_plus=0.0)


def laser_init(
    rho: np.ndarray,
    charge: ChargeState,
    isotope: Isotope,
    model: ReadoutModel,
) -> tuple[np.ndarray, ChargeDistribution]:
    """Green-pulse initialization channel acting on a stored state.

    The electron is pumped into mS = 0 of the negative state and the
    charge distribution resets toward the illuminated mix.  The nucleus
    rides along untouched except for the configured per-init
    depolarization, which mixes a fraction of the identity into it.
    """
    rho_minus = switch_charge(rho, charge, ChargeState.MINUS, isotope)
    eps = model.init_nuclear_depolarization
    if eps > 0:
        n = isotope.nuclear_dim
        e_dim = ChargeState.MINUS.electron_dim
        uniform = np.zeros_like(rho_minus)
        ms0 = e_dim // 2
        block = slice(ms0 * n, (ms0 + 1) * n)
        uniform[block, block] = np.eye(n) / n
        rho_minus = (1.0 - eps) * rho_minus + eps * uniform
    return rho_minus, laser_distribution(model)


def signal_from_flip_probability(model: ReadoutModel, p_flip: float) -> float:
    if not -1e-12 <= p_flip <= 1 + 1e-12:
        raise ValueError("flip probability must lie in [0, 1]")
    return model.baseline + model.contrast * min(max(p_flip, 0.0), 1.0)


def estimate_flip_probability(model: ReadoutModel, p_raw: float) -> float:
    return (p_raw - model.baseline) / model.contrast


def sample_yes_count(
    model: ReadoutModel, p_flip: float, shots: int, rng: np.random.Generator
) -> int:
    """Number of yes outcomes over many shots.

    Drawing the true answer per shot and then the confusion channel is the
    same two-stage Bernoulli as a single draw at the mixed probability, so
    one binomial sample is exact.
    """
    p = signal_from_flip_probability(model, min(max(p_flip, 0.0), 1.0))
    return int(rng.binomial(shots, p))


def single_shot_readout(
    rho_nuclear: np.ndarray,
    flag_level: int,
    model: ReadoutModel,
    rng: np.random.Generator,
) -> tuple[bool, np.ndarray]:
    """One binary readout of "is the nucleus in the flagged level?".

    Returns (assigned_yes, collapsed state).  The raw yes probability is
    baseline + contrast * Born probability of the flagged level, and the
    state collapses onto the subspace matching the assignment (what the
    apparatus reports is what subsequent pulses act on).  If the assigned
    subspace holds no weight the collapse lands on its uniform state.
    """
    d = rho_nuclear.shape[0]
    if not 0 <= flag_level < d:
        raise ValueError(f"flag level {flag_level} outside 0..{d - 1}")
    p_true = float(rho_nuclear[flag_level, flag_level].real)
    assigned_yes = rng.random() < signal_from_flip_probability(model, p_true)

    proj = np.zeros((d, d))
    if assigned_yes:
        proj[flag_level, flag_level] = 1.0
    else:
        proj = np.eye(d)
        proj[flag_level, flag_level] = 0.0
    collapsed = proj @ rho_nuclear @ proj
    norm = float(np.trace(collapsed).real)
    if norm > 1e-15:
        collapsed = collapsed / norm
    else:
        collapsed = proj / float(np.trace(proj).real)
    return assigned_yes, collapsed


def fluorescence_rate_cps(model: ReadoutModel, dist: ChargeDistribution) -> float:
    return model.rate_minus_cps * (
        dist.weight(ChargeState.MINUS)
        + model.rate_zero_factor * dist.weight(ChargeState.ZERO)
    )


def fluorescence_counts(
    model: ReadoutModel,
    dist: ChargeDistribution,
    duration_s: float,
    rng: np.random.Generator,
) -> int:
    if duration_s < 0:
        raise ValueError("duration must be non-negative")
    return int(rng.poisson(fluorescence_rate_cps(model, dist) * duration_s))
