"""Branch-resolved executor for compiled pulse schedules.

The machine state is a set of charge branches, one per charge state, each
carrying a weight and a joint electron-nuclear density matrix.  Segment
handlers:

* ``relax-wait``: every branch rotates under its own static Hamiltonian and
  relaxes through its nuclear (and optional electron) channel; weight then
  moves between branches following the voltage-dependent settling law.  Only
  the net weight moves, so branches at their steady weight are left untouched
  and keep their coherence.
* ``driven``: each branch is propagated by a precomputed lab-frame
  superoperator built from its own Hamiltonian and the segment's drive.
  Branch weights are frozen for the pulse duration (pulses are short against
  the settling time).
* ``laser-init``: the nuclear state is pooled over branches (optionally
  depolarized), the charge distribution is reset to the repump distribution,
  and each branch gets a fresh electron.
* ``voltage-set``: updates the voltage seen by subsequent waits.
* ``readout``: records the flag-level population of the pooled nuclear state.

Two execution modes: :meth:`ScheduleRunner.expectation` propagates the full
branch ensemble (noiseless probabilities), :meth:`ScheduleRunner.sample`
draws per-shot charge trajectories and readout outcomes.  Per-shot waits
place at most one charge jump per segment; the jump probability is chosen so
the charge distribution at the segment end is exact.

During driven segments only the per-charge Rabi-decay channel acts; the wait
channels (nuclear T1/T2, electron T1) are not double-counted there.  Weight
moved during a wait carries the source branch's end-of-wait nuclear state in
expectation mode; per-shot mode switches mid-wait at the sampled jump time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .charge import (
    ChargeDistribution,
    VoltageProfile,
    attach_electron,
    settle,
    switch_charge,
)
from .dynamics import RelaxationParams, apply_relaxation, driven_propagator, make_drive, partial_trace
from .physics import (
    ChargeState,
    PhysicalParams,
    build_hamiltonian,
    electron_sector_labels,
    nuclear_level_labels,
)
from .readout import ReadoutModel, laser_distribution, laser_init, signal_from_flip_probability, single_shot_readout
from .sequence import CompiledSchedule

__all__ = [
    "ChargeRelaxation",
    "RelaxationTable",
    "DEFAULT_RELAXATION",
    "EngineModel",
    "EngineResult",
    "ScheduleRunner",
    "branch_flip_response",
]

CHARGE_ORDER = (ChargeState.MINUS, ChargeState.ZERO, ChargeState.PLUS)


@dataclass(frozen=True)
class ChargeRelaxation:
    """Lifetimes of the nuclear spin while the defect sits in one charge state.

    All times in microseconds; ``math.inf`` disables a channel.
    rabi_decay_us is the drive-axis coherence time seen during RF pulses.
    """

    t1_us: float
    t2_us: float
    rabi_decay_us: float

    def __post_init__(self) -> None:
        for name in ("t1_us", "t2_us", "rabi_decay_us"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive (or inf), got {v}")

    def nuclear_params(self) -> RelaxationParams:
        return RelaxationParams(self.t1_us, self.t2_us)


@dataclass(frozen=True)
class RelaxationTable:
    """Per-charge nuclear lifetimes plus the optional electron T1 channel.

    The electron channel applies to the negative state only (the neutral
    state enters maximally mixed, the positive state has no electron) and is
    disabled by default.  When enabled it carries the minimum dephasing
    compatible with complete positivity, t2 = t1 * d/(d-1).
    """

    minus: ChargeRelaxation
    zero: ChargeRelaxation
    plus: ChargeRelaxation
    t1_electron_us: float = math.inf

    def __post_init__(self) -> None:
        if not self.t1_electron_us > 0:
            raise ValueError("t1_electron_us must be positive (or inf)")

    def for_charge(self, charge: ChargeState) -> ChargeRelaxation:
        return {
            ChargeState.MINUS: self.minus,
            ChargeState.ZERO: self.zero,
            ChargeState.PLUS: self.plus,
        }[charge]

    def electron_params(self, charge: ChargeState) -> RelaxationParams | None:
        if charge is not ChargeState.MINUS or math.isinf(self.t1_electron_us):
            return None
        return RelaxationParams(self.t1_electron_us, 1.5 * self.t1_electron_us)


DEFAULT_RELAXATION = RelaxationTable(
    minus=ChargeRelaxation(t1_us=6.0e7, t2_us=1.25e3, rabi_decay_us=1.25e3),
    zero=ChargeRelaxation(t1_us=6.0e7, t2_us=1.25e3, rabi_decay_us=1.25e3),
    plus=ChargeRelaxation(t1_us=3.0e5, t2_us=2.5e4, rabi_decay_us=2.2e4),
)


@dataclass(frozen=True)
class EngineModel:
    """Everything the executor needs besides the schedule itself."""

    params: PhysicalParams = field(default_factory=PhysicalParams)
    profile: VoltageProfile = field(default_factory=VoltageProfile)
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    relaxation: RelaxationTable = DEFAULT_RELAXATION
    initial_voltage_v: float = 0.0


@dataclass
class EngineResult:
    """Outcome of one expectation-mode run."""

    flip_probabilities: np.ndarray  # one entry per readout segment
    signals: np.ndarray  # same, mapped through the readout response
    final_weights: ChargeDistribution
    max_trace_drift: float


def _frac(x: float) -> float:
    return x - math.floor(x)


class ScheduleRunner:
    """Executes one compiled schedule against an engine model.

    init_level / flag_level index the nuclear basis (m-descending, the same
    order nuclear_level_labels uses).  The nuclear register starts in the
    pure init_level state; readout segments report the flag_level population.
    """

    def __init__(
        self,
        schedule: CompiledSchedule,
        model: EngineModel,
        *,
        init_level: int,
        flag_level: int,
    ) -> None:
        self.schedule = schedule
        self.model = model
        self.isotope = schedule.isotope
        self.n = len(nuclear_level_labels(self.isotope))
        if not (0 <= init_level < self.n and 0 <= flag_level < self.n):
            raise ValueError("init/flag level outside the nuclear basis")
        self.init_level = init_level
        self.flag_level = flag_level

        self._edim = {c: len(electron_sector_labels(c)) if c is not ChargeState.PLUS else 1 for c in CHARGE_ORDER}
        self._eig: dict[ChargeState, tuple[np.ndarray, np.ndarray]] = {}
        for c in CHARGE_ORDER:
            h = build_hamiltonian(c, self.isotope, model.params)
            evals, evecs = np.linalg.eigh(h)
            self._eig[c] = (evals, evecs)

        # per-shot caches: full-duration wait maps (rotation + relaxation is
        # linear, so a superoperator captures it) and end-of-wait charge
        # distributions, both keyed by segment
        self._wait_ops: dict[tuple[int, ChargeState], np.ndarray] = {}
        self._wait_dists: dict[tuple[int, ChargeState, float], np.ndarray] = {}

        # lab-frame superoperator per (driven segment, charge); the drive
        # phase is advanced to the segment's start time so piecewise
        # composition across segments stays coherent
        self._superops: dict[tuple[int, ChargeState], np.ndarray] = {}
        for i, seg in enumerate(schedule.segments):
            if seg.kind != "driven":
                continue
            for c in CHARGE_ORDER:
                phase = seg.phase_rad + 2.0 * math.pi * _frac(seg.frequency_mhz * seg.t_start_us)
                drive = make_drive(c, self.isotope, model.params, seg.b1_t, seg.frequency_mhz, phase)
                h0 = build_hamiltonian(c, self.isotope, model.params)
                decay = model.relaxation.for_charge(c).rabi_decay_us
                self._superops[(i, c)] = driven_propagator(h0, drive, seg.duration_us, rabi_decay_us=decay)

    # -- shared helpers ----------------------------------------------------

    def _join(self, charge: ChargeState, rho_nuclear: np.ndarray) -> np.ndarray:
        e = attach_electron(charge)
        if e is None:
            return rho_nuclear.copy()
        return np.kron(e, rho_nuclear)

    def _nuclear(self, charge: ChargeState, rho: np.ndarray) -> np.ndarray:
        de = self._edim[charge]
        if de == 1:
            return rho
        return partial_trace(rho, (de, self.n), keep=1)

    def _free(self, charge: ChargeState, rho: np.ndarray, t_us: float) -> np.ndarray:
        evals, evecs = self._eig[charge]
        ph = np.exp(-2j * math.pi * evals * t_us)
        u = (evecs * ph) @ evecs.conj().T
        return u @ rho @ u.conj().T

    def _relax(self, charge: ChargeState, rho: np.ndarray, t_us: float) -> np.ndarray:
        pars = self.model.relaxation.for_charge(charge).nuclear_params()
        de = self._edim[charge]
        if de == 1:
            return apply_relaxation(rho, t_us, nuclear=pars)
        return apply_relaxation(
            rho,
            t_us,
            nuclear=pars,
            electron=self.model.relaxation.electron_params(charge),
            dims=(de, self.n),
        )

    def _wait_branch(self, charge: ChargeState, rho: np.ndarray, t_us: float) -> np.ndarray:
        return self._relax(charge, self._free(charge, rho, t_us), t_us)

    def _wait_superop(self, seg_index: int, charge: ChargeState, t_us: float) -> np.ndarray:
        key = (seg_index, charge)
        op = self._wait_ops.get(key)
        if op is None:
            d = self._edim[charge] * self.n
            op = np.empty((d * d, d * d), dtype=complex)
            basis = np.zeros((d, d), dtype=complex)
            for k in range(d * d):
                basis.flat[k] = 1.0
                op[:, k] = self._wait_branch(charge, basis, t_us).reshape(-1)
                basis.flat[k] = 0.0
            self._wait_ops[key] = op
        return op

    def _apply_superop(self, key: tuple[int, ChargeState], rho: np.ndarray) -> np.ndarray:
        s = self._superops[key]
        out = (s @ rho.reshape(-1)).reshape(rho.shape)
        return 0.5 * (out + out.conj().T)

    def _init_nuclear(self) -> np.ndarray:
        rho = np.zeros((self.n, self.n), dtype=complex)
        rho[self.init_level, self.init_level] = 1.0
        return rho

    def _depolarize(self, rho_nuclear: np.ndarray) -> np.ndarray:
        eps = self.model.readout.init_nuclear_depolarization
        if eps == 0.0:
            return rho_nuclear
        return (1.0 - eps) * rho_nuclear + eps * np.eye(self.n) / self.n

    # -- expectation mode --------------------------------------------------

    def expectation(self) -> EngineResult:
        n = self.n
        weights = np.zeros(3)
        weights[0] = 1.0
        rhos = {c: self._join(c, self._init_nuclear()) for c in CHARGE_ORDER}
        voltage = self.model.initial_voltage_v
        flips: list[float] = []
        drift = 0.0

        for i, seg in enumerate(self.schedule.segments):
            if seg.kind == "voltage-set":
                voltage = seg.voltage_v
            elif seg.kind == "laser-init":
                pooled = np.zeros((n, n), dtype=complex)
                for c, w in zip(CHARGE_ORDER, weights):
                    if w > 0.0:
                        pooled += w * self._nuclear(c, rhos[c])
                pooled /= pooled.trace().real
                rho_minus, dist = laser_init(pooled, ChargeState.PLUS, self.isotope, self.model.readout)
                nuc = self._nuclear(ChargeState.MINUS, rho_minus)
                weights = dist.as_array()
                rhos = {
                    ChargeState.MINUS: rho_minus,
                    ChargeState.ZERO: self._join(ChargeState.ZERO, nuc),
                    ChargeState.PLUS: self._join(ChargeState.PLUS, nuc),
                }
            elif seg.kind == "relax-wait":
                if seg.duration_us > 0.0:
                    for c in CHARGE_ORDER:
                        if weights[CHARGE_ORDER.index(c)] > 0.0:
                            rhos[c] = self._wait_branch(c, rhos[c], seg.duration_us)
                    d1 = settle(
                        ChargeDistribution.from_array(weights), self.model.profile, voltage, seg.duration_us
                    ).as_array()
                    weights, rhos = self._transfer(weights, d1, rhos)
            elif seg.kind == "driven":
                for c in CHARGE_ORDER:
                    if weights[CHARGE_ORDER.index(c)] > 0.0:
                        rhos[c] = self._apply_superop((i, c), rhos[c])
            elif seg.kind == "readout":
                p = 0.0
                for c, w in zip(CHARGE_ORDER, weights):
                    if w > 0.0:
                        p += w * self._nuclear(c, rhos[c])[self.flag_level, self.flag_level].real
                flips.append(min(max(p, 0.0), 1.0))
            else:
                raise ValueError(f"engine cannot execute segment kind {seg.kind!r}")
            for c, w in zip(CHARGE_ORDER, weights):
                if w > 0.0:
                    drift = max(drift, abs(rhos[c].trace().real - 1.0))

        probs = np.array(flips)
        signals = np.array([signal_from_flip_probability(self.model.readout, p) for p in probs])
        return EngineResult(
            flip_probabilities=probs,
            signals=signals,
            final_weights=ChargeDistribution.from_array(weights),
            max_trace_drift=drift,
        )

    def _transfer(
        self, d0: np.ndarray, d1: np.ndarray, rhos: dict[ChargeState, np.ndarray]
    ) -> tuple[np.ndarray, dict[ChargeState, np.ndarray]]:
        """Move net weight between branches, leaving stationary weight alone.

        Weight leaving a branch carries that branch's nuclear state; all
        incoming weight is pooled and enters with a fresh electron.
        """
        delta = d1 - d0
        lost = float(-delta[delta < 0].sum())
        if lost <= 1e-15:
            return d1, rhos
        pooled = np.zeros((self.n, self.n), dtype=complex)
        for c, dw in zip(CHARGE_ORDER, delta):
            if dw < 0.0:
                pooled += (-dw) * self._nuclear(c, rhos[c])
        pooled /= lost
        out = dict(rhos)
        for k, c in enumerate(CHARGE_ORDER):
            if delta[k] > 0.0:
                incoming = self._join(c, pooled)
                if d0[k] > 0.0:
                    out[c] = (d0[k] * rhos[c] + delta[k] * incoming) / d1[k]
                else:
                    out[c] = incoming
        return d1, out

    # -- per-shot mode -----------------------------------------------------

    def sample(self, shots: int, rng: np.random.Generator) -> np.ndarray:
        """Boolean readout outcomes, shape (shots, number of readout segments).

        Each shot follows a single stochastic charge trajectory: waits place
        at most one charge jump, with the stay probability chosen so the
        end-of-wait charge distribution is exact, and the jump time drawn
        from the settling exponential restricted to the segment.
        """
        if shots <= 0:
            raise ValueError("shots must be positive")
        n_read = sum(1 for s in self.schedule.segments if s.kind == "readout")
        results = np.zeros((shots, n_read), dtype=bool)
        for k in range(shots):
            results[k] = self._one_shot(rng)
        return results

    def _one_shot(self, rng: np.random.Generator) -> np.ndarray:
        charge = ChargeState.MINUS
        rho = self._join(charge, self._init_nuclear())
        voltage = self.model.initial_voltage_v
        outcomes: list[bool] = []

        for i, seg in enumerate(self.schedule.segments):
            if seg.kind == "voltage-set":
                voltage = seg.voltage_v
            elif seg.kind == "laser-init":
                nuc = self._depolarize(self._nuclear(charge, rho))
                dist = laser_distribution(self.model.readout).as_array()
                charge = CHARGE_ORDER[rng.choice(3, p=dist / dist.sum())]
                rho = self._join(charge, nuc)
            elif seg.kind == "relax-wait":
                if seg.duration_us > 0.0:
                    charge, rho = self._shot_wait(i, charge, rho, voltage, seg.duration_us, rng)
            elif seg.kind == "driven":
                rho = self._apply_superop((i, charge), rho)
            elif seg.kind == "readout":
                nuc = self._nuclear(charge, rho)
                yes, collapsed = single_shot_readout(nuc, self.flag_level, self.model.readout, rng)
                outcomes.append(bool(yes))
                de = self._edim[charge]
                if de == 1:
                    rho = collapsed
                else:
                    rho = np.kron(partial_trace(rho, (de, self.n), keep=0), collapsed)
            else:
                raise ValueError(f"engine cannot execute segment kind {seg.kind!r}")
        return np.array(outcomes, dtype=bool)

    def _shot_wait(
        self,
        seg_index: int,
        charge: ChargeState,
        rho: np.ndarray,
        voltage: float,
        t_us: float,
        rng: np.random.Generator,
    ) -> tuple[ChargeState, np.ndarray]:
        dkey = (seg_index, charge, voltage)
        d1 = self._wait_dists.get(dkey)
        if d1 is None:
            d1 = settle(ChargeDistribution.pure(charge), self.model.profile, voltage, t_us).as_array()
            self._wait_dists[dkey] = d1
        k0 = CHARGE_ORDER.index(charge)
        u = rng.random()
        if u < d1[k0]:
            op = self._wait_superop(seg_index, charge, t_us)
            out = (op @ rho.reshape(-1)).reshape(rho.shape)
            return charge, 0.5 * (out + out.conj().T)
        others = d1.copy()
        others[k0] = 0.0
        dest = CHARGE_ORDER[rng.choice(3, p=others / others.sum())]
        tau = self.model.profile.settle_tau_us
        frac_left = -math.expm1(-t_us / tau)  # 1 - exp(-t/tau)
        tj = -tau * math.log1p(-rng.random() * frac_left)
        tj = min(max(tj, 0.0), t_us)
        rho = self._wait_branch(charge, rho, tj)
        rho = switch_charge(rho, charge, dest, self.isotope)
        rho = self._wait_branch(dest, rho, t_us - tj)
        return dest, rho


def branch_flip_response(
    schedule: CompiledSchedule,
    model: EngineModel,
    charge: ChargeState,
    *,
    init_level: int,
    flag_level: int,
) -> float:
    """Flag-level population a pure charge branch would show after the
    schedule's driven segments alone (no waits, no laser, no transfer).

    This is the per-branch calibration factor probe estimators divide by.
    """
    runner = ScheduleRunner(schedule, model, init_level=init_level, flag_level=flag_level)
    rho = runner._join(charge, runner._init_nuclear())
    for i, seg in enumerate(schedule.segments):
        if seg.kind == "driven":
            rho = runner._apply_superop((i, charge), rho)
    return float(runner._nuclear(charge, rho)[flag_level, flag_level].real)
