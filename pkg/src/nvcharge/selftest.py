"""Machine-checkable invariant suite behind the `selftest` subcommand.

Each check exercises one structural guarantee of the simulation pipeline on
a fixed, fast workload: no check depends on random luck, and the whole
suite runs in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charge import switch_charge
from .dynamics import (
    RelaxationParams,
    apply_relaxation,
    driven_propagator,
    evolve_driven,
    make_drive,
    partial_trace,
)
from .engine import EngineModel, ScheduleRunner
from .experiments import RunOptions, run_settling_scan
from .physics import (
    ChargeState,
    build_hamiltonian,
    eigensystem,
    nmr_transition_frequencies,
)
from .sequence import builtin_templates, compile_program, parse_program, print_program

__all__ = ["CheckOutcome", "run_selftest"]


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    detail: str


_WALK_PROGRAM = """\
name selftest-walk
amplitude 0.02
laser init
voltage -8.0
wait 2000.0
rf pi on minus:ms0:up..down
voltage 8.0
wait 3000.0
rf pi/2 on plus:n:up..down
readout nuclear
"""


def _driven_states(model: EngineModel) -> np.ndarray:
    p = model.params
    iso = p.isotope
    h0 = build_hamiltonian(ChargeState.MINUS, iso, p)
    line = nmr_transition_frequencies(ChargeState.MINUS, iso, "ms0", p)[0]
    drive = make_drive(ChargeState.MINUS, iso, p, 0.02, line.frequency_mhz)
    # start in an eigenstate superposition so coherences are exercised too
    _, evecs = eigensystem(h0)
    v = (evecs[:, 0] + evecs[:, 2]) / np.sqrt(2.0)
    rho0 = np.outer(v, v.conj())
    times = np.linspace(0.0, 120.0, 7)
    return evolve_driven(h0, drive, rho0, times, rabi_decay_us=1250.0)


def _check_trace(model: EngineModel) -> CheckOutcome:
    sched = compile_program(parse_program(_WALK_PROGRAM), model.params)
    runner = ScheduleRunner(sched, model, init_level=0, flag_level=1)
    drift = runner.expectation().max_trace_drift
    return CheckOutcome(
        "trace-preservation", drift <= 1e-10, f"max per-segment drift {drift:.3e}"
    )


def _check_hermiticity(model: EngineModel) -> CheckOutcome:
    states = _driven_states(model)
    worst = max(float(np.abs(r - r.conj().T).max()) for r in states)
    return CheckOutcome(
        "hermiticity", worst <= 1e-10, f"max |rho - rho^dag| {worst:.3e}"
    )


def _check_positivity(model: EngineModel) -> CheckOutcome:
    states = _driven_states(model)
    lo = min(float(np.linalg.eigvalsh(r).min()) for r in states)
    return CheckOutcome("positivity", lo >= -1e-9, f"min eigenvalue {lo:.3e}")


def _check_unitarity(model: EngineModel) -> CheckOutcome:
    p = model.params
    iso = p.isotope
    h0 = build_hamiltonian(ChargeState.PLUS, iso, p)
    line = nmr_transition_frequencies(ChargeState.PLUS, iso, "n", p)[0]
    drive = make_drive(ChargeState.PLUS, iso, p, 0.02, line.frequency_mhz)
    s = driven_propagator(h0, drive, 7.3)
    err = float(np.abs(s @ s.conj().T - np.eye(s.shape[0])).max())
    return CheckOutcome(
        "unitary-invertibility", err <= 1e-9, f"|S S^dag - I| {err:.3e}"
    )


def _check_semigroup(model: EngineModel) -> CheckOutcome:
    rng = np.random.default_rng(12)
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    nuc = RelaxationParams(t1_us=900.0, t2_us=700.0)
    ele = RelaxationParams(t1_us=400.0, t2_us=500.0)
    one = apply_relaxation(rho, 350.0, nuc, ele, dims=(3, 2))
    two = apply_relaxation(apply_relaxation(rho, 150.0, nuc, ele, dims=(3, 2)), 200.0, nuc, ele, dims=(3, 2))
    err = float(np.abs(one - two).max())
    return CheckOutcome(
        "relaxation-semigroup", err <= 1e-12, f"composition mismatch {err:.3e}"
    )


def _check_switch_ptrace(model: EngineModel) -> CheckOutcome:
    iso = model.params.isotope
    dn = iso.nuclear_dim
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3 * dn, 3 * dn)) + 1j * rng.normal(size=(3 * dn, 3 * dn))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    want = partial_trace(rho, (3, dn), 1)
    worst = 0.0
    state = rho
    old = ChargeState.MINUS
    for new in (ChargeState.PLUS, ChargeState.ZERO, ChargeState.MINUS):
        state = switch_charge(state, old, new, iso)
        de = new.electron_dim
        got = partial_trace(state, (de, dn), 1) if de > 1 else state
        worst = max(worst, float(np.abs(got - want).max()))
        old = new
    return CheckOutcome(
        "switch-nuclear-preservation", worst <= 1e-12, f"max deviation {worst:.3e}"
    )


def _check_parse_print(model: EngineModel) -> CheckOutcome:
    bad = [
        name
        for name, prog in builtin_templates().items()
        if parse_program(print_program(prog)) != prog
    ]
    detail = "all templates round-trip" if not bad else f"mismatch: {', '.join(bad)}"
    return CheckOutcome("parse-print-identity", not bad, detail)


def _check_determinism(model: EngineModel) -> CheckOutcome:
    def run() -> tuple[str, str]:
        opts = RunOptions(model=model, shots=100, seed=5)
        r = run_settling_scan((0.0, 400.0, 1200.0, 2400.0), opts)
        return r.to_csv(), r.to_json()

    first, second = run(), run()
    same = first == second
    return CheckOutcome(
        "byte-determinism",
        same,
        "identical runs emit identical bytes" if same else "outputs differ",
    )


def run_selftest(model: EngineModel | None = None) -> list[CheckOutcome]:
    """Run every invariant check against the given model (default config)."""
    if model is None:
        model = EngineModel()
    checks = (
        _check_trace,
        _check_hermiticity,
        _check_positivity,
        _check_unitarity,
        _check_semigroup,
        _check_switch_ptrace,
        _check_parse_print,
        _check_determinism,
    )
    return [check(model) for check in checks]
