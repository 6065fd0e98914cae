"""Pulse program parsing, printing, and compilation to timed schedules.

Programs are small line-oriented scripts (conventionally ``.pseq`` files)
that describe one experimental shot: set a gate voltage, wait, drive a
nuclear transition, read out.  ``parse_program`` turns text into a
:class:`PulseProgram`, ``print_program`` renders the canonical text form
(``parse_program(print_program(p)) == p`` for every valid program), and
``compile_program`` resolves transition frequencies and pulse durations
against a parameter set to produce a :class:`CompiledSchedule` of
contiguous segments that an executor can run.

Grammar (one statement per line, ``#`` starts a comment)::

    name <word>
    amplitude <number>                      # drive amplitude, tesla
    sweep <var> in <v1> <v2> ...            # declares a sweep variable
    voltage <V> [guard <t>]                 # gate voltage step, volts
    wait <t>                                # free evolution
    rf pi|pi/2|pulse <t> on <transition> [phase <rad>] [at <t>]
    laser init                              # green pulse, resets charge
    readout nuclear                         # nuclear-state readout block

Times are microseconds by default; ``us``, ``ms`` and ``s`` suffixes are
accepted on input and normalised away.  A transition is named
``<charge>:<sector>:<a>..<b>``, e.g. ``minus:ms0:up..down`` or
``plus:n:+1..0``.  ``pi`` and ``pi/2`` durations are left symbolic until
compilation, where they are computed from the drive amplitude and the
exact transition matrix element (so the negative charge state's enhanced
nuclear Rabi frequency shortens its pi pulses automatically).

Voltage steps carry a settle guard: RF may not start until the guard has
elapsed after the step (2 ms unless overridden per step with ``guard``).
Laser and readout blocks are treated as instantaneous markers; their
real duration lives in the executor, not in the schedule arithmetic.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from typing import Union

import numpy as np

from .charge import ChargeDistribution, VoltageProfile, steady_state_distribution
from .physics import (
    ChargeState,
    Isotope,
    PhysicalParams,
    drive_element_per_tesla,
    electron_sector_labels,
    nmr_transition_frequencies,
    nuclear_level_labels,
)

DEFAULT_GUARD_US = 2000.0

_TIME_UNITS_US = {"us": 1.0, "ms": 1e3, "s": 1e6}

# level labels across both isotopes; compile narrows to the active isotope
_KNOWN_LEVELS = {"up", "down", "+1", "0", "-1"}


class Channel(Enum):
    """Hardware output line a scheduled event occupies."""

    LASER = "laser"
    MW = "mw"
    RF = "rf"
    VOLTAGE = "voltage"


class SequenceError(ValueError):
    """Parse or compile failure, carrying the source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ChargeWeightWarning(UserWarning):
    """RF addressed to a charge state that is unlikely at the set voltage."""


@dataclass(frozen=True)
class VarRef:
    """Reference to a sweep variable inside an expression slot."""

    name: str


Expr = Union[float, VarRef]


def _format_expr(e: Expr) -> str:
    if isinstance(e, VarRef):
        return e.name
    return repr(float(e))


@dataclass(frozen=True)
class SweepDecl:
    var: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class VoltageStmt:
    value: Expr
    guard_us: Expr | None = None


@dataclass(frozen=True)
class WaitStmt:
    duration_us: Expr


@dataclass(frozen=True)
class RfStmt:
    kind: str  # "pi" | "pi2" | "pulse"
    transition: str
    duration_us: Expr | None = None  # required iff kind == "pulse"
    phase_rad: Expr = 0.0
    at_us: Expr | None = None  # explicit start; default is sequential


@dataclass(frozen=True)
class LaserStmt:
    pass


@dataclass(frozen=True)
class ReadoutStmt:
    pass


Statement = Union[VoltageStmt, WaitStmt, RfStmt, LaserStmt, ReadoutStmt]

_STMT_CHANNEL = {
    VoltageStmt: Channel.VOLTAGE,
    RfStmt: Channel.RF,
    LaserStmt: Channel.LASER,
    ReadoutStmt: Channel.LASER,
}


@dataclass(frozen=True)
class PulseProgram:
    """Parsed pulse program: declarations plus an ordered timeline."""

    name: str
    timeline: tuple[Statement, ...]
    amplitude_t: Expr | None = None
    sweeps: tuple[SweepDecl, ...] = ()

    def sweep_values(self) -> dict[str, tuple[float, ...]]:
        return {s.var: s.values for s in self.sweeps}

    def free_variables(self) -> set[str]:
        """Sweep variables still referenced anywhere in the timeline."""
        out: set[str] = set()

        def visit(e: Expr | None):
            if isinstance(e, VarRef):
                out.add(e.name)

        visit(self.amplitude_t)
        for st in self.timeline:
            if isinstance(st, VoltageStmt):
                visit(st.value)
                visit(st.guard_us)
            elif isinstance(st, WaitStmt):
                visit(st.duration_us)
            elif isinstance(st, RfStmt):
                visit(st.duration_us)
                visit(st.phase_rad)
                visit(st.at_us)
        return out


def parse_transition_name(name: str) -> tuple[ChargeState, str, tuple[str, str]]:
    """Split ``charge:sector:a..b`` and validate against known labels."""
    parts = name.split(":")
    if len(parts) != 3:
        raise ValueError(
            f"malformed transition {name!r}; expected charge:sector:a..b"
        )
    try:
        charge = ChargeState(parts[0])
    except ValueError:
        raise ValueError(f"unknown charge state {parts[0]!r} in transition {name!r}")
    sectors = electron_sector_labels(charge)
    if parts[1] not in sectors:
        raise ValueError(
            f"unknown electron sector {parts[1]!r} for {charge.value}; "
            f"expected one of {sectors}"
        )
    levels = parts[2].split("..")
    if len(levels) != 2 or not all(lv in _KNOWN_LEVELS for lv in levels):
        raise ValueError(
            f"unknown level pair {parts[2]!r} in transition {name!r}"
        )
    return charge, parts[1], (levels[0], levels[1])


# ---------------------------------------------------------------------------
# parsing


def _parse_number(tok: str, line: int, what: str, time_units: bool) -> float:
    text = tok
    scale = 1.0
    if time_units:
        for suffix in ("us", "ms", "s"):
            if text.endswith(suffix) and text != suffix:
                head = text[: -len(suffix)]
                # "3e-6s" style stays a number after stripping the unit
                try:
                    float(head)
                except ValueError:
                    continue
                text, scale = head, _TIME_UNITS_US[suffix]
                break
    try:
        return float(text) * scale
    except ValueError:
        raise SequenceError(f"expected a number for {what}, got {tok!r}", line)


def _parse_expr(
    tok: str,
    line: int,
    what: str,
    declared: set[str],
    time_units: bool = False,
    nonneg: bool = False,
) -> Expr:
    if tok and (tok[0].isalpha() or tok[0] == "_") and not _looks_numeric(tok):
        if tok not in declared:
            raise SequenceError(f"undeclared sweep variable {tok!r}", line)
        return VarRef(tok)
    value = _parse_number(tok, line, what, time_units)
    if nonneg and value < 0:
        raise SequenceError(f"{what} must be nonnegative, got {tok!r}", line)
    return value


def _looks_numeric(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        pass
    for suffix in ("us", "ms", "s"):
        if tok.endswith(suffix):
            try:
                float(tok[: -len(suffix)])
                return True
            except ValueError:
                continue
    return False


def parse_program(text: str) -> PulseProgram:
    """Parse program text; errors carry the 1-based source line number."""
    name = "untitled"
    amplitude: Expr | None = None
    sweeps: list[SweepDecl] = []
    timeline: list[Statement] = []
    declared: set[str] = set()
    seen_name = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        head = toks[0]

        if head == "name":
            if len(toks) != 2:
                raise SequenceError("name takes exactly one word", line_no)
            if seen_name:
                raise SequenceError("duplicate name declaration", line_no)
            name, seen_name = toks[1], True

        elif head == "amplitude":
            if len(toks) != 2:
                raise SequenceError("amplitude takes exactly one value", line_no)
            if amplitude is not None:
                raise SequenceError("duplicate amplitude declaration", line_no)
            amplitude = _parse_expr(toks[1], line_no, "amplitude", declared)

        elif head == "sweep":
            if len(toks) < 4 or toks[2] != "in":
                raise SequenceError(
                    "sweep syntax is: sweep <var> in <v1> <v2> ...", line_no
                )
            var = toks[1]
            if not (var[0].isalpha() or var[0] == "_"):
                raise SequenceError(f"bad sweep variable name {var!r}", line_no)
            if var in declared:
                raise SequenceError(f"duplicate sweep variable {var!r}", line_no)
            values = tuple(
                _parse_number(t, line_no, f"sweep {var}", time_units=True)
                for t in toks[3:]
            )
            declared.add(var)
            sweeps.append(SweepDecl(var, values))

        elif head == "voltage":
            if len(toks) == 2:
                guard = None
            elif len(toks) == 4 and toks[2] == "guard":
                guard = _parse_expr(
                    toks[3], line_no, "guard", declared, time_units=True, nonneg=True
                )
            else:
                raise SequenceError(
                    "voltage syntax is: voltage <V> [guard <t>]", line_no
                )
            value = _parse_expr(toks[1], line_no, "voltage", declared)
            timeline.append(VoltageStmt(value, guard))

        elif head == "wait":
            if len(toks) != 2:
                raise SequenceError("wait takes exactly one duration", line_no)
            timeline.append(
                WaitStmt(
                    _parse_expr(toks[1], line_no, "wait", declared, True, nonneg=True)
                )
            )

        elif head == "rf":
            timeline.append(_parse_rf(toks, line_no, declared))

        elif head == "laser":
            if toks[1:] != ["init"]:
                raise SequenceError("laser supports only: laser init", line_no)
            timeline.append(LaserStmt())

        elif head == "readout":
            if toks[1:] != ["nuclear"]:
                raise SequenceError(
                    "readout supports only: readout nuclear", line_no
                )
            timeline.append(ReadoutStmt())

        else:
            raise SequenceError(f"unknown statement {head!r}", line_no)

    return PulseProgram(
        name=name,
        timeline=tuple(timeline),
        amplitude_t=amplitude,
        sweeps=tuple(sweeps),
    )


def _parse_rf(toks: list[str], line_no: int, declared: set[str]) -> RfStmt:
    if len(toks) < 2:
        raise SequenceError("rf needs a pulse kind: pi, pi/2 or pulse <t>", line_no)
    kind_tok = toks[1]
    idx = 2
    duration: Expr | None = None
    if kind_tok == "pi":
        kind = "pi"
    elif kind_tok == "pi/2":
        kind = "pi2"
    elif kind_tok == "pulse":
        if len(toks) < 3:
            raise SequenceError("rf pulse needs a duration", line_no)
        kind = "pulse"
        duration = _parse_expr(
            toks[2], line_no, "rf duration", declared, True, nonneg=True
        )
        idx = 3
    else:
        raise SequenceError(f"unknown rf pulse kind {kind_tok!r}", line_no)

    if len(toks) < idx + 2 or toks[idx] != "on":
        raise SequenceError("rf syntax is: rf <kind> on <transition> ...", line_no)
    transition = toks[idx + 1]
    try:
        parse_transition_name(transition)
    except ValueError as exc:
        raise SequenceError(str(exc), line_no)
    idx += 2

    phase: Expr = 0.0
    at: Expr | None = None
    while idx < len(toks):
        key = toks[idx]
        if key == "phase" and idx + 1 < len(toks):
            phase = _parse_expr(toks[idx + 1], line_no, "phase", declared)
        elif key == "at" and idx + 1 < len(toks):
            at = _parse_expr(toks[idx + 1], line_no, "at", declared, True, nonneg=True)
        else:
            raise SequenceError(f"unknown rf option {key!r}", line_no)
        idx += 2
    return RfStmt(kind, transition, duration, phase, at)


# ---------------------------------------------------------------------------
# printing


def print_program(prog: PulseProgram) -> str:
    """Canonical text form; re-parsing it reproduces the program exactly."""
    lines = [f"name {prog.name}"]
    for s in prog.sweeps:
        vals = " ".join(repr(v) for v in s.values)
        lines.append(f"sweep {s.var} in {vals}")
    if prog.amplitude_t is not None:
        lines.append(f"amplitude {_format_expr(prog.amplitude_t)}")
    for st in prog.timeline:
        if isinstance(st, VoltageStmt):
            line = f"voltage {_format_expr(st.value)}"
            if st.guard_us is not None:
                line += f" guard {_format_expr(st.guard_us)}"
        elif isinstance(st, WaitStmt):
            line = f"wait {_format_expr(st.duration_us)}"
        elif isinstance(st, RfStmt):
            kind = {"pi": "pi", "pi2": "pi/2", "pulse": "pulse"}[st.kind]
            line = f"rf {kind}"
            if st.kind == "pulse":
                line += f" {_format_expr(st.duration_us)}"
            line += f" on {st.transition}"
            if st.phase_rad != 0.0:
                line += f" phase {_format_expr(st.phase_rad)}"
            if st.at_us is not None:
                line += f" at {_format_expr(st.at_us)}"
        elif isinstance(st, LaserStmt):
            line = "laser init"
        elif isinstance(st, ReadoutStmt):
            line = "readout nuclear"
        else:
            raise TypeError(f"unknown statement type {type(st).__name__}")
        lines.append(line)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sweep binding


def bind(prog: PulseProgram, **values: float) -> PulseProgram:
    """Substitute sweep variables with numbers, returning a new program."""
    declared = {s.var for s in prog.sweeps}
    for var in values:
        if var not in declared:
            raise ValueError(f"unknown sweep variable {var!r}")

    def sub(e: Expr | None) -> Expr | None:
        if isinstance(e, VarRef) and e.name in values:
            return float(values[e.name])
        return e

    timeline = []
    for st in prog.timeline:
        if isinstance(st, VoltageStmt):
            timeline.append(VoltageStmt(sub(st.value), sub(st.guard_us)))
        elif isinstance(st, WaitStmt):
            timeline.append(WaitStmt(sub(st.duration_us)))
        elif isinstance(st, RfStmt):
            timeline.append(
                replace(
                    st,
                    duration_us=sub(st.duration_us),
                    phase_rad=sub(st.phase_rad),
                    at_us=sub(st.at_us),
                )
            )
        else:
            timeline.append(st)
    return replace(prog, timeline=tuple(timeline), amplitude_t=sub(prog.amplitude_t))


# ---------------------------------------------------------------------------
# compilation


@dataclass(frozen=True)
class Segment:
    """One contiguous slice of a compiled schedule."""

    kind: str  # unitary | driven | relax-wait | voltage-set | laser-init | readout
    t_start_us: float
    duration_us: float
    transition: str | None = None
    charge: ChargeState | None = None
    level_indices: tuple[int, int] | None = None
    frequency_mhz: float | None = None
    b1_t: float | None = None
    phase_rad: float | None = None
    voltage_v: float | None = None
    guard_us: float | None = None
    target: ChargeDistribution | None = None

    @property
    def t_end_us(self) -> float:
        return self.t_start_us + self.duration_us


@dataclass(frozen=True)
class CompiledSchedule:
    """Gap-free segment list produced from one bound pulse program."""

    program_name: str
    isotope: Isotope
    segments: tuple[Segment, ...]

    @property
    def total_duration_us(self) -> float:
        return self.segments[-1].t_end_us if self.segments else 0.0

    def to_json(self) -> str:
        """Stable JSON rendering, byte-identical for identical schedules."""
        payload = {
            "program_name": self.program_name,
            "isotope": self.isotope.value,
            "total_duration_us": self.total_duration_us,
            "segments": [_segment_dict(s) for s in self.segments],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _segment_dict(s: Segment) -> dict:
    d: dict = {
        "kind": s.kind,
        "t_start_us": s.t_start_us,
        "duration_us": s.duration_us,
    }
    if s.kind == "driven":
        d.update(
            transition=s.transition,
            charge=s.charge.value,
            level_indices=list(s.level_indices),
            frequency_mhz=float(s.frequency_mhz),
            b1_t=float(s.b1_t),
            phase_rad=float(s.phase_rad),
        )
    elif s.kind == "voltage-set":
        d.update(
            voltage_v=float(s.voltage_v),
            guard_us=float(s.guard_us),
            target=[float(w) for w in s.target.as_array()],
        )
    return d


def _concrete(e: Expr | None, what: str) -> float | None:
    if e is None:
        return None
    if isinstance(e, VarRef):
        raise SequenceError(f"unbound sweep variable {e.name!r} in {what}")
    return float(e)


def resolve_rf(
    stmt: RfStmt, params: PhysicalParams, b1_t: float
) -> tuple[ChargeState, tuple[int, int], float, float]:
    """Resolve one RF statement to (charge, level pair, frequency, duration).

    Raises if the named transition does not exist for the active isotope
    or does not connect adjacent nuclear levels.
    """
    charge, sector, level_names = parse_transition_name(stmt.transition)
    labels = nuclear_level_labels(params.isotope)
    for lv in level_names:
        if lv not in labels:
            raise SequenceError(
                f"transition {stmt.transition!r} names level {lv!r}, which does "
                f"not exist for {params.isotope.value}"
            )
    ia, ib = labels.index(level_names[0]), labels.index(level_names[1])
    if abs(ia - ib) != 1:
        raise SequenceError(
            f"transition {stmt.transition!r} does not connect adjacent levels"
        )
    lo = min(ia, ib)
    lines = nmr_transition_frequencies(charge, params.isotope, sector, params)
    line = lines[lo]
    element = drive_element_per_tesla(
        charge, params.isotope, sector, (lo, lo + 1), params
    )
    if element <= 0.0:
        raise SequenceError(f"transition {stmt.transition!r} is not driven")
    f_rabi = b1_t * element
    if stmt.kind == "pi":
        duration = 1.0 / (2.0 * f_rabi)
    elif stmt.kind == "pi2":
        duration = 1.0 / (4.0 * f_rabi)
    else:
        duration = _concrete(stmt.duration_us, "rf duration")
    return charge, (ia, ib), line.frequency_mhz, duration


def compile_program(
    prog: PulseProgram,
    params: PhysicalParams,
    profile: VoltageProfile | None = None,
    *,
    guard_us: float = DEFAULT_GUARD_US,
    initial_voltage_v: float = 0.0,
) -> CompiledSchedule:
    """Resolve a bound program into a contiguous, executable schedule.

    Frequencies and pi durations come from the exact level structure for
    the transition's charge state at the declared drive amplitude.  Each
    voltage step is annotated with the steady-state charge distribution it
    settles toward, and RF starting inside a step's guard window is a
    compile error.  RF aimed at a charge state whose steady-state weight
    at the pending voltage is below one half only warns: the experiment
    may be probing exactly that imbalance.
    """
    if profile is None:
        profile = VoltageProfile()
    free = prog.free_variables()
    if free:
        raise SequenceError(
            f"unbound sweep variables: {', '.join(sorted(free))}; bind() them first"
        )

    b1 = _concrete(prog.amplitude_t, "amplitude")
    events: list[Segment] = []
    clock = 0.0
    voltage = float(initial_voltage_v)
    last_guard_end = 0.0  # earliest time RF may start

    for stmt in prog.timeline:
        if isinstance(stmt, WaitStmt):
            dur = _concrete(stmt.duration_us, "wait")
            if dur < 0:
                raise SequenceError("wait duration must be nonnegative")
            events.append(Segment("relax-wait", clock, dur))
            clock += dur

        elif isinstance(stmt, VoltageStmt):
            voltage = _concrete(stmt.value, "voltage")
            g = _concrete(stmt.guard_us, "guard")
            g = guard_us if g is None else g
            if g < 0:
                raise SequenceError("guard must be nonnegative")
            target = steady_state_distribution(profile, voltage)
            events.append(
                Segment(
                    "voltage-set",
                    clock,
                    0.0,
                    voltage_v=voltage,
                    guard_us=g,
                    target=target,
                )
            )
            last_guard_end = max(last_guard_end, clock + g)

        elif isinstance(stmt, LaserStmt):
            events.append(Segment("laser-init", clock, 0.0))

        elif isinstance(stmt, ReadoutStmt):
            events.append(Segment("readout", clock, 0.0))

        elif isinstance(stmt, RfStmt):
            if b1 is None:
                raise SequenceError(
                    "program drives RF but declares no amplitude"
                )
            charge, pair, freq, dur = resolve_rf(stmt, params, b1)
            start = _concrete(stmt.at_us, "rf start")
            start = clock if start is None else start
            if start < 0:
                raise SequenceError("rf start time must be nonnegative")
            if start < last_guard_end - 1e-12:
                raise SequenceError(
                    f"rf starts {start:g} us into the schedule but the voltage "
                    f"settle guard runs until {last_guard_end:g} us"
                )
            w = steady_state_distribution(profile, voltage).weight(charge)
            if w < 0.5:
                warnings.warn(
                    f"transition {stmt.transition!r} addresses {charge.value}, "
                    f"whose steady-state weight at {voltage:g} V is only {w:.3f}",
                    ChargeWeightWarning,
                    stacklevel=2,
                )
            events.append(
                Segment(
                    "driven",
                    start,
                    dur,
                    transition=stmt.transition,
                    charge=charge,
                    level_indices=pair,
                    frequency_mhz=freq,
                    b1_t=b1,
                    phase_rad=_concrete(stmt.phase_rad, "phase"),
                )
            )
            clock = max(clock, start + dur)

        else:
            raise TypeError(f"unknown statement type {type(stmt).__name__}")

    return CompiledSchedule(prog.name, params.isotope, _layout(events))


_SEGMENT_CHANNEL = {
    "driven": "rf",
    "voltage-set": "voltage",
    "laser-init": "laser",
    "readout": "laser",
}


# ---------------------------------------------------------------------------
# built-in templates and calibration


TEMPLATE_NAMES = ("charge-probe", "rabi", "settle-scan", "echo", "t1")


def builtin_templates() -> dict[str, PulseProgram]:
    """The stock programs shipped with the package, parsed from data files.

    charge-probe   laser init, -8 V window, settle, pi probe, readout
    rabi           variable-length pulse on the negative state's line
    settle-scan    guard-free probe at a variable delay after the step
    echo           pi/2 - tau - pi(y) - tau - pi/2, voltage-bracketed
    t1             bare population decay during a long hold, no refocus
    """
    out = {}
    for name in TEMPLATE_NAMES:
        text = (
            resources.files("nvcharge.data")
            .joinpath(f"{name}.pseq")
            .read_text(encoding="utf-8")
        )
        out[name] = parse_program(text)
    return out


def load_program(path: str) -> PulseProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_program(fh.read())


@dataclass(frozen=True)
class CalibrationResult:
    """Analytic pi-pulse calibration plus a dynamical cross-check."""

    transition: str
    b1_t: float
    frequency_mhz: float
    rabi_frequency_mhz: float
    pi_duration_us: float
    simulated_flip_at_pi: float


def calibrate(
    transition: str, b1_t: float, params: PhysicalParams
) -> CalibrationResult:
    """Derive pulse timings for a transition and verify them dynamically.

    The pi duration is 1/(2 B1 |element|) from the exact matrix element;
    the cross-check propagates the driven evolution for exactly that long
    and reports the achieved flip probability (1 up to numerical noise
    when the calibration is consistent).
    """
    from .dynamics import simulate_rabi

    stmt = RfStmt("pi", transition)
    charge, pair, freq, dur = resolve_rf(stmt, params, b1_t)
    lo = min(pair)
    line = nmr_transition_frequencies(
        charge, params.isotope, transition.split(":")[1], params
    )[lo]
    trace = simulate_rabi(
        charge,
        params.isotope,
        params,
        line,
        b1_t,
        times_us=np.array([0.0, dur]),
    )
    return CalibrationResult(
        transition=transition,
        b1_t=b1_t,
        frequency_mhz=freq,
        rabi_frequency_mhz=1.0 / (2.0 * dur),
        pi_duration_us=dur,
        simulated_flip_at_pi=float(trace.flip_probability[-1]),
    )


def _layout(events: list[Segment]) -> tuple[Segment, ...]:
    """Sort events, reject overlap, and fill gaps with relax-wait segments."""
    order = sorted(range(len(events)), key=lambda i: (events[i].t_start_us, i))
    out: list[Segment] = []
    cursor = 0.0
    busy_until: dict[str, float] = {}

    for i in order:
        ev = events[i]
        ch = _SEGMENT_CHANNEL.get(ev.kind)
        if ch is not None:
            prev_end = busy_until.get(ch, 0.0)
            if ev.t_start_us < prev_end - 1e-12:
                raise SequenceError(f"overlapping events on channel {ch}")
            if ev.duration_us > 0:
                busy_until[ch] = max(prev_end, ev.t_end_us)
        if ev.t_start_us < cursor - 1e-12:
            raise SequenceError(
                "schedule requires sequential segments; an rf pulse overlaps "
                "an earlier event"
            )
        if ev.t_start_us > cursor + 1e-12:
            out.append(Segment("relax-wait", cursor, ev.t_start_us - cursor))
        elif ev.t_start_us != cursor:
            ev = replace(ev, t_start_us=cursor)
        out.append(ev)
        cursor = ev.t_end_us
    return tuple(out)
