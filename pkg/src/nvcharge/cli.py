"""Batch command-line entry point.

Every subcommand loads the shipped defaults (optionally overlaid by
--config), runs one experiment, program, or protocol, and emits a data
table plus a summary.  With --output DIR both the CSV table and the JSON
summary are written there; without it the table is printed to stdout in
the --format of choice.  Identical (config, seed, subcommand) invocations
produce byte-identical output.

Exit codes: 0 success, 1 a --check tolerance failed (or selftest found a
violation), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import math
import sys
import zlib
from pathlib import Path

import numpy as np
import yaml

from .config import Config, ConfigError, load_config
from .engine import ScheduleRunner
from .experiments import (
    ExperimentResult,
    RunOptions,
    run_charge_scan,
    run_lifetimes,
    run_quadrupole_spectroscopy,
    run_rabi_comparison,
    run_settling_scan,
)
from .physics import ChargeState, Isotope
from .readout import estimate_flip_probability
from .register import (
    Node,
    ProtocolConfig,
    Register,
    bell_fidelity,
    mutual_information,
    run_protocol_phase,
)
from .selftest import run_selftest
from .sequence import SequenceError, bind, compile_program, parse_program

__all__ = ["main"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

DEFAULT_SCAN_VOLTAGES = tuple(float(v) for v in range(-10, 11))
DEFAULT_SETTLE_WAITS = (
    0.0, 100.0, 200.0, 400.0, 600.0, 900.0, 1300.0, 1800.0, 2400.0, 3200.0,
)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config overlay file")
    common.add_argument("--seed", type=int, metavar="N", help="master seed (default from config)")
    common.add_argument("--output", metavar="DIR", help="write <command>.csv and <command>.json here")
    common.add_argument("--format", choices=("csv", "json"), help="stdout table format")
    common.add_argument("--check", action="store_true", help="verify recovered values against configured ones")
    common.add_argument("--shots", type=int, metavar="N", help="sample N shots per point instead of expectation values")

    parser = argparse.ArgumentParser(
        prog="nvcharge",
        description="charge-state controlled spin register: experiments, pulse programs, protocol",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("scan-charge", parents=[common], help="steady-state charge weights vs gate voltage")
    sp.add_argument("--voltages", type=_float_list, default=DEFAULT_SCAN_VOLTAGES, metavar="V1,V2,...")

    sub.add_parser("rabi", parents=[common], help="driven-oscillation frequency ratio between charge states")

    sub.add_parser("echo", parents=[common], help="spin-echo coherence decay per charge state")

    sub.add_parser("t1", parents=[common], help="longitudinal nuclear decay in the stored charge state")

    sp = sub.add_parser("settle", parents=[common], help="charge settling time after a voltage step")
    sp.add_argument("--waits", type=_float_list, default=DEFAULT_SETTLE_WAITS, metavar="T1,T2,...")

    sub.add_parser("quadrupole", parents=[common], help="quadrupole line positions per charge state")

    sub.add_parser("lifetimes", parents=[common], help="echo, longitudinal, and driven-decay summary")

    sp = sub.add_parser("protocol", parents=[common], help="two-node storage/processing protocol phases")
    sp.add_argument("scenario", nargs="?", metavar="SCENARIO.yaml", help="node geometry and phase schedule")

    sp = sub.add_parser("run", parents=[common], help="execute one pulse program file")
    sp.add_argument("program", metavar="FILE.pseq")
    sp.add_argument("--init-level", type=int, default=0, metavar="K", help="nuclear level the register starts in")
    sp.add_argument("--flag-level", type=int, default=1, metavar="K", help="nuclear level each readout reports")

    sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    return parser


# ---------------------------------------------------------------------------
# protocol scenario handling

_SCENARIO_KEYS = {
    "nodes", "phases", "swap_error", "swap_duration_us", "entangle_time_us",
    "electron_init_level", "readout_node",
}
_NODE_KEYS = {"id", "position", "isotope", "charge"}

DEFAULT_SCENARIO = {
    "nodes": [
        {"id": "a", "position": [0.0, 0.0, 0.0]},
        {"id": "b", "position": [0.0, 0.0, 10.0]},
    ],
    "phases": ["initialization", "operation", "readout"],
}


def _load_scenario(path: str | None) -> dict:
    if path is None:
        return dict(DEFAULT_SCENARIO)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {p}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed scenario file {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"scenario file {p} must be a key-value mapping")
    unknown = set(data) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    if "nodes" not in data or "phases" not in data:
        raise ConfigError("scenario needs both 'nodes' and 'phases'")
    return data


def _scenario_nodes(spec: list) -> list[Node]:
    nodes = []
    for entry in spec:
        if not isinstance(entry, dict):
            raise ConfigError("each scenario node must be a mapping")
        unknown = set(entry) - _NODE_KEYS
        if unknown:
            raise ConfigError(f"unknown node keys: {', '.join(sorted(unknown))}")
        try:
            pos = tuple(float(x) for x in entry["position"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("every node needs a numeric 3-vector 'position'") from None
        if len(pos) != 3:
            raise ConfigError("node positions are 3-vectors (nanometers)")
        try:
            isotope = Isotope(entry.get("isotope", "N15"))
        except ValueError:
            raise ConfigError(f"unknown isotope {entry.get('isotope')!r}") from None
        charge_name = str(entry.get("charge", "minus")).lower()
        try:
            charge = ChargeState(charge_name)
        except ValueError:
            raise ConfigError(f"unknown charge state {entry.get('charge')!r}") from None
        nodes.append(Node(str(entry.get("id", len(nodes))), pos, isotope, charge))
    return nodes


def _run_protocol(scenario: dict, cfg: Config, seed: int, check: bool) -> ExperimentResult:
    nodes = _scenario_nodes(scenario["nodes"])
    try:
        pconf = ProtocolConfig(
            swap_error=float(scenario.get("swap_error", 0.0)),
            swap_duration_us=float(scenario.get("swap_duration_us", 0.0)),
            entangle_time_us=scenario.get("entangle_time_us"),
            electron_init_level=int(scenario.get("electron_init_level", 1)),
            readout_node=int(scenario.get("readout_node", 0)),
        )
        register = Register(
            nodes, params=cfg.model.params, relaxation=cfg.model.relaxation
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    phases = scenario["phases"]
    if not isinstance(phases, list) or not phases:
        raise ConfigError("scenario 'phases' must be a non-empty list")

    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(zlib.crc32(b"protocol"),))
    )
    table: list[dict[str, object]] = []
    result = ExperimentResult(
        name="protocol",
        sweep_name="phase",
        sweep_values=tuple(range(len(phases))),
        table=table,
    )
    two_nodes = len(nodes) == 2

    def snapshot(phase: str, records) -> None:
        # single-node runs have no pairwise figures; blank cells, not NaN,
        # keep the JSON emission strictly parseable
        fid = bell_fidelity(register) if two_nodes else ""
        mi = mutual_information(register) if two_nodes else ""
        table.append({
            "kind": "phase", "phase": phase,
            "bell_fidelity": fid, "mutual_information_bits": mi,
            "node_id": "", "basis": "", "outcome": "", "probability": "",
        })
        for r in records:
            table.append({
                "kind": "record", "phase": phase,
                "bell_fidelity": "", "mutual_information_bits": "",
                "node_id": r.node_id, "basis": r.basis,
                "outcome": r.outcome, "probability": r.probability,
            })

    ran_operation = False
    for phase in phases:
        try:
            records = run_protocol_phase(register, str(phase), pconf, rng=rng)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if str(phase).lower() == "operation":
            ran_operation = True
            result.fitted["bell_fidelity"] = bell_fidelity(register)
        snapshot(str(phase), records)

    if two_nodes:
        j = Register(
            [Node(n.id, n.position, n.isotope, ChargeState.MINUS) for n in nodes],
            params=cfg.model.params,
        ).coupling_matrix()[0, 1]
        result.fitted["coupling_mhz"] = j
        if j != 0.0:
            result.fitted["entangle_time_us"] = (
                pconf.entangle_time_us
                if pconf.entangle_time_us is not None
                else 1.0 / (4.0 * abs(j))
            )
    if check and ran_operation:
        fid = result.fitted["bell_fidelity"]
        good = fid >= 0.999
        result.checks.append(
            f"{'PASS' if good else 'FAIL'}: bell fidelity {fid:.6f} >= 0.999"
        )
        result.passed = good
    return result


# ---------------------------------------------------------------------------
# pulse-program runner

def _run_program(path: str, opts: RunOptions, init_level: int, flag_level: int) -> ExperimentResult:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read program file {p}: {exc.strerror}") from exc
    try:
        prog = parse_program(text)
    except SequenceError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if len(prog.sweeps) > 1:
        raise ConfigError("programs with more than one sweep variable are not supported")

    sweep = prog.sweeps[0] if prog.sweeps else None
    points = list(sweep.values) if sweep else [None]
    sweep_name = sweep.var if sweep else "run"

    table: list[dict[str, object]] = []
    result = ExperimentResult(
        name=f"run-{prog.name}",
        sweep_name=sweep_name,
        sweep_values=tuple(0.0 if v is None else float(v) for v in points),
        table=table,
    )
    drift = 0.0
    for idx, value in enumerate(points):
        bound = bind(prog, **{sweep.var: float(value)}) if sweep else prog
        try:
            sched = compile_program(bound, opts.model.params)
        except SequenceError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        runner = ScheduleRunner(
            sched, opts.model, init_level=init_level, flag_level=flag_level
        )
        x = 0.0 if value is None else float(value)
        if opts.shots is None:
            res = runner.expectation()
            drift = max(drift, res.max_trace_drift)
            for k, flip in enumerate(res.flip_probabilities):
                table.append({sweep_name: x, "readout_index": k, "p": float(flip), "stderr": 0.0})
            weights = res.final_weights.as_array()
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence(opts.seed, spawn_key=(zlib.crc32(b"run"), idx))
            )
            ys = runner.sample(opts.shots, rng)
            for k in range(ys.shape[1]):
                ybar = float(ys[:, k].mean())
                flip = estimate_flip_probability(opts.model.readout, ybar)
                se = math.sqrt(max(ybar * (1.0 - ybar), 0.25 / opts.shots) / opts.shots)
                table.append({
                    sweep_name: x, "readout_index": k,
                    "p": flip, "stderr": se / opts.model.readout.contrast,
                })
            weights = None
    if opts.shots is None:
        result.fitted["max_trace_drift"] = drift
        if weights is not None and len(points) == 1:
            for name, w in zip(("w_minus", "w_zero", "w_plus"), weights):
                result.fitted[name] = float(w)
    return result


# ---------------------------------------------------------------------------
# output plumbing

def _emit(result: ExperimentResult, fmt: str, outdir: str | None) -> None:
    if outdir:
        d = Path(outdir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / f"{result.name}.csv", "w", newline="") as f:
            f.write(result.to_csv())
        with open(d / f"{result.name}.json", "w", newline="") as f:
            f.write(result.to_json())
    else:
        sys.stdout.write(result.to_csv() if fmt == "csv" else result.to_json())


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"nvcharge: {exc}", file=sys.stderr)
        return EXIT_USAGE

    seed = args.seed if args.seed is not None else cfg.run.seed
    shots = args.shots if args.shots is not None else cfg.run.shots
    fmt = args.format if args.format is not None else cfg.run.format
    outdir = args.output if args.output is not None else cfg.run.output_dir
    if shots is not None and shots <= 0:
        print("nvcharge: --shots must be positive", file=sys.stderr)
        return EXIT_USAGE
    if seed < 0:
        print("nvcharge: --seed must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    opts = RunOptions(model=cfg.model, shots=shots, seed=seed)

    try:
        if args.command == "selftest":
            outcomes = run_selftest(cfg.model)
            # human-readable verdicts on stderr; the data table goes through
            # the normal emission path so stdout stays machine-parseable
            for c in outcomes:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}", file=sys.stderr)
            table = [
                {"check": c.name, "passed": c.passed, "detail": c.detail}
                for c in outcomes
            ]
            result = ExperimentResult(
                name="selftest",
                sweep_name="check",
                sweep_values=tuple(range(len(outcomes))),
                table=table,
                passed=all(c.passed for c in outcomes),
            )
            _emit(result, fmt, outdir)
            return EXIT_OK if result.passed else EXIT_CHECK_FAILED
        if args.command == "scan-charge":
            result = run_charge_scan(args.voltages, shots, opts, check=args.check)
        elif args.command == "rabi":
            result = run_rabi_comparison(opts, check=args.check)
        elif args.command == "echo":
            result = run_lifetimes(opts, parts=("echo",), check=args.check)
        elif args.command == "t1":
            result = run_lifetimes(opts, parts=("t1",), check=args.check)
        elif args.command == "settle":
            result = run_settling_scan(args.waits, opts, check=args.check)
        elif args.command == "quadrupole":
            result = run_quadrupole_spectroscopy(opts, check=args.check)
        elif args.command == "lifetimes":
            result = run_lifetimes(opts, check=args.check)
        elif args.command == "protocol":
            scenario = _load_scenario(args.scenario)
            result = _run_protocol(scenario, cfg, seed, args.check)
        else:
            result = _run_program(args.program, opts, args.init_level, args.flag_level)
    except ConfigError as exc:
        print(f"nvcharge: {exc}", file=sys.stderr)
        return EXIT_USAGE

    _emit(result, fmt, outdir)
    if args.check and result.passed is False:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
