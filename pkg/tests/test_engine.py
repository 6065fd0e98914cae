"""Schedule executor: branch propagation, charge transfer, shot sampling."""

import math

import numpy as np
import pytest

from nvcharge.charge import ChargeDistribution, VoltageProfile, settle
from nvcharge.dynamics import RelaxationParams, simulate_rabi
from nvcharge.engine import (
    DEFAULT_RELAXATION,
    ChargeRelaxation,
    EngineModel,
    RelaxationTable,
    ScheduleRunner,
    branch_flip_response,
)
from nvcharge.fitting import fit_curve
from nvcharge.physics import ChargeState, Isotope, PhysicalParams, nmr_transition_frequencies
from nvcharge.readout import ReadoutModel, estimate_flip_probability, laser_distribution
from nvcharge.sequence import Segment, builtin_templates, bind, compile_program, parse_program

# frozen charge-probe outcome with all defaults: settle(laser, -8 V, 4 ms)
# weights times the per-branch probe responses
CHARGE_PROBE_FLIP = 0.6964968
RESPONSES = {"minus": 0.997477, "zero": 5.948e-06, "plus": 0.571710}


def frozen_profile() -> VoltageProfile:
    """Profile whose settling never moves weight: isolates the channels."""
    return VoltageProfile(w_minus_max=1.0, settle_tau_us=1e12)


def compile_template(name: str, p: PhysicalParams, **binds):
    prog = builtin_templates()[name]
    if binds:
        prog = bind(prog, **binds)
    return compile_program(prog, p)


class TestRelaxationTable:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ChargeRelaxation(t1_us=0.0, t2_us=1.0, rabi_decay_us=1.0)
        with pytest.raises(ValueError):
            RelaxationTable(
                minus=DEFAULT_RELAXATION.minus,
                zero=DEFAULT_RELAXATION.zero,
                plus=DEFAULT_RELAXATION.plus,
                t1_electron_us=-5.0,
            )

    def test_infinite_lifetimes_allowed(self):
        cr = ChargeRelaxation(t1_us=math.inf, t2_us=math.inf, rabi_decay_us=math.inf)
        assert math.isinf(cr.nuclear_params().t1_us)

    def test_electron_channel_minus_only_and_off_by_default(self):
        assert DEFAULT_RELAXATION.electron_params(ChargeState.MINUS) is None
        table = RelaxationTable(
            minus=DEFAULT_RELAXATION.minus,
            zero=DEFAULT_RELAXATION.zero,
            plus=DEFAULT_RELAXATION.plus,
            t1_electron_us=5000.0,
        )
        pars = table.electron_params(ChargeState.MINUS)
        assert pars == RelaxationParams(5000.0, 7500.0)
        assert table.electron_params(ChargeState.ZERO) is None
        assert table.electron_params(ChargeState.PLUS) is None

    def test_for_charge(self):
        assert DEFAULT_RELAXATION.for_charge(ChargeState.PLUS).t2_us == 2.5e4


class TestExpectation:
    def test_charge_probe_flip_and_weights(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        res = r.expectation()
        assert res.flip_probabilities.shape == (1,)
        assert res.flip_probabilities[0] == pytest.approx(CHARGE_PROBE_FLIP, abs=2e-6)
        expected = settle(laser_distribution(model.readout), model.profile, -8.0, 4000.0)
        np.testing.assert_allclose(res.final_weights.as_array(), expected.as_array(), atol=1e-12)
        assert res.max_trace_drift < 1e-12

    def test_branch_responses(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        got = {
            c.name.lower(): branch_flip_response(
                sched, model, c, init_level=0, flag_level=1
            )
            for c in (ChargeState.MINUS, ChargeState.ZERO, ChargeState.PLUS)
        }
        for key, val in RESPONSES.items():
            assert got[key] == pytest.approx(val, abs=5e-6)

    def test_plus_response_matches_direct_simulation(self):
        # the partially flipped positive branch, recomputed through the
        # standalone driven-evolution path at the same detuned frequency
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        seg = next(s for s in sched.segments if s.kind == "driven")
        line = next(
            l
            for l in nmr_transition_frequencies(ChargeState.PLUS, Isotope.N15, "n", model.params)
            if l.levels == ("up", "down")
        )
        trace = simulate_rabi(
            ChargeState.PLUS,
            Isotope.N15,
            model.params,
            line,
            seg.b1_t,
            np.array([seg.duration_us]),
            rabi_decay_us=model.relaxation.plus.rabi_decay_us,
            frequency_mhz=seg.frequency_mhz,
        )
        engine_val = branch_flip_response(sched, model, ChargeState.PLUS, init_level=0, flag_level=1)
        assert engine_val == pytest.approx(trace.flip_probability[0], abs=1e-9)

    def test_signal_mapping(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        res = ScheduleRunner(sched, model, init_level=0, flag_level=1).expectation()
        assert res.signals[0] == pytest.approx(0.3 + 0.4 * res.flip_probabilities[0], abs=1e-12)

    def test_laser_init_resets_charge_keeps_nucleus(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        laser, readout = sched.segments[0], sched.segments[-1]
        from nvcharge.sequence import CompiledSchedule

        mini = CompiledSchedule(
            program_name="laser-only", isotope=Isotope.N15, segments=(laser, readout)
        )
        res = ScheduleRunner(mini, model, init_level=0, flag_level=1).expectation()
        assert res.flip_probabilities[0] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(
            res.final_weights.as_array(), laser_distribution(model.readout).as_array(), atol=1e-12
        )
        res2 = ScheduleRunner(mini, model, init_level=0, flag_level=0).expectation()
        assert res2.flip_probabilities[0] == pytest.approx(1.0, abs=1e-12)

    def test_unknown_segment_kind_rejected(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        from dataclasses import replace
        from nvcharge.sequence import CompiledSchedule

        bad = CompiledSchedule(
            program_name="bad",
            isotope=Isotope.N15,
            segments=(replace(sched.segments[0], kind="unitary"),),
        )
        runner = ScheduleRunner(bad, model, init_level=0, flag_level=1)
        with pytest.raises(ValueError, match="unitary"):
            runner.expectation()

    def test_level_index_validation(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        with pytest.raises(ValueError):
            ScheduleRunner(sched, model, init_level=0, flag_level=2)

    def test_charge_frozen_during_pulse(self):
        # a schedule with only a driven segment leaves the weights alone
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        seg = next(s for s in sched.segments if s.kind == "driven")
        from nvcharge.sequence import CompiledSchedule

        mini = CompiledSchedule(program_name="pulse", isotope=Isotope.N15, segments=(seg,))
        res = ScheduleRunner(mini, model, init_level=0, flag_level=1).expectation()
        np.testing.assert_allclose(res.final_weights.as_array(), [1.0, 0.0, 0.0], atol=0)


ECHO_TEXT = """\
name echotest
amplitude 0.02
sweep tau in 0 200 400 800 1200 1600 2000 2600 3200
voltage -8.0 guard 0.0
rf pi/2 on minus:ms0:up..down
wait tau
rf pi on minus:ms0:up..down phase 1.5707963267948966
wait tau
rf pi/2 on minus:ms0:up..down
readout nuclear
"""

T1_TEXT = """\
name t1test
sweep bigt in 0 50000 100000 200000 400000 700000 1000000
voltage -8.0 guard 0.0
wait bigt
readout nuclear
"""


class TestClosedLoopChannels:
    def test_echo_recovers_configured_t2(self):
        model = EngineModel(profile=frozen_profile())
        prog = parse_program(ECHO_TEXT)
        taus = prog.sweep_values()["tau"]
        flips = []
        for tau in taus:
            sched = compile_program(bind(prog, tau=tau), model.params)
            r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
            flips.append(r.expectation().flip_probabilities[0])
        fr = fit_curve("exponential_decay", np.array(taus) * 2.0, np.array(flips))
        assert fr.params["tau"] == pytest.approx(1250.0, rel=1e-4)
        assert fr.params["offset"] == pytest.approx(0.5, abs=1e-4)

    def test_echo_zero_delay_full_amplitude(self):
        model = EngineModel(profile=frozen_profile())
        prog = parse_program(ECHO_TEXT)
        sched = compile_program(bind(prog, tau=0.0), model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        p = r.expectation().flip_probabilities[0]
        # three back-to-back pulses lose only the configured drive decay
        assert p > 0.995

    def test_t1_recovers_configured_lifetime(self):
        relax = RelaxationTable(
            minus=ChargeRelaxation(t1_us=3.0e5, t2_us=1.25e3, rabi_decay_us=1.25e3),
            zero=DEFAULT_RELAXATION.zero,
            plus=DEFAULT_RELAXATION.plus,
        )
        model = EngineModel(profile=frozen_profile(), relaxation=relax)
        prog = parse_program(T1_TEXT)
        ts = prog.sweep_values()["bigt"]
        vals = []
        for t in ts:
            sched = compile_program(bind(prog, bigt=t), model.params)
            r = ScheduleRunner(sched, model, init_level=0, flag_level=0)
            vals.append(r.expectation().flip_probabilities[0])
        fr = fit_curve("exponential_decay", np.array(ts), np.array(vals))
        assert fr.params["tau"] == pytest.approx(3.0e5, rel=1e-4)
        assert fr.params["offset"] == pytest.approx(0.5, abs=1e-4)

    def test_electron_channel_depletes_ms0(self):
        # switching the electron channel on makes the probed response decay
        # during the settle wait: the pulse only flips the nucleus in ms=0
        model_off = EngineModel()
        table_on = RelaxationTable(
            minus=DEFAULT_RELAXATION.minus,
            zero=DEFAULT_RELAXATION.zero,
            plus=DEFAULT_RELAXATION.plus,
            t1_electron_us=2000.0,
        )
        model_on = EngineModel(relaxation=table_on)
        sched = compile_template("charge-probe", model_off.params)
        p_off = ScheduleRunner(sched, model_off, init_level=0, flag_level=1).expectation()
        p_on = ScheduleRunner(sched, model_on, init_level=0, flag_level=1).expectation()
        assert p_on.flip_probabilities[0] < p_off.flip_probabilities[0] - 0.2


class TestTransfer:
    def test_wait_marginals_match_settling_law(self):
        model = EngineModel()
        text = """\
name settletest
sweep t in 100 400 900 2200 4000
voltage 8.0 guard 0.0
wait t
readout nuclear
"""
        prog = parse_program(text)
        for t in prog.sweep_values()["t"]:
            sched = compile_program(bind(prog, t=t), model.params)
            res = ScheduleRunner(sched, model, init_level=0, flag_level=1).expectation()
            want = settle(ChargeDistribution.pure(ChargeState.MINUS), model.profile, 8.0, t)
            np.testing.assert_allclose(
                res.final_weights.as_array(), want.as_array(), atol=1e-12
            )

    def test_transferred_weight_carries_nuclear_state(self):
        # after settling at +8 V the positive branch dominates and still
        # answers a probe pulse on its own transition with its own pi time
        model = EngineModel()
        text = """\
name plusprobe
amplitude 0.02
voltage 8.0 guard 0.0
wait 4000
rf pi on plus:n:up..down
readout nuclear
"""
        sched = compile_program(parse_program(text), model.params)
        res = ScheduleRunner(sched, model, init_level=0, flag_level=1).expectation()
        w_plus = settle(
            ChargeDistribution.pure(ChargeState.MINUS), model.profile, 8.0, 4000.0
        ).w_plus
        assert res.flip_probabilities[0] == pytest.approx(w_plus, abs=5e-3)

    def test_stationary_branches_untouched(self):
        # with the distribution already at its steady state, a wait must not
        # degrade nuclear coherence beyond the configured channels: run the
        # echo with charge transfer enabled at the steady distribution and
        # compare against the frozen-charge result
        prof = VoltageProfile(w_minus_max=1.0)
        model_live = EngineModel(profile=prof)
        model_frozen = EngineModel(profile=frozen_profile())
        prog = parse_program(ECHO_TEXT)
        sched = compile_program(bind(prog, tau=800.0), model_live.params)
        p_live = ScheduleRunner(sched, model_live, init_level=0, flag_level=1).expectation()
        p_frozen = ScheduleRunner(sched, model_frozen, init_level=0, flag_level=1).expectation()
        # w_minus_max=1.0 keeps the steady state at -8 V essentially pure
        assert p_live.flip_probabilities[0] == pytest.approx(
            p_frozen.flip_probabilities[0], abs=5e-3
        )


class TestSampling:
    def test_matches_expectation_within_4_sigma(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        p_exp = r.expectation().flip_probabilities[0]
        shots = r.sample(4000, np.random.default_rng(1234))
        ybar = shots.mean()
        p_hat = estimate_flip_probability(model.readout, ybar)
        sigma = math.sqrt(ybar * (1 - ybar) / 4000) / model.readout.contrast
        assert abs(p_hat - p_exp) < 4 * sigma

    def test_shape_and_validation(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        out = r.sample(17, np.random.default_rng(0))
        assert out.shape == (17, 1) and out.dtype == bool
        with pytest.raises(ValueError):
            r.sample(0, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        a = ScheduleRunner(sched, model, init_level=0, flag_level=1).sample(
            300, np.random.default_rng(7)
        )
        b = ScheduleRunner(sched, model, init_level=0, flag_level=1).sample(
            300, np.random.default_rng(7)
        )
        assert np.array_equal(a, b)

    def test_wait_superop_matches_direct_path(self):
        model = EngineModel()
        sched = compile_template("charge-probe", model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        idx = next(i for i, s in enumerate(sched.segments) if s.kind == "relax-wait")
        dur = sched.segments[idx].duration_us
        rng = np.random.default_rng(42)
        v = rng.normal(size=6) + 1j * rng.normal(size=6)
        rho = np.outer(v, v.conj())
        rho /= rho.trace()
        direct = r._wait_branch(ChargeState.MINUS, rho, dur)
        op = r._wait_superop(idx, ChargeState.MINUS, dur)
        cached = (op @ rho.reshape(-1)).reshape(6, 6)
        np.testing.assert_allclose(cached, direct, atol=1e-12)

    def test_settling_statistics(self):
        # per-shot charge trajectories reproduce the settling marginal
        model = EngineModel()
        text = """\
name probeplus
amplitude 0.02
voltage 8.0 guard 0.0
wait 700
rf pi on plus:n:up..down
readout nuclear
"""
        sched = compile_program(parse_program(text), model.params)
        r = ScheduleRunner(sched, model, init_level=0, flag_level=1)
        p_exp = r.expectation().flip_probabilities[0]
        shots = r.sample(3000, np.random.default_rng(5))
        ybar = shots.mean()
        p_hat = estimate_flip_probability(model.readout, ybar)
        sigma = math.sqrt(max(ybar * (1 - ybar), 1e-9) / 3000) / model.readout.contrast
        assert abs(p_hat - p_exp) < 4 * sigma
