"""Operator algebra, Hamiltonian construction, and closed-form spectroscopy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcharge.physics import (
    BARN,
    ELEMENTARY_CHARGE,
    PLANCK_CONSTANT,
    ChargeState,
    Isotope,
    PhysicalParams,
    build_hamiltonian,
    dressed_states_first_order,
    efg_from_quadrupole,
    eigensystem,
    electron_sector_labels,
    nmr_transition_frequencies,
    quadrupole_from_efg,
    rabi_ratio_closed_form,
    spin_operators,
    transition_name,
    transverse_drive_operator,
)

# Frozen from a 50-digit diagonalization of the six-level system at the
# calibrated defaults (D=2870, ge=28024, gn=4.3156, Bz=0.47, A_par=3.03,
# A_perp=3.689), basis (+1,up),(+1,dn),(0,up),(0,dn),(-1,up),(-1,dn).
RATIO_CLOSED_FORM = 1.83210719279
RATIO_EXACT_ELEMENT = 1.83189295313
ADMIX_UP = -1.6261277e-4
ADMIX_DOWN = +2.532226e-4
LINE_MINUS_MS0_N15 = 2.02724715983
# exact infidelities are 1.29e-15 and 1.59e-16, below the float64 floor;
# tests bound them by machine precision instead
INFIDELITY_FLOOR = 5e-15


def params15():
    return PhysicalParams.defaults(Isotope.N15)


def params14():
    return PhysicalParams.defaults(Isotope.N14)


# ---------------------------------------------------------------- operators


def test_spin_half_matrices():
    ops = spin_operators(0.5)
    assert np.allclose(ops.z, [[0.5, 0], [0, -0.5]])
    assert np.allclose(ops.x, [[0, 0.5], [0.5, 0]])
    assert np.allclose(ops.y, [[0, -0.5j], [0.5j, 0]])
    assert np.allclose(ops.plus, [[0, 1], [0, 0]])


def test_spin_one_matrices():
    ops = spin_operators(1.0)
    assert np.allclose(np.diag(ops.z), [1, 0, -1])
    r = 1 / np.sqrt(2)
    assert np.allclose(ops.x, [[0, r, 0], [r, 0, r], [0, r, 0]])
    # ladder convention: S+|0> = sqrt(2)|+1>
    ket0 = np.array([0, 1, 0])
    assert np.allclose(ops.plus @ ket0, [np.sqrt(2), 0, 0])


def test_spin_operators_rejects_bad_spin():
    with pytest.raises(ValueError):
        spin_operators(0.3)
    with pytest.raises(ValueError):
        spin_operators(-0.5)


@given(st.sampled_from([0.5, 1.0, 1.5, 2.0, 2.5, 3.0]))
@settings(max_examples=20, deadline=None)
def test_spin_algebra(s):
    ops = spin_operators(s)
    comm = ops.x @ ops.y - ops.y @ ops.x
    assert np.abs(comm - 1j * ops.z).max() < 1e-12
    casimir = ops.x @ ops.x + ops.y @ ops.y + ops.z @ ops.z
    assert np.abs(casimir - s * (s + 1) * np.eye(ops.dim)).max() < 1e-12
    for m in (ops.x, ops.y, ops.z):
        assert np.abs(m - m.conj().T).max() < 1e-12
    assert np.all(np.diff(np.diag(ops.z).real) == -1)


def test_charge_and_isotope_properties():
    assert ChargeState.MINUS.electron_spin == 1.0
    assert ChargeState.ZERO.electron_spin == 0.5
    assert ChargeState.PLUS.electron_spin is None
    assert ChargeState.PLUS.electron_dim == 1
    assert Isotope.N14.nuclear_spin == 1.0
    assert Isotope.N15.nuclear_spin == 0.5
    assert Isotope.N14.has_quadrupole and not Isotope.N15.has_quadrupole
    assert Isotope.N15.gyromagnetic_sign == -1
    assert Isotope.N14.gyromagnetic_sign == +1


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(b_z_t=-0.1)
    with pytest.raises(ValueError):
        PhysicalParams(d_mhz=float("nan"))
    with pytest.raises(ValueError):
        PhysicalParams(gamma_n_mhz_per_t=0.0)
    p = params14()
    assert p.q_for(ChargeState.MINUS) == -4.945
    assert p.q_for(ChargeState.ZERO) == -4.655
    assert p.q_for(ChargeState.PLUS) == -4.619
    assert p.with_(b_z_t=0.1).b_z_t == 0.1


# ------------------------------------------------------------- Hamiltonians


def hand_built_minus_n15(p):
    """Independent six-level matrix from the analytic elements.

    Diagonal D mS^2 + geB mS + gnB mI + A_par mS mI; flip-flop exchange
    couples (+1,dn)<->(0,up) and (0,dn)<->(-1,up) with element A_perp/sqrt2.
    """
    geb = p.gamma_e_mhz_per_t * p.b_z_t
    gnb = p.gamma_n_mhz_per_t * p.b_z_t
    basis = [(1, 0.5), (1, -0.5), (0, 0.5), (0, -0.5), (-1, 0.5), (-1, -0.5)]
    h = np.zeros((6, 6))
    for i, (ms, mi) in enumerate(basis):
        h[i, i] = p.d_mhz * ms**2 + geb * ms + gnb * mi + p.a_par_mhz * ms * mi
    v = p.a_perp_mhz / np.sqrt(2.0)
    h[1, 2] = h[2, 1] = v
    h[3, 4] = h[4, 3] = v
    return h


def hand_built_minus_n14(p):
    geb = p.gamma_e_mhz_per_t * p.b_z_t
    gnb = p.gamma_n_mhz_per_t * p.b_z_t
    q = p.q_minus_mhz
    basis = [(ms, mi) for ms in (1, 0, -1) for mi in (1, 0, -1)]
    h = np.zeros((9, 9))
    for i, (ms, mi) in enumerate(basis):
        h[i, i] = (
            p.d_mhz * ms**2 + geb * ms + q * mi**2 + gnb * mi + p.a_par_mhz * ms * mi
        )
    for i, (ms, mi) in enumerate(basis):
        # S+I- raises ms, lowers mi
        if ms < 1 and mi > -1:
            j = basis.index((ms + 1, mi - 1))
            amp = np.sqrt(2 - ms * (ms + 1)) * np.sqrt(2 - mi * (mi - 1))
            h[j, i] += 0.5 * p.a_perp_mhz * amp
            h[i, j] += 0.5 * p.a_perp_mhz * amp
    return h


def test_minus_hamiltonian_matches_hand_built_n15():
    p = params15()
    h = build_hamiltonian(ChargeState.MINUS, Isotope.N15, p)
    assert np.abs(h - hand_built_minus_n15(p)).max() < 1e-9


def test_minus_hamiltonian_matches_hand_built_n14():
    p = params14()
    h = build_hamiltonian(ChargeState.MINUS, Isotope.N14, p)
    assert np.abs(h - hand_built_minus_n14(p)).max() < 1e-9


def test_plus_hamiltonian_is_nuclear_only():
    p = params14()
    h = build_hamiltonian(ChargeState.PLUS, Isotope.N14, p)
    gnb = p.gamma_n_mhz_per_t * p.b_z_t
    q = p.q_plus_mhz
    assert h.shape == (3, 3)
    assert np.allclose(np.diag(h), [q + gnb, 0.0, q - gnb])
    assert np.abs(h - np.diag(np.diag(h))).max() == 0.0

    h15 = build_hamiltonian(ChargeState.PLUS, Isotope.N15, params15())
    gnb15 = params15().nuclear_zeeman_mhz
    # spin-1/2 nitrogen carries no quadrupole term in any charge state
    assert np.allclose(np.diag(h15), [gnb15 / 2, -gnb15 / 2])


def test_zero_hamiltonian_structure():
    p = params15()
    h = build_hamiltonian(ChargeState.ZERO, Isotope.N15, p)
    assert h.shape == (4, 4)
    geb, gnb, a = p.electron_zeeman_mhz, p.nuclear_zeeman_mhz, p.a_iso_zero_mhz
    # basis (+1/2,up),(+1/2,dn),(-1/2,up),(-1/2,dn)
    expect = np.array(
        [
            [geb / 2 + gnb / 2 + a / 4, 0, 0, 0],
            [0, geb / 2 - gnb / 2 - a / 4, a / 2, 0],
            [0, a / 2, -geb / 2 + gnb / 2 - a / 4, 0],
            [0, 0, 0, -geb / 2 - gnb / 2 + a / 4],
        ]
    )
    assert np.abs(h - expect).max() < 1e-9


def test_hamiltonian_isotope_mismatch():
    with pytest.raises(ValueError):
        build_hamiltonian(ChargeState.MINUS, Isotope.N14, params15())


def test_eigenvalues_match_brute_force():
    for charge, isotope, p in [
        (ChargeState.MINUS, Isotope.N15, params15()),
        (ChargeState.MINUS, Isotope.N14, params14()),
        (ChargeState.ZERO, Isotope.N15, params15()),
        (ChargeState.ZERO, Isotope.N14, params14()),
        (ChargeState.PLUS, Isotope.N14, params14()),
    ]:
        h = build_hamiltonian(charge, isotope, p)
        evals, evecs = eigensystem(h)
        brute = np.sort(np.linalg.eigvalsh(h))
        assert np.abs(evals - brute).max() < 1e-9
        # columns reconstruct the matrix
        assert np.abs(evecs @ np.diag(evals) @ evecs.conj().T - h).max() < 1e-8


def test_eigenvector_phase_convention():
    h = build_hamiltonian(ChargeState.MINUS, Isotope.N15, params15())
    _, evecs = eigensystem(h)
    for k in range(6):
        col = evecs[:, k]
        pivot = col[int(np.argmax(np.abs(col)))]
        assert abs(pivot.imag) < 1e-12
        assert pivot.real > 0


# ------------------------------------------------------ dressed states, ratio


def test_dressed_state_admixtures_frozen():
    up, down = dressed_states_first_order(params15())
    assert abs(np.linalg.norm(up) - 1) < 1e-12
    assert abs(np.linalg.norm(down) - 1) < 1e-12
    assert up[1].real == pytest.approx(ADMIX_UP, rel=1e-6)
    assert down[4].real == pytest.approx(ADMIX_DOWN, rel=1e-6)
    # only the intended pair of components is populated
    assert np.abs(up[[0, 3, 4, 5]]).max() == 0
    assert np.abs(down[[0, 1, 2, 5]]).max() == 0


def test_dressed_state_overlap_with_exact():
    p = params15()
    h = build_hamiltonian(ChargeState.MINUS, Isotope.N15, p)
    _, evecs = eigensystem(h)
    up, down = dressed_states_first_order(p)
    # exact states dominated by (0,up)=index 2 and (0,dn)=index 3
    cols = {int(np.argmax(np.abs(evecs[:, k]))): evecs[:, k] for k in range(6)}
    infid_up = 1 - abs(np.vdot(cols[2], up)) ** 2
    infid_down = 1 - abs(np.vdot(cols[3], down)) ** 2
    assert 0 <= infid_up < INFIDELITY_FLOOR
    assert 0 <= infid_down < INFIDELITY_FLOOR


def test_dressed_state_errors():
    with pytest.raises(ValueError):
        dressed_states_first_order(params14())
    p = params15().with_(b_z_t=2870.0 / 28024.0)
    with pytest.raises(ValueError):
        dressed_states_first_order(p)


def test_rabi_ratio_closed_form_frozen():
    assert rabi_ratio_closed_form(params15()) == pytest.approx(
        RATIO_CLOSED_FORM, rel=1e-9
    )
    with pytest.raises(ValueError):
        rabi_ratio_closed_form(params15().with_(b_z_t=2870.0 / 28024.0))


def test_drive_element_ratio_matches_closed_form():
    # enhancement from exact eigenvectors: drive matrix element between the
    # two dressed mS=0 states over the bare nuclear element gn/2
    p = params15()
    h = build_hamiltonian(ChargeState.MINUS, Isotope.N15, p)
    _, evecs = eigensystem(h)
    cols = {int(np.argmax(np.abs(evecs[:, k]))): evecs[:, k] for k in range(6)}
    v = transverse_drive_operator(ChargeState.MINUS, Isotope.N15, p)
    elem = abs(np.vdot(cols[2], v @ cols[3]))
    ratio = elem / (p.gamma_n_mhz_per_t / 2)
    assert ratio == pytest.approx(RATIO_EXACT_ELEMENT, rel=1e-9)
    assert abs(ratio - rabi_ratio_closed_form(p)) / ratio < 1e-3


def test_drive_operator_shapes():
    p = params15()
    v_plus = transverse_drive_operator(ChargeState.PLUS, Isotope.N15, p)
    assert v_plus.shape == (2, 2)
    assert np.allclose(v_plus, p.gamma_n_mhz_per_t * np.array([[0, 0.5], [0.5, 0]]))
    v_minus = transverse_drive_operator(ChargeState.MINUS, Isotope.N15, p)
    assert v_minus.shape == (6, 6)
    assert np.abs(v_minus - v_minus.conj().T).max() < 1e-12


# ---------------------------------------------------------------- NMR lines


def test_plus_lines_n15():
    lines = nmr_transition_frequencies(ChargeState.PLUS, Isotope.N15, "n", params15())
    assert len(lines) == 1
    assert lines[0].name == "plus:n:up..down"
    assert lines[0].frequency_mhz == pytest.approx(4.3156 * 0.47, abs=1e-12)


def test_plus_lines_n14():
    p = params14()
    lines = nmr_transition_frequencies(ChargeState.PLUS, Isotope.N14, "n", p)
    assert [ln.name for ln in lines] == ["plus:n:+1..0", "plus:n:0..-1"]
    gnb = 3.0766 * 0.47
    assert lines[0].frequency_mhz == pytest.approx(abs(-4.619 + gnb), abs=1e-12)
    assert lines[1].frequency_mhz == pytest.approx(abs(-4.619 - gnb), abs=1e-12)
    mid = (lines[0].frequency_mhz + lines[1].frequency_mhz) / 2
    assert mid == pytest.approx(4.619, abs=1e-12)


def test_minus_ms0_line_n15_frozen():
    lines = nmr_transition_frequencies(
        ChargeState.MINUS, Isotope.N15, "ms0", params15()
    )
    assert len(lines) == 1
    assert lines[0].name == "minus:ms0:up..down"
    assert lines[0].frequency_mhz == pytest.approx(LINE_MINUS_MS0_N15, abs=1e-9)


def test_minus_ms0_midpoint_recovers_quadrupole_n14():
    p = params14()
    lines = nmr_transition_frequencies(ChargeState.MINUS, Isotope.N14, "ms0", p)
    mid = (lines[0].frequency_mhz + lines[1].frequency_mhz) / 2
    # hyperfine admixture shifts each line at second order only
    assert mid == pytest.approx(4.945, abs=2e-3)


def test_zero_lines_are_far_from_memory_lines():
    # contact term keeps the neutral-state lines at least 0.5 MHz away from
    # both memory transitions (probe linewidths are under 0.1 MHz), and the
    # midpoint of each neutral N14 sector still recovers |Q_zero|
    for iso, p in [(Isotope.N15, params15()), (Isotope.N14, params14())]:
        refs = [
            ln.frequency_mhz
            for ln in nmr_transition_frequencies(ChargeState.PLUS, iso, "n", p)
        ]
        refs += [
            ln.frequency_mhz
            for ln in nmr_transition_frequencies(ChargeState.MINUS, iso, "ms0", p)
        ]
        for sector in ("ms+1/2", "ms-1/2"):
            for ln in nmr_transition_frequencies(ChargeState.ZERO, iso, sector, p):
                assert min(abs(ln.frequency_mhz - r) for r in refs) > 0.5
    for sector in ("ms+1/2", "ms-1/2"):
        lines = nmr_transition_frequencies(
            ChargeState.ZERO, Isotope.N14, sector, params14()
        )
        mid = (lines[0].frequency_mhz + lines[1].frequency_mhz) / 2
        assert mid == pytest.approx(4.655, abs=2e-3)


def test_sector_validation():
    with pytest.raises(ValueError):
        nmr_transition_frequencies(ChargeState.MINUS, Isotope.N15, "ms+2", params15())
    assert electron_sector_labels(ChargeState.MINUS) == ("ms+1", "ms0", "ms-1")
    assert electron_sector_labels(ChargeState.ZERO) == ("ms+1/2", "ms-1/2")
    assert electron_sector_labels(ChargeState.PLUS) == ("n",)


def test_transition_name_format():
    assert (
        transition_name(ChargeState.MINUS, "ms0", ("up", "down"))
        == "minus:ms0:up..down"
    )


# ------------------------------------------------------- quadrupole vs EFG


def test_quadrupole_efg_known_value():
    # Cq = 3 e Q Vzz / 4h with Q in barn, result in MHz
    cq = quadrupole_from_efg(1e21, 0.02005)
    expect = (
        3 * ELEMENTARY_CHARGE * 0.02005 * BARN * 1e21 / (4 * PLANCK_CONSTANT) / 1e6
    )
    assert cq == pytest.approx(expect, rel=1e-12)
    assert cq == pytest.approx(0.3636051, rel=1e-6)


@given(
    st.floats(min_value=-6.0, max_value=-3.0),
    st.floats(min_value=0.015, max_value=0.025),
)
@settings(max_examples=30, deadline=None)
def test_quadrupole_efg_roundtrip(cq, q_barn):
    vzz = efg_from_quadrupole(cq, q_barn)
    assert quadrupole_from_efg(vzz, q_barn) == pytest.approx(cq, rel=1e-12)


def test_quadrupole_moment_spread_arithmetic():
    # nominal coupling -4.92 MHz at the midpoint moment 0.02005 barn; the
    # reported moment scatter 0.0193..0.0208 barn maps to a +-0.184 MHz band
    vzz = efg_from_quadrupole(-4.92, 0.02005)
    lo = quadrupole_from_efg(vzz, 0.0193)
    hi = quadrupole_from_efg(vzz, 0.0208)
    half_spread = abs(hi - lo) / 2
    assert half_spread == pytest.approx(4.92 * 0.00075 / 0.02005, rel=1e-9)
    assert abs(half_spread - 0.19) / 0.19 < 0.05


def test_efg_from_quadrupole_rejects_zero_moment():
    with pytest.raises(ValueError):
        efg_from_quadrupole(-4.92, 0.0)
