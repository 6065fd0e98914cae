"""Readout confusion channel, estimator inversion, init, and fluorescence."""

import numpy as np
import pytest

from nvcharge.charge import ChargeDistribution, attach_electron, switch_charge
from nvcharge.physics import ChargeState, Isotope
from nvcharge.readout import (
    ReadoutModel,
    estimate_flip_probability,
    fluorescence_counts,
    fluorescence_rate_cps,
    laser_distribution,
    laser_init,
    sample_yes_count,
    signal_from_flip_probability,
    single_shot_readout,
)


def _nuclear_state(d, amplitudes):
    v = np.asarray(amplitudes, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def test_model_validation():
    with pytest.raises(ValueError):
        ReadoutModel(baseline=0.8, contrast=0.4)
    with pytest.raises(ValueError):
        ReadoutModel(contrast=0.0)
    with pytest.raises(ValueError):
        ReadoutModel(init_nv_minus_fraction=1.2)
    with pytest.raises(ValueError):
        ReadoutModel(rate_zero_factor=1.5)
    with pytest.raises(ValueError):
        ReadoutModel(init_nuclear_depolarization=-0.1)


def test_signal_and_estimator_invert():
    m = ReadoutModel()
    for p in (0.0, 0.25, 0.7, 1.0):
        s = signal_from_flip_probability(m, p)
        assert s == pytest.approx(0.3 + 0.4 * p, abs=1e-15)
        assert estimate_flip_probability(m, s) == pytest.approx(p, abs=1e-12)
    with pytest.raises(ValueError):
        signal_from_flip_probability(m, 1.3)
    with pytest.raises(ValueError):
        signal_from_flip_probability(m, -0.2)


def test_laser_distribution():
    d = laser_distribution(ReadoutModel())
    assert d.w_minus == 0.7
    assert d.w_zero == pytest.approx(0.3)
    assert d.w_plus == 0.0


def test_laser_init_attaches_ms0_and_preserves_nucleus():
    m = ReadoutModel()
    rho_n = _nuclear_state(2, [0.6, 0.8j])
    # start from the bare-nucleus positive state
    rho_out, dist = laser_init(rho_n, ChargeState.PLUS, Isotope.N15, m)
    assert dist == laser_distribution(m)
    assert rho_out.shape == (6, 6)
    # electron block structure: pure mS=0 at index 1 of 3
    expected = np.zeros((6, 6), dtype=complex)
    expected[2:4, 2:4] = rho_n
    assert np.allclose(rho_out, expected, atol=1e-12)


def test_laser_init_depolarization_compounds():
    eps = 0.01
    m = ReadoutModel(init_nuclear_depolarization=eps)
    rho_n = np.array([[1, 0], [0, 0]], dtype=complex)
    rho = np.kron(attach_electron(ChargeState.MINUS), rho_n)
    charge = ChargeState.MINUS
    for _ in range(100):
        rho, _ = laser_init(rho, charge, Isotope.N15, m)
    nuclear = switch_charge(rho, ChargeState.MINUS, ChargeState.PLUS, Isotope.N15)
    # polarization (p0 - p1) shrinks by (1-eps) per init
    pol = float((nuclear[0, 0] - nuclear[1, 1]).real)
    assert pol == pytest.approx((1 - eps) ** 100, rel=1e-9)


def test_binomial_shortcut_matches_per_shot_sampling():
    # two-stage Bernoulli (true answer, then confusion) equals one draw at
    # the mixed probability; compare the two samplers statistically
    m = ReadoutModel()
    rng_a = np.random.default_rng(5)
    rng_b = np.random.default_rng(6)
    p_flip = 0.37
    n = 100_000
    rho = np.diag([1 - p_flip, p_flip]).astype(complex)
    fast = sample_yes_count(m, p_flip, n, rng_a)
    slow = sum(single_shot_readout(rho, 1, m, rng_b)[0] for _ in range(n))
    p_mix = 0.3 + 0.4 * p_flip
    sigma = np.sqrt(p_mix * (1 - p_mix) * n)
    assert abs(fast - p_mix * n) < 4 * sigma
    assert abs(slow - p_mix * n) < 4 * sigma


def test_yes_rate_born_rule():
    m = ReadoutModel()
    rng = np.random.default_rng(11)
    n = 100_000
    for p_flip in (0.0, 0.5, 1.0):
        k = sample_yes_count(m, p_flip, n, rng)
        p_mix = 0.3 + 0.4 * p_flip
        sigma = np.sqrt(p_mix * (1 - p_mix) / n)
        assert abs(k / n - p_mix) < 3.5 * sigma + 1e-12


def test_single_shot_collapse_is_projective():
    m = ReadoutModel()
    rng = np.random.default_rng(1)
    rho = _nuclear_state(3, [1.0, 1.0, 1.0])
    yes, collapsed = single_shot_readout(rho, 2, m, rng)
    assert collapsed.shape == (3, 3)
    assert np.trace(collapsed).real == pytest.approx(1.0, abs=1e-12)
    assert min(np.linalg.eigvalsh(collapsed)) > -1e-12
    if yes:
        assert collapsed[2, 2].real == pytest.approx(1.0, abs=1e-12)
    else:
        assert collapsed[2, 2].real == pytest.approx(0.0, abs=1e-12)
    # measuring again reproduces the assignment with at least the channel
    # fidelity: the collapsed state is an eigenstate of the question
    repeats = [single_shot_readout(collapsed, 2, m, rng)[0] for _ in range(4000)]
    frac_same = np.mean([r == yes for r in repeats])
    fidelity = (m.baseline + m.contrast) if yes else (1 - m.baseline)
    assert frac_same > fidelity - 3.5 * np.sqrt(fidelity * (1 - fidelity) / 4000)


def test_single_shot_zero_weight_assignment_lands_on_subspace():
    m = ReadoutModel()
    rng = np.random.default_rng(3)
    rho = np.diag([1.0, 0.0]).astype(complex)  # never truly flipped
    saw_yes = False
    for _ in range(200):
        yes, collapsed = single_shot_readout(rho, 1, m, rng)
        if yes:  # false positive: collapse onto the empty flagged level
            saw_yes = True
            assert collapsed[1, 1].real == pytest.approx(1.0, abs=1e-12)
    assert saw_yes  # baseline 0.3 fires easily in 200 tries


def test_single_shot_rejects_bad_level():
    with pytest.raises(ValueError, match="flag level"):
        single_shot_readout(
            np.eye(2) / 2, 5, ReadoutModel(), np.random.default_rng(0)
        )


def test_fluorescence_rates():
    m = ReadoutModel()
    bright = fluorescence_rate_cps(m, ChargeDistribution(1.0, 0.0, 0.0))
    assert bright == 50_000.0
    assert fluorescence_rate_cps(m, ChargeDistribution(0.0, 1.0, 0.0)) == 25_000.0
    # the positive state is exactly dark
    assert fluorescence_rate_cps(m, ChargeDistribution(0.0, 0.0, 1.0)) == 0.0
    rng = np.random.default_rng(2)
    assert fluorescence_counts(m, ChargeDistribution(0.0, 0.0, 1.0), 1.0, rng) == 0
    counts = fluorescence_counts(m, ChargeDistribution(1.0, 0.0, 0.0), 0.01, rng)
    assert abs(counts - 500) < 4 * np.sqrt(500)
    with pytest.raises(ValueError):
        fluorescence_counts(m, ChargeDistribution(1.0, 0.0, 0.0), -1.0, rng)
