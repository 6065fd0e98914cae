"""Curve models: exact recovery, uncertainty sanity, input guards."""

import numpy as np
import pytest

from nvcharge.fitting import MODEL_PARAMS, fit_curve


def test_cosine_decay_exact_recovery():
    rng = np.random.default_rng(0)
    x = np.linspace(0, 60, 120)
    true = dict(offset=0.5, amplitude=-0.5, frequency=0.21, phase=0.0, tau=22.0)
    y = true["offset"] + true["amplitude"] * np.cos(
        2 * np.pi * true["frequency"] * x
    ) * np.exp(-x / true["tau"])
    fit = fit_curve("cosine_decay", x, y)
    assert fit.params["frequency"] == pytest.approx(0.21, rel=1e-6)
    assert fit.params["tau"] == pytest.approx(22.0, rel=1e-6)
    assert fit.residual_rms < 1e-9

    noisy = y + rng.normal(scale=0.01, size=len(x))
    fit_n = fit_curve("cosine_decay", x, noisy)
    assert fit_n.params["frequency"] == pytest.approx(0.21, rel=0.02)
    assert abs(fit_n.params["tau"] - 22.0) < 5 * fit_n.stderr["tau"]
    lo, hi = fit_n.ci95["tau"]
    assert lo < hi


def test_exponential_decay_recovery():
    x = np.linspace(0, 5000, 40)
    y = 0.5 + 0.2 * np.exp(-x / 1250.0)
    fit = fit_curve("exponential_decay", x, y)
    assert fit.params["tau"] == pytest.approx(1250.0, rel=1e-8)
    assert fit.params["offset"] == pytest.approx(0.5, abs=1e-9)
    assert fit.params["amplitude"] == pytest.approx(0.2, abs=1e-9)


def test_exponential_approach_recovery():
    x = np.linspace(0, 3000, 30)
    y = 0.95 + (0.1 - 0.95) * np.exp(-x / 540.0)
    fit = fit_curve("exponential_approach", x, y)
    assert fit.params["tau"] == pytest.approx(540.0, rel=1e-8)
    assert fit.params["final"] == pytest.approx(0.95, abs=1e-9)
    assert fit.params["start"] == pytest.approx(0.1, abs=1e-9)


def test_double_sigmoid_recovery():
    x = np.linspace(-10, 10, 80)
    down = 1 / (1 + np.exp(-(-2.0 - x) / 1.0))
    up = 1 / (1 + np.exp((5.5 - x) / 0.5))
    y = 0.7 * down + 1.0 * up
    fit = fit_curve("double_sigmoid", x, y)
    assert fit.params["level_low"] == pytest.approx(0.7, abs=1e-6)
    assert fit.params["step_down_x"] == pytest.approx(-2.0, abs=1e-6)
    assert fit.params["step_up_x"] == pytest.approx(5.5, abs=1e-6)
    assert fit.params["step_up_w"] == pytest.approx(0.5, abs=1e-6)


def test_guess_override_and_bounds():
    x = np.linspace(0, 10, 40)
    y = 1.0 + 0.5 * np.exp(-x / 2.0)
    fit = fit_curve(
        "exponential_decay", x, y, p0={"tau": 1.0}, bounds={"tau": (0.1, 50.0)}
    )
    assert fit.params["tau"] == pytest.approx(2.0, rel=1e-6)


def test_underdetermined_rejected():
    x = np.linspace(0, 1, 5)
    with pytest.raises(ValueError, match="constrain"):
        fit_curve("exponential_decay", x, np.exp(-x))
    with pytest.raises(ValueError, match="constrain"):
        fit_curve("cosine_decay", np.linspace(0, 1, 9), np.ones(9))


def test_flat_trace_rejected():
    x = np.linspace(0, 10, 30)
    with pytest.raises(ValueError, match="flat"):
        fit_curve("exponential_decay", x, np.full(30, 0.5))


def test_unknown_model_rejected():
    with pytest.raises(ValueError, match="unknown model"):
        fit_curve("lorentzian", np.arange(20.0), np.arange(20.0))
    assert set(MODEL_PARAMS) == {
        "cosine_decay",
        "exponential_decay",
        "exponential_approach",
        "double_sigmoid",
    }
