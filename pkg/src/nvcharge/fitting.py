"""Least-squares curve models used by the experiment harness.

Four named models cover every trace the experiments produce.  Fits run
through a bounded trust-region solver with automatic initial guesses; the
cosine frequency guess comes from the discrete spectrum so multi-period
traces converge without hand-holding.  Parameter uncertainty is the usual
linearized covariance (J^T J)^-1 s^2 and the 95% interval uses the t
quantile with n - p degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import t as student_t

__all__ = ["FitResult", "fit_curve", "MODEL_PARAMS"]

MODEL_PARAMS = {
    "cosine_decay": ("offset", "amplitude", "frequency", "phase", "tau"),
    "exponential_decay": ("offset", "amplitude", "tau"),
    "exponential_approach": ("final", "start", "tau"),
    "double_sigmoid": ("level_low", "step_down_x", "step_down_w",
                       "step_up_amp", "step_up_x", "step_up_w"),
}


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict[str, float]
    stderr: dict[str, float]
    ci95: dict[str, tuple[float, float]]
    residual_rms: float
    n_points: int

    def value(self, name: str) -> float:
        return self.params[name]


def _model_fn(model: str):
    if model == "cosine_decay":
        def fn(p, x):
            off, amp, f, ph, tau = p
            return off + amp * np.cos(2 * np.pi * f * x + ph) * np.exp(-x / tau)
    elif model == "exponential_decay":
        def fn(p, x):
            off, amp, tau = p
            return off + amp * np.exp(-x / tau)
    elif model == "exponential_approach":
        def fn(p, x):
            final, start, tau = p
            return final + (start - final) * np.exp(-x / tau)
    elif model == "double_sigmoid":
        def fn(p, x):
            lo, xd, wd, au, xu, wu = p
            down = 1.0 / (1.0 + np.exp(-(xd - x) / wd))
            up = 1.0 / (1.0 + np.exp(-(x - xu) / wu))
            return lo * down + au * up
    else:
        raise ValueError(f"unknown model {model!r}")
    return fn


def _spectral_frequency_guess(x: np.ndarray, y: np.ndarray) -> float:
    # dominant nonzero bin of the detrended spectrum on a uniform resample
    xs = np.linspace(x.min(), x.max(), max(len(x), 64))
    ys = np.interp(xs, x, y - y.mean())
    spec = np.abs(np.fft.rfft(ys))
    freqs = np.fft.rfftfreq(len(xs), xs[1] - xs[0])
    k = int(np.argmax(spec[1:])) + 1
    return max(freqs[k], 1e-9)


def _initial_guess(model: str, x: np.ndarray, y: np.ndarray) -> tuple[list, tuple]:
    span = max(x.max() - x.min(), 1e-12)
    if model == "cosine_decay":
        off = float(y.mean())
        amp = float((y.max() - y.min()) / 2)
        f = _spectral_frequency_guess(x, y)
        p0 = [off, amp, f, 0.0, span]
        lo = [-np.inf, -np.inf, 1e-12, -2 * np.pi, span * 1e-3]
        hi = [np.inf, np.inf, np.inf, 2 * np.pi, np.inf]
    elif model == "exponential_decay":
        off = float(y[-1])
        amp = float(y[0] - y[-1])
        p0 = [off, amp, span / 3]
        lo = [-np.inf, -np.inf, span * 1e-6]
        hi = [np.inf, np.inf, np.inf]
    elif model == "exponential_approach":
        p0 = [float(y[-1]), float(y[0]), span / 3]
        lo = [-np.inf, -np.inf, span * 1e-6]
        hi = [np.inf, np.inf, np.inf]
    elif model == "double_sigmoid":
        lo_level = float(y[0])
        up_amp = float(y[-1])
        grad = np.gradient(y, x)
        xd = float(x[np.argmin(grad)])
        xu = float(x[np.argmax(grad)])
        width = span / 20
        p0 = [lo_level, xd, width, up_amp, xu, width]
        lo = [-np.inf, x.min() - span, span * 1e-4, -np.inf, x.min() - span, span * 1e-4]
        hi = [np.inf, x.max() + span, span, np.inf, x.max() + span, span]
    else:
        raise ValueError(f"unknown model {model!r}")
    return p0, (lo, hi)


def fit_curve(
    model: str,
    x: np.ndarray,
    y: np.ndarray,
    p0: dict[str, float] | None = None,
    bounds: dict[str, tuple[float, float]] | None = None,
) -> FitResult:
    """Fit one of the named models; see MODEL_PARAMS for parameter names."""
    names = MODEL_PARAMS.get(model)
    if names is None:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(MODEL_PARAMS)}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n, p = len(x), len(names)
    if n < 2 * p:
        raise ValueError(f"{n} points cannot constrain {p} parameters; need >= {2 * p}")
    scale = max(abs(float(y.mean())), 1.0)
    if model != "double_sigmoid" and float(y.max() - y.min()) < 1e-12 * scale:
        raise ValueError("trace is flat; nothing to fit")

    fn = _model_fn(model)
    guess, (lo, hi) = _initial_guess(model, x, y)
    if p0:
        for k, v in p0.items():
            guess[names.index(k)] = v
    lo, hi = list(lo), list(hi)
    if bounds:
        for k, (a, b) in bounds.items():
            lo[names.index(k)] = a
            hi[names.index(k)] = b
    guess = np.clip(guess, lo, hi)

    res = least_squares(
        lambda q: fn(q, x) - y, guess, bounds=(lo, hi), method="trf", xtol=1e-14
    )
    if not res.success:
        raise RuntimeError(f"fit failed: {res.message}")

    dof = n - p
    ssr = float(res.fun @ res.fun)
    s2 = ssr / dof
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * s2
        err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        err = np.full(p, np.inf)
    tq = float(student_t.ppf(0.975, dof))
    params = dict(zip(names, (float(v) for v in res.x)))
    stderr = dict(zip(names, (float(e) for e in err)))
    ci95 = {
        k: (params[k] - tq * stderr[k], params[k] + tq * stderr[k]) for k in names
    }
    return FitResult(
        model=model,
        params=params,
        stderr=stderr,
        ci95=ci95,
        residual_rms=float(np.sqrt(ssr / n)),
        n_points=n,
    )
