"""Residual diagnostics, QQ data, ACF/PACF, and prediction intervals.

Under a correctly specified model the quadratic forms ``q_t`` evaluated at
the true parameters are i.i.d. draws from the radial law of the density
generator, so goodness of fit reduces to comparing the fitted ``q_t``
against that one-dimensional reference distribution: QQ plots against its
quantiles, KS distances against its CDF, and ACF/PACF of the residual
series to check that no serial structure survives the median recursions.

One-step-ahead prediction intervals come from the standardized marginal of
the bivariate law: each margin of ``(w1, w2)`` has the symmetric density
``f(w) = (2 / Z) * integral_0^inf g(w^2 + v^2) dv``, whose quantiles are
free of ``rho``.  Bands on the duration scale are
``eta_hat * exp(sigma_hat * m_p)`` for the relevant marginal quantiles
``m_p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from . import generators, model
from .exceptions import NumericError
from .generators import GeneratorSpec
from .model import BiSeries, ModelSpec, ParamVector


@dataclass(frozen=True)
class ResidualSeries:
    """Quadratic-form residuals ``q_t`` with the generator that scores them."""

    re: np.ndarray
    generator: GeneratorSpec

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.re, dtype=float))
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("residuals must form a non-empty vector")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("residuals must be finite and non-negative")
        object.__setattr__(self, "re", arr)

    @property
    def n(self) -> int:
        return self.re.shape[0]


@dataclass(frozen=True)
class PredictionBand:
    """Per-period marginal prediction limits on the observation scale."""

    lower1: np.ndarray
    upper1: np.ndarray
    lower2: np.ndarray
    upper2: np.ndarray
    nominal: float

    def __post_init__(self):
        arrays = {}
        for name in ("lower1", "upper1", "lower2", "upper2"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
                raise ValueError(f"{name} must be positive and finite")
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if not (
            arrays["lower1"].shape == arrays["upper1"].shape
            == arrays["lower2"].shape == arrays["upper2"].shape
        ):
            raise ValueError("band arrays must share one length")
        if np.any(arrays["lower1"] >= arrays["upper1"]) or np.any(
            arrays["lower2"] >= arrays["upper2"]
        ):
            raise ValueError("lower limits must lie below upper limits")
        if not 0.0 < self.nominal < 1.0:
            raise ValueError("nominal level must lie in (0, 1)")

    @property
    def n(self) -> int:
        return self.lower1.shape[0]


def residuals(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> ResidualSeries:
    """Quadratic-form residuals of a fitted model.

    Recomputes the median paths at ``params`` and returns
    ``q_t = quad_form(w1_t, w2_t, rho)`` for every observation; under a
    correct specification these follow the generator's radial law.
    """
    paths = model.recurse_medians(
        spec, params, series,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    _, _, q = model._standardize(spec, params, series, paths)
    return ResidualSeries(q, spec.generator)


def reference_pdf(gen: GeneratorSpec, x):
    """Density of the residual reference law, ``(pi / Z) * g(x)``."""
    return math.pi / generators.norm_const(gen) * generators.eval_g(gen, x)


def reference_cdf(gen: GeneratorSpec, x, *, method: str = "radial"):
    """CDF of the residual reference law.

    ``method="radial"`` integrates the one-dimensional radial density
    ``(pi / Z) * g``; ``method="double"`` evaluates the equivalent
    two-dimensional integral ``(4 / Z) * iint g(z1^2 + z2^2)`` over the
    quarter disc of squared radius ``x``.  The two routes are independent
    quadratures and serve as mutual checks.
    """
    if method == "radial":
        return generators.radial_cdf(gen, x)
    if method != "double":
        raise ValueError(f"unknown method {method!r}")
    x = float(x)
    if x < 0.0 or not math.isfinite(x):
        raise ValueError("argument must be non-negative and finite")
    if x == 0.0:
        return 0.0
    nu = gen.nu

    def integrand(z2, z1):
        return math.exp(generators._LOGG[gen.family](z1 * z1 + z2 * z2, nu))

    val, _ = integrate.dblquad(
        integrand, 0.0, math.sqrt(x),
        0.0, lambda z1: math.sqrt(max(x - z1 * z1, 0.0)),
        epsabs=1e-12, epsrel=1e-10,
    )
    return 4.0 * val / generators.norm_const(gen)


def qq_points(res: ResidualSeries) -> np.ndarray:
    """QQ data for the residual series against its reference law.

    Returns an array of shape ``(n, 2)`` whose columns are the theoretical
    quantiles at the plotting positions ``(k - 0.5) / n`` and the ordered
    residuals.
    """
    if res.n < 2:
        raise ValueError("QQ data needs at least two residuals")
    k = np.arange(1, res.n + 1)
    probs = (k - 0.5) / res.n
    theoretical = np.array(
        [generators.radial_quantile(res.generator, p) for p in probs]
    )
    return np.column_stack([theoretical, np.sort(res.re)])


def ks_test(res: ResidualSeries) -> tuple[float, float]:
    """Exact KS statistic and p-value against the reference law."""
    ordered = np.sort(res.re)
    n = res.n
    cdf = generators.radial_cdf(res.generator, ordered)
    k = np.arange(1, n + 1)
    stat = float(max(np.max(k / n - cdf), np.max(cdf - (k - 1) / n)))
    return stat, float(stats.kstwo.sf(stat, n))


def acf_pacf(res, max_lag: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample ACF and PACF of the residuals for lags ``1..max_lag``.

    The PACF comes from the Durbin-Levinson recursion on the sample
    autocorrelations.  Also returns the white-noise band half-width
    ``1.96 / sqrt(n)``.
    """
    x = np.asarray(getattr(res, "re", res), dtype=float)
    n = x.shape[0]
    if not 1 <= max_lag < n / 4:
        raise ValueError("max_lag must satisfy 1 <= max_lag < n / 4")
    centered = x - x.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise NumericError("residuals have zero variance")
    acf = np.array([
        float(centered[k:] @ centered[:-k]) / denom
        for k in range(1, max_lag + 1)
    ])

    # Durbin-Levinson on r_0 = 1, r_1.., accumulating the last coefficient
    pacf = np.empty(max_lag)
    phi = np.zeros(max_lag + 1)
    prev = np.zeros(max_lag + 1)
    r = np.concatenate([[1.0], acf])
    var = 1.0
    for k in range(1, max_lag + 1):
        num = r[k] - float(phi[1:k] @ r[1:k][::-1])
        if var <= 0.0:
            raise NumericError("Durbin-Levinson recursion degenerated")
        last = num / var
        prev[1:k] = phi[1:k]
        phi[1:k] = prev[1:k] - last * prev[1:k][::-1]
        phi[k] = last
        var *= 1.0 - last * last
        pacf[k - 1] = last
    return acf, pacf, 1.96 / math.sqrt(n)


def _marginal_pdf(gen: GeneratorSpec, w: float) -> float:
    """Standardized marginal density ``(2 / Z) * int_0^inf g(w^2 + v^2) dv``."""
    nu = gen.nu
    logg = generators._LOGG[gen.family]
    ww = w * w

    def integrand(v):
        return math.exp(logg(ww + v * v, nu))

    scale = max(1.0, abs(w))
    head, _ = integrate.quad(integrand, 0.0, scale, epsabs=0.0, epsrel=1e-11)

    def tail(t):
        v = scale + scale * t / (1.0 - t)
        return integrand(v) * scale / (1.0 - t) ** 2

    rest, _ = integrate.quad(tail, 0.0, 1.0, epsabs=1e-300, epsrel=1e-11)
    return 2.0 * (head + rest) / generators.norm_const(gen)


def marginal_cdf(gen: GeneratorSpec, w: float) -> float:
    """CDF of the standardized marginal of the bivariate law."""
    w = float(w)
    if not math.isfinite(w):
        raise ValueError("argument must be finite")
    if w < 0.0:
        return 1.0 - marginal_cdf(gen, -w)
    if w == 0.0:
        return 0.5
    mass, _ = integrate.quad(
        lambda u: _marginal_pdf(gen, u), 0.0, w, epsabs=1e-12, epsrel=1e-10,
        limit=200,
    )
    return min(0.5 + mass, 1.0)


@lru_cache(maxsize=4096)
def marginal_quantile(gen: GeneratorSpec, p: float) -> float:
    """Quantile of the standardized marginal, solved to 1e-10 in probability.

    The marginal is symmetric about zero and does not depend on ``rho``.
    """
    if not 0.0 < p < 1.0 or not math.isfinite(p):
        raise ValueError(f"probability must lie strictly inside (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -marginal_quantile(gen, 1.0 - p)
    hi = 1.0
    while marginal_cdf(gen, hi) < p:
        hi *= 2.0
        if hi > 1e100:
            raise NumericError(f"{gen.label()}: no marginal quantile bracket")
    return float(optimize.brentq(
        lambda w: marginal_cdf(gen, w) - p, 0.0, hi, xtol=1e-12, rtol=8.9e-16,
    ))


def predict_intervals(
    spec: ModelSpec,
    params: ParamVector,
    in_sample: BiSeries,
    out_sample: BiSeries,
    nominal: float,
    *,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> tuple[PredictionBand, tuple[float, float]]:
    """One-step-ahead marginal prediction bands and their empirical coverage.

    The median recursions roll through the full observed history, so each
    out-of-sample prediction conditions on the actually observed lags.  The
    band for margin ``i`` at level ``gamma`` is
    ``[eta_hat * exp(sigma_i * m_lo), eta_hat * exp(sigma_i * m_hi)]`` with
    ``m_lo, m_hi`` the equal-tailed marginal quantiles.  Coverage counts an
    observation as covered when it lies inside the band inclusively.
    """
    if not 0.0 < nominal < 1.0:
        raise ValueError("nominal level must lie in (0, 1)")
    if out_sample.n < 1:
        raise ValueError("out-of-sample segment is empty")
    full = BiSeries(
        np.concatenate([in_sample.y1, out_sample.y1]),
        np.concatenate([in_sample.y2, out_sample.y2]),
    )
    paths = model.recurse_medians(
        spec, params, full,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    sl = slice(in_sample.n, None)
    eta1 = paths.eta1[sl]
    eta2 = paths.eta2[sl]
    m_hi = marginal_quantile(spec.generator, 0.5 + 0.5 * nominal)
    m_lo = -m_hi
    band = PredictionBand(
        lower1=eta1 * math.exp(params.sigma1 * m_lo),
        upper1=eta1 * math.exp(params.sigma1 * m_hi),
        lower2=eta2 * math.exp(params.sigma2 * m_lo),
        upper2=eta2 * math.exp(params.sigma2 * m_hi),
        nominal=nominal,
    )
    cov1 = float(np.mean(
        (out_sample.y1 >= band.lower1) & (out_sample.y1 <= band.upper1)
    ))
    cov2 = float(np.mean(
        (out_sample.y2 >= band.lower2) & (out_sample.y2 <= band.upper2)
    ))
    return band, (cov1, cov2)
