"""Bivariate log-symmetric conditional-duration model.

Both duration series carry a multiplicative conditional median ``eta`` that
follows a log-linear recursion on its own lagged logs and on lagged
duration-to-median ratios.  Standardized log-durations
``w = (log y - log eta) / sigma`` are coupled through an elliptical
quadratic form ``q`` with correlation ``rho``, and a density generator
``g`` from :mod:`blsacd.generators` turns ``q`` into a log-likelihood.

Two derivative conventions are supported everywhere a gradient appears:

``paper_literal``
    the lagged design entering each recursion step is held fixed at its
    observed value, so mean-parameter derivatives do not propagate through
    the recursion.  These are the exact derivatives of
    :func:`anchored_loglik` anchored at the evaluation point.

``exact_recursive``
    mean-parameter derivatives are accumulated forward through the
    recursion, giving the exact gradient of :func:`loglik`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import generators
from .exceptions import DivergenceError
from .generators import GeneratorSpec

GRADIENT_MODES = ("paper_literal", "exact_recursive")

# beyond this the medians overflow exp(); the recursion has diverged
_LOG_ETA_MAX = 690.0

# guards log g for generators that are singular at q = 0 on the measure-zero
# event of an exactly zero quadratic form
_Q_FLOOR = 1e-300


@dataclass(frozen=True)
class BiSeries:
    """A pair of equally long, strictly positive duration series.

    ``timestamps``, when present, are the spell end times in seconds since
    session open and must increase strictly; they are only needed for
    seasonal adjustment.
    """

    y1: np.ndarray
    y2: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        y1 = np.atleast_1d(np.asarray(self.y1, dtype=float))
        y2 = np.atleast_1d(np.asarray(self.y2, dtype=float))
        if y1.ndim != 1 or y2.ndim != 1:
            raise ValueError("duration series must be one-dimensional")
        if y1.shape != y2.shape:
            raise ValueError(
                f"series lengths differ: {y1.shape[0]} vs {y2.shape[0]}"
            )
        if y1.shape[0] == 0:
            raise ValueError("empty duration series")
        for name, y in (("y1", y1), ("y2", y2)):
            if not np.all(np.isfinite(y)) or np.any(y <= 0.0):
                raise ValueError(f"{name} must be finite and strictly positive")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        if self.timestamps is not None:
            ts = np.atleast_1d(np.asarray(self.timestamps, dtype=float))
            if ts.shape != y1.shape:
                raise ValueError("timestamps must match the series length")
            if not np.all(np.isfinite(ts)) or np.any(np.diff(ts) <= 0.0):
                raise ValueError("timestamps must be finite and increasing")
            object.__setattr__(self, "timestamps", ts)

    @property
    def n(self) -> int:
        return self.y1.shape[0]


@dataclass(frozen=True)
class ModelSpec:
    """Generator family plus the recursion orders ``(p1, q1, p2, q2)``.

    ``p_i`` counts lags of ``log eta_i`` and ``q_i`` lags of the ratio
    ``y_i / eta_i`` in the recursion of series ``i``.
    """

    generator: GeneratorSpec
    orders: tuple[int, int, int, int] = (1, 1, 1, 1)

    def __post_init__(self):
        orders = tuple(int(v) for v in self.orders)
        if len(orders) != 4 or any(v < 0 for v in orders):
            raise ValueError("orders must be four non-negative integers")
        object.__setattr__(self, "orders", orders)

    @property
    def k_mean1(self) -> int:
        return 1 + self.orders[0] + self.orders[1]

    @property
    def k_mean2(self) -> int:
        return 1 + self.orders[2] + self.orders[3]

    @property
    def k_total(self) -> int:
        return 3 + self.k_mean1 + self.k_mean2

    def param_names(self) -> list[str]:
        p1, q1, p2, q2 = self.orders
        names = ["sigma1", "sigma2", "rho", "omega1"]
        names += [f"alpha1_{j}" for j in range(1, p1 + 1)]
        names += [f"beta1_{j}" for j in range(1, q1 + 1)]
        names += ["omega2"]
        names += [f"alpha2_{j}" for j in range(1, p2 + 1)]
        names += [f"beta2_{j}" for j in range(1, q2 + 1)]
        return names


@dataclass(frozen=True)
class ParamVector:
    """Model parameters in named form.

    ``alpha_i`` weight lagged ``log eta_i`` and ``beta_i`` weight lagged
    ratios; lengths must match the orders of the model they are used with.
    The flat layout is ``(sigma1, sigma2, rho, omega1, alpha1, beta1,
    omega2, alpha2, beta2)``.
    """

    sigma1: float
    sigma2: float
    rho: float
    omega1: float = 0.0
    alpha1: tuple[float, ...] = ()
    beta1: tuple[float, ...] = ()
    omega2: float = 0.0
    alpha2: tuple[float, ...] = ()
    beta2: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "rho", "omega1", "omega2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.sigma1 <= 0.0 or self.sigma2 <= 0.0:
            raise ValueError("sigma1 and sigma2 must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        for name in ("alpha1", "beta1", "alpha2", "beta2"):
            vals = tuple(float(v) for v in getattr(self, name))
            if any(not math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, vals)

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            [self.sigma1, self.sigma2, self.rho, self.omega1],
            self.alpha1, self.beta1,
            [self.omega2], self.alpha2, self.beta2,
        ])

    @classmethod
    def from_array(cls, theta, spec: ModelSpec) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (spec.k_total,):
            raise ValueError(
                f"expected {spec.k_total} parameters, got {theta.shape}"
            )
        p1, q1, p2, q2 = spec.orders
        pos = 4
        alpha1 = tuple(theta[pos:pos + p1]); pos += p1
        beta1 = tuple(theta[pos:pos + q1]); pos += q1
        omega2 = theta[pos]; pos += 1
        alpha2 = tuple(theta[pos:pos + p2]); pos += p2
        beta2 = tuple(theta[pos:pos + q2]); pos += q2
        return cls(
            sigma1=theta[0], sigma2=theta[1], rho=theta[2], omega1=theta[3],
            alpha1=alpha1, beta1=beta1, omega2=omega2, alpha2=alpha2,
            beta2=beta2,
        )

    def matches(self, spec: ModelSpec) -> bool:
        p1, q1, p2, q2 = spec.orders
        return (len(self.alpha1), len(self.beta1),
                len(self.alpha2), len(self.beta2)) == (p1, q1, p2, q2)


def _require_match(params: ParamVector, spec: ModelSpec):
    if not params.matches(spec):
        raise ValueError("parameter block lengths do not match the model orders")


@dataclass(frozen=True)
class MedianPaths:
    """Conditional-median paths and duration-to-median ratios."""

    log_eta1: np.ndarray
    log_eta2: np.ndarray
    ratio1: np.ndarray
    ratio2: np.ndarray

    @property
    def eta1(self) -> np.ndarray:
        return np.exp(self.log_eta1)

    @property
    def eta2(self) -> np.ndarray:
        return np.exp(self.log_eta2)


def _recurse_one(y, omega, alpha, beta, pre_log_eta, pre_ratio):
    n = y.shape[0]
    p, q = len(alpha), len(beta)
    log_eta = np.empty(n)
    ratio = np.empty(n)
    for t in range(n):
        acc = omega
        for j in range(1, p + 1):
            acc += alpha[j - 1] * (log_eta[t - j] if t - j >= 0 else pre_log_eta)
        for j in range(1, q + 1):
            acc += beta[j - 1] * (ratio[t - j] if t - j >= 0 else pre_ratio)
        if not math.isfinite(acc) or abs(acc) > _LOG_ETA_MAX:
            raise DivergenceError(t)
        log_eta[t] = acc
        ratio[t] = y[t] * math.exp(-acc)
    return log_eta, ratio


def recurse_medians(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> MedianPaths:
    """Run both median recursions over the sample.

    Lags reaching before the first observation take the presample values
    (log-median 0 and ratio 1 by default, i.e. a unit median).  Raises
    :class:`DivergenceError` when a log-median exceeds the overflow guard.
    """
    _require_match(params, spec)
    log_eta1, ratio1 = _recurse_one(
        series.y1, params.omega1, params.alpha1, params.beta1,
        presample_log_eta[0], presample_ratio[0],
    )
    log_eta2, ratio2 = _recurse_one(
        series.y2, params.omega2, params.alpha2, params.beta2,
        presample_log_eta[1], presample_ratio[1],
    )
    return MedianPaths(log_eta1, log_eta2, ratio1, ratio2)


def quad_form(w1, w2, rho):
    """Elliptical quadratic form coupling the standardized log-durations."""
    if not -1.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    return (w1 * w1 - 2.0 * rho * w1 * w2 + w2 * w2) / (1.0 - rho * rho)


def _standardize(spec, params, series, paths):
    w1 = (np.log(series.y1) - paths.log_eta1) / params.sigma1
    w2 = (np.log(series.y2) - paths.log_eta2) / params.sigma2
    q = quad_form(w1, w2, params.rho)
    if spec.generator.singular_at_zero:
        q = np.maximum(q, _Q_FLOOR)
    return w1, w2, q


def loglik(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    burn_in: int = 0,
    include_jacobian: bool = False,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> float:
    """Log-likelihood, up to the constant term in the normalizer of ``g``.

    ``burn_in`` observations at the start feed the recursions but are
    excluded from the sum.  ``include_jacobian`` adds the change-of-variable
    term ``-sum(log y1 + log y2)`` that maps the standardized density back
    to the duration scale.
    """
    _check_burn_in(burn_in, series.n)
    paths = recurse_medians(
        spec, params, series,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    _, _, q = _standardize(spec, params, series, paths)
    sl = slice(burn_in, None)
    n_eff = series.n - burn_in
    value = float(np.sum(generators.log_g(spec.generator, q[sl])))
    value += n_eff * (
        -math.log(params.sigma1) - math.log(params.sigma2)
        - 0.5 * math.log1p(-params.rho * params.rho)
    )
    if include_jacobian:
        value -= float(np.sum(np.log(series.y1[sl]) + np.log(series.y2[sl])))
    return value


def _check_burn_in(burn_in, n):
    if not 0 <= burn_in < n:
        raise ValueError(f"burn_in must lie in [0, {n}), got {burn_in}")


def _design_matrix(y, log_eta, ratio, p, q, pre_log_eta, pre_ratio):
    # row t: (1, log eta lags 1..p, ratio lags 1..q), presample-padded
    n = y.shape[0]
    cols = [np.ones(n)]
    for j in range(1, p + 1):
        lag = np.full(n, pre_log_eta)
        lag[j:] = log_eta[:-j] if j < n else log_eta[:0]
        cols.append(lag)
    for j in range(1, q + 1):
        lag = np.full(n, pre_ratio)
        lag[j:] = ratio[:-j] if j < n else ratio[:0]
        cols.append(lag)
    return np.column_stack(cols)


def _sensitivity_matrix(design, alpha, beta, ratio):
    # forward accumulation of d_t = x_t + sum_j alpha_j d_{t-j}
    #                                    - sum_j beta_j r_{t-j} d_{t-j}
    n, k = design.shape
    p, ql = len(alpha), len(beta)
    if p == 0 and ql == 0:
        return design.copy()
    d = np.zeros((n, k))
    for t in range(n):
        row = design[t].copy()
        for j in range(1, p + 1):
            if t - j >= 0:
                row += alpha[j - 1] * d[t - j]
        for j in range(1, ql + 1):
            if t - j >= 0:
                row -= beta[j - 1] * ratio[t - j] * d[t - j]
        d[t] = row
    return d


def _check_mode(mode):
    if mode not in GRADIENT_MODES:
        raise ValueError(
            f"gradient mode must be one of {GRADIENT_MODES}, got {mode!r}"
        )


def _derivative_pieces(spec, params, series, mode, presample_log_eta, presample_ratio):
    paths = recurse_medians(
        spec, params, series,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    w1, w2, q = _standardize(spec, params, series, paths)
    x1 = _design_matrix(
        series.y1, paths.log_eta1, paths.ratio1,
        spec.orders[0], spec.orders[1], presample_log_eta[0], presample_ratio[0],
    )
    x2 = _design_matrix(
        series.y2, paths.log_eta2, paths.ratio2,
        spec.orders[2], spec.orders[3], presample_log_eta[1], presample_ratio[1],
    )
    if mode == "exact_recursive":
        x1 = _sensitivity_matrix(x1, params.alpha1, params.beta1, paths.ratio1)
        x2 = _sensitivity_matrix(x2, params.alpha2, params.beta2, paths.ratio2)
    return w1, w2, q, x1, x2


def _w_partials(spec, params, w1, w2, x1, x2):
    # per-parameter partials of (w1, w2), laid out in flat order; the design
    # columns already hold d log eta / d gamma for the active mode
    n = w1.shape[0]
    k = spec.k_total
    u1 = np.zeros((n, k))
    u2 = np.zeros((n, k))
    u1[:, 0] = -w1 / params.sigma1
    u2[:, 1] = -w2 / params.sigma2
    i0 = 3
    i1 = i0 + spec.k_mean1
    u1[:, i0:i1] = -x1 / params.sigma1
    u2[:, i1:i1 + spec.k_mean2] = -x2 / params.sigma2
    return u1, u2


def score(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    mode: str = "paper_literal",
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> np.ndarray:
    """Gradient of the log-likelihood in the flat parameter layout."""
    _require_match(params, spec)
    _check_mode(mode)
    _check_burn_in(burn_in, series.n)
    w1, w2, q, x1, x2 = _derivative_pieces(
        spec, params, series, mode, presample_log_eta, presample_ratio,
    )
    sl = slice(burn_in, None)
    w1, w2, q, x1, x2 = w1[sl], w2[sl], q[sl], x1[sl], x2[sl]
    n_eff = w1.shape[0]

    rho = params.rho
    c = 1.0 / (1.0 - rho * rho)
    h = generators.dlog_g(spec.generator, q)
    q1 = 2.0 * c * (w1 - rho * w2)
    q2 = 2.0 * c * (w2 - rho * w1)
    q_rho = 2.0 * c * (rho * q - w1 * w2)

    u1, u2 = _w_partials(spec, params, w1, w2, x1, x2)
    grad = (h * q1) @ u1 + (h * q2) @ u2
    grad[0] -= n_eff / params.sigma1
    grad[1] -= n_eff / params.sigma2
    grad[2] += n_eff * rho * c + float(h @ q_rho)
    return grad


def hessian(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    mode: str = "paper_literal",
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> np.ndarray:
    """Hessian of the log-likelihood in the flat parameter layout.

    For ``paper_literal`` the matrix is assembled analytically.  For
    ``exact_recursive`` it is a symmetrized central difference of the exact
    score, since second-order recursion sensitivities are not tracked.
    """
    _require_match(params, spec)
    _check_mode(mode)
    _check_burn_in(burn_in, series.n)
    if mode == "exact_recursive":
        return _hessian_fd(
            spec, params, series, burn_in, presample_log_eta, presample_ratio,
        )

    w1, w2, q, x1, x2 = _derivative_pieces(
        spec, params, series, "paper_literal", presample_log_eta, presample_ratio,
    )
    sl = slice(burn_in, None)
    w1, w2, q, x1, x2 = w1[sl], w2[sl], q[sl], x1[sl], x2[sl]
    n_eff = w1.shape[0]
    s1, s2, rho = params.sigma1, params.sigma2, params.rho
    c = 1.0 / (1.0 - rho * rho)
    k = spec.k_total
    i0, i1 = 3, 3 + spec.k_mean1

    h = generators.dlog_g(spec.generator, q)
    hp = generators.d2log_g(spec.generator, q)
    q1 = 2.0 * c * (w1 - rho * w2)
    q2 = 2.0 * c * (w2 - rho * w1)
    q_rho = 2.0 * c * (rho * q - w1 * w2)
    q1rho = 2.0 * c * c * (2.0 * rho * w1 - (1.0 + rho * rho) * w2)
    q2rho = 2.0 * c * c * (2.0 * rho * w2 - (1.0 + rho * rho) * w1)
    q_rhorho = c * (2.0 * q + 4.0 * rho * q_rho)

    u1, u2 = _w_partials(spec, params, w1, w2, x1, x2)
    dq = q1[:, None] * u1 + q2[:, None] * u2
    dq[:, 2] += q_rho

    hess = (hp * dq.T) @ dq
    # second derivatives of q through (w1, w2) at fixed design
    hess += (2.0 * c) * ((h * u1.T) @ u1 + (h * u2.T) @ u2)
    hess += (-2.0 * rho * c) * ((h * u1.T) @ u2 + (h * u2.T) @ u1)
    # rho rows and columns
    cross = (h * q1rho) @ u1 + (h * q2rho) @ u2
    hess[2, :] += cross
    hess[:, 2] += cross
    hess[2, 2] += float(h @ q_rhorho)
    # curvature of w itself: only (sigma_i, sigma_i) and (sigma_i, gamma_i)
    hess[0, 0] += float((h * q1) @ (2.0 * w1)) / s1**2
    hess[1, 1] += float((h * q2) @ (2.0 * w2)) / s2**2
    cross1 = ((h * q1) @ x1) / s1**2
    cross2 = ((h * q2) @ x2) / s2**2
    hess[0, i0:i1] += cross1
    hess[i0:i1, 0] += cross1
    hess[1, i1:] += cross2
    hess[i1:, 1] += cross2
    # constant-part curvature
    hess[0, 0] += n_eff / s1**2
    hess[1, 1] += n_eff / s2**2
    hess[2, 2] += n_eff * (1.0 + rho * rho) * c * c
    return hess


def _hessian_fd(spec, params, series, burn_in, presample_log_eta, presample_ratio):
    theta = params.to_array()
    k = theta.shape[0]
    out = np.empty((k, k))
    for j in range(k):
        step = 1e-6 * max(1.0, abs(theta[j]))
        hi = theta.copy(); hi[j] += step
        lo = theta.copy(); lo[j] -= step
        g_hi = score(
            spec, ParamVector.from_array(hi, spec), series,
            mode="exact_recursive", burn_in=burn_in,
            presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
        )
        g_lo = score(
            spec, ParamVector.from_array(lo, spec), series,
            mode="exact_recursive", burn_in=burn_in,
            presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
        )
        out[j] = (g_hi - g_lo) / (2.0 * step)
    return 0.5 * (out + out.T)


def anchored_loglik(
    spec: ModelSpec,
    anchor: ParamVector,
    params: ParamVector,
    series: BiSeries,
    *,
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> float:
    """Log-likelihood with the recursion design frozen at ``anchor``.

    The lagged log-medians and ratios entering each recursion step are
    computed once at ``anchor`` and treated as data, so each log-median is
    linear in the mean parameters.  At ``params == anchor`` the value equals
    :func:`loglik`, and the exact derivatives of this objective are the
    ``paper_literal`` score and Hessian.
    """
    _require_match(anchor, spec)
    _require_match(params, spec)
    _check_burn_in(burn_in, series.n)
    paths = recurse_medians(
        spec, anchor, series,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    x1 = _design_matrix(
        series.y1, paths.log_eta1, paths.ratio1,
        spec.orders[0], spec.orders[1], presample_log_eta[0], presample_ratio[0],
    )
    x2 = _design_matrix(
        series.y2, paths.log_eta2, paths.ratio2,
        spec.orders[2], spec.orders[3], presample_log_eta[1], presample_ratio[1],
    )
    gamma1 = np.concatenate([[params.omega1], params.alpha1, params.beta1])
    gamma2 = np.concatenate([[params.omega2], params.alpha2, params.beta2])
    log_eta1 = x1 @ gamma1
    log_eta2 = x2 @ gamma2
    w1 = (np.log(series.y1) - log_eta1) / params.sigma1
    w2 = (np.log(series.y2) - log_eta2) / params.sigma2
    q = quad_form(w1, w2, params.rho)
    if spec.generator.singular_at_zero:
        q = np.maximum(q, _Q_FLOOR)
    sl = slice(burn_in, None)
    n_eff = series.n - burn_in
    value = float(np.sum(generators.log_g(spec.generator, q[sl])))
    value += n_eff * (
        -math.log(params.sigma1) - math.log(params.sigma2)
        - 0.5 * math.log1p(-params.rho * params.rho)
    )
    return value
