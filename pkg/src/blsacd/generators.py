"""Density generators for the seven bivariate log-symmetric families.

A family is identified by a lowercase token (``lognormal``, ``logt``,
``loghyperbolic``, ``loglaplace``, ``logslash``, ``logpexp``,
``loglogistic``); :class:`GeneratorSpec` bundles the token with the extra
shape parameter ``nu`` where the family has one.

The module evaluates the generator ``g``, its logarithm, the first two
derivatives of ``log g``, and the normalizing constant ``Z`` of the
bivariate density (closed form plus an independent quadrature route).  It
also implements the law of the standardized quadratic form: under the
bivariate law the squared radius has density ``(pi / Z) * g(x)`` on
``x > 0``, whose CDF, quantile function and a cached inverse-CDF sampler
are provided here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator
from scipy.special import gammainc, gammaln, k0e, k1e, logit

from .exceptions import NumericError

FAMILIES = (
    "lognormal",
    "logt",
    "loghyperbolic",
    "loglaplace",
    "logslash",
    "logpexp",
    "loglogistic",
)

#: families whose generator cannot be evaluated at x = 0 (the expression is
#: divergent or numerically indeterminate there)
SINGULAR_AT_ZERO = frozenset({"loglaplace", "logslash"})

# admissible range of the extra parameter: (low, high, right end closed)
_NU_RANGE = {
    "logt": (0.0, math.inf, False),
    "loghyperbolic": (0.0, math.inf, False),
    "logslash": (1.0, math.inf, False),
    "logpexp": (-1.0, 1.0, True),
}

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-11, limit=300)


@dataclass(frozen=True)
class GeneratorSpec:
    """A log-symmetric family token plus its extra parameter, if any."""

    family: str
    nu: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}"
            )
        rng = _NU_RANGE.get(self.family)
        if rng is None:
            if self.nu is not None:
                raise ValueError(f"{self.family} takes no extra parameter")
        else:
            lo, hi, closed = rng
            if self.nu is None or not math.isfinite(float(self.nu)):
                raise ValueError(f"{self.family} requires a finite shape parameter nu")
            nu = float(self.nu)
            if not (lo < nu < hi or (closed and nu == hi)):
                op = "<=" if closed else "<"
                raise ValueError(f"{self.family} requires {lo} < nu {op} {hi}, got {nu}")
            object.__setattr__(self, "nu", nu)

    @property
    def singular_at_zero(self) -> bool:
        return self.family in SINGULAR_AT_ZERO

    def label(self) -> str:
        if self.nu is None:
            return self.family
        return f"{self.family}(nu={self.nu:g})"


# ---------------------------------------------------------------------------
# log g per family (vectorized over x)

def _logg_lognormal(x, nu):
    return -0.5 * x


def _logg_logt(x, nu):
    return -0.5 * (nu + 2.0) * np.log1p(x / nu)


def _logg_loghyperbolic(x, nu):
    return -nu * np.sqrt(1.0 + x)


def _logg_loglaplace(x, nu):
    # K0(z) = k0e(z) * exp(-z) keeps the log finite for any z > 0
    z = np.sqrt(2.0 * x)
    return np.log(k0e(z)) - z


def _logg_logslash(x, nu):
    # g(x) = x^(-s) * gamma_lower(s, x/2) with s = (nu + 1) / 2
    s = 0.5 * (nu + 1.0)
    z = 0.5 * x
    p = gammainc(s, z)
    out = np.empty_like(z)
    ok = p > 0.0
    out[ok] = -s * np.log(x[ok]) + gammaln(s) + np.log(p[ok])
    if not ok.all():
        # z^s underflowed inside gammainc; one series term of the lower
        # incomplete gamma is exact at that magnitude
        zt = z[~ok]
        out[~ok] = -s * math.log(2.0) - math.log(s) - zt + np.log1p(zt / (s + 1.0))
    return out


def _logg_logpexp(x, nu):
    return -0.5 * np.power(x, 1.0 / (1.0 + nu))


def _logg_loglogistic(x, nu):
    return -x - 2.0 * np.log1p(np.exp(-x))


_LOGG = {
    "lognormal": _logg_lognormal,
    "logt": _logg_logt,
    "loghyperbolic": _logg_loghyperbolic,
    "loglaplace": _logg_loglaplace,
    "logslash": _logg_logslash,
    "logpexp": _logg_logpexp,
    "loglogistic": _logg_loglogistic,
}


def _check_arg(spec, x, strict_positive=False):
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr < 0.0)):
        raise ValueError("argument must be finite and non-negative")
    if (strict_positive or spec.singular_at_zero) and arr.size and np.any(arr == 0.0):
        raise ValueError(f"{spec.family}: argument 0 is outside the open domain")
    return arr


def _maybe_scalar(out, x):
    if np.ndim(x) == 0:
        return float(out)
    return out


def log_g(spec: GeneratorSpec, x):
    """log of the density generator, stable over the whole domain."""
    arr = _check_arg(spec, x)
    out = _LOGG[spec.family](arr + 0.0, spec.nu)
    return _maybe_scalar(out, x)


def eval_g(spec: GeneratorSpec, x):
    """Density generator g(x); may underflow to 0.0 far in the tail."""
    arr = _check_arg(spec, x)
    out = np.exp(_LOGG[spec.family](arr + 0.0, spec.nu))
    return _maybe_scalar(out, x)


# ---------------------------------------------------------------------------
# first and second derivatives of log g

def _slash_derivs(x, nu):
    # write g = x^(-s) gamma_lower(s, z), z = x/2; with
    # B = z^(s-1) exp(-z) / (2 gamma_lower) the derivatives are
    #   h  = -s/x + B
    #   h' =  s/x^2 + B ((s-1)/x - 1/2 - B)
    # -s/x and B cancel as x -> 0 with noise growing like (s/z)^2, so below
    # an s-dependent cut use log g = const + log u(z) instead, where
    # u(z) = s z^(-s) gamma_lower(s, z) = sum_k (-1)^k s z^k / (k! (s+k));
    # then h = u'/(2u) and h' = (u'' u - u'^2) / (4 u^2)
    s = 0.5 * (nu + 1.0)
    z = 0.5 * x
    h = np.empty_like(z)
    hp = np.empty_like(z)

    small = z < min(2.0, max(2e-3, 0.02 * s * s))
    if np.any(small):
        zs = z[small]
        u = np.ones_like(zs)
        up = np.zeros_like(zs)
        upp = np.zeros_like(zs)
        term = np.ones_like(zs)
        for k in range(1, 33):
            term = term * (-zs) * (s + k - 1.0) / (k * (s + k))
            u += term
            up += k * term / zs
            upp += k * (k - 1.0) * term / (zs * zs)
            if np.max(np.abs(term)) < 1e-20:
                break
        h[small] = 0.5 * up / u
        hp[small] = 0.25 * (upp * u - up * up) / (u * u)

    big = ~small
    if np.any(big):
        zb = z[big]
        xb = x[big]
        log_gam = gammaln(s) + np.log(gammainc(s, zb))
        b = np.exp((s - 1.0) * np.log(zb) - zb - math.log(2.0) - log_gam)
        h[big] = -s / xb + b
        hp[big] = s / xb**2 + b * ((s - 1.0) / xb - 0.5 - b)
    return h, hp


def dlog_g(spec: GeneratorSpec, x):
    """First derivative of log g (the weight entering the score)."""
    arr = _check_arg(spec, x, strict_positive=_needs_positive(spec))
    nu = spec.nu
    f = spec.family
    if f == "lognormal":
        out = np.full_like(arr, -0.5)
    elif f == "logt":
        out = -0.5 * (nu + 2.0) / (nu + arr)
    elif f == "loghyperbolic":
        out = -0.5 * nu / np.sqrt(1.0 + arr)
    elif f == "loglaplace":
        z = np.sqrt(2.0 * arr)
        out = -(k1e(z) / k0e(z)) / z
    elif f == "logslash":
        out = _slash_derivs(arr + 0.0, nu)[0]
    elif f == "logpexp":
        c = 1.0 / (1.0 + nu)
        out = -0.5 * c * np.power(arr, c - 1.0)
    else:  # loglogistic
        out = -np.tanh(0.5 * arr)
    return _maybe_scalar(out, x)


def d2log_g(spec: GeneratorSpec, x):
    """Second derivative of log g (the weight entering the Hessian)."""
    arr = _check_arg(spec, x, strict_positive=_needs_positive(spec))
    nu = spec.nu
    f = spec.family
    if f == "lognormal":
        out = np.zeros_like(arr)
    elif f == "logt":
        out = 0.5 * (nu + 2.0) / (nu + arr) ** 2
    elif f == "loghyperbolic":
        out = 0.25 * nu * np.power(1.0 + arr, -1.5)
    elif f == "loglaplace":
        z = np.sqrt(2.0 * arr)
        r = k1e(z) / k0e(z)
        out = (z + 2.0 * r - r * r * z) / z**3
    elif f == "logslash":
        out = _slash_derivs(arr + 0.0, nu)[1]
    elif f == "logpexp":
        c = 1.0 / (1.0 + nu)
        out = 0.5 * c * (1.0 - c) * np.power(arr, c - 2.0)
    else:  # loglogistic
        out = -0.5 / np.cosh(0.5 * arr) ** 2
    return _maybe_scalar(out, x)


def _needs_positive(spec):
    # power-exponential with nu > 0 has unbounded derivatives at 0
    return spec.family == "logpexp" and spec.nu is not None and spec.nu > 0.0


# ---------------------------------------------------------------------------
# normalizing constant of the bivariate density

def norm_const(spec: GeneratorSpec) -> float:
    """Closed-form normalizer Z of the bivariate log-symmetric density."""
    nu = spec.nu
    f = spec.family
    if f == "lognormal":
        return 2.0 * math.pi
    if f == "logt":
        return math.exp(gammaln(0.5 * nu) - gammaln(0.5 * (nu + 2.0))) * nu * math.pi
    if f == "loghyperbolic":
        return 2.0 * math.pi * (nu + 1.0) * math.exp(-nu) / nu**2
    if f == "loglaplace":
        return math.pi
    if f == "logslash":
        return math.pi / (nu - 1.0) * 2.0 ** (0.5 * (3.0 - nu))
    if f == "logpexp":
        return 2.0 ** (nu + 1.0) * (1.0 + nu) * math.exp(gammaln(1.0 + nu)) * math.pi
    return 0.5 * math.pi  # loglogistic


def _g_scalar(spec):
    fn = _LOGG[spec.family]
    nu = spec.nu

    def g(u):
        return math.exp(float(fn(np.asarray(u, dtype=float), nu)))

    return g


def _quad(fn, a, b):
    res = integrate.quad(fn, a, b, full_output=1, **_QUAD_OPTS)
    val, err = res[0], res[1]
    if not math.isfinite(val) or (val != 0.0 and err > 1e-7 * abs(val) and err > 1e-13):
        raise NumericError(
            f"quadrature on [{a}, {b}] did not converge (value {val}, error {err})"
        )
    return val


def _tail_mass(spec, x):
    # integral of g over (x, inf) mapped onto (0, 1) by u = x + c t / (1 - t);
    # the scale c = max(1, x) keeps the nodes resolved when x is large
    g = _g_scalar(spec)
    c = max(1.0, x)

    def f(t):
        om = 1.0 - t
        return g(x + c * t / om) * c / (om * om)

    return _quad(f, 0.0, 1.0)


def norm_const_numeric(spec: GeneratorSpec) -> float:
    """Quadrature route for Z, independent of the closed forms."""
    g = _g_scalar(spec)
    head = _quad(g, 0.0, 1.0)
    return math.pi * (head + _tail_mass(spec, 1.0))


# ---------------------------------------------------------------------------
# law of the squared radius: density (pi / Z) g on (0, inf)

def radial_cdf(spec: GeneratorSpec, x):
    """CDF of the squared radius at ``x`` (scalar or array)."""
    if np.ndim(x) == 0:
        return _radial_cdf_scalar(spec, float(x))
    arr = np.asarray(x, dtype=float)
    if arr.size > 32:
        return _radial_cdf_sorted(spec, arr)
    return np.array([_radial_cdf_scalar(spec, float(v)) for v in arr])


# beyond this point the CDF comes from the mapped tail integral; below it
# from direct quadrature of the head (split at 1 to localize singularities)
_TAIL_PIVOT = 8.0


def _radial_cdf_scalar(spec, x):
    if not math.isfinite(x) or x < 0.0:
        raise ValueError("argument must be finite and non-negative")
    if x == 0.0:
        return 0.0
    z = norm_const(spec)
    if x > _TAIL_PIVOT:
        tail = math.pi * _tail_mass(spec, x) / z
        return min(max(1.0 - tail, 0.0), 1.0)
    g = _g_scalar(spec)
    head = _quad(g, 0.0, min(x, 1.0))
    if x > 1.0:
        head += _quad(g, 1.0, x)
    return min(max(math.pi * head / z, 0.0), 1.0)


def _radial_cdf_sorted(spec, arr):
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("argument must be finite and non-negative")
    z = norm_const(spec)
    g = _g_scalar(spec)
    order = np.argsort(arr)
    xs = arr[order]
    out = np.empty_like(xs)
    acc = 0.0
    prev = 0.0
    for i, v in enumerate(xs):
        if v > _TAIL_PIVOT:
            # cumulative quadrature loses ground far out; switch to the tail map
            out[i:] = [1.0 - math.pi * _tail_mass(spec, u) / z for u in xs[i:]]
            break
        if v > prev:
            acc += _quad(g, prev, v)
            prev = v
        out[i] = math.pi * acc / z
    out = np.clip(out, 0.0, 1.0)
    res = np.empty_like(out)
    res[order] = out
    return res


def radial_quantile(spec: GeneratorSpec, p):
    """Quantile of the squared radius, solved to 1e-10 in probability."""
    if np.ndim(p) == 0:
        return _radial_quantile_scalar(spec, float(p))
    return np.array([_radial_quantile_scalar(spec, float(v)) for v in np.asarray(p)])


def _radial_quantile_scalar(spec, p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly inside (0, 1), got {p}")
    table = _quantile_table(spec)
    x0 = table.approx_quantile(p)
    lo, hi = 0.75 * x0, 1.25 * x0
    flo = _radial_cdf_scalar(spec, lo)
    fhi = _radial_cdf_scalar(spec, hi)
    while flo > p:
        lo *= 0.25
        flo = _radial_cdf_scalar(spec, lo)
    while fhi < p:
        hi *= 4.0
        fhi = _radial_cdf_scalar(spec, hi)
    x = optimize.brentq(
        lambda v: _radial_cdf_scalar(spec, v) - p, lo, hi, xtol=1e-13 * max(1.0, x0), rtol=8.9e-16
    )
    # Newton polish in probability space; density is (pi / Z) g
    z = norm_const(spec)
    for _ in range(6):
        fx = _radial_cdf_scalar(spec, x)
        if abs(fx - p) <= 1e-10:
            break
        dens = math.pi * math.exp(log_g(spec, x)) / z
        if dens <= 0.0:
            break
        x = max(x - (fx - p) / dens, x * 0.5)
    return x


class _QuantileTable:
    """Monotone interpolant of the squared-radius quantile function.

    Knots are exact (x, CDF(x)) pairs on a geometric grid covering
    probabilities [~1e-10, ~1 - 1e-10]; interpolation runs in
    (logit p, log x) coordinates where both tails are near-linear.
    Immutable after construction.
    """

    def __init__(self, spec, n_knots=4096):
        z = norm_const(spec)
        logg = _LOGG[spec.family]
        nu = spec.nu

        x_lo, x_hi = 1.0, 2.0
        while _radial_cdf_scalar(spec, x_lo) > 1e-10:
            x_lo *= 0.2
            if x_lo < 1e-280:
                raise NumericError(f"{spec.label()}: no lower quantile bracket")
        while _radial_cdf_scalar(spec, x_hi) < 1.0 - 1e-10:
            x_hi *= 4.0
            if x_hi > 1e280:
                raise NumericError(f"{spec.label()}: no upper quantile bracket")

        grid = np.geomspace(x_lo, x_hi, n_knots)
        # fixed Gauss-Legendre panels between knots, vectorized
        nodes, weights = np.polynomial.legendre.leggauss(24)
        a, b = grid[:-1], grid[1:]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        xs = mid[:, None] + half[:, None] * nodes[None, :]
        vals = np.exp(logg(xs, nu))
        seg = (vals * weights[None, :]).sum(axis=1) * half

        p = np.empty(n_knots)
        p[0] = _radial_cdf_scalar(spec, x_lo)
        p[1:] = p[0] + math.pi * np.cumsum(seg) / z
        p = np.minimum(np.maximum.accumulate(p), 1.0 - 1e-16)

        keep = np.concatenate([[True], np.diff(p) > 0.0])
        p, grid = p[keep], grid[keep]
        self.p_lo = float(p[0])
        self.p_hi = float(p[-1])
        self._interp = PchipInterpolator(logit(p), np.log(grid), extrapolate=True)

    def approx_quantile(self, p):
        clipped = np.clip(p, self.p_lo, self.p_hi)
        return np.exp(self._interp(logit(clipped)))


@lru_cache(maxsize=64)
def _quantile_table(spec: GeneratorSpec) -> _QuantileTable:
    return _QuantileTable(spec)


def sample_squared_radius(spec: GeneratorSpec, rng: np.random.Generator, size=None):
    """Draw squared radii by inverse-CDF through the cached table."""
    table = _quantile_table(spec)
    return table.approx_quantile(rng.random(size))


# short operation names used throughout the likelihood derivations
h = dlog_g
h_prime = d2log_g
z_const = norm_const
z_const_numeric = norm_const_numeric
