"""Maximum-likelihood estimation for the bivariate duration model.

Fitting runs in two stages: a quasi-Newton pass on transformed parameters
(log scales, atanh correlation) driven by the exact recursive gradient, then
a damped Newton polish on the score of the requested gradient mode, so the
reported optimum satisfies that mode's estimating equations.  Standard
errors invert the matching Hessian.

Reported log-likelihoods include the ``-n log Z`` normalizing term of the
generator, which keeps profile curves over the shape parameter and
information criteria comparable across families.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, optimize

from . import generators, model
from .exceptions import BlsacdError, DataError, NumericError, SingularHessianError
from .model import BiSeries, ModelSpec, ParamVector

_SIGMA_LOG_MIN = math.log(1e-6)
_SIGMA_LOG_MAX = math.log(1e6)
_RHO_Z_MAX = math.atanh(1.0 - 1e-6)
_GRAD_TOL = 1e-6
_STEP_TOL = 1e-9
_POLISH_RADIUS = 2.0
_BIG = 1e12

#: default shape-parameter grids for profile fitting
NU_GRIDS = {
    "logt": (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0),
    "loghyperbolic": (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0),
    "logslash": tuple(float(v) for v in np.geomspace(1.25, 56.0, 8)),
    "logpexp": (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0),
}


@dataclass(frozen=True)
class FitResult:
    """Outcome of a model fit.

    ``loglik_at_max`` includes the generator normalizing constant;
    ``profile`` holds ``(nu, loglik)`` pairs when the shape parameter was
    profiled, in evaluation order sorted by ``nu``.
    """

    spec: ModelSpec
    params: ParamVector
    se: np.ndarray
    loglik_at_max: float
    aic: float
    bic: float
    caic: float
    nu_hat: float | None
    converged: bool
    iterations: int
    grad_norm_at_max: float
    presample_convention: dict
    gradient_mode: str
    profile: tuple | None = None

    def theta_dict(self) -> dict:
        names = self.spec.param_names()
        return dict(zip(names, (float(v) for v in self.params.to_array())))

    def se_dict(self) -> dict:
        names = self.spec.param_names()
        return {
            name: (None if not math.isfinite(v) else float(v))
            for name, v in zip(names, self.se)
        }

    def to_json_dict(self) -> dict:
        def scrub(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "theta_hat": self.theta_dict(),
            "se": self.se_dict(),
            "loglik_at_max": scrub(self.loglik_at_max),
            "aic": scrub(self.aic),
            "bic": scrub(self.bic),
            "caic": scrub(self.caic),
            "nu_hat": scrub(self.nu_hat) if self.nu_hat is not None else None,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "grad_norm_at_max": scrub(self.grad_norm_at_max),
            "presample_convention": self.presample_convention,
            "gradient_mode": self.gradient_mode,
        }


def info_criteria(loglik: float, k: int, n_obs: int) -> dict:
    """Akaike, Schwarz, and small-sample corrected Akaike criteria."""
    if k < 1 or n_obs < 1:
        raise ValueError("k and n_obs must be positive")
    aic = -2.0 * loglik + 2.0 * k
    bic = -2.0 * loglik + k * math.log(n_obs)
    if n_obs > k + 1:
        caic = aic + 2.0 * k * (k + 1.0) / (n_obs - k - 1.0)
    else:
        warnings.warn(
            f"corrected criterion undefined for n_obs={n_obs} <= k+1={k + 1}",
            RuntimeWarning, stacklevel=2,
        )
        caic = math.nan
    return {"aic": aic, "bic": bic, "caic": caic}


def default_start(spec: ModelSpec, series: BiSeries) -> ParamVector:
    """Moment-based starting values targeting the unconditional log level."""
    p1, q1, p2, q2 = spec.orders

    def block(y, p, q):
        ly = np.log(y)
        level = float(np.mean(ly))
        alpha = tuple(0.3 / p for _ in range(p)) if p else ()
        beta = tuple(0.1 / q for _ in range(q)) if q else ()
        # the standardized ratio has unit median, and unlike the sample mean
        # the median keeps heavy-tailed observations from swamping the level
        ratio = float(np.median(y)) * math.exp(-level)
        omega = (1.0 - sum(alpha)) * level - sum(beta) * ratio
        sigma = float(np.std(ly, ddof=1)) if y.shape[0] > 1 else 1.0
        return omega, alpha, beta, min(max(sigma, 0.1), 5.0)

    omega1, alpha1, beta1, sigma1 = block(series.y1, p1, q1)
    omega2, alpha2, beta2, sigma2 = block(series.y2, p2, q2)
    if series.n > 2:
        rho = float(np.corrcoef(np.log(series.y1), np.log(series.y2))[0, 1])
        rho = min(max(rho, -0.9), 0.9)
        if not math.isfinite(rho):
            rho = 0.0
    else:
        rho = 0.0
    return ParamVector(
        sigma1=sigma1, sigma2=sigma2, rho=rho,
        omega1=omega1, alpha1=alpha1, beta1=beta1,
        omega2=omega2, alpha2=alpha2, beta2=beta2,
    )


def standard_errors(
    spec: ModelSpec,
    params: ParamVector,
    series: BiSeries,
    *,
    mode: str = "paper_literal",
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
) -> np.ndarray:
    """Inverse-curvature standard errors from the mode-matched Hessian.

    Raises :class:`SingularHessianError` when the negative Hessian is not
    positive definite; its eigenvalues are attached for inspection.
    """
    hess = model.hessian(
        spec, params, series, mode=mode, burn_in=burn_in,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
    )
    neg = -hess
    try:
        chol = linalg.cholesky(neg, lower=True)
    except linalg.LinAlgError:
        raise SingularHessianError(np.linalg.eigvalsh(neg)) from None
    inv = linalg.cho_solve((chol, True), np.eye(neg.shape[0]))
    return np.sqrt(np.diag(inv))


# ---------------------------------------------------------------------------
# parameter transform for the quasi-Newton stage

def _to_unconstrained(theta):
    z = np.array(theta, dtype=float)
    z[0] = math.log(theta[0])
    z[1] = math.log(theta[1])
    z[2] = math.atanh(theta[2])
    return z

def _from_unconstrained(z):
    theta = np.array(z, dtype=float)
    theta[0] = math.exp(z[0])
    theta[1] = math.exp(z[1])
    theta[2] = math.tanh(z[2])
    return theta

def _chain(theta):
    scale = np.ones_like(theta)
    scale[0] = theta[0]
    scale[1] = theta[1]
    scale[2] = 1.0 - theta[2] * theta[2]
    return scale


def _params_valid(theta):
    return (
        theta[0] > 1e-6 and theta[1] > 1e-6
        and theta[0] < 1e6 and theta[1] < 1e6
        and abs(theta[2]) < 1.0 - 1e-6
    )


def _at_boundary(theta):
    return (
        theta[0] <= 1e-6 * 1.01 or theta[0] >= 1e6 * 0.99
        or theta[1] <= 1e-6 * 1.01 or theta[1] >= 1e6 * 0.99
        or abs(theta[2]) >= (1.0 - 1e-6) * 0.999999
    )


def _check_margins(series):
    # a constant margin pushes its scale estimate to the zero boundary, where
    # the likelihood grows without bound; there is no maximum to find
    for i, y in enumerate((series.y1, series.y2), start=1):
        if float(np.ptp(np.log(y))) == 0.0:
            raise DataError(f"margin {i} is constant; its scale cannot be estimated")


def fit(
    spec: ModelSpec,
    series: BiSeries,
    *,
    start: ParamVector | None = None,
    gradient_mode: str = "paper_literal",
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
    n_starts: int = 5,
    seed: int = 0,
    count_nu_in_k: bool = True,
    max_iterations: int = 300,
) -> FitResult:
    """Fit the model by maximum likelihood.

    ``gradient_mode`` selects the estimating equations the polish stage
    solves and the Hessian behind the standard errors.  ``n_starts`` jittered
    restarts guard against bad basins; the candidate with the highest
    likelihood wins.  ``count_nu_in_k`` adds the generator shape parameter to
    the parameter count of the information criteria when the family has one.
    """
    model._check_mode(gradient_mode)
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    _check_margins(series)
    pre = dict(presample_log_eta=tuple(presample_log_eta),
               presample_ratio=tuple(presample_ratio))
    base = start if start is not None else default_start(spec, series)
    model._require_match(base, spec)
    starts = [base]
    rng = np.random.default_rng(seed)
    theta0 = base.to_array()
    while len(starts) < n_starts:
        jitter = theta0.copy()
        jitter[0] *= math.exp(rng.normal(0.0, 0.2))
        jitter[1] *= math.exp(rng.normal(0.0, 0.2))
        jitter[2] = math.tanh(math.atanh(theta0[2]) + rng.normal(0.0, 0.3))
        jitter[3:] += rng.normal(0.0, 0.1, jitter.size - 3)
        try:
            starts.append(ParamVector.from_array(jitter, spec))
        except ValueError:
            continue

    # families whose generator is unbounded at the origin admit spikes where
    # an observation sits on its fitted median; such points can out-score a
    # genuine optimum on raw likelihood, so stationarity breaks ties first
    def rank(cand):
        return (cand[3] <= _GRAD_TOL, cand[1])

    best = None
    for cand_start in starts:
        cand = _fit_single(
            spec, cand_start, series, gradient_mode, burn_in, pre, max_iterations,
        )
        if cand is None:
            continue
        if best is None or rank(cand) > rank(best):
            best = cand
    if best is None:
        raise NumericError("estimation failed from every starting point")
    params, ll, iterations, grad_norm = best

    converged = grad_norm <= _GRAD_TOL and not _at_boundary(params.to_array())
    try:
        se = standard_errors(
            spec, params, series, mode=gradient_mode, burn_in=burn_in, **pre,
        )
    except SingularHessianError:
        se = np.full(spec.k_total, math.nan)

    n_eff = series.n - burn_in
    ll_max = ll - n_eff * math.log(generators.norm_const(spec.generator))
    k = spec.k_total + (1 if spec.generator.nu is not None and count_nu_in_k else 0)
    ics = info_criteria(ll_max, k, n_eff)
    return FitResult(
        spec=spec, params=params, se=se, loglik_at_max=ll_max,
        aic=ics["aic"], bic=ics["bic"], caic=ics["caic"],
        nu_hat=spec.generator.nu, converged=converged, iterations=iterations,
        grad_norm_at_max=grad_norm,
        presample_convention={
            "log_eta": list(pre["presample_log_eta"]),
            "ratio": list(pre["presample_ratio"]),
        },
        gradient_mode=gradient_mode,
    )


def _fit_single(spec, start, series, mode, burn_in, pre, max_iterations):
    best_seen = {"f": math.inf, "z": None}

    def value_and_grad(z):
        theta = _from_unconstrained(z)
        if not np.all(np.isfinite(theta)):
            return _BIG, np.zeros_like(z)
        try:
            params = ParamVector.from_array(theta, spec)
            ll = model.loglik(spec, params, series, burn_in=burn_in, **pre)
            g = model.score(
                spec, params, series, mode="exact_recursive", burn_in=burn_in, **pre,
            )
        except (BlsacdError, ValueError):
            return _BIG, np.zeros_like(z)
        if not (math.isfinite(ll) and np.all(np.isfinite(g))):
            return _BIG, np.zeros_like(z)
        if -ll < best_seen["f"]:
            best_seen["f"], best_seen["z"] = -ll, z.copy()
        return -ll, -g * _chain(theta)

    # a start whose recursion diverges pins the search at a flat wall with a
    # zero gradient; damp the ratio feedback until the likelihood evaluates
    for _ in range(40):
        z0 = _to_unconstrained(start.to_array())
        if value_and_grad(z0)[0] < _BIG:
            break
        start = replace(
            start,
            beta1=tuple(0.5 * b for b in start.beta1),
            beta2=tuple(0.5 * b for b in start.beta2),
        )
    else:
        return None

    bounds = [(_SIGMA_LOG_MIN, _SIGMA_LOG_MAX), (_SIGMA_LOG_MIN, _SIGMA_LOG_MAX),
              (-_RHO_Z_MAX, _RHO_Z_MAX)] + [(None, None)] * (spec.k_total - 3)
    res = optimize.minimize(
        value_and_grad, z0, jac=True,
        method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iterations},
    )
    z_end = res.x if np.all(np.isfinite(res.x)) and res.fun < _BIG else None
    if z_end is None:
        # the line search can terminate on an evaluation that raised; fall
        # back to the best admissible point seen along the way
        z_end = best_seen["z"]
    if z_end is None:
        return None
    theta = _from_unconstrained(z_end)
    iterations = int(res.nit)

    polished = _newton_polish(spec, theta, series, mode, burn_in, pre)
    if polished is None:
        return None
    theta, newton_iters, grad_norm = polished
    iterations += newton_iters
    params = ParamVector.from_array(theta, spec)
    try:
        ll = model.loglik(spec, params, series, burn_in=burn_in, **pre)
    except BlsacdError:
        return None
    return params, ll, iterations, grad_norm


def _newton_polish(spec, theta, series, mode, burn_in, pre, max_iter=40):
    def score_at(t):
        return model.score(
            spec, ParamVector.from_array(t, spec), series, mode=mode,
            burn_in=burn_in, **pre,
        )

    # score norms also shrink along degenerate rays (inflating a scale
    # parameter flattens the likelihood), so keep the polish near its entry
    theta0 = theta.copy()

    def admissible(t):
        return _params_valid(t) and float(np.max(np.abs(t - theta0))) <= _POLISH_RADIUS

    try:
        s = score_at(theta)
    except BlsacdError:
        return None
    norm = float(np.max(np.abs(s)))
    it = 0
    while it < max_iter and norm > _GRAD_TOL:
        it += 1
        try:
            hess = model.hessian(
                spec, ParamVector.from_array(theta, spec), series, mode=mode,
                burn_in=burn_in, **pre,
            )
            step = np.linalg.solve(hess, -s)
        except (BlsacdError, np.linalg.LinAlgError):
            break
        lam = 1.0
        improved = False
        while lam > 1e-8:
            cand = theta + lam * step
            if admissible(cand):
                try:
                    s_cand = score_at(cand)
                except BlsacdError:
                    lam *= 0.5
                    continue
                cand_norm = float(np.max(np.abs(s_cand)))
                if cand_norm < norm:
                    theta, s, norm = cand, s_cand, cand_norm
                    improved = True
                    break
            lam *= 0.5
        if not improved or float(np.max(np.abs(lam * step))) <= _STEP_TOL:
            break
    if norm <= _GRAD_TOL:
        return theta, it, norm

    # Newton stalled: hand the score equations to a trust-region root finder
    # in the transformed coordinates, which keeps the iterates admissible
    k = theta.shape[0]

    def score_z(z):
        # the root finder probes without bounds, so the transform itself can
        # overflow; answer any inadmissible probe with a flat large residual
        try:
            t = _from_unconstrained(z)
            return score_at(t) * _chain(t)
        except (BlsacdError, ValueError, OverflowError):
            return np.full(k, 1e6)

    sol = optimize.root(
        score_z, _to_unconstrained(theta), method="hybr",
        options={"xtol": 1e-13, "maxfev": 300 * (k + 1)},
    )
    it += max(1, sol.nfev // (k + 1))
    if np.all(np.isfinite(sol.x)):
        try:
            cand = _from_unconstrained(sol.x)
        except OverflowError:
            cand = None
        if cand is not None and admissible(cand):
            try:
                s_cand = score_at(cand)
                cand_norm = float(np.max(np.abs(s_cand)))
                if cand_norm < norm:
                    theta, norm = cand, cand_norm
            except BlsacdError:
                pass
    return theta, it, norm


def fit_profile_nu(
    family: str,
    series: BiSeries,
    *,
    orders=(1, 1, 1, 1),
    nu_grid=None,
    gradient_mode: str = "paper_literal",
    burn_in: int = 0,
    presample_log_eta=(0.0, 0.0),
    presample_ratio=(1.0, 1.0),
    n_starts: int = 5,
    seed: int = 0,
    count_nu_in_k: bool = True,
    refine_width: float = 0.5,
) -> FitResult:
    """Profile the generator shape parameter and return the best fit.

    The profile walks the family's grid with warm starts, then narrows the
    bracket around the best point by golden-section until it is at most
    ``refine_width`` wide.  The returned result carries ``nu_hat`` and the
    full ``(nu, loglik)`` profile table.
    """
    if family not in NU_GRIDS and nu_grid is None:
        raise ValueError(f"{family} has no shape parameter to profile")
    grid = tuple(float(v) for v in (nu_grid if nu_grid is not None else NU_GRIDS[family]))
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("nu grid must be increasing with at least two points")
    _check_margins(series)

    common = dict(
        gradient_mode=gradient_mode, burn_in=burn_in,
        presample_log_eta=presample_log_eta, presample_ratio=presample_ratio,
        count_nu_in_k=count_nu_in_k,
    )
    evaluated: dict[float, FitResult] = {}

    def eval_nu(nu, warm, full_starts=False):
        key = round(nu, 9)
        if key in evaluated:
            return evaluated[key]
        spec = ModelSpec(generators.GeneratorSpec(family, nu), orders)
        try:
            result = fit(
                spec, series, start=warm,
                n_starts=n_starts if full_starts else 1, seed=seed, **common,
            )
        except BlsacdError:
            result = None
        evaluated[key] = result
        return result

    warm = None
    for i, nu in enumerate(grid):
        result = eval_nu(nu, warm, full_starts=(i == 0))
        if result is not None:
            warm = result.params

    ok = {nu: r for nu, r in evaluated.items() if r is not None}
    if not ok:
        raise NumericError(f"profile over {family} failed at every grid point")

    def value(nu):
        r = evaluated.get(round(nu, 9))
        return -math.inf if r is None else r.loglik_at_max

    best_nu = max(ok, key=value)
    idx = min(range(len(grid)), key=lambda i: abs(grid[i] - best_nu))
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, len(grid) - 1)]
    warm = ok[best_nu].params
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    while hi - lo > refine_width:
        x1 = hi - invphi * (hi - lo)
        x2 = lo + invphi * (hi - lo)
        eval_nu(x1, warm)
        eval_nu(x2, warm)
        if value(x1) >= value(x2):
            hi = x2
        else:
            lo = x1
        current = max((round(x, 9) for x in (x1, x2)), key=value)
        if evaluated.get(current) is not None:
            warm = evaluated[current].params

    best_nu = max((nu for nu, r in evaluated.items() if r is not None), key=value)
    best = evaluated[best_nu]
    profile = tuple(
        (nu, r.loglik_at_max)
        for nu, r in sorted(evaluated.items())
        if r is not None
    )
    return replace(best, profile=profile)
