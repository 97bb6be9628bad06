"""Generator-level checks against independently derived references.

Every radial CDF here has a closed form obtained by integrating the
generator directly (substitutions u -> sqrt(1+x), u -> sqrt(2x), integration
by parts for the slash case), so the quadrature route in the library is
tested against formulas it never uses.  Derivative values were frozen from
40-digit arbitrary-precision differentiation of log g.
"""

import math
import zlib

import numpy as np
import pytest
from scipy.special import gammainc, gammaln, k1e
from scipy.stats import kstest

from blsacd import generators as gen
from blsacd.generators import GeneratorSpec

SPECS = [
    GeneratorSpec("lognormal"),
    GeneratorSpec("logt", 4.0),
    GeneratorSpec("loghyperbolic", 4.0),
    GeneratorSpec("loglaplace"),
    GeneratorSpec("logslash", 4.0),
    GeneratorSpec("logpexp", 0.5),
    GeneratorSpec("logpexp", -0.5),
    GeneratorSpec("loglogistic"),
]

IDS = [s.label() for s in SPECS]


def oracle_cdf(spec, x):
    """Closed-form CDF of the squared radius, independent of the library."""
    x = np.asarray(x, dtype=float)
    nu = spec.nu
    f = spec.family
    if f == "lognormal":
        return 1.0 - np.exp(-0.5 * x)
    if f == "logt":
        return 1.0 - np.power(1.0 + x / nu, -0.5 * nu)
    if f == "loghyperbolic":
        r = np.sqrt(1.0 + x)
        return 1.0 - np.exp(nu - nu * r) * (nu * r + 1.0) / (nu + 1.0)
    if f == "loglaplace":
        z = np.sqrt(2.0 * x)
        return 1.0 - z * k1e(z) * np.exp(-z)
    if f == "logslash":
        s = 0.5 * (nu + 1.0)
        z = 0.5 * x
        part = np.power(z, 1.0 - s) * math.exp(gammaln(s)) * gammainc(s, z)
        return 1.0 - np.exp(-z) - part
    if f == "logpexp":
        return gammainc(1.0 + nu, 0.5 * np.power(x, 1.0 / (1.0 + nu)))
    return np.tanh(0.5 * x)


# ---------------------------------------------------------------------------
# spec construction and domains

def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown family"):
        GeneratorSpec("normal")


@pytest.mark.parametrize("family", ["lognormal", "loglaplace", "loglogistic"])
def test_no_extra_parameter_families_reject_nu(family):
    with pytest.raises(ValueError, match="takes no extra parameter"):
        GeneratorSpec(family, 3.0)


@pytest.mark.parametrize(
    "family,bad",
    [
        ("logt", 0.0),
        ("logt", -1.0),
        ("loghyperbolic", 0.0),
        ("logslash", 1.0),
        ("logpexp", -1.0),
        ("logpexp", 1.5),
        ("logt", None),
        ("logt", math.inf),
    ],
)
def test_nu_out_of_range_rejected(family, bad):
    with pytest.raises(ValueError):
        GeneratorSpec(family, bad)


def test_pexp_right_endpoint_is_admissible():
    assert GeneratorSpec("logpexp", 1.0).nu == 1.0


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_negative_and_nonfinite_arguments_rejected(spec):
    for bad in (-1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            gen.eval_g(spec, bad)
        with pytest.raises(ValueError):
            gen.dlog_g(spec, bad)


def test_singular_families_reject_zero():
    for family in ("loglaplace", "logslash"):
        spec = GeneratorSpec(family, 4.0 if family == "logslash" else None)
        assert spec.singular_at_zero
        with pytest.raises(ValueError, match="outside the open domain"):
            gen.log_g(spec, 0.0)
        with pytest.raises(ValueError):
            gen.eval_g(spec, np.array([1.0, 0.0]))


def test_pexp_positive_nu_derivative_rejects_zero():
    spec = GeneratorSpec("logpexp", 0.5)
    assert gen.eval_g(spec, 0.0) == 1.0
    with pytest.raises(ValueError):
        gen.dlog_g(spec, 0.0)
    # nu <= 0 keeps the derivative finite at the origin
    assert gen.d2log_g(GeneratorSpec("logpexp", -0.5), 0.0) == -1.0


# ---------------------------------------------------------------------------
# pointwise generator values

def test_anchor_values():
    assert gen.eval_g(GeneratorSpec("logt", 4.0), 4.0) == pytest.approx(0.125, abs=1e-15)
    assert gen.eval_g(GeneratorSpec("loglogistic"), 0.0) == pytest.approx(0.25, abs=1e-15)
    assert gen.dlog_g(GeneratorSpec("logt", 2.0), 2.0) == pytest.approx(-0.5, abs=1e-15)
    assert gen.eval_g(GeneratorSpec("lognormal"), 2.0 * math.log(2.0)) == pytest.approx(0.5)


def test_pexp_nu_zero_reduces_to_lognormal():
    pexp = GeneratorSpec("logpexp", 0.0)
    norm = GeneratorSpec("lognormal")
    x = np.geomspace(1e-4, 50.0, 40)
    np.testing.assert_allclose(gen.log_g(pexp, x), gen.log_g(norm, x), rtol=1e-14)
    assert gen.norm_const(pexp) == pytest.approx(gen.norm_const(norm), rel=1e-15)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_log_g_matches_exp_and_shapes(spec):
    x = np.geomspace(0.01, 20.0, 15)
    np.testing.assert_allclose(gen.eval_g(spec, x), np.exp(gen.log_g(spec, x)), rtol=1e-15)
    assert isinstance(gen.log_g(spec, 1.0), float)
    assert gen.log_g(spec, x).shape == x.shape


def test_log_g_stable_deep_in_tail():
    # direct evaluation of K0 or the incomplete-gamma ratio would underflow here
    z = math.sqrt(2e6)
    k0_asymptotic = -z + 0.5 * math.log(0.5 * math.pi / z)
    assert gen.log_g(GeneratorSpec("loglaplace"), 1e6) == pytest.approx(
        k0_asymptotic, rel=1e-4
    )
    spec = GeneratorSpec("logslash", 4.0)
    v = gen.log_g(spec, 1e4)
    # g ~ Gamma(s) x^(-s) once the incomplete gamma saturates
    s = 2.5
    assert v == pytest.approx(gammaln(s) - s * math.log(1e4), rel=1e-12)
    tiny = gen.log_g(spec, 1e-280)
    assert math.isfinite(tiny)


# ---------------------------------------------------------------------------
# derivatives of log g

# (x, dlog_g, d2log_g) frozen from 40-digit differentiation
_DERIV_REFERENCE = {
    "lognormal": [
        (0.05, -0.5, 0.0),
        (3.0, -0.5, 0.0),
    ],
    "logt(nu=4)": [
        (0.05, -0.74074074074074074, 0.1828989483310471),
        (0.8, -0.62499999999999999, 0.13020833333333333),
        (3.0, -0.42857142857142857, 0.061224489795918367),
        (12.0, -0.1875, 0.01171875),
    ],
    "loghyperbolic(nu=4)": [
        (0.05, -1.9518001458970664, 0.92942864090336493),
        (0.8, -1.4907119849998598, 0.41408666249996104),
        (3.0, -1.0, 0.125),
        (12.0, -0.55470019622522912, 0.021334622931739582),
    ],
    "loglaplace": [
        (0.05, -6.8717925912092191, 100.21431840758646),
        (0.8, -1.0652493912984505, 0.82180547346134372),
        (3.0, -0.48529388857595383, 0.092921137902814316),
        (12.0, -0.22406179382306466, 0.010134795367379187),
    ],
    "logslash(nu=4)": [
        (0.05, -0.35657486004200019, 0.011382002147041693),
        (0.8, -0.34779314378704567, 0.012031505096571017),
        (3.0, -0.31942316427413278, 0.013674115915321688),
        (12.0, -0.19413717033031237, 0.011836018940969908),
    ],
    "logpexp(nu=0.5)": [
        (0.05, -0.90480587219830217, 6.0320391479886808),
        (0.8, -0.35907244833864728, 0.14961352014110303),
        (3.0, -0.2311204247835449, 0.025680047198171656),
        (12.0, -0.14559674412271648, 0.0040443540034087911),
    ],
    "logpexp(nu=-0.5)": [
        (0.05, -0.05, -1.0),
        (0.8, -0.8, -1.0),
        (3.0, -3.0, -1.0),
        (12.0, -12.0, -1.0),
    ],
    "loglogistic": [
        (0.05, -0.024994792968420689, -0.49968763016223289),
        (0.8, -0.3799489622552249, -0.42781939304058884),
        (3.0, -0.90514825364486644, -0.090353319461824265),
        (12.0, -0.99998771165079557, -1.2288273702666351e-5),
    ],
}


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_derivatives_match_reference(spec):
    for x, d1, d2 in _DERIV_REFERENCE[spec.label()]:
        assert gen.dlog_g(spec, x) == pytest.approx(d1, rel=1e-11, abs=1e-14)
        assert gen.d2log_g(spec, x) == pytest.approx(d2, rel=2e-8, abs=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_dlog_g_matches_central_difference(spec):
    x = np.geomspace(0.02, 30.0, 25)
    h = 6e-6 * x
    fd = (gen.log_g(spec, x + h) - gen.log_g(spec, x - h)) / (2.0 * h)
    np.testing.assert_allclose(gen.dlog_g(spec, x), fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_d2log_g_matches_derivative_of_dlog_g(spec):
    # differentiating the analytic first derivative avoids the cancellation
    # that makes second differences of log g unreliable at small x
    x = np.geomspace(0.02, 30.0, 25)
    h = 6e-6 * x
    fd = (gen.dlog_g(spec, x + h) - gen.dlog_g(spec, x - h)) / (2.0 * h)
    np.testing.assert_allclose(gen.d2log_g(spec, x), fd, rtol=2e-5, atol=1e-11)


def test_slash_derivative_series_branch_is_smooth():
    spec = GeneratorSpec("logslash", 4.0)
    # straddle the series / direct switch (x = 0.25 at nu = 4): the increments
    # of the first derivative must track the second, with no jump at the seam
    x = np.linspace(0.2, 0.3, 21)
    d1 = gen.dlog_g(spec, x)
    d2 = gen.d2log_g(spec, x)
    predicted = d2[:-1] * np.diff(x)
    np.testing.assert_allclose(np.diff(d1), predicted, rtol=1e-3)
    assert gen.dlog_g(spec, 1e-9) == pytest.approx(-2.5 / 7.0, rel=1e-6)


# ---------------------------------------------------------------------------
# normalizing constants

@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_norm_const_closed_form_matches_quadrature(spec):
    closed = gen.norm_const(spec)
    numeric = gen.norm_const_numeric(spec)
    assert numeric == pytest.approx(closed, rel=1e-10)


@pytest.mark.parametrize("nu", [0.5, 1.0, 4.0, 17.0, 120.0])
def test_logt_normalizer_equals_two_pi_for_all_nu(nu):
    assert gen.norm_const(GeneratorSpec("logt", nu)) == pytest.approx(2.0 * math.pi, rel=1e-14)


def test_norm_const_values():
    assert gen.norm_const(GeneratorSpec("lognormal")) == pytest.approx(2.0 * math.pi)
    assert gen.norm_const(GeneratorSpec("loglaplace")) == pytest.approx(math.pi)
    assert gen.norm_const(GeneratorSpec("loglogistic")) == pytest.approx(0.5 * math.pi)
    assert gen.norm_const(GeneratorSpec("loghyperbolic", 4.0)) == pytest.approx(
        2.0 * math.pi * 5.0 * math.exp(-4.0) / 16.0, rel=1e-14
    )
    assert gen.norm_const(GeneratorSpec("logslash", 4.0)) == pytest.approx(
        math.pi / 3.0 * 2.0 ** -0.5, rel=1e-14
    )
    assert gen.norm_const(GeneratorSpec("logpexp", 0.5)) == pytest.approx(
        2.0 ** 1.5 * 1.5 * math.gamma(1.5) * math.pi, rel=1e-14
    )


# ---------------------------------------------------------------------------
# squared-radius law

@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_radial_cdf_matches_closed_form(spec):
    x = np.geomspace(0.01, 40.0, 21)
    lib = np.array([gen.radial_cdf(spec, float(v)) for v in x])
    np.testing.assert_allclose(lib, oracle_cdf(spec, x), atol=1e-10)
    assert gen.radial_cdf(spec, 0.0) == 0.0


def test_radial_cdf_lognormal_is_chi_square_two():
    spec = GeneratorSpec("lognormal")
    assert gen.radial_cdf(spec, 2.0 * math.log(2.0)) == pytest.approx(0.5, abs=1e-12)
    assert gen.radial_quantile(spec, 0.5) == pytest.approx(2.0 * math.log(2.0), rel=1e-10)
    p = np.array([0.01, 0.25, 0.9, 0.999])
    np.testing.assert_allclose(
        gen.radial_quantile(spec, p), -2.0 * np.log1p(-p), rtol=1e-9
    )


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_radial_cdf_array_path_matches_scalar(spec):
    rng = np.random.default_rng(0)
    x = rng.permutation(np.geomspace(0.005, 60.0, 40))
    arr = gen.radial_cdf(spec, x)
    sca = np.array([gen.radial_cdf(spec, float(v)) for v in x])
    np.testing.assert_allclose(arr, sca, atol=5e-13)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_quantile_round_trip_in_probability(spec):
    p = np.array([1e-6, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95, 0.999, 1.0 - 1e-6])
    x = gen.radial_quantile(spec, p)
    assert np.all(np.diff(x) > 0.0)
    back = np.array([gen.radial_cdf(spec, float(v)) for v in x])
    np.testing.assert_allclose(back, p, atol=1.5e-10)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_quantile_round_trip_in_x(spec):
    # the solver works to 1e-10 in probability, so restrict to the body of
    # the law where that translates into a tight relative error in x
    hi = gen.radial_quantile(spec, 0.999)
    x = np.geomspace(0.05, hi, 9)
    f = np.array([gen.radial_cdf(spec, float(v)) for v in x])
    back = gen.radial_quantile(spec, f)
    np.testing.assert_allclose(back, x, rtol=1e-7)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.3, math.nan])
def test_quantile_rejects_probabilities_outside_open_interval(p):
    with pytest.raises(ValueError):
        gen.radial_quantile(GeneratorSpec("lognormal"), p)


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_sampler_distribution(spec):
    rng = np.random.default_rng(zlib.crc32(spec.label().encode()))
    draws = gen.sample_squared_radius(spec, rng, 100_000)
    assert draws.shape == (100_000,)
    assert np.all(draws > 0.0)
    # 1% critical value of the one-sample statistic at n = 1e5
    stat = kstest(draws, lambda v: oracle_cdf(spec, v)).statistic
    assert stat < 0.00516


def test_sampler_reproducible_and_scalar():
    spec = GeneratorSpec("logt", 4.0)
    a = gen.sample_squared_radius(spec, np.random.default_rng(11), 100)
    b = gen.sample_squared_radius(spec, np.random.default_rng(11), 100)
    np.testing.assert_array_equal(a, b)
    single = gen.sample_squared_radius(spec, np.random.default_rng(11))
    assert np.ndim(single) == 0
