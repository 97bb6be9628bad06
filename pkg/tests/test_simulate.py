"""Simulation checks: exact innovation law, series mechanics, study harness."""

import math

import numpy as np
import pytest
from scipy.stats import kstest

from blsacd import model, simulate
from blsacd.exceptions import NumericError
from blsacd.generators import GeneratorSpec
from blsacd.model import BiSeries, ModelSpec, ParamVector
from blsacd.simulate import McDesign, run_mc_study, sample_innovation_pair, simulate_series

SPECS = [
    GeneratorSpec("lognormal"),
    GeneratorSpec("logt", 4.0),
    GeneratorSpec("loghyperbolic", 4.0),
    GeneratorSpec("loglaplace"),
    GeneratorSpec("logslash", 4.0),
    GeneratorSpec("logpexp", 0.5),
    GeneratorSpec("loglogistic"),
]
IDS = [s.label() for s in SPECS]

MODEL = ModelSpec(GeneratorSpec("lognormal"), (1, 1, 1, 1))
TRUTH = ParamVector(1.0, 1.0, 0.5, 0.2, (0.7,), (0.1,), 0.2, (0.7,), (0.1,))


@pytest.mark.parametrize("spec", SPECS, ids=IDS)
def test_innovation_quadratic_form_reproduces_radius(spec):
    rng = np.random.default_rng(11)
    w1, w2, r2 = sample_innovation_pair(spec, 0.6, rng, 20_000, return_radius=True)
    q = model.quad_form(w1, w2, 0.6)
    assert float(np.max(np.abs(q - r2) / np.maximum(1.0, r2))) <= 1e-12


def test_innovation_rho_zero_gives_standard_normals_for_gaussian_generator():
    rng = np.random.default_rng(4)
    w1, w2 = sample_innovation_pair(GeneratorSpec("lognormal"), 0.0, rng, 60_000)
    assert kstest(w1, "norm").statistic < 0.008
    assert kstest(w2, "norm").statistic < 0.008
    assert abs(float(np.corrcoef(w1, w2)[0, 1])) < 0.02


def test_innovation_correlation_tracks_rho():
    rng = np.random.default_rng(5)
    w1, w2 = sample_innovation_pair(GeneratorSpec("lognormal"), 0.75, rng, 60_000)
    assert float(np.corrcoef(w1, w2)[0, 1]) == pytest.approx(0.75, abs=0.02)


def test_innovation_rho_validation():
    with pytest.raises(ValueError, match="rho"):
        sample_innovation_pair(GeneratorSpec("lognormal"), 1.0, np.random.default_rng(0), 4)


def test_simulate_series_shapes_and_positivity():
    series = simulate_series(MODEL, TRUTH, 400, np.random.default_rng(2))
    assert series.n == 400
    assert np.all(series.y1 > 0.0) and np.all(series.y2 > 0.0)
    with pytest.raises(ValueError):
        simulate_series(MODEL, TRUTH, 0, np.random.default_rng(2))
    with pytest.raises(ValueError):
        simulate_series(MODEL, TRUTH, 5, np.random.default_rng(2), burn_in=-1)


def test_simulate_burn_in_drops_prefix_of_same_stream():
    a = simulate_series(MODEL, TRUTH, 8, np.random.default_rng(7), burn_in=0)
    b = simulate_series(MODEL, TRUTH, 5, np.random.default_rng(7), burn_in=3)
    np.testing.assert_array_equal(a.y1[3:], b.y1)
    np.testing.assert_array_equal(a.y2[3:], b.y2)


def test_simulate_median_recursion_consistency():
    # medians recomputed from the simulated data must satisfy the recursion
    series = simulate_series(MODEL, TRUTH, 200, np.random.default_rng(8))
    paths = model.recurse_medians(MODEL, TRUTH, series)
    manual_le1_0 = TRUTH.omega1 + TRUTH.beta1[0] * 1.0
    assert paths.log_eta1[0] == pytest.approx(manual_le1_0, rel=1e-15)
    ll = model.loglik(MODEL, TRUTH, series)
    assert math.isfinite(ll)


def test_simulated_log_level_matches_stationary_mean():
    # E[log y] = omega/(1 - alpha) + beta E[r]/(1 - alpha) with E[r] the mean
    # duration-to-median ratio; for the gaussian generator E[r] = exp(s^2/2)
    big = simulate_series(MODEL, TRUTH, 60_000, np.random.default_rng(10), burn_in=500)
    er = math.exp(0.5 * TRUTH.sigma1 ** 2)
    target = (TRUTH.omega1 + TRUTH.beta1[0] * er) / (1.0 - TRUTH.alpha1[0])
    assert float(np.mean(np.log(big.y1))) == pytest.approx(target, abs=0.03)


def test_simulate_explosive_parameters_raise():
    bad = ParamVector(1.0, 1.0, 0.0, 0.5, (1.2,), (0.8,), 0.2, (0.7,), (0.1,))
    with pytest.raises(NumericError, match="diverged"):
        simulate_series(MODEL, bad, 3000, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# study harness

def small_design(processes=1, replications=6, n=150):
    return McDesign(
        spec=MODEL, truth=TRUTH, sample_sizes=(n,), rho_grid=(0.25,),
        replications=replications, seed=42, fit_starts=1, processes=processes,
    )


def test_mc_study_cell_statistics():
    report = run_mc_study(small_design())
    assert len(report.cells) == 1
    cell = report.cells[0]
    assert cell.n_ok + cell.n_failed == 6
    assert cell.n_ok >= 5
    stats = cell.param_stats
    assert set(stats) == set(MODEL.param_names())
    for entry in stats.values():
        # population moments satisfy the decomposition exactly
        assert entry["rmse"] ** 2 == pytest.approx(
            entry["bias"] ** 2 + entry["variance"], abs=1e-10
        )
    # gaussian-generator fits pin the mean standardized quadratic form at 2
    assert cell.residual_stats["mean"] == pytest.approx(2.0, abs=1e-5)
    assert 0.5 < cell.residual_stats["sd"] < 4.0


def test_mc_study_parallel_matches_serial():
    serial = run_mc_study(small_design(processes=1, replications=4, n=100))
    parallel = run_mc_study(small_design(processes=2, replications=4, n=100))
    a, b = serial.cells[0], parallel.cells[0]
    assert a.param_stats == b.param_stats
    assert a.residual_stats == b.residual_stats


def test_mc_report_rows_layout():
    report = run_mc_study(small_design(replications=4, n=100))
    rows = report.rows()
    assert len(rows) == 9
    n, rho, name = rows[0][:3]
    assert (n, rho) == (100, 0.25)
    assert name == "sigma1"
    assert all(len(r) == 9 for r in rows)


def test_mc_default_study_shape():
    design = McDesign.default_study(replications=2, sample_sizes=(100,), rho_grid=(0.1, 0.5))
    assert design.spec.generator.family == "lognormal"
    assert design.truth.alpha1 == (0.7,)
    assert design.truth.beta1 == (0.1,)
    assert design.truth.omega1 == 0.2
    assert design.rho_grid == (0.1, 0.5)
