import numpy as np
import pytest

from patrolsim.ingest import Neighborhood
from patrolsim.simulate import DetectionOutcome, MonthRunResult
from patrolsim.stats import (CORRELATION_PREDICTORS, NeighborhoodObservation,
                             RankDeficientError, build_neighborhood_dataset,
                             correlate, correlations_csv, ols_fit, pearson,
                             regression_csv, regression_design,
                             significance_stars, spearman, student_t_cdf)


def gaussian_elimination_ols(x, y):
    """Independent normal-equations oracle: solve (X'X) b = X'y by
    Gauss-Jordan with partial pivoting, no numpy.linalg."""
    a = (x.T @ x).tolist()
    rhs = (x.T @ y).tolist()
    k = len(rhs)
    for col in range(k):
        pivot = max(range(col, k), key=lambda r: abs(a[r][col]))
        a[col], a[pivot] = a[pivot], a[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        scale = a[col][col]
        a[col] = [v / scale for v in a[col]]
        rhs[col] /= scale
        for row in range(k):
            if row == col:
                continue
            factor = a[row][col]
            a[row] = [v - factor * w for v, w in zip(a[row], a[col])]
            rhs[row] -= factor * rhs[col]
    return np.array(rhs)


class TestStudentTCdf:
    def test_zero_is_half(self):
        for dof in (1, 5, 100):
            assert student_t_cdf(0.0, dof) == 0.5

    def test_cauchy_quartile(self):
        # dof=1 is Cauchy: CDF(1) = 1/2 + arctan(1)/pi = 0.75.
        assert student_t_cdf(1.0, 1) == pytest.approx(0.75, abs=1e-10)

    def test_cauchy_closed_form(self):
        for t in (-3.0, -0.5, 0.7, 2.0, 10.0):
            expected = 0.5 + np.arctan(t) / np.pi
            assert student_t_cdf(t, 1) == pytest.approx(expected, abs=1e-12)

    def test_critical_value_dof_10(self):
        assert student_t_cdf(2.228, 10) == pytest.approx(0.975, abs=1e-3)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            t = float(rng.uniform(-5, 5))
            dof = int(rng.integers(1, 50))
            assert student_t_cdf(t, dof) + student_t_cdf(-t, dof) == \
                pytest.approx(1.0, abs=1e-10)

    def test_normal_limit(self):
        from math import erf, sqrt
        for t in (-2.0, -1.0, 0.5, 1.96):
            normal = 0.5 * (1 + erf(t / sqrt(2)))
            assert student_t_cdf(t, 1000) == pytest.approx(normal, abs=1e-3)

    def test_monotone(self):
        ts = np.linspace(-4, 4, 41)
        vals = [student_t_cdf(float(t), 7) for t in ts]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_bad_dof(self):
        with pytest.raises(ValueError):
            student_t_cdf(1.0, 0)


class TestOls:
    def test_exact_linear_fit(self):
        rng = np.random.default_rng(1)
        x = np.column_stack([np.ones(20), rng.standard_normal(20),
                             rng.standard_normal(20), rng.standard_normal(20)])
        beta_true = np.array([1.0, 2.0, 0.0, 0.0])
        y = x @ beta_true
        fit = ols_fit(x, y)
        assert np.allclose(fit.coefficients, beta_true, atol=1e-10)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_matches_gaussian_elimination_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(10, 60))
            x = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
            y = rng.standard_normal(n)
            fit = ols_fit(x, y)
            oracle = gaussian_elimination_ols(x, y)
            assert np.max(np.abs(fit.coefficients - oracle)) < 1e-8

    def test_monte_carlo_coefficient_recovery(self):
        rng = np.random.default_rng(3)
        n = 300
        beta_true = np.array([0.07, -0.10, 0.0, 0.09])
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
        y = x @ beta_true + rng.normal(0, 0.05, n)
        fit = ols_fit(x, y)
        for b, se, truth in zip(fit.coefficients, fit.std_errors, beta_true):
            assert abs(b - truth) < 3 * se

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(4)
        x = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
        y = rng.standard_normal(40)
        fit = ols_fit(x, y)
        resid = y - x @ fit.coefficients
        assert np.max(np.abs(x.T @ resid)) < 1e-8

    def test_dof(self):
        rng = np.random.default_rng(5)
        x = np.column_stack([np.ones(25), rng.standard_normal((25, 3))])
        fit = ols_fit(x, rng.standard_normal(25))
        assert fit.dof == 21

    def test_duplicate_column_fatal(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal(20)
        x = np.column_stack([np.ones(20), z, 2.0 * z])
        with pytest.raises(RankDeficientError) as err:
            ols_fit(x, rng.standard_normal(20))
        assert err.value.column == 2

    def test_zero_column_fatal(self):
        x = np.column_stack([np.ones(10), np.zeros(10)])
        with pytest.raises(RankDeficientError) as err:
            ols_fit(x, np.arange(10.0))
        assert err.value.column == 1

    def test_linear_combination_fatal(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((2, 15))
        x = np.column_stack([np.ones(15), a, b, a + b])
        with pytest.raises(RankDeficientError) as err:
            ols_fit(x, rng.standard_normal(15))
        assert err.value.column == 3

    def test_too_few_observations_fatal(self):
        with pytest.raises(ValueError):
            ols_fit(np.ones((3, 4)), np.zeros(3))

    def test_se_against_textbook_formula(self):
        rng = np.random.default_rng(8)
        n = 50
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        y = rng.standard_normal(n)
        fit = ols_fit(x, y)
        resid = y - x @ fit.coefficients
        sigma2 = resid @ resid / (n - 3)
        cov = sigma2 * np.linalg.inv(x.T @ x)
        assert np.allclose(fit.std_errors, np.sqrt(np.diag(cov)), atol=1e-10)


class TestCorrelations:
    def test_perfect_positive(self):
        x = np.arange(10.0)
        r, p = pearson(x, 3 * x + 1)
        assert r == pytest.approx(1.0)
        assert p == 0.0

    def test_affine_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(30)
        y = rng.standard_normal(30)
        r1, p1 = pearson(x, y)
        r2, p2 = pearson(5.0 * x - 2.0, 0.1 * y + 7.0)
        assert r1 == pytest.approx(r2, abs=1e-12)
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_sign_flip(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal(30)
        y = rng.standard_normal(30)
        r1, _ = pearson(x, y)
        r2, _ = pearson(x, -y)
        assert r1 == pytest.approx(-r2, abs=1e-12)

    def test_spearman_monotone_invariance(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(40)
        y = rng.standard_normal(40)
        rho1, p1 = spearman(x, y)
        rho2, p2 = spearman(np.exp(x), y ** 3)
        assert rho1 == pytest.approx(rho2, abs=1e-12)
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_cubic_relationship(self):
        x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        y = x ** 3
        rho, _ = spearman(x, y)
        r, _ = pearson(x, y)
        assert rho == pytest.approx(1.0)
        assert r == pytest.approx(34.0 / np.sqrt(1300.0), abs=1e-12)

    def test_ties_use_mean_ranks(self):
        x = np.array([1.0, 2.0, 2.0, 3.0])
        y = np.array([10.0, 20.0, 30.0, 40.0])
        rho, _ = spearman(x, y)
        # Hand computation with ranks (1, 2.5, 2.5, 4).
        assert rho == pytest.approx(0.9486832980505138, abs=1e-12)

    def test_constant_vector_fatal(self):
        with pytest.raises(ValueError):
            pearson(np.ones(5), np.arange(5.0))

    def test_too_short_fatal(self):
        with pytest.raises(ValueError):
            pearson(np.array([1.0, 2.0]), np.array([3.0, 4.0]))

    def test_pearson_p_matches_t_formula(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(25)
        y = 0.4 * x + rng.standard_normal(25)
        r, p = pearson(x, y)
        t = r * np.sqrt(23 / (1 - r * r))
        assert p == pytest.approx(2 * student_t_cdf(-abs(t), 23), abs=1e-14)

    def test_correlate_bundles_both(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal(20)
        y = rng.standard_normal(20)
        c = correlate(x, y)
        assert (c.pearson_r, c.pearson_p) == pearson(x, y)
        assert (c.spearman_rho, c.spearman_p) == spearman(x, y)


def make_nb(nb_id, pct_black, income=50_000.0, poverty=0.2):
    from patrolsim.geodata import LatLon
    from patrolsim.ingest import Polygon
    poly = Polygon([LatLon(39.20, -76.71), LatLon(39.37, -76.71),
                    LatLon(39.37, -76.53), LatLon(39.20, -76.53)])
    return Neighborhood(id=nb_id, name=nb_id, polygons=(poly,),
                        pct_black=pct_black, pct_white=1.0 - pct_black,
                        pct_neither=0.0, median_income=income,
                        poverty_rate=poverty)


def month_result(month, outcomes, city="B", year=2019, mode="detected"):
    return MonthRunResult(city=city, year=year, month=month, mode=mode,
                          outcomes=outcomes, patrol_points=[])


def out(nb_id, detected, prob=0.5):
    return DetectionOutcome(incident_id="x", neighborhood_id=nb_id,
                            group="Black", k_officers=1,
                            detection_prob=prob, detected=detected)


class TestBuildDataset:
    NBS = {"A": make_nb("A", 0.9), "B": make_nb("B", 0.1)}

    def test_pooling_across_months(self):
        results = [month_result(2, [out("A", True), out("A", False)]),
                   month_result(3, [out("A", True), out("A", True)])]
        obs, excluded = build_neighborhood_dataset(results, self.NBS)
        assert excluded == 0
        assert len(obs) == 1
        assert obs[0].detection_rate == pytest.approx(0.75)
        assert obs[0].pct_black == pytest.approx(0.9)

    def test_unknown_neighborhood_excluded(self):
        results = [month_result(2, [out("A", True), out("ghost", True)])]
        obs, excluded = build_neighborhood_dataset(results, self.NBS)
        assert len(obs) == 1
        assert excluded == 1

    def test_expected_mode(self):
        results = [month_result(2, [out("A", False, prob=0.2),
                                    out("A", False, prob=0.6)])]
        obs, _ = build_neighborhood_dataset(results, self.NBS, expected=True)
        assert obs[0].detection_rate == pytest.approx(0.4)

    def test_separate_cells_stay_separate(self):
        results = [month_result(2, [out("A", True)], mode="detected"),
                   month_result(2, [out("A", False)], mode="reported")]
        obs, _ = build_neighborhood_dataset(results, self.NBS)
        assert len(obs) == 2
        assert {o.mode for o in obs} == {"detected", "reported"}

    def test_design_matrix_shape(self):
        results = [month_result(2, [out("A", True), out("B", False)])]
        obs, _ = build_neighborhood_dataset(results, self.NBS)
        x, y = regression_design(obs)
        assert x.shape == (2, 4)
        assert np.array_equal(x[:, 0], np.ones(2))
        assert y.shape == (2,)


class TestReports:
    def test_stars(self):
        assert significance_stars(0.0001) == "***"
        assert significance_stars(0.005) == "**"
        assert significance_stars(0.03) == "*"
        assert significance_stars(0.2) == ""

    def test_regression_csv_shape(self):
        rng = np.random.default_rng(14)
        x = np.column_stack([np.ones(30), rng.standard_normal((30, 3))])
        fit = ols_fit(x, rng.standard_normal(30))
        lines = regression_csv(fit).strip().split("\n")
        assert len(lines) == 5
        assert lines[0] == "variable,coefficient,se,t,p,stars"
        assert lines[1].startswith("Intercept,")

    def test_correlations_csv_shape(self):
        rng = np.random.default_rng(15)
        obs = [NeighborhoodObservation(
            neighborhood_id=f"n{i}", city="B", year=2019, mode="detected",
            detection_rate=float(rng.uniform(0, 1)),
            pct_black=float(rng.uniform(0, 1)),
            pct_white=float(rng.uniform(0, 1)),
            median_income=float(rng.uniform(20_000, 90_000)),
            poverty_rate=float(rng.uniform(0, 0.4))) for i in range(12)]
        lines = correlations_csv(obs).strip().split("\n")
        assert len(lines) == 1 + len(CORRELATION_PREDICTORS)
        for line in lines[1:]:
            fields = line.split(",")
            assert len(fields) == 5
            assert -1.0 <= float(fields[1]) <= 1.0
