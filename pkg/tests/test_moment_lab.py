import itertools
import math

import numpy as np
import pytest

from disclab import moment_lab
from disclab.coulomb_mcmc import ChainConfig
from disclab.errors import BudgetExceededError, DomainError, NumericalError, ZeroHitError
from disclab.moment_lab import (
    InstanceResult,
    _log_binomials,
    binomial_entropy_bounds,
    estimate_Gd,
    estimate_prob_opnorm,
    exact_instance,
    first_moment_check,
    gaussian_laplace_limit,
    gray_signings,
    laplace_conditions,
    laplace_sum,
    log_laplace_sum,
    overlap_ratio,
    phase_empirics,
    second_moment_ratio_bruteforce,
    signing_from_code,
    variance_bound_check,
)
from disclab.randmat_core import RngStream, Signing, margin, op_norm, power_iteration, sample_goe


def _family(n, d, seed=0):
    gen = RngStream(seed=seed).generator()
    return [sample_goe(d, gen) for _ in range(n)]


class TestGrayCode:
    def test_single_matrix(self):
        assert list(gray_signings(1)) == [(0, -1)]

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_visits_every_canonical_signing_once(self, n):
        codes = [code for code, _ in gray_signings(n)]
        assert sorted(codes) == list(range(1 << (n - 1)))

    def test_consecutive_codes_differ_in_flipped_bit(self):
        pairs = list(gray_signings(8))
        for (prev, _), (code, bit) in zip(pairs, pairs[1:]):
            assert prev ^ code == 1 << bit

    def test_first_sign_is_plus(self):
        assert signing_from_code(0b101, 4) == Signing([1, -1, 1, -1])

    def test_domain(self):
        with pytest.raises(DomainError):
            list(gray_signings(0))


class TestExactInstance:
    def test_matches_direct_enumeration(self):
        family = _family(8, 3, seed=1)
        grid = [0.5, 0.8, 1.1, 1.4, 2.0]
        result = exact_instance(family, grid, chunk=16)
        margins = [margin(family, Signing(e)) for e in itertools.product([1, -1], repeat=8)]
        assert result.counts == [sum(m <= k for m in margins) for k in grid]
        assert result.disc == pytest.approx(min(margins), rel=1e-12)
        assert margin(family, Signing(result.argmin)) == pytest.approx(result.disc, rel=1e-12)

    def test_chunking_and_workers_do_not_matter(self):
        family = _family(10, 3, seed=2)
        grid = [0.6, 1.0, 1.5]
        base = exact_instance(family, grid, workers=1, chunk=7)
        assert exact_instance(family, grid, workers=3, chunk=7) == base
        for chunk in (1, 64):
            other = exact_instance(family, grid, chunk=chunk)
            assert other.counts == base.counts
            assert other.disc == pytest.approx(base.disc, rel=1e-12)

    def test_duplicated_pair_has_zero_discrepancy(self):
        w = sample_goe(4, RngStream(seed=3))
        result = exact_instance([w, w], [1e-12, 1.0])
        assert result.disc == 0.0
        assert result.argmin == [1, -1]
        assert result.counts[0] == 2

    def test_single_matrix(self):
        w = sample_goe(5, RngStream(seed=4))
        norm = op_norm(w)
        result = exact_instance([w], [norm * (1 - 1e-9), norm * (1 + 1e-9)])
        assert result.counts == [0, 2]
        assert result.disc == pytest.approx(norm)

    def test_counts_even_and_monotone(self):
        result = exact_instance(_family(9, 4, seed=5), np.linspace(0.2, 3.0, 15))
        assert all(c % 2 == 0 for c in result.counts)
        assert result.counts == sorted(result.counts)
        assert result.counts[-1] <= 2**9

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            exact_instance(_family(27, 2), [1.0])

    def test_power_iteration_path_matches_eigensolve(self):
        family = _family(10, 4, seed=6)
        grid = [0.5, 1.0, 1.5, 2.5]
        full = exact_instance(family, grid, chunk=64)
        fast = exact_instance(family, grid, chunk=64, fast=True, workers=2)
        assert fast.counts == full.counts
        assert fast.disc == pytest.approx(full.disc, rel=1e-5)
        assert fast.argmin == full.argmin

    def test_power_iteration_cross_check(self, monkeypatch):
        def biased(a, v, tol=1e-10, max_iter=20_000):
            norm, v = power_iteration(a, v, tol, max_iter)
            return norm * 1.01, v

        monkeypatch.setattr(moment_lab, "power_iteration", biased)
        with pytest.raises(NumericalError):
            exact_instance(_family(6, 3, seed=7), [1.0], fast=True)

    def test_grid_must_ascend(self):
        with pytest.raises(DomainError):
            exact_instance(_family(3, 2), [1.0, 0.5])

    def test_result_validation(self):
        with pytest.raises(ValueError):
            InstanceResult(n=2, d=2, kappa_grid=[1.0, 2.0], counts=[4, 2], disc=0.1, argmin=[1, 1])


class TestProbOpnorm:
    def test_certain_event(self):
        est = estimate_prob_opnorm(3.0, 100, 200, RngStream(seed=1))
        assert est.mean == 1.0 and est.stderr == 0.0

    def test_near_edge_has_hits(self):
        est = estimate_prob_opnorm(1.9, 8, 100_000, RngStream(seed=2))
        assert est.mean * est.n_samples >= 100

    def test_zero_hits_are_flagged(self, caplog):
        est = estimate_prob_opnorm(0.5, 10, 1000, RngStream(seed=3))
        assert est.zero_hit and est.mean == 0.0
        assert est.upper_bound_95 == pytest.approx(1.0 - 0.05 ** (1 / 1000))
        assert "too rare" in caplog.text

    def test_independent_of_workers(self):
        a = estimate_prob_opnorm(1.6, 6, 20_000, RngStream(seed=4), workers=1, chunk=1000)
        b = estimate_prob_opnorm(1.6, 6, 20_000, RngStream(seed=4), workers=4, chunk=1000)
        assert a == b

    def test_domain(self):
        with pytest.raises(DomainError):
            estimate_prob_opnorm(0.0, 4, 100, RngStream(seed=1))


class TestFirstMoment:
    def test_small_instance(self):
        report = first_moment_check(1.8, 6, 4, 100, RngStream(seed=11), n_samples=20_000)
        assert report.passed
        assert report.estimates["exact_mean_Z"].mean > 0.0

    @pytest.mark.slow
    def test_reference_instance(self):
        report = first_moment_check(1.8, 10, 6, 200, RngStream(seed=12), n_samples=100_000, workers=4)
        assert report.passed


class TestOverlap:
    def test_zero_overlap_is_near_zero(self):
        est = estimate_Gd(0.0, 1.8, 10, 6, 20_000, RngStream(seed=21))
        assert abs(est.mean) <= 4.0 * est.stderr

    def test_even_in_q(self):
        a = estimate_Gd(0.5, 1.8, 10, 6, 20_000, RngStream(seed=22))
        b = estimate_Gd(-0.5, 1.8, 10, 6, 20_000, RngStream(seed=23))
        assert abs(a.mean - b.mean) <= 4.0 * math.hypot(a.stderr, b.stderr)

    def test_zero_hits_raise(self):
        with pytest.raises(ZeroHitError):
            estimate_Gd(0.3, 0.3, 4, 10, 200, RngStream(seed=24))

    def test_overlap_domain(self):
        with pytest.raises(DomainError):
            estimate_Gd(1.0, 1.8, 4, 4, 100, RngStream(seed=25))

    def test_bruteforce_ratio_is_one_when_every_signing_works(self):
        est = second_moment_ratio_bruteforce(10.0, 4, 4, 20, RngStream(seed=26))
        assert est.mean == pytest.approx(1.0) and est.stderr == pytest.approx(0.0, abs=1e-12)

    def test_bruteforce_ratio_at_least_one(self):
        est = second_moment_ratio_bruteforce(1.8, 8, 4, 40, RngStream(seed=27))
        assert est.mean >= 1.0

    @pytest.mark.slow
    def test_two_routes_agree(self):
        brute = second_moment_ratio_bruteforce(1.8, 10, 6, 400, RngStream(seed=28), workers=4)
        rebuilt = overlap_ratio(1.8, 10, 6, 100_000, RngStream(seed=29), workers=4)
        assert abs(brute.mean - rebuilt.mean) <= 3.0 * math.hypot(brute.stderr, rebuilt.stderr)


class TestLaplace:
    @pytest.mark.parametrize("n", [10, 100, 1000, 10_000])
    def test_flat_exponent_sums_to_one(self, n):
        assert laplace_sum(lambda q: np.zeros_like(q), n) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("n", [7, 200, 3000])
    def test_log_binomials_match_exact_integers(self, n):
        exact = [math.log(math.comb(n, l)) for l in range(n + 1)]
        np.testing.assert_allclose(_log_binomials(n), exact, rtol=1e-13, atol=1e-12)

    def test_gaussian_limit(self):
        value = laplace_sum(lambda q: 0.25 * q * q, 4000)
        assert value == pytest.approx(math.sqrt(2.0), rel=0.02)
        assert gaussian_laplace_limit(0.5) == pytest.approx(math.sqrt(2.0))

    def test_small_n_exact(self):
        n, c = 5, 0.5
        expected = sum(math.comb(n, l) * math.exp(n * c * (2 * l / n - 1) ** 2 / 2) for l in range(n + 1)) / 2**n
        assert laplace_sum(lambda q: 0.5 * c * q * q, n) == pytest.approx(expected, rel=1e-12)

    def test_large_exponents_stay_finite(self):
        assert math.isfinite(log_laplace_sum(lambda q: np.full_like(q, 10.0), 1000))
        assert log_laplace_sum(lambda q: np.full_like(q, -10.0), 1000) == pytest.approx(-10_000.0, rel=1e-12)

    def test_nan_rejected(self):
        with pytest.raises(NumericalError):
            log_laplace_sum(lambda q: np.full_like(q, np.nan), 10)

    @pytest.mark.parametrize("n", [1, 10, 100, 1000])
    def test_entropy_bounds(self, n):
        assert all(binomial_entropy_bounds(n))

    def test_conditions_hold_below_unit_curvature(self):
        cond = laplace_conditions(lambda q: 0.25 * q * q, 0.2)
        assert cond.satisfied
        assert cond.curvature == pytest.approx(0.5, rel=1e-6)

    def test_conditions_fail_above_unit_curvature(self):
        assert not laplace_conditions(lambda q: q * q, 0.2).satisfied

    def test_gaussian_limit_domain(self):
        with pytest.raises(DomainError):
            gaussian_laplace_limit(1.0)


class TestVarianceBound:
    def test_bounds_hold(self):
        cfg = ChainConfig(seed=31, burn_in=1000, sweeps=2000, thin=2, chains=2)
        report = variance_bound_check(1.0, 8, cfg)
        assert report.passed
        assert {row["polynomial"] for row in report.rows} == {"X", "X2", "XY"}

    @pytest.mark.slow
    def test_bounds_hold_at_moderate_d(self):
        report = variance_bound_check(1.0, 100, ChainConfig(seed=32), workers=4)
        assert report.passed


class TestPhaseEmpirics:
    def test_loose_margin_is_always_satisfiable(self):
        report = phase_empirics(4.0, 0.5, [2, 3], 20, RngStream(seed=41))
        assert [row["n"] for row in report.rows] == [2, 4]
        assert all(row["sat_frequency"] == 1.0 for row in report.rows)
        assert any("inactive" in note for note in report.notes)

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            phase_empirics(4.0, 2.0, [4], 5, RngStream(seed=42))
