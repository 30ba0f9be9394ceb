import math

import numpy as np
import pytest
from scipy.integrate import quad

from disclab.constrained_spectra import (
    QuadratureContext,
    cdf_kappa,
    constrained_density,
    energy_I,
    energy_closed_form,
    entropy_sigma,
    log_potential,
    log_potential_closed_form,
    pv_hilbert,
    rho_kappa,
    second_moment_rho,
    semicircle_density,
    stieltjes_kappa,
    tricomi_constant,
    tricomi_density,
    uniform_density,
)
from disclab.errors import DomainError

KAPPAS = [0.5, 1.0, 1.5, 2.0]


def _semicircle(x):
    return math.sqrt(4.0 - x * x) / (2.0 * math.pi)


class TestDensity:
    def test_value_at_origin(self):
        assert rho_kappa(1.0, 0.0) == pytest.approx(5.0 / (4.0 * math.pi), rel=1e-14)

    @pytest.mark.parametrize("x", [0.0, 0.5, 1.0, 1.9])
    def test_kappa_two_is_semicircle(self, x):
        assert rho_kappa(2.0, x) == pytest.approx(_semicircle(x), rel=1e-12)

    def test_symmetric(self):
        x = np.linspace(-1.4, 1.4, 29)
        np.testing.assert_allclose(rho_kappa(1.5, x), rho_kappa(1.5, -x), rtol=0, atol=0)

    def test_positive_interior(self):
        assert np.all(rho_kappa(2.0, np.linspace(-1.999, 1.999, 101)) > 0.0)

    @pytest.mark.parametrize("x", [1.0, -1.0, 1.2])
    def test_outside_support(self, x):
        with pytest.raises(DomainError):
            rho_kappa(1.0, x)

    @pytest.mark.parametrize("kappa", [0.0, 2.5])
    def test_margin_domain(self, kappa):
        with pytest.raises(DomainError):
            rho_kappa(kappa, 0.0)

    @pytest.mark.parametrize("kappa", KAPPAS)
    def test_normalized(self, kappa):
        total = constrained_density(kappa).expectation(np.ones_like)
        assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("kappa", KAPPAS)
    def test_second_moment(self, kappa):
        assert constrained_density(kappa).moment(2) == pytest.approx(second_moment_rho(kappa), abs=1e-8)

    def test_second_moment_against_adaptive_quadrature(self):
        kappa = 1.3
        value, _ = quad(
            lambda y: y * y * (4.0 + kappa**2 - 2.0 * y * y) / (4.0 * math.pi),
            -kappa,
            kappa,
            weight="alg",
            wvar=(-0.5, -0.5),
        )
        assert second_moment_rho(kappa) == pytest.approx(value, rel=1e-10)

    def test_semicircle_second_moment_is_one(self):
        assert second_moment_rho(2.0) == 1.0
        assert semicircle_density().moment(2) == pytest.approx(1.0, abs=1e-10)

    def test_normalization_converges_with_nodes(self):
        density = constrained_density(1.7)
        errors = [
            abs(density.expectation(np.ones_like, QuadratureContext(nodes=n)) - 1.0) for n in (8, 16, 32, 64)
        ]
        assert all(b <= a + 1e-14 for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-13


class TestCdf:
    def test_endpoints(self):
        assert cdf_kappa(1.2, -1.2) == pytest.approx(0.0, abs=1e-15)
        assert cdf_kappa(1.2, 1.2) == pytest.approx(1.0, abs=1e-15)
        assert cdf_kappa(1.2, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_clipped_outside(self):
        assert cdf_kappa(1.0, -5.0) == 0.0
        assert cdf_kappa(1.0, 5.0) == 1.0

    @pytest.mark.parametrize("x", [-0.9, 0.0, 0.4, 0.95])
    def test_derivative_is_density(self, x):
        h = 1e-6
        slope = (cdf_kappa(1.0, x + h) - cdf_kappa(1.0, x - h)) / (2.0 * h)
        assert slope == pytest.approx(rho_kappa(1.0, x), rel=1e-6)


class TestStieltjes:
    def test_semicircle_closed_form(self):
        z = 3j
        expected = (z - 1j * math.sqrt(13.0)) / 2.0
        assert stieltjes_kappa(2.0, z) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("z", [1.0 + 0.5j, -0.3 + 0.01j, 4.0 + 2.0j])
    def test_against_quadrature(self, z):
        kappa = 1.5

        def part(fn):
            value, _ = quad(
                lambda y: fn((4.0 + kappa**2 - 2.0 * y * y) / (4.0 * math.pi) / (z - y)),
                -kappa,
                kappa,
                weight="alg",
                wvar=(-0.5, -0.5),
                limit=400,
            )
            return value

        expected = complex(part(lambda v: v.real), part(lambda v: v.imag))
        assert abs(stieltjes_kappa(kappa, z) - expected) <= 1e-6

    @pytest.mark.parametrize("z", [1e4j, 7071.0 + 7071.0j, -7071.0 + 7071.0j])
    def test_tail_is_inverse_z(self, z):
        assert abs(stieltjes_kappa(1.0, z) - 1.0 / z) <= 1e-6

    def test_imaginary_part_non_positive(self):
        for z in [0.2 + 0.1j, -1.7 + 0.3j, 5.0 + 1e-3j]:
            assert stieltjes_kappa(1.8, z).imag <= 0.0

    @pytest.mark.parametrize("x", [-0.8, 0.0, 0.6])
    def test_inversion_recovers_density(self, x):
        g = stieltjes_kappa(1.0, complex(x, 1e-6))
        assert -g.imag / math.pi == pytest.approx(rho_kappa(1.0, x), rel=1e-3)

    @pytest.mark.parametrize("z", [1.0, 1.0 - 0.5j])
    def test_lower_half_plane_rejected(self, z):
        with pytest.raises(DomainError):
            stieltjes_kappa(1.0, z)


class TestHilbert:
    def test_origin(self):
        assert abs(pv_hilbert(1.0, 0.0)) <= 1e-12

    @pytest.mark.parametrize("kappa", KAPPAS)
    def test_equilibrium_condition(self, kappa):
        for x in np.linspace(-0.95 * kappa, 0.95 * kappa, 20):
            assert pv_hilbert(kappa, float(x)) == pytest.approx(x / 2.0, abs=1e-6)

    def test_node_on_pole(self):
        ctx = QuadratureContext(nodes=41)
        theta, _ = ctx.theta_rule()
        x = 1.5 * math.sin(float(theta[25]))
        assert pv_hilbert(1.5, x, ctx) == pytest.approx(x / 2.0, abs=1e-6)

    @pytest.mark.parametrize("x", [-1.2, 0.3, 1.0])
    def test_semicircle_against_cauchy_weight(self, x):
        value, _ = quad(_semicircle, -2.0, 2.0, weight="cauchy", wvar=x)
        assert -value == pytest.approx(x / 2.0, abs=1e-6)
        assert pv_hilbert(2.0, x) == pytest.approx(-value, abs=1e-6)

    @pytest.mark.parametrize("x", [1.0, -1.0])
    def test_support_edge_rejected(self, x):
        with pytest.raises(DomainError):
            pv_hilbert(1.0, x)


class TestLogEnergy:
    def test_semicircle_entropy(self):
        assert entropy_sigma(semicircle_density()) == pytest.approx(-0.25, abs=1e-4)

    def test_constrained_two_matches_semicircle(self):
        assert entropy_sigma(constrained_density(2.0)) == pytest.approx(-0.25, abs=1e-4)

    @pytest.mark.parametrize("a", [0.5, 1.0, 3.0])
    def test_uniform_entropy(self, a):
        assert entropy_sigma(uniform_density(a)) == pytest.approx(math.log(2.0 * a) - 1.5, abs=1e-4)

    def test_log_scaling(self):
        diff = entropy_sigma(uniform_density(2.0)) - entropy_sigma(uniform_density(1.0))
        assert diff == pytest.approx(math.log(2.0), abs=1e-6)

    def test_constraint_lowers_entropy(self):
        values = [entropy_sigma(constrained_density(k)) for k in (1.0, 1.5, 2.0)]
        assert values[0] < values[1] < values[2]

    def test_uniform_rejects_bad_width(self):
        with pytest.raises(DomainError):
            uniform_density(0.0)

    def test_semicircle_energy_is_zero(self):
        assert energy_I(semicircle_density()) == pytest.approx(0.0, abs=1e-4)

    @pytest.mark.parametrize("kappa", KAPPAS)
    def test_energy_matches_closed_form(self, kappa):
        assert energy_I(constrained_density(kappa)) == pytest.approx(energy_closed_form(kappa), abs=1e-4)

    def test_energy_non_negative(self):
        for kappa in np.linspace(0.2, 2.0, 10):
            assert energy_closed_form(float(kappa)) >= 0.0


class TestTricomi:
    def test_constant_is_one(self):
        assert tricomi_constant(1.3) == pytest.approx(1.0, abs=1e-6)

    def test_value_at_origin(self):
        assert tricomi_density(1.0, 0.0) == pytest.approx(5.0 / (4.0 * math.pi), abs=1e-5)

    @pytest.mark.parametrize("kappa", [0.7, 1.3, 2.0])
    def test_reconstructs_density(self, kappa):
        for x in np.linspace(-0.9 * kappa, 0.9 * kappa, 11):
            assert tricomi_density(kappa, float(x)) == pytest.approx(rho_kappa(kappa, float(x)), abs=1e-5)


class TestLogPotential:
    @pytest.mark.parametrize("kappa", [0.8, 1.5, 2.0])
    def test_constant_on_support_up_to_quadratic(self, kappa):
        for x in np.linspace(-0.9 * kappa, 0.9 * kappa, 7):
            assert log_potential(kappa, float(x)) == pytest.approx(
                log_potential_closed_form(kappa, float(x)), abs=1e-7
            )

    def test_semicircle_origin(self):
        assert log_potential(2.0, 0.0) == pytest.approx(-0.5, abs=1e-8)
