import math

import numpy as np
import pytest
from scipy.stats import norm

from multicurve.affine import (
    AffineJumps,
    AffineModelSpec,
    DampingOutOfDomain,
    QuadratureNonConvergence,
    RiccatiExplosion,
    affine_bond,
    affine_spread,
    affine_transform,
    caplet_price_fourier,
    shifted_curves,
    simulate_affine,
    solve_riccati,
)
from multicurve.products import caplet_price_mc, fra_value
from multicurve.termstructure import DiscountCurve, SpreadTermStructure, Tenor

T3M = Tenor.parse("3M")
T6M = Tenor.parse("6M")

VAS_KAPPA, VAS_THETA, VAS_SIGMA, VAS_X0 = 0.5, 0.03, 0.01, 0.02
CIR_KAPPA, CIR_THETA, CIR_SIGMA, CIR_X0 = 0.8, 0.04, 0.25, 0.03


def vasicek_bond(T, kappa=VAS_KAPPA, theta=VAS_THETA, sigma=VAS_SIGMA, x0=VAS_X0):
    C = (1.0 - math.exp(-kappa * T)) / kappa
    A = (theta - sigma ** 2 / (2 * kappa ** 2)) * (C - T) - sigma ** 2 * C ** 2 / (4 * kappa)
    return math.exp(A - C * x0)


def cir_bond(T, kappa=CIR_KAPPA, theta=CIR_THETA, sigma=CIR_SIGMA, x0=CIR_X0):
    gamma = math.sqrt(kappa ** 2 + 2 * sigma ** 2)
    den = (gamma + kappa) * (math.expm1(gamma * T)) + 2 * gamma
    C = 2 * math.expm1(gamma * T) / den
    A = (2 * gamma * math.exp((gamma + kappa) * T / 2) / den) ** (2 * kappa * theta / sigma ** 2)
    return A * math.exp(-C * x0)


@pytest.fixture(scope="module")
def vasicek_spec():
    """Gaussian short rate plus one diffusive spread factor."""
    return AffineModelSpec(
        pos_dims=0,
        real_dims=1,
        drift_const=[VAS_KAPPA * VAS_THETA],
        drift_linear=[[-VAS_KAPPA]],
        diffusion_const=[[VAS_SIGMA ** 2]],
        rate_const=0.0,
        rate_linear=[1.0],
        n_spread=1,
        u_vectors=[[1.0]],
        tenors=(T6M,),
        y_mode="diffusive",
        y_drift_const=[0.001],
        y_drift_linear=[[0.1]],
        y_diff_const=[[0.008 ** 2]],
        x0=[VAS_X0],
        y0=[0.004],
    )


@pytest.fixture(scope="module")
def cir_spec():
    return AffineModelSpec(
        pos_dims=1,
        real_dims=0,
        drift_const=[CIR_KAPPA * CIR_THETA],
        drift_linear=[[-CIR_KAPPA]],
        diffusion_const=[[0.0]],
        diffusion_linear=[[[CIR_SIGMA ** 2]]],
        rate_const=0.0,
        rate_linear=[1.0],
        x0=[CIR_X0],
    )


@pytest.fixture(scope="module")
def integrated_spec():
    """Square-root driver feeding two ordered exposure vectors through one
    integrated (hence nonnegative, nondecreasing) spread factor."""
    return AffineModelSpec(
        pos_dims=1,
        real_dims=0,
        drift_const=[CIR_KAPPA * CIR_THETA],
        drift_linear=[[-CIR_KAPPA]],
        diffusion_const=[[0.0]],
        diffusion_linear=[[[CIR_SIGMA ** 2]]],
        rate_const=0.0,
        rate_linear=[1.0],
        n_spread=1,
        u_vectors=[[0.4], [1.1]],
        tenors=(T3M, T6M),
        y_mode="integrated",
        y_drift_const=[0.0],
        y_drift_linear=[[0.12]],
        x0=[CIR_X0],
        y0=[0.002],
    )


def gaussian_caplet_closed_form(T, strike, delta=0.5):
    """Exact caplet price for the vasicek_spec fixture.

    The short rate is an OU process, the spread factor collects a constant
    plus a multiple of the integrated rate driver plus independent Brownian
    noise, so the discount weight and the payoff log are jointly Gaussian
    with moments available from the OU covariance triangle.
    """
    kap, th, sig, x0 = VAS_KAPPA, VAS_THETA, VAS_SIGMA, VAS_X0
    q0, q1, sig_y, y0 = 0.001, 0.1, 0.008, 0.004
    Cd = (1 - math.exp(-kap * delta)) / kap
    phi_b = ((th - sig ** 2 / (2 * kap ** 2)) * (Cd - delta)
             - sig ** 2 * Cd ** 2 / (4 * kap))
    psi_b = -Cd
    C = (1 - math.exp(-kap * T)) / kap
    C2 = (1 - math.exp(-2 * kap * T)) / (2 * kap)
    m_x = th + (x0 - th) * math.exp(-kap * T)
    m_a = th * T + (x0 - th) * C
    v_x = sig ** 2 * C2
    v_a = sig ** 2 / kap ** 2 * (T - 2 * C + C2)
    c_xa = sig ** 2 / kap * (C - C2)
    mu_w = -m_a + phi_b + psi_b * m_x
    var_w = v_a + psi_b ** 2 * v_x - 2 * psi_b * c_xa
    mu_l = y0 + q0 * T + q1 * m_a - phi_b - psi_b * m_x
    var_l = (q1 ** 2 * v_a + sig_y ** 2 * T + psi_b ** 2 * v_x
             - 2 * q1 * psi_b * c_xa)
    c_wl = -q1 * v_a + psi_b * c_xa + q1 * psi_b * c_xa - psi_b ** 2 * v_x
    kbar = 1 + delta * strike
    s_l = math.sqrt(var_l)
    d2 = (mu_l + c_wl - math.log(kbar)) / s_l
    return math.exp(mu_w + var_w / 2) * (
        math.exp(mu_l + c_wl + var_l / 2) * norm.cdf(d2 + s_l)
        - kbar * norm.cdf(d2)
    )


class TestRiccati:
    def test_zero_argument_stays_zero(self, cir_spec):
        sol = solve_riccati(cir_spec, v=[0.0], u=[], w=0.0, T=3.0)
        assert np.max(np.abs(sol.phi)) == 0.0
        assert np.max(np.abs(sol.psi)) == 0.0

    def test_initial_conditions_on_grid(self, cir_spec):
        sol = solve_riccati(cir_spec, v=[-0.3], u=[], w=1.0, T=2.0)
        assert sol.times[0] == 0.0
        assert sol.times[-1] == pytest.approx(2.0, abs=1e-14)
        assert sol.phi[0] == 0.0
        assert sol.psi[0, 0] == pytest.approx(-0.3, abs=1e-15)

    @pytest.mark.parametrize("T", [0.25, 1.0, 5.0, 10.0])
    def test_gaussian_short_rate_bond(self, vasicek_spec, T):
        price = affine_bond(vasicek_spec, [VAS_X0], T)
        assert price == pytest.approx(vasicek_bond(T), abs=1e-8)

    @pytest.mark.parametrize("T", [0.25, 1.0, 5.0, 10.0])
    def test_square_root_short_rate_bond(self, cir_spec, T):
        price = affine_bond(cir_spec, [CIR_X0], T)
        assert price == pytest.approx(cir_bond(T), abs=1e-8)

    def test_gaussian_bond_slope_closed_form(self, vasicek_spec):
        T = 4.0
        sol = solve_riccati(vasicek_spec, v=[0.0], u=[0.0], w=1.0, T=T)
        expected = -(1 - math.exp(-VAS_KAPPA * T)) / VAS_KAPPA
        assert sol.psi_terminal[0].real == pytest.approx(expected, abs=1e-10)
        assert abs(sol.psi_terminal[0].imag) < 1e-14

    def test_flow_property(self, cir_spec):
        T, s = 3.0, 1.2
        full = solve_riccati(cir_spec, v=[-0.3], u=[], w=1.0, T=T)
        head = solve_riccati(cir_spec, v=[-0.3], u=[], w=1.0, T=s)
        tail = solve_riccati(cir_spec, v=head.psi_terminal, u=[], w=1.0, T=T - s)
        assert complex(head.phi_terminal + tail.phi_terminal) == pytest.approx(
            complex(full.phi_terminal), abs=1e-8)
        assert tail.psi_terminal[0] == pytest.approx(full.psi_terminal[0], abs=1e-8)

    def test_explosion_reports_blow_up_time(self):
        spec = AffineModelSpec(
            pos_dims=1, real_dims=0,
            drift_const=[0.02], drift_linear=[[-0.1]],
            diffusion_const=[[0.0]], diffusion_linear=[[[1.0]]],
            rate_const=0.0, rate_linear=[0.0],
            x0=[0.05],
        )
        # quadratic growth dominates: explosion for v above 2 kappa / sigma^2
        with pytest.raises(RiccatiExplosion) as err:
            solve_riccati(spec, v=[3.0], u=[], w=0.0, T=10.0)
        assert 0.0 < err.value.blow_up_time <= 10.0

    def test_nonpositive_horizon_rejected(self, cir_spec):
        with pytest.raises(ValueError, match="T must be positive"):
            solve_riccati(cir_spec, v=[0.0], u=[], w=0.0, T=0.0)


class TestTransform:
    def test_unit_at_zero_argument(self, vasicek_spec):
        val = affine_transform(vasicek_spec, v=[0.0], u=[0.0], w=0.0, T=2.0)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_characteristic_function_bounded(self, vasicek_spec):
        for omega in (0.3, 2.0, 15.0):
            val = affine_transform(vasicek_spec, v=[1j * omega], u=[0.0], w=0.0, T=1.5)
            assert abs(val) <= 1.0 + 1e-12

    def test_discount_weight_equals_bond(self, cir_spec):
        T = 3.0
        val = affine_transform(cir_spec, v=[0.0], u=[], w=1.0, T=T)
        assert val.real == pytest.approx(affine_bond(cir_spec, [CIR_X0], T), rel=1e-12)
        assert abs(val.imag) < 1e-14

    def test_exponent_domain_check(self, integrated_spec):
        assert integrated_spec.verify_exponent_domain(2.0) is True
        hot = AffineModelSpec(
            pos_dims=1, real_dims=0,
            drift_const=[0.0], drift_linear=[[-2.0]],
            diffusion_const=[[0.0]], diffusion_linear=[[[1.0]]],
            rate_const=0.02, rate_linear=[0.0],
            n_spread=1, u_vectors=[[4.0]], tenors=(T6M,),
            y_mode="integrated", y_drift_linear=[[1.0]],
            x0=[0.04], y0=[0.0],
        )
        with pytest.raises(RiccatiExplosion):
            hot.verify_exponent_domain(5.0)


class TestCurves:
    def test_zero_maturity_values(self, integrated_spec):
        assert affine_bond(integrated_spec, [0.07], 0.0) == pytest.approx(1.0, abs=1e-14)
        y = [0.013]
        spot = affine_spread(integrated_spec, [0.07], y, 0.0, i=1)
        assert spot == pytest.approx(math.exp(1.1 * 0.013), rel=1e-12)

    def test_zero_exposure_spread_is_flat_one(self):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[0.0], drift_linear=[[-0.3]],
            diffusion_const=[[0.02 ** 2]],
            rate_const=0.0, rate_linear=[1.0],
            n_spread=1, u_vectors=[[0.0]], tenors=(T6M,),
            y_mode="diffusive", y_diff_const=[[0.01 ** 2]],
            x0=[0.02], y0=[0.5],
        )
        taus = np.array([0.0, 0.5, 2.0, 7.0])
        vals = affine_spread(spec, [0.02], [0.5], taus, i=0)
        np.testing.assert_allclose(vals, 1.0, atol=1e-10)

    def test_deterministic_rate_discounts_exactly(self):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[0.0], drift_linear=[[0.0]],
            diffusion_const=[[0.0]],
            rate_const=0.0, rate_linear=[1.0],
            x0=[0.03],
        )
        for T in (0.5, 2.0, 9.0):
            assert affine_bond(spec, [0.03], T) == pytest.approx(
                math.exp(-0.03 * T), rel=1e-12)

    def test_spread_against_simulation(self, integrated_spec):
        T = 1.0
        paths = simulate_affine(integrated_spec, T, 1 / 200, 50_000, 31, [T])
        target = (affine_spread(integrated_spec, [CIR_X0], [0.002], T, i=1)
                  * affine_bond(integrated_spec, [CIR_X0], T))
        sample = paths.spread(T6M, T) / paths.numeraire
        se = sample.std(ddof=1) / math.sqrt(len(sample))
        assert abs(sample.mean() - target) <= 3.0 * se


class TestShiftedCurves:
    @pytest.fixture()
    def market(self):
        times = np.array([0.25, 0.5, 1.0, 2.0, 3.0, 5.0])
        disc = DiscountCurve(times, np.exp(-0.025 * times))
        spread = SpreadTermStructure(T6M, times, np.exp(0.004 * times))
        return disc, {T6M: spread}

    def test_anchors_market_at_time_zero(self, vasicek_spec, market):
        disc, spreads = market
        for T in (0.5, 2.0, 5.0):
            shifted = shifted_curves(
                vasicek_spec, disc, spreads,
                x=[VAS_X0], y=[0.004], t=0.0, T=T, tenor=T6M,
            )
            assert shifted.bond == pytest.approx(disc.discount(T), rel=1e-14)
            assert shifted.spread == pytest.approx(
                spreads[T6M].spread(T), rel=1e-14)

    def test_model_generated_market_is_noop(self, vasicek_spec):
        t, T = 0.75, 2.25
        x, y = [0.027], [0.009]
        times = np.array([t, T])
        disc = DiscountCurve(times, affine_bond(vasicek_spec, vasicek_spec.x0, times))
        spread0 = affine_spread(vasicek_spec, vasicek_spec.x0, vasicek_spec.y0, times, i=0)
        spreads = {T6M: SpreadTermStructure(T6M, times, spread0)}
        shifted = shifted_curves(vasicek_spec, disc, spreads, x, y, t, T, tenor=T6M)
        assert shifted.bond == pytest.approx(
            affine_bond(vasicek_spec, x, T - t), rel=1e-12)
        assert shifted.spread == pytest.approx(
            affine_spread(vasicek_spec, x, y, T - t, i=0), rel=1e-12)

    def test_flat_market_deterministic_model(self, market):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[0.0], drift_linear=[[0.0]],
            diffusion_const=[[0.0]],
            rate_const=0.0, rate_linear=[1.0],
            x0=[0.07],
        )
        disc, _ = market
        shifted = shifted_curves(spec, disc, {}, x=[0.07], y=[], t=1.0, T=3.0)
        # the deterministic model curve cancels, leaving the market forward
        assert shifted.bond == pytest.approx(math.exp(-0.025 * 2.0), rel=1e-12)
        assert shifted.spread is None

    def test_maturity_before_observation_rejected(self, vasicek_spec, market):
        disc, spreads = market
        with pytest.raises(ValueError, match="precede"):
            shifted_curves(vasicek_spec, disc, spreads, [0.02], [0.004], 2.0, 1.0)


class TestSimulation:
    def test_zero_noise_follows_the_flow(self):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[VAS_KAPPA * VAS_THETA], drift_linear=[[-VAS_KAPPA]],
            diffusion_const=[[0.0]],
            rate_const=0.0, rate_linear=[1.0],
            x0=[VAS_X0],
        )
        T = 2.0
        paths = simulate_affine(spec, T, 1 / 200, 8, 5, [T, T + 1.0])
        C = (1 - math.exp(-VAS_KAPPA * T)) / VAS_KAPPA
        integral = VAS_THETA * T + (VAS_X0 - VAS_THETA) * C
        np.testing.assert_allclose(paths.numeraire, math.exp(integral), rtol=1e-8)
        x_T = VAS_THETA + (VAS_X0 - VAS_THETA) * math.exp(-VAS_KAPPA * T)
        np.testing.assert_allclose(
            paths.bond(T + 1.0), affine_bond(spec, [x_T], 1.0), rtol=1e-8)

    def test_discount_factor_mean(self, vasicek_spec):
        T = 1.5
        paths = simulate_affine(vasicek_spec, T, 1 / 250, 30_000, 17, [T])
        sample = 1.0 / paths.numeraire
        se = sample.std(ddof=1) / math.sqrt(len(sample))
        assert abs(sample.mean() - affine_bond(vasicek_spec, [VAS_X0], T)) <= 3 * se

    def test_jump_overlay_matches_transform(self):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[0.5 * 0.03], drift_linear=[[-0.5]],
            diffusion_const=[[0.01 ** 2]],
            rate_const=0.0, rate_linear=[1.0],
            jumps=AffineJumps(
                atoms_x=[[0.01], [-0.008]],
                probabilities=[0.6, 0.4],
                intensity_const=3.0,
            ),
            x0=[0.02],
        )
        T = 1.0
        paths = simulate_affine(spec, T, 1 / 250, 30_000, 23, [T])
        sample = 1.0 / paths.numeraire
        se = sample.std(ddof=1) / math.sqrt(len(sample))
        assert abs(sample.mean() - affine_bond(spec, [0.02], T)) <= 3 * se

    def test_spread_ordering_under_cone_dynamics(self, integrated_spec):
        paths = simulate_affine(integrated_spec, 1.0, 1 / 100, 2_000, 3, [1.0, 1.5])
        low = paths.spreads[T3M]
        high = paths.spreads[T6M]
        assert np.all(low >= 1.0 - 1e-12)
        assert np.all(high >= low - 1e-12)

    def test_degenerate_grids_rejected(self, vasicek_spec):
        with pytest.raises(ValueError, match="dt exceeds"):
            simulate_affine(vasicek_spec, 0.5, 1.0, 10, 1, [0.5])
        with pytest.raises(ValueError, match="at or beyond"):
            simulate_affine(vasicek_spec, 1.0, 0.1, 10, 1, [0.5])

    def test_seed_reproducibility(self, vasicek_spec):
        a = simulate_affine(vasicek_spec, 0.5, 1 / 50, 64, 11, [0.5])
        b = simulate_affine(vasicek_spec, 0.5, 1 / 50, 64, 11, [0.5])
        np.testing.assert_array_equal(a.numeraire, b.numeraire)
        np.testing.assert_array_equal(a.bonds, b.bonds)


class TestCapletFourier:
    @pytest.mark.parametrize("T,strike", [(0.5, 0.02), (1.0, 0.035), (2.0, 0.05)])
    def test_matches_gaussian_closed_form(self, vasicek_spec, T, strike):
        price = caplet_price_fourier(vasicek_spec, T, T6M, strike)
        assert price == pytest.approx(gaussian_caplet_closed_form(T, strike), rel=1e-10)

    def test_matches_simulation(self, vasicek_spec):
        T, strike = 1.0, 0.03
        paths = simulate_affine(vasicek_spec, T, 1 / 200, 40_000, 29, [T, T + 0.5])
        mc, se = caplet_price_mc(paths, T6M, strike)
        price = caplet_price_fourier(vasicek_spec, T, T6M, strike)
        assert abs(price - mc) <= 3.0 * se

    def test_notional_scales_linearly(self, vasicek_spec):
        base = caplet_price_fourier(vasicek_spec, 1.0, T6M, 0.03)
        scaled = caplet_price_fourier(vasicek_spec, 1.0, T6M, 0.03, notional=2.5e6)
        assert scaled == pytest.approx(2.5e6 * base, rel=1e-12)

    def test_negative_cap_factor_is_a_forward(self, vasicek_spec):
        strike = -2.5
        price = caplet_price_fourier(vasicek_spec, 1.0, T6M, strike)
        times = np.array([1.0, 1.5])
        disc = DiscountCurve(times, affine_bond(vasicek_spec, vasicek_spec.x0, times))
        spread = SpreadTermStructure(
            T6M, times[:1],
            [affine_spread(vasicek_spec, vasicek_spec.x0, vasicek_spec.y0, 1.0, i=0)],
        )
        assert price == pytest.approx(
            fra_value(disc, spread, 1.0, strike), rel=1e-10)

    def test_deterministic_spec_positive_part(self):
        spec = AffineModelSpec(
            pos_dims=0, real_dims=1,
            drift_const=[0.0], drift_linear=[[0.0]],
            diffusion_const=[[0.0]],
            rate_const=0.0, rate_linear=[1.0],
            n_spread=1, u_vectors=[[1.0]], tenors=(T6M,),
            y_mode="integrated", y_drift_const=[0.006],
            x0=[0.03], y0=[0.002],
        )
        T, delta = 1.0, 0.5
        spot = math.exp(0.002 + 0.006 * T)
        intrinsic_low = (spot * math.exp(-0.03 * T)
                         - (1 + delta * 0.01) * math.exp(-0.03 * (T + delta)))
        assert caplet_price_fourier(spec, T, T6M, 0.01) == pytest.approx(
            intrinsic_low, rel=1e-12)
        assert caplet_price_fourier(spec, T, T6M, 0.20) == 0.0

    def test_damping_outside_moment_domain(self):
        spec = AffineModelSpec(
            pos_dims=1, real_dims=0,
            drift_const=[0.0], drift_linear=[[-2.0]],
            diffusion_const=[[0.0]], diffusion_linear=[[[1.0]]],
            rate_const=0.02, rate_linear=[0.0],
            n_spread=1, u_vectors=[[1.6]], tenors=(T6M,),
            y_mode="integrated", y_drift_linear=[[1.0]],
            x0=[0.04], y0=[0.0],
        )
        # the undamped exponent 1.6 is integrable over [0, 5] but the damped
        # contour pushes it past the square-root blow-up threshold
        assert spec.verify_exponent_domain(5.0) is True
        with pytest.raises(DampingOutOfDomain):
            caplet_price_fourier(spec, 5.0, T6M, 0.02)

    def test_quadrature_budget_enforced(self, vasicek_spec):
        with pytest.raises(QuadratureNonConvergence):
            caplet_price_fourier(
                vasicek_spec, 1.0, T6M, 0.03,
                panel_width=0.5, max_panels=2,
            )

    def test_unknown_tenor_rejected(self, vasicek_spec):
        with pytest.raises(ValueError, match="not part of the model"):
            caplet_price_fourier(vasicek_spec, 1.0, T3M, 0.03)


class TestSpecValidation:
    def base_kwargs(self):
        return dict(
            pos_dims=1, real_dims=1,
            drift_const=[0.02, 0.0],
            drift_linear=[[-0.5, 0.0], [0.0, -0.2]],
            diffusion_const=[[0.0, 0.0], [0.0, 0.01]],
            diffusion_linear=[
                [[0.04, 0.0], [0.0, 0.0]],
                [[0.0, 0.0], [0.0, 0.0]],
            ],
            rate_const=0.0, rate_linear=[1.0, 0.0],
            x0=[0.03, 0.0],
        )

    def test_valid_base_spec_builds(self):
        AffineModelSpec(**self.base_kwargs())

    def test_constant_diffusion_on_positive_component(self):
        kw = self.base_kwargs()
        kw["diffusion_const"] = [[0.01, 0.0], [0.0, 0.01]]
        with pytest.raises(ValueError, match="vanish on positive components"):
            AffineModelSpec(**kw)

    def test_cross_positive_diffusion_coupling(self):
        kw = self.base_kwargs()
        kw["pos_dims"] = 2
        kw["real_dims"] = 0
        kw["x0"] = [0.03, 0.01]
        kw["diffusion_const"] = [[0.0, 0.0], [0.0, 0.0]]
        kw["diffusion_linear"] = [
            [[0.04, 0.0], [0.0, 0.02]],
            [[0.0, 0.0], [0.0, 0.03]],
        ]
        with pytest.raises(ValueError, match="couples positive components"):
            AffineModelSpec(**kw)

    def test_real_component_state_scaled_diffusion(self):
        kw = self.base_kwargs()
        kw["diffusion_linear"] = [
            [[0.04, 0.0], [0.0, 0.0]],
            [[0.0, 0.0], [0.0, 0.02]],
        ]
        with pytest.raises(ValueError, match="no state-scaled diffusion"):
            AffineModelSpec(**kw)

    def test_outward_constant_drift(self):
        kw = self.base_kwargs()
        kw["drift_const"] = [-0.01, 0.0]
        with pytest.raises(ValueError, match="point inward"):
            AffineModelSpec(**kw)

    def test_real_to_positive_drift_coupling(self):
        kw = self.base_kwargs()
        kw["drift_linear"] = [[-0.5, 0.3], [0.0, -0.2]]
        with pytest.raises(ValueError, match="may not drive positive"):
            AffineModelSpec(**kw)

    def test_jump_leaving_the_cone(self):
        kw = self.base_kwargs()
        kw["jumps"] = AffineJumps(
            atoms_x=[[-0.01, 0.0]], probabilities=[1.0], intensity_const=1.0)
        with pytest.raises(ValueError, match="keep positive components"):
            AffineModelSpec(**kw)

    def test_jump_probabilities_normalized(self):
        with pytest.raises(ValueError, match="sum to one"):
            AffineJumps(atoms_x=[[0.01], [0.02]], probabilities=[0.6, 0.6])

    def test_integrated_mode_forbids_spread_noise(self):
        kw = self.base_kwargs()
        kw.update(n_spread=1, u_vectors=[[1.0]], tenors=(T6M,),
                  y_mode="integrated", y_diff_const=[[0.01]])
        with pytest.raises(ValueError, match="no spread diffusion"):
            AffineModelSpec(**kw)

    def test_tenor_exposure_shape_checked(self):
        kw = self.base_kwargs()
        kw.update(n_spread=2, u_vectors=[[1.0]], tenors=(T6M,))
        with pytest.raises(ValueError, match="must have 2 columns"):
            AffineModelSpec(**kw)

    def test_negative_initial_state_rejected(self):
        kw = self.base_kwargs()
        kw["x0"] = [-0.01, 0.0]
        with pytest.raises(ValueError, match="x0 must respect"):
            AffineModelSpec(**kw)
