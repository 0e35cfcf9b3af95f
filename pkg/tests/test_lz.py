"""Tests for the abstract two-level crossing model."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import Polynomial

from bandcross.errors import NotLinearCrossing, PhaseUnderResolved
from bandcross.lz import (
    LZModel,
    default_dt,
    linear_model,
    locate_crossing,
    predict,
    simulate,
)


class TestModelAndCrossing:
    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            LZModel(e_plus=Polynomial([0, 1]), e_minus=Polynomial([0, -1]),
                    coupling=0.1, epsilon=0.0)

    def test_linear_model_gap(self):
        model = linear_model(slope_gap=2.0, coupling=0.1, epsilon=1e-3,
                             t_star=1.0)
        ts = np.array([0.5, 1.0, 1.7])
        assert np.allclose(model.gap(ts), 2.0 * (ts - 1.0), atol=1e-14)

    def test_locate_crossing_linear(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-3,
                             t_star=0.8)
        t_star = locate_crossing(model, (0.0, 2.0))
        assert abs(t_star - 0.8) < 1e-12

    def test_locate_crossing_absent(self):
        model = LZModel(e_plus=Polynomial([1.0]), e_minus=Polynomial([0.0]),
                        coupling=0.1, epsilon=1e-3)
        assert locate_crossing(model, (0.0, 2.0)) is None

    def test_locate_crossing_double_rejected(self):
        # gap (t-1)^2 - 0.25 vanishes twice in the span
        gap = Polynomial([0.75, -2.0, 1.0])
        model = LZModel(e_plus=gap, e_minus=Polynomial([0.0]), coupling=0.1,
                        epsilon=1e-3)
        with pytest.raises(NotLinearCrossing):
            locate_crossing(model, (0.0, 2.0))


class TestSimulate:
    def test_zero_coupling_is_identity(self):
        model = linear_model(slope_gap=1.0, coupling=0.0, epsilon=1e-2,
                             c0=(0.6 + 0.1j, 0.2 - 0.4j))
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)))
        assert np.all(paths.c_plus == paths.c_plus[0])
        assert np.all(paths.c_minus == paths.c_minus[0])
        assert paths.c_plus[0] == 0.6 + 0.1j

    def test_norm_conserved(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-3)
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)))
        assert paths.norm_drift() <= 1e-10

    def test_phase_resolution_guard(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-4)
        with pytest.raises(PhaseUnderResolved):
            simulate(model, (0.0, 2.0), dt=1e-2)

    def test_reference_transition(self):
        # slope 1, coupling 0.1, eps 1e-4: transferred mass 2 pi 1e-6
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-4)
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)))
        target = 2.0 * np.pi * 0.01 * 1e-4
        assert abs(paths.transition() - target) < 0.05 * target

    def test_window_is_refined(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-3)
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)),
                         store_points=200000)
        half = 10.0 * np.sqrt(model.epsilon)
        inside = np.diff(paths.t)[np.abs(paths.t[:-1] - 1.0) < 0.8 * half]
        outside = np.diff(paths.t)[np.abs(paths.t[:-1] - 1.0) > 2.0 * half]
        assert np.max(inside) < 0.5 * np.min(outside)

    def test_default_dt_is_accurate(self):
        model = linear_model(slope_gap=1.0, coupling=0.25, epsilon=1e-2)
        dt0 = default_dt(model, (0.0, 2.0))
        ref = simulate(model, (0.0, 2.0), dt=dt0 / 64, store_points=2)
        paths = simulate(model, (0.0, 2.0), dt=dt0, store_points=2)
        assert abs(paths.c_minus[-1] - ref.c_minus[-1]) < 1e-10

    def test_matches_adaptive_oracle(self):
        # independent integrator family as oracle: DOP853 on the same system
        from scipy.integrate import solve_ivp

        eps = 1e-2
        model = LZModel(e_plus=Polynomial([-0.5, 0.5]),
                        e_minus=Polynomial([0.5, -0.5]),
                        coupling=lambda t: 0.3 * np.exp(1j * np.asarray(t) ** 2),
                        epsilon=eps)
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)),
                         store_points=2)
        anti = model.gap_polynomial().integ()
        phi0 = anti(1.0)

        def rhs(t, y):
            f = 0.3 * np.exp(1j * t * t) * np.exp(1j * (anti(t) - phi0) / eps)
            return [f * y[1], -np.conj(f) * y[0]]

        sol = solve_ivp(rhs, (0.0, 2.0), [1.0 + 0.0j, 0.0 + 0.0j],
                        method="DOP853", rtol=1e-12, atol=1e-14)
        assert abs(paths.c_minus[-1] - sol.y[1, -1]) < 1e-8
        assert abs(paths.c_plus[-1] - sol.y[0, -1]) < 1e-8

    def test_nonpolynomial_levels_match_polynomial(self):
        eps = 1e-3
        poly = linear_model(slope_gap=1.0, coupling=0.1, epsilon=eps)
        fn = LZModel(e_plus=lambda t: 0.5 * (np.asarray(t) - 1.0),
                     e_minus=lambda t: -0.5 * (np.asarray(t) - 1.0),
                     coupling=0.1, epsilon=eps)
        dt = default_dt(poly, (0.0, 2.0))
        a = simulate(poly, (0.0, 2.0), dt=dt, store_points=2)
        b = simulate(fn, (0.0, 2.0), dt=dt, store_points=2)
        assert abs(a.c_minus[-1] - b.c_minus[-1]) < 1e-10

    def test_time_varying_coupling(self):
        # a coupling that vanishes at the crossing transfers only O(eps^2)
        eps = 1e-4
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=eps)
        gated = LZModel(e_plus=model.e_plus, e_minus=model.e_minus,
                        coupling=lambda t: 0.1 * (np.asarray(t) - 1.0),
                        epsilon=eps)
        paths = simulate(gated, (0.0, 2.0), dt=default_dt(gated, (0.0, 2.0)))
        flat = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)))
        assert paths.transition() < 0.05 * flat.transition()

    @settings(max_examples=10, deadline=None)
    @given(slope=st.floats(0.5, 2.0), kappa=st.floats(0.01, 0.3),
           phase=st.floats(0.0, 6.28))
    def test_unitary_for_any_coupling(self, slope, kappa, phase):
        model = linear_model(slope_gap=slope,
                             coupling=kappa * np.exp(1j * phase),
                             epsilon=1e-2)
        paths = simulate(model, (0.0, 2.0), dt=default_dt(model, (0.0, 2.0)))
        # exactly unitary steps; only roundoff accumulates
        assert paths.norm_drift() <= 5e-12


class TestPredict:
    def test_zero_coupling(self):
        model = linear_model(slope_gap=1.0, coupling=0.0, epsilon=1e-4)
        assert predict(model) == 0.0

    def test_reference_value(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-4)
        assert abs(predict(model) - 2.0 * np.pi * 0.01 * 1e-4) < 1e-15

    def test_initial_occupation_scales(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-4,
                             c0=(0.5, 0.0))
        assert abs(predict(model) - 0.25 * 2.0 * np.pi * 0.01 * 1e-4) < 1e-16

    def test_no_crossing_gives_zero(self):
        model = LZModel(e_plus=Polynomial([1.0]), e_minus=Polynomial([0.0]),
                        coupling=0.1, epsilon=1e-4)
        assert predict(model) == 0.0

    def test_negative_slope_rejected(self):
        model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=1e-4)
        swapped = LZModel(e_plus=model.e_minus, e_minus=model.e_plus,
                          coupling=0.1, epsilon=1e-4)
        with pytest.raises(NotLinearCrossing):
            predict(swapped)

    def test_matches_excited_mass_dictionary(self):
        # dictionary: E_pm(t) = E_pm(p(t)), coupling_t = pdot * kappa_p;
        # the closed forms must then agree exactly
        from bandcross.ansatz import predict_excited_mass
        sg, dqw, kappa_p, eps = 7.3, -1.7, 0.004 + 0.001j, 1e-3
        pdot = -dqw
        model = LZModel(
            e_plus=Polynomial([-0.5 * sg * abs(pdot) * 1.0,
                               0.5 * sg * abs(pdot)]),
            e_minus=Polynomial([0.5 * sg * abs(pdot) * 1.0,
                                -0.5 * sg * abs(pdot)]),
            coupling=pdot * kappa_p,
            epsilon=eps,
        )
        a = predict(model)
        b = predict_excited_mass(dqw, kappa_p, sg, 1.0, eps)
        assert abs(a - b) < 1e-15 * abs(b)

    def test_simulate_converges_to_predict(self):
        ratios = []
        for eps in (1e-2, 1e-3, 1e-4):
            model = linear_model(slope_gap=1.0, coupling=0.1, epsilon=eps)
            paths = simulate(model, (0.0, 2.0),
                             dt=default_dt(model, (0.0, 2.0)))
            ratios.append(paths.transition() / predict(model))
        devs = [abs(r - 1.0) for r in ratios]
        assert devs[2] < 0.05
        assert devs[2] < devs[1] < devs[0]
