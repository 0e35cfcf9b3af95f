"""Classical flow, action, crossing-event and branch-extension tests.

Oracles: with a parabolic band and a linear ramp the flow and the action
integral have closed forms (RK4 reproduces them to roundoff because the
integrands are low-degree polynomials in time); the free band pair gives
closed-form plus/minus branches through the crossing.
"""
import numpy as np
import pytest

from bandcross.bloch import BandPath, smooth_continuation
from bandcross.classical import (
    ExtendedTrajectory,
    ParabolicBand,
    SplineBand,
    Trajectory,
    detect_crossing_time,
    extend_through_crossing,
    integrate_flow,
)
from bandcross.errors import (
    ConvergenceFailure,
    LeftBrillouinWindow,
    NoCrossing,
    SecondCrossing,
    TangentialApproach,
)
from bandcross.potential import (
    ExternalPotential,
    cosine_external,
    linear_ramp,
    potential_from_coeffs,
    zero_external,
)

TWO_PI = 2.0 * np.pi


def free_potential():
    return potential_from_coeffs({1: 0.0, 2: 0.0})


@pytest.fixture(scope="module")
def free_pair():
    return smooth_continuation(free_potential(), 1, np.pi, halfwidth=0.45,
                               n_samples=181, m_cut=16)


def closed_form_action(t, q0, p0, alpha, s0=0.0):
    # E = p^2/2, W = -alpha q: S' = p^2/2 + alpha q
    return (s0
            + ((p0 + alpha * t) ** 3 - p0 ** 3) / (6 * alpha)
            + alpha * q0 * t
            + alpha * p0 * t ** 2 / 2
            + alpha ** 2 * t ** 3 / 6)


class TestIntegrateFlow:
    def test_no_drive_means_straight_line(self):
        band = ParabolicBand()
        tr = integrate_flow(band, zero_external(), 0.3, 1.1, (0, 2.0), 1e-3)
        assert np.max(np.abs(tr.p - 1.1)) < 1e-12
        assert np.max(np.abs(tr.q - (0.3 + 1.1 * tr.t_grid))) < 1e-10

    def test_linear_ramp_gives_linear_momentum(self):
        band = ParabolicBand()
        tr = integrate_flow(band, linear_ramp(2.5), -0.2, 0.7, (0, 1.5), 1e-3)
        assert np.max(np.abs(tr.p - (0.7 + 2.5 * tr.t_grid))) < 1e-11

    def test_action_matches_closed_form(self):
        band = ParabolicBand()
        q0, p0, alpha = 0.4, 1.3, 1.7
        tr = integrate_flow(band, linear_ramp(alpha), q0, p0, (0, 1.0), 1e-3,
                            s0=0.25)
        ref = closed_form_action(tr.t_grid, q0, p0, alpha, s0=0.25)
        assert np.max(np.abs(tr.S - ref)) < 1e-8

    def test_energy_conserved_with_nonlinear_drive(self):
        band = ParabolicBand()
        W = cosine_external(1.3, 0.9)
        tr = integrate_flow(band, W, 0.1, 1.9, (0, 2.0), 5e-4)
        assert tr.energy_drift < 1e-10

    def test_large_step_raises(self):
        band = ParabolicBand()
        with pytest.raises(ConvergenceFailure):
            integrate_flow(band, cosine_external(2.0, 2.0), 0.0, 1.0,
                           (0, 5.0), 0.5)

    def test_fourth_order_convergence(self):
        band = ParabolicBand()
        W = cosine_external(1.1, 1.4)

        def end_state(dt):
            tr = integrate_flow(band, W, 0.0, 1.2, (0, 1.0), dt)
            return np.array([tr.q[-1], tr.p[-1], tr.S[-1]])

        ref = end_state(1e-4)
        e1 = np.linalg.norm(end_state(4e-3) - ref)
        e2 = np.linalg.norm(end_state(2e-3) - ref)
        assert e1 / e2 > 14.0

    def test_time_reversal(self):
        band = ParabolicBand()
        W = cosine_external(1.0, 1.0)
        fwd = integrate_flow(band, W, 0.2, 1.4, (0, 1.2), 1e-3)
        back = integrate_flow(band, W, float(fwd.q[-1]), float(fwd.p[-1]),
                              (1.2, 0.0), 1e-3)
        assert abs(back.q[-1] - 0.2) < 1e-8
        assert abs(back.p[-1] - 1.4) < 1e-8

    def test_action_seed_shifts_constantly(self):
        band = ParabolicBand()
        W = cosine_external(1.0, 1.0)
        a = integrate_flow(band, W, 0.0, 1.0, (0, 1.0), 1e-3, s0=0.0)
        b = integrate_flow(band, W, 0.0, 1.0, (0, 1.0), 1e-3, s0=1.7)
        d = b.S - a.S
        assert np.max(np.abs(d - 1.7)) < 1e-12

    def test_spline_band_window_guard(self, free_pair):
        band = SplineBand(free_pair.plus)
        with pytest.raises(LeftBrillouinWindow):
            integrate_flow(band, linear_ramp(1.0), 0.0, np.pi - 0.3,
                           (0, 1.0), 1e-3)

    def test_spline_band_slope_consistent_with_spectral_velocity(self, free_pair):
        band = SplineBand(free_pair.plus)
        assert band.slope_check < 1e-8


class TestDetectCrossing:
    def test_linear_drive_exact_time(self):
        band = ParabolicBand()
        W = linear_ramp(1.0)
        tr = integrate_flow(band, W, 0.0, np.pi - 0.5, (0, 1.0), 1e-3)
        t_star, q_star = detect_crossing_time(tr, np.pi, W)
        assert abs(t_star - 0.5) < 1e-12
        q_ref = (np.pi - 0.5) * 0.5 + 0.5 ** 3 / 6 + 0.5 * 0.5 ** 2 / 2
        # q(t) = q0 + p0 t + t^2/2 integrated of p = p0 + t
        q_ref = (np.pi - 0.5) * 0.5 + 0.5 ** 2 / 2
        assert abs(q_star - q_ref) < 1e-10

    def test_monotone_retreat_raises(self):
        band = ParabolicBand()
        W = linear_ramp(1.0)
        tr = integrate_flow(band, W, 0.0, np.pi + 0.1, (0, 1.0), 1e-3)
        with pytest.raises(NoCrossing):
            detect_crossing_time(tr, np.pi, W)

    def test_wrapped_target_found(self):
        band = ParabolicBand()
        W = linear_ramp(2.0)
        tr = integrate_flow(band, W, 0.0, TWO_PI - 0.8, (0, 1.0), 1e-3)
        t_star, _ = detect_crossing_time(tr, 0.0, W)
        assert abs(t_star - 0.4) < 1e-12

    def test_slow_crossing_flagged_tangential(self):
        band = ParabolicBand()
        W = linear_ramp(0.3)
        tr = integrate_flow(band, W, 0.0, np.pi - 0.15, (0, 1.0), 1e-3)
        with pytest.raises(TangentialApproach):
            detect_crossing_time(tr, np.pi, W, slope_threshold=0.5)

    def test_event_time_stable_under_dt_halving(self):
        band = ParabolicBand()
        W = cosine_external(1.2, 1.1)
        times = []
        for dt in (1e-3, 5e-4):
            tr = integrate_flow(band, W, 0.0, np.pi - 0.4, (0, 1.2), dt)
            times.append(detect_crossing_time(tr, np.pi, W)[0])
        assert abs(times[0] - times[1]) < 1e-10


class TestExtendThroughCrossing:
    def _incoming(self, pair, W, p0, t1=0.25):
        band = SplineBand(pair.plus)
        return integrate_flow(band, W, 0.0, p0, (0.0, t1), 1e-3)

    def test_free_pair_branches_match_closed_form(self, free_pair):
        W = linear_ramp(1.0)
        incoming = self._incoming(free_pair, W, np.pi - 0.3)
        ext = extend_through_crossing(free_pair, W, incoming, T=0.6, dt=1e-3)
        t = ext.plus.t_grid
        assert abs(ext.plus.t_star - 0.3) < 1e-10
        # plus branch: E+ = p^2/2 -> q' = p = p0 + t
        p0 = np.pi - 0.3
        assert np.max(np.abs(ext.plus.p - (p0 + t))) < 1e-10
        assert np.max(np.abs(ext.plus.q - (p0 * t + t ** 2 / 2))) < 1e-9
        # minus branch: E- = (p - 2 pi)^2/2, launched at (q*, pi) at t*
        tm = ext.minus.t_grid
        q_star = ext.plus.q_star
        ref_q = q_star + (np.pi - TWO_PI) * (tm - 0.3) + (tm - 0.3) ** 2 / 2
        assert np.max(np.abs(ext.minus.q - ref_q)) < 1e-8

    def test_opposite_group_velocities(self, free_pair):
        W = linear_ramp(1.0)
        incoming = self._incoming(free_pair, W, np.pi - 0.3)
        ext = extend_through_crossing(free_pair, W, incoming, T=0.6, dt=1e-3)
        i = np.searchsorted(ext.plus.t_grid, 0.3)
        j = np.searchsorted(ext.minus.t_grid, 0.3)
        dq_plus = np.gradient(ext.plus.q, ext.plus.t_grid)[i]
        dq_minus = np.gradient(ext.minus.q, ext.minus.t_grid)[j]
        assert abs(dq_plus - np.pi) < 1e-6
        assert abs(dq_minus + np.pi) < 1e-6

    def test_action_seeded_continuously(self, free_pair):
        W = linear_ramp(1.0)
        incoming = self._incoming(free_pair, W, np.pi - 0.3)
        ext = extend_through_crossing(free_pair, W, incoming, T=0.6, dt=1e-3)
        _, _, s_plus = ext.plus.state_at(ext.plus.t_star)
        _, _, s_minus = ext.minus.state_at(ext.plus.t_star)
        assert abs(s_plus - s_minus) < 1e-10

    def test_restart_oracle_both_sides(self, free_pair):
        W = linear_ramp(1.0)
        incoming = self._incoming(free_pair, W, np.pi - 0.3)
        ext = extend_through_crossing(free_pair, W, incoming, T=0.6, dt=1e-3)
        band = SplineBand(free_pair.plus)
        for t_restart in (0.15, 0.45):
            q_r, p_r, s_r = ext.plus.state_at(t_restart)
            fresh = integrate_flow(band, W, q_r, p_r, (t_restart, 0.6),
                                   1e-3, s0=s_r)
            qf, pf, sf = ext.plus.state_at(0.6)
            assert abs(fresh.q[-1] - qf) < 1e-9
            assert abs(fresh.p[-1] - pf) < 1e-9
            assert abs(fresh.S[-1] - sf) < 1e-9

    def test_second_crossing_guard(self):
        # synthetic wide parabolic pair so the flow can reach the next image
        p_star = np.pi
        p = p_star + np.linspace(-7.0, 7.0, 1401)
        e = 0.5 * p ** 2
        dE = p.copy()
        d2 = np.ones_like(p)
        chi = np.zeros((p.size, 1), dtype=complex)
        path = BandPath(None, p, e, chi, dE, d2, np.zeros_like(p), 0)
        pair_like = type("PairLike", (), {})()
        pair_like.plus = path
        pair_like.minus = path
        pair_like.p_star = p_star
        pair_like.halfwidth = 7.0
        W = linear_ramp(1.0)
        incoming = integrate_flow(SplineBand(path), W, 0.0, np.pi - 0.5,
                                  (0.0, 0.1), 1e-3)
        with pytest.raises(SecondCrossing):
            extend_through_crossing(pair_like, W, incoming, T=6.8, dt=1e-3)
