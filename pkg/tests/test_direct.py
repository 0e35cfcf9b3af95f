"""Split-step reference solver tests."""
import numpy as np
import pytest

from bandcross.ansatz import (
    Grid,
    GridState,
    TwoBandEnvelopes,
    WavepacketParams,
    assemble_wp0,
    two_band_ansatz,
)
from bandcross.direct import (
    BandMassTable,
    PropagatorConfig,
    band_mass,
    default_dt,
    l2_error,
    periodize_external,
    propagate,
)
from bandcross.envelope import Envelope, gaussian_envelope
from bandcross.errors import (
    GridMismatch,
    GridOverflow,
    StabilityViolation,
    WindowEmpty,
)
from bandcross.potential import (
    cosine_external,
    linear_ramp,
    make_cosine,
    potential_from_coeffs,
)

FLAT = potential_from_coeffs({})


def flat_chi(m_cut: int = 8) -> np.ndarray:
    chi = np.zeros(2 * m_cut + 1, dtype=complex)
    chi[m_cut] = 1.0
    return chi


def free_gaussian_state(grid: Grid, q: float, sigma: float = 1.0) -> GridState:
    a0 = gaussian_envelope(sigma=sigma)
    params = WavepacketParams(S=0.0, q=q, p=0.0, a0=a0,
                              epsilon=grid.epsilon, chi=flat_chi())
    return assemble_wp0(params, grid)


class TestPeriodizeExternal:
    def test_identity_away_from_collar(self):
        grid = Grid(length=8, epsilon=1.0 / 8, ppw=32)
        W = linear_ramp(2.0, q_ref=4.0)
        w = periodize_external(W, grid, collar=1.0)
        x = grid.x
        inner = x < 7.0
        exact = np.array([W.w(xi) for xi in x[inner]])
        assert np.max(np.abs(w[inner] - exact)) < 1e-14

    def test_periodic_and_spectrally_smooth(self):
        grid = Grid(length=8, epsilon=1.0 / 8, ppw=32)
        W = linear_ramp(2.0, q_ref=4.0)
        w = periodize_external(W, grid, collar=1.0)
        spec = np.abs(np.fft.fft(w))
        n = grid.n
        # smooth periodic function: coefficients decay below roundoff scale
        head = np.max(spec[: n // 64])
        tail = np.max(spec[n // 4: n // 2])
        assert tail < 1e-12 * head

    def test_none_is_zero(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        assert np.all(periodize_external(None, grid) == 0.0)

    def test_bad_collar(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        with pytest.raises(ValueError):
            periodize_external(linear_ramp(1.0), grid, collar=3.0)


class TestPropagate:
    def test_free_gaussian_closed_form(self):
        eps = 1.0 / 16
        grid = Grid(length=8, epsilon=eps, ppw=32)
        state = free_gaussian_state(grid, q=4.0)
        cfg = PropagatorConfig(dt=1e-3, t_final=0.5)
        res = propagate(state, FLAT, None, cfg)
        t = 0.5
        x = grid.x
        y = (x - 4.0) / np.sqrt(eps)
        exact = (eps ** (-0.25) * np.pi ** (-0.25) / np.sqrt(1 + 1j * t)
                 * np.exp(-y ** 2 / (2 * (1 + 1j * t))))
        err = np.sqrt(np.sum(np.abs(res.snapshots[-1].values - exact) ** 2)
                      * grid.dx)
        assert err < 1e-8

    def test_norm_conserved(self):
        eps = 1.0 / 8
        # at this coarse eps the packet develops physical dispersive tails
        # within a few units of the center, so give it a roomy domain and a
        # dt well below the default (whose splitting error radiates a ~1e-4
        # tail of its own); the scheme must then stay unitary to roundoff
        grid = Grid(length=16, epsilon=eps, ppw=32)
        from bandcross.bloch import eigensolve
        V = make_cosine(4.0)
        _, vecs = eigensolve(V, 0.7, 1, m_cut=12)
        a0 = gaussian_envelope(sigma=1.0)
        params = WavepacketParams(S=0.0, q=8.0, p=0.7, a0=a0,
                                  epsilon=eps, chi=vecs[0])
        state = assemble_wp0(params, grid)
        W = cosine_external(0.5, 0.7)
        cfg = PropagatorConfig(dt=1.25e-4, t_final=0.5,
                               snapshot_times=(0.125, 0.25, 0.375))
        res = propagate(state, V, W, cfg)
        assert res.norm_drift_rate < 1e-10

    def test_bloch_eigenstate_phase_rate(self):
        # on the torus a commensurate Bloch eigenstate evolves by a pure
        # phase at rate E_n(p)/eps
        eps = 1.0 / 8
        grid = Grid(length=4, epsilon=eps, ppw=32)
        lk = grid.length * grid.k_inv
        r = 5
        p_r = 2 * np.pi * r / lk
        V = make_cosine(4.0)
        from bandcross.bloch import eigensolve
        energies, vecs = eigensolve(V, p_r, 1, m_cut=12)
        z = grid.x / eps
        from bandcross.ansatz import evaluate_bloch_mode
        chi = evaluate_bloch_mode(vecs[0], z)
        psi0 = GridState(grid, np.exp(1j * p_r * z) * chi / np.sqrt(grid.length))
        snaps = tuple(np.arange(1, 11) * 0.01)
        inner0 = np.sum(np.conj(psi0.values) * psi0.values) * grid.dx

        def rate(dt):
            cfg = PropagatorConfig(dt=dt, t_final=0.1, snapshot_times=snaps,
                                   check_collar=False)
            res = propagate(psi0, V, None, cfg)
            phases = [np.angle(np.sum(np.conj(psi0.values) * s.values)
                               * grid.dx / inner0) for s in res.snapshots]
            theta = np.unwrap(phases)
            ts = np.array([s.t for s in res.snapshots])
            return -np.polyfit(ts, theta, 1)[0] * eps

        # the splitting shifts the eigenphase rate by O(dt^2); the shift must
        # shrink accordingly and the dt-extrapolated rate must match E_n(p)
        e1, e2 = rate(1e-4), rate(5e-5)
        exact = energies[0]
        assert abs(e2 - exact) < abs(e1 - exact) / 3.5
        e_extr = (4 * e2 - e1) / 3
        assert abs(e_extr - exact) < 1e-6 * abs(exact)

    def test_second_order_in_dt(self):
        eps = 1.0 / 8
        grid = Grid(length=8, epsilon=eps, ppw=32)
        from bandcross.bloch import eigensolve
        V = make_cosine(4.0)
        _, vecs = eigensolve(V, 0.7, 1, m_cut=12)
        a0 = gaussian_envelope(sigma=1.0)
        params = WavepacketParams(S=0.0, q=4.0, p=0.7, a0=a0,
                                  epsilon=eps, chi=vecs[0])
        state = assemble_wp0(params, grid)
        W = cosine_external(0.5, 0.7)
        T = 0.2

        def final(dt):
            cfg = PropagatorConfig(dt=dt, t_final=T)
            return propagate(state, V, W, cfg).snapshots[-1].values

        ref = final(T / 6400)
        e1 = np.linalg.norm(final(T / 400) - ref)
        e2 = np.linalg.norm(final(T / 800) - ref)
        assert e1 / e2 > 3.7

    def test_spatial_resolution_converged(self):
        eps = 1.0 / 8
        V = make_cosine(4.0)
        from bandcross.bloch import eigensolve
        _, vecs = eigensolve(V, 0.7, 1, m_cut=12)
        a0 = gaussian_envelope(sigma=1.0)
        W = cosine_external(0.5, 0.7)
        finals = []
        for ppw in (32, 64):
            grid = Grid(length=8, epsilon=eps, ppw=ppw)
            params = WavepacketParams(S=0.0, q=4.0, p=0.7, a0=a0,
                                      epsilon=eps, chi=vecs[0])
            state = assemble_wp0(params, grid)
            cfg = PropagatorConfig(dt=1e-3, t_final=0.2)
            finals.append(propagate(state, V, W, cfg).snapshots[-1])
        coarse = finals[0].values
        fine_on_coarse = finals[1].values[::2]
        err = np.sqrt(np.sum(np.abs(coarse - fine_on_coarse) ** 2)
                      * finals[0].grid.dx)
        assert err < 1e-8

    def test_stability_violation(self):
        eps = 1.0 / 8
        grid = Grid(length=8, epsilon=eps, ppw=32)
        state = free_gaussian_state(grid, q=4.0)
        V = make_cosine(4.0)
        cfg = PropagatorConfig(dt=0.1, t_final=0.5)
        with pytest.raises(StabilityViolation):
            propagate(state, V, None, cfg)

    def test_collar_guard_trips(self):
        eps = 1.0 / 4
        grid = Grid(length=8, epsilon=eps, ppw=32)
        a0 = gaussian_envelope(sigma=1.0)
        params = WavepacketParams(S=0.0, q=5.0, p=1.0, a0=a0,
                                  epsilon=eps, chi=flat_chi())
        state = assemble_wp0(params, grid)
        cfg = PropagatorConfig(dt=1e-3, t_final=1.5,
                               snapshot_times=tuple(np.arange(1, 15) * 0.1))
        with pytest.raises(GridOverflow):
            propagate(state, FLAT, None, cfg)

    def test_snapshot_validation(self):
        with pytest.raises(ValueError):
            PropagatorConfig(dt=1e-3, t_final=0.5, snapshot_times=(0.0005,))
        with pytest.raises(ValueError):
            PropagatorConfig(dt=1e-3, t_final=0.5, snapshot_times=(0.7,))


class TestL2Error:
    def test_identical_is_zero(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        state = free_gaussian_state(grid, q=2.0)
        rep = l2_error(state, state)
        assert rep.plain == 0.0
        assert rep.phase_optimized < 1e-12

    def test_zero_ansatz_gives_norm(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        state = free_gaussian_state(grid, q=2.0)
        zero = GridState(grid, np.zeros(grid.n, dtype=complex))
        rep = l2_error(state, zero)
        assert abs(rep.plain - state.norm()) < 1e-12
        assert abs(rep.phase_optimized - state.norm()) < 1e-12

    def test_global_phase_removed(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        state = free_gaussian_state(grid, q=2.0)
        rotated = GridState(grid, np.exp(0.7j) * state.values)
        rep = l2_error(state, rotated)
        assert rep.plain > 0.1
        assert rep.phase_optimized < 1e-12

    def test_grid_mismatch(self):
        g1 = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        g2 = Grid(length=4, epsilon=1.0 / 16, ppw=32)
        s1 = free_gaussian_state(g1, q=2.0)
        s2 = free_gaussian_state(g2, q=2.0)
        with pytest.raises(GridMismatch):
            l2_error(s1, s2)


@pytest.fixture(scope="module")
def crossing_setup():
    from bandcross.bloch import smooth_continuation
    from bandcross.classical import (
        SplineBand, extend_through_crossing, integrate_flow,
    )
    from bandcross.potential import EllipticParams, make_m_gap

    V = make_m_gap(EllipticParams(1, 0.8), m_max=16)
    pair = smooth_continuation(V, 2, 0.0, halfwidth=0.5, n_samples=201,
                               m_cut=32)
    W = linear_ramp(-2.0)
    incoming = integrate_flow(SplineBand(pair.plus), W, q0=4.0, p0=0.4,
                              t_span=(0.0, 0.1), dt=1e-3)
    ext = extend_through_crossing(pair, W, incoming, T=0.35, dt=1e-3)
    return V, pair, W, ext


class TestBandMass:
    def test_zero_state(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        zero = GridState(grid, np.zeros(grid.n, dtype=complex))
        tab = band_mass(zero, make_cosine(4.0), n_bands=3)
        assert tab.total == 0.0
        assert all(v == 0.0 for v in tab.masses.values())

    def test_single_band_packet_concentrates(self):
        from bandcross.bloch import eigensolve
        V = make_cosine(4.0)
        _, vecs = eigensolve(V, 0.7, 1, m_cut=12)
        a0 = gaussian_envelope(sigma=1.0)
        for eps, floor in ((1.0 / 16, 0.999), (1.0 / 64, 0.9997)):
            grid = Grid(length=8, epsilon=eps, ppw=32)
            params = WavepacketParams(S=0.0, q=4.0, p=0.7, a0=a0,
                                      epsilon=eps, chi=vecs[0])
            state = assemble_wp0(params, grid)
            tab = band_mass(state, V, n_bands=3)
            assert tab.masses[1] > floor
            assert abs(sum(tab.masses.values()) + tab.rest - tab.total) < 1e-12

    def test_two_band_masses_match_packet_norms(self, crossing_setup):
        # the momentum-gradient corrector of the upper packet deposits O(eps)
        # mass in the neighboring band by design, so compare the two-band
        # state against the upper-packet-only state: the difference isolates
        # the lower packet's mass up to the O(eps * <k^2> * |dp chi|^2) band
        # impurity of any finite-width packet
        V, pair, W, ext = crossing_setup
        eps = 1.0 / 64
        grid = Grid(length=8, epsilon=eps, ppw=32)
        a0p = gaussian_envelope(sigma=1.0)
        a0m_raw = gaussian_envelope(sigma=0.8)
        a0m = Envelope(a0m_raw.y, 0.7 * a0m_raw.values)
        zero = Envelope(a0m_raw.y, np.zeros_like(a0m_raw.values))
        t = 0.33
        both = band_mass(
            two_band_ansatz(ext, TwoBandEnvelopes(a0p, a0m), pair, t, grid,
                            eps), V, n_bands=4)
        only = band_mass(
            two_band_ansatz(ext, TwoBandEnvelopes(a0p, zero), pair, t, grid,
                            eps), V, n_bands=4)
        pm = ext.minus.state_at(t)[1]
        # identify the band indices of each branch at the current momenta
        from scipy.interpolate import CubicSpline
        e_minus = float(CubicSpline(pair.minus.p_samples,
                                    pair.minus.energies)(pm))
        from bandcross.bloch import eigensolve
        evals, _ = eigensolve(V, np.mod(pm, 2 * np.pi), 4, m_cut=32)
        n_minus = int(np.argmin(np.abs(evals - e_minus))) + 1
        pp = ext.plus.state_at(t)[1]
        e_plus = float(CubicSpline(pair.plus.p_samples,
                                   pair.plus.energies)(pp))
        evals_p, _ = eigensolve(V, np.mod(pp, 2 * np.pi), 4, m_cut=32)
        n_plus = int(np.argmin(np.abs(evals_p - e_plus))) + 1
        assert n_plus != n_minus
        delta_minus = both.masses[n_minus] - only.masses[n_minus]
        assert abs(delta_minus - eps * a0m.norm() ** 2) < 2e-4
        assert abs(both.masses[n_plus] - only.masses[n_plus]) < 2e-4
        assert abs(only.masses[n_plus] - 1.0) < 3e-3

    def test_windowed_mass_isolates_packet(self, crossing_setup):
        V, pair, W, ext = crossing_setup
        eps = 1.0 / 64
        grid = Grid(length=8, epsilon=eps, ppw=32)
        a0p = gaussian_envelope(sigma=1.0)
        a0m_raw = gaussian_envelope(sigma=0.8)
        a0m = Envelope(a0m_raw.y, 0.7 * a0m_raw.values)
        env = TwoBandEnvelopes(a0_plus=a0p, a0_minus=a0m)
        t = 0.33
        state = two_band_ansatz(ext, env, pair, t, grid, eps)
        qp = ext.plus.state_at(t)[0]
        qm = ext.minus.state_at(t)[0]
        mid = 0.5 * (qp + qm)
        if qm < qp:
            window = (max(0.5, qm - 2.0), mid)
        else:
            window = (mid, min(7.5, qm + 2.0))
        tab = band_mass(state, V, n_bands=4, window=window)
        assert abs(tab.total - eps * a0m.norm() ** 2) < 2e-4
        assert abs(sum(tab.masses.values()) + tab.rest - tab.total) < 1e-10

    def test_window_empty(self):
        grid = Grid(length=4, epsilon=1.0 / 8, ppw=32)
        state = free_gaussian_state(grid, q=2.0)
        with pytest.raises(WindowEmpty):
            band_mass(state, FLAT, window=(3.0, 2.0))
        # a valid window far from the packet carries (almost) no mass
        tab = band_mass(state, FLAT, window=(3.8, 3.9))
        assert tab.total < 1e-10
