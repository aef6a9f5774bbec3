import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydsim.errors import DimensionError, DomainError, NumericError
from rydsim.evolve import (
    Ramp,
    Schedule,
    Segment,
    evolve,
    evolve_jumps,
    integrate_reference,
    populations,
    propagator,
)
from rydsim.spinmodel import AtomArray, HamiltonianSpec, LevelScheme, build_hamiltonian

from conftest import ket

S = LevelScheme.build()


def pair_spec(u=0.40, **kw):
    return HamiltonianSpec.for_array(AtomArray.pair(25.0, coupling=u), **kw)


def overlap2(a, b):
    return abs(np.vdot(a, b)) ** 2


class TestPropagator:
    def test_zero_time(self):
        np.testing.assert_array_equal(propagator(build_hamiltonian(S, pair_spec()), 0.0), np.eye(4))

    def test_pi_pulse(self):
        u = propagator(build_hamiltonian(S, HamiltonianSpec(1, mw_rabi=1.6)), 1 / (2 * 1.6))
        assert overlap2(ket(S, "d"), u @ ket(S, "u")) == pytest.approx(1.0, abs=1e-14)

    def test_half_exchange_period(self):
        u = propagator(build_hamiltonian(S, pair_spec()), 0.625)
        assert overlap2(ket(S, "du"), u @ ket(S, "ud")) == pytest.approx(1.0, abs=1e-14)

    def test_unitary(self):
        u = propagator(build_hamiltonian(S, pair_spec(mw_rabi=1.3, light_shifts=[4.8, 0])), 0.77)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-12)

    def test_sub_unitary_with_loss(self):
        u = propagator(build_hamiltonian(S, pair_spec(mw_rabi=1.3, scattering=[0.5, 0.1])), 2.0)
        assert np.linalg.svd(u, compute_uv=False).max() <= 1 + 1e-10

    def test_rejects_bad_input(self):
        with pytest.raises(DomainError):
            propagator(np.eye(2), -1.0)
        with pytest.raises(NumericError):
            propagator(np.array([[np.nan, 0], [0, 0]]), 1.0)


class TestSchedule:
    def test_record_times_validated(self):
        spec = HamiltonianSpec(1)
        with pytest.raises(DomainError):
            Schedule(S, [Segment(1.0, spec)], [0.5, 0.2])
        with pytest.raises(DomainError):
            Schedule(S, [Segment(1.0, spec)], [2.0])

    def test_negative_duration(self):
        with pytest.raises(DomainError):
            Segment(-1.0, HamiltonianSpec(1))

    def test_ramp_substeps(self):
        with pytest.raises(DomainError):
            Ramp(1)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            evolve(np.ones(3), Schedule(S, [Segment(1.0, HamiltonianSpec(1))]))


class TestEvolve:
    def test_zero_duration(self):
        psi = (ket(S, "ud") + 1j * ket(S, "du")) / math.sqrt(2)
        ev = evolve(psi, Schedule(S, [Segment(0.0, pair_spec())]))
        np.testing.assert_array_equal(ev.final, psi)

    def test_exchange_cos2(self):
        t = np.linspace(0, 3, 61)
        ev = evolve(ket(S, "ud"), Schedule(S, [Segment(3.0, pair_spec())], t))
        np.testing.assert_allclose(populations(ev.states, "ud", S), np.cos(2 * np.pi * 0.40 * t) ** 2, atol=1e-12)

    def test_quarter_period(self):
        ev = evolve(ket(S, "ud"), Schedule(S, [Segment(0.3125, pair_spec())]))
        assert populations(ev.final, "ud", S) == pytest.approx(0.5, abs=1e-14)

    def test_freeze_2pi_window(self):
        psi = (ket(S, "ud") - 1j * ket(S, "du")) / math.sqrt(2)
        tau = 2 * math.pi / (2 * math.pi * 4.8)
        assert tau == pytest.approx(0.20833, abs=1e-5)
        t = np.linspace(0, tau, 201)
        ev = evolve(psi, Schedule(S, [Segment(tau, pair_spec(light_shifts=[4.8, 0]))], t))
        # the tilted rotation returns close to the equator by the end of the window
        assert abs(populations(ev.final, "ud", S) - 0.5) <= 0.027
        # relative phase 2 pi: close to the input up to a global phase
        assert overlap2(psi, ev.final) > 0.97

    def test_freeze_bound(self):
        u, d = 0.40, 4.8
        bound = u**2 / (u**2 + (d / 2) ** 2)
        assert bound == pytest.approx(0.0270, abs=1e-4)
        t_star = 1 / (2 * math.sqrt(4 * u**2 + d**2))
        t = np.sort(np.concatenate([np.linspace(0, 1.0, 2001), [t_star]]))
        ev = evolve(ket(S, "du"), Schedule(S, [Segment(1.0, pair_spec(u, light_shifts=[d, 0]))], t))
        assert abs(np.max(populations(ev.states, "ud", S)) - bound) < 1e-6

    def test_composition(self):
        a = [Segment(0.4, pair_spec(mw_rabi=1.0, light_shifts=[4.8, 0])), Segment(0.3, pair_spec(mw_detuning=0.2))]
        b = [Segment(0.9, pair_spec(mw_rabi=0.3, mw_phase=1.0))]
        psi = ket(S, "uu")
        mid = evolve(psi, Schedule(S, a)).final
        two = evolve(mid, Schedule(S, b)).final
        one = evolve(psi, Schedule(S, a + b)).final
        assert np.linalg.norm(two - one) < 1e-10

    def test_then(self):
        a = Schedule(S, [Segment(0.5, pair_spec())], [0.25, 0.5])
        b = Schedule(S, [Segment(0.5, pair_spec(light_shifts=[1, 0]))], [0.1, 0.5])
        c = a.then(b)
        np.testing.assert_allclose(c.record_times, [0.25, 0.5, 0.6, 1.0])
        ev = evolve(ket(S, "ud"), c)
        np.testing.assert_allclose(ev.states[:2], evolve(ket(S, "ud"), a).states, atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(u=st.floats(0.05, 5.0), t=st.floats(0.0, 100.0))
    def test_u_sign_independence(self, u, t):
        pops = [np.abs(evolve(ket(S, "ud"), Schedule(S, [Segment(t, pair_spec(s * u))])).final) ** 2 for s in (1, -1)]
        assert np.max(np.abs(pops[0] - pops[1])) < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(
        durations=st.lists(st.floats(0.0, 25.0), min_size=1, max_size=4),
        rabi=st.floats(0, 3), shift=st.floats(-10, 10), det=st.floats(-3, 3),
    )
    def test_norm_conservation(self, durations, rabi, shift, det):
        segs = [Segment(d, pair_spec(mw_rabi=rabi, light_shifts=[shift, 0], mw_detuning=det)) for d in durations]
        ev = evolve(ket(S, "uu"), Schedule(S, segs))
        assert abs(1 - ev.norms()[0]) < 1e-10

    def test_norm_non_increasing_with_loss(self):
        t = np.linspace(0, 5, 51)
        ev = evolve(ket(S, "uu"), Schedule(S, [Segment(5.0, pair_spec(mw_rabi=0.5, scattering=[0.2, 0.0]))], t))
        assert np.all(np.diff(ev.norms()) <= 1e-15)
        np.testing.assert_allclose(ev.atom_loss.sum(axis=1), 1 - ev.norms(), atol=1e-12)
        assert np.all(ev.atom_loss[:, 1] == 0)

    def test_pure_decay(self):
        spec = HamiltonianSpec(1, scattering=0.3)
        ev = evolve(ket(S, "u"), Schedule(S, [Segment(2.0, spec)], [0.0, 1.0, 2.0]))
        np.testing.assert_allclose(ev.norms(), np.exp(-0.3 * np.array([0, 1, 2])), rtol=1e-12)

    def test_ramp_scales_shift(self):
        spec = HamiltonianSpec(1, light_shifts=0.5)
        ramped = Segment(1.0, spec, Ramp(4, 0.0, 1.0))
        shifts = [s.light_shifts[0] for _, s in ramped.pieces()]
        np.testing.assert_allclose(shifts, [0.0625, 0.1875, 0.3125, 0.4375])
        # phase accumulated by a linear ramp = half of the flat value
        psi = (ket(S, "u") + ket(S, "d")) / math.sqrt(2)
        out = evolve(psi, Schedule(S, [ramped])).final
        assert np.angle(out[0] / out[1]) == pytest.approx(-2 * np.pi * 0.25, abs=1e-12)


class TestReference:
    def test_zero_hamiltonian(self):
        psi = (ket(S, "ud") + ket(S, "dd")) / math.sqrt(2)
        ev = integrate_reference(psi, Schedule(S, [Segment(1.0, HamiltonianSpec(2))], [0.5, 1.0]))
        np.testing.assert_array_equal(ev.states[-1], psi)

    def test_single_atom_rabi(self):
        t = np.linspace(0, 2, 41)
        ev = integrate_reference(ket(S, "u"), Schedule(S, [Segment(2.0, HamiltonianSpec(1, mw_rabi=1.6))], t), 1e-3)
        np.testing.assert_allclose(populations(ev.states, "d", S), np.sin(np.pi * 1.6 * t) ** 2, atol=1e-8)

    def test_fig3b_agreement(self):
        segs = [Segment(1 / 2.6, pair_spec(mw_rabi=1.3, light_shifts=[4.8, 0])), Segment(3.0, pair_spec())]
        sched = Schedule(S, segs, 1 / 2.6 + np.linspace(0, 3, 31))
        a = populations(evolve(ket(S, "uu"), sched).states, ["uu", "ud", "du", "dd"], S)
        b = populations(integrate_reference(ket(S, "uu"), sched, 1e-3).states, ["uu", "ud", "du", "dd"], S)
        assert np.max(np.abs(a - b)) < 1e-8

    def test_lossy_agreement(self):
        sched = Schedule(S, [Segment(2.0, pair_spec(mw_rabi=0.8, light_shifts=[4.8, 0], scattering=[0.3, 0]))],
                         np.linspace(0, 2, 9))
        a, b = evolve(ket(S, "uu"), sched), integrate_reference(ket(S, "uu"), sched, 1e-3)
        assert np.max(np.abs(np.abs(a.states) ** 2 - np.abs(b.states) ** 2)) < 1e-8

    def test_refuses_coarse_step(self):
        with pytest.raises(DomainError):
            integrate_reference(ket(S, "u"), Schedule(S, [Segment(0.05, HamiltonianSpec(1))]), step=0.01)


class TestPopulations:
    def test_basis(self):
        assert populations(ket(S, "ud"), "ud", S) == 1.0
        assert populations(ket(S, "ud"), "↑↓", S) == 1.0

    def test_wildcard(self):
        psi = (ket(S, "ud") + ket(S, "du")) / math.sqrt(2)
        assert populations(psi, "u.", S) == pytest.approx(0.5)
        assert populations(psi, "*·", S) == pytest.approx(1.0)

    def test_malformed(self):
        with pytest.raises(DomainError):
            populations(ket(S, "ud"), "ux", S)
        with pytest.raises(DomainError):
            populations(ket(S, "ud"), "u", S)
        with pytest.raises(DomainError):
            populations(ket(S, "ud"), "u0", S)


class TestJumps:
    def test_no_loss_matches_exact(self):
        sched = Schedule(S, [Segment(1.0, pair_spec(mw_rabi=1.0))], np.linspace(0, 1, 5))
        a = evolve(ket(S, "uu"), sched)
        b = evolve_jumps(ket(S, "uu"), sched, np.random.default_rng(0), dt=0.01)
        np.testing.assert_allclose(np.abs(a.states) ** 2, np.abs(b.states) ** 2, atol=1e-12)
        assert not b.scattered.any()

    def test_needs_ground(self):
        sched = Schedule(S, [Segment(1.0, HamiltonianSpec(1, scattering=1.0))])
        with pytest.raises(DimensionError):
            evolve_jumps(ket(S, "u"), sched, np.random.default_rng(0))

    def test_decay_statistics(self):
        g = LevelScheme.build(ground=True)
        sched = Schedule(g, [Segment(1.0, HamiltonianSpec(1, scattering=1.0))])
        rng = np.random.default_rng(3)
        hits = [evolve_jumps(ket(g, "u"), sched, rng, dt=0.01).scattered[-1, 0] for _ in range(2000)]
        p = 1 - math.exp(-1.0)
        assert abs(np.mean(hits) - p) < 4 * math.sqrt(p * (1 - p) / 2000)

    def test_reproducible(self):
        g = LevelScheme.build(ground=True)
        sched = Schedule(g, [Segment(3.0, HamiltonianSpec(1, mw_rabi=1.0, scattering=0.5))], np.linspace(0, 3, 7))
        a = evolve_jumps(ket(g, "u"), sched, np.random.default_rng(11))
        b = evolve_jumps(ket(g, "u"), sched, np.random.default_rng(11))
        np.testing.assert_array_equal(a.states, b.states)
