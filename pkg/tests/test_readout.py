import math

import numpy as np
import pytest

from rydsim.errors import DimensionError, DomainError
from rydsim.evolve import Schedule, Segment, evolve
from rydsim.readout import (
    DETECTION,
    derive_rng,
    detection_patterns,
    detection_probabilities,
    prepare_with_inefficiency,
    sample_shots,
)
from rydsim.spinmodel import LEVEL_ORDER, AtomArray, HamiltonianSpec, LevelScheme

from conftest import ket

G = LevelScheme.build(ground=True)
S = LevelScheme.build()


def idle(scheme, n):
    return Schedule(scheme, [Segment(0.0, HamiltonianSpec(n))])


def detect(branches, scheme, sched, **kw):
    mix = [(b.weight, evolve(b.state, sched)) for b in branches]
    return detection_probabilities(mix, scheme, sched.n_atoms, **kw)


class TestPreparation:
    def test_ideal(self):
        br = prepare_with_inefficiency("uu", S, 1.0)
        assert len(br) == 1 and br[0].weight == 1.0
        np.testing.assert_array_equal(br[0].state, ket(S, "uu"))

    def test_binomial_weights(self):
        br = prepare_with_inefficiency("uu", G, 0.88)
        np.testing.assert_allclose(sorted(b.weight for b in br), sorted([0.7744, 0.1056, 0.1056, 0.0144]), atol=1e-15)
        assert sum(b.weight for b in br) == pytest.approx(1.0, abs=1e-15)

    def test_all_ground(self):
        br = prepare_with_inefficiency("ud", G, 0.0)
        assert len(br) == 1
        np.testing.assert_array_equal(br[0].state, ket(G, "gg"))

    def test_errors(self):
        with pytest.raises(DomainError):
            prepare_with_inefficiency("u", G, 1.2)
        with pytest.raises(DimensionError):
            prepare_with_inefficiency("u", S, 0.9)
        with pytest.raises(DimensionError):
            prepare_with_inefficiency("u" * 13, G, 0.9)


class TestDetection:
    def test_mapping_total(self):
        assert set(DETECTION) == set(LEVEL_ORDER)
        assert set(DETECTION.values()) == {"u", "d"}

    def test_patterns(self):
        assert detection_patterns(2) == ["uu", "ud", "du", "dd"]

    def test_pure_state(self):
        p = detect(prepare_with_inefficiency("ud", S, 1.0), S, idle(S, 2))
        np.testing.assert_array_equal(p[0], [0, 1, 0, 0])

    def test_ground_is_recaptured(self):
        p = detect(prepare_with_inefficiency("uu", G, 0.88), G, idle(G, 2))
        assert p[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_zero_is_lost(self):
        z = LevelScheme.build(zero=True)
        p = detection_probabilities([(1.0, evolve(ket(z, "0u"), idle(z, 2)))], z, 2)
        np.testing.assert_array_equal(p[0], [0, 0, 1, 0])

    def test_single_atom_rabi_mixture(self):
        t = np.linspace(0, 1.5, 31)
        sched = Schedule(G, [Segment(1.5, HamiltonianSpec(1, mw_rabi=1.3))], t)
        p = detect(prepare_with_inefficiency("u", G, 0.88), G, sched)
        np.testing.assert_allclose(p[:, 1], 0.88 * np.sin(np.pi * 1.3 * t) ** 2, atol=1e-13)

    def test_bright_rabi_contrast(self):
        u = 4.09
        arr = AtomArray.pair(12.2, coupling=u)
        t = np.linspace(0, 1.0, 401)
        sched = Schedule(G, [Segment(1.0, HamiltonianSpec.for_array(arr, mw_rabi=0.3, mw_detuning=-u))], t)
        full = detect(prepare_with_inefficiency("uu", G, 1.0), G, sched)[:, 0]
        part = detect(prepare_with_inefficiency("uu", G, 0.88), G, sched)[:, 0]
        assert (1 - part.min()) / (1 - full.min()) == pytest.approx(0.88**2, abs=0.01)

    def test_scattered_recaptured_or_lost(self):
        sched = Schedule(S, [Segment(3.0, HamiltonianSpec(1, scattering=0.5))])
        ev = evolve(ket(S, "u"), sched)
        rec = detection_probabilities([(1.0, ev)], S, 1)
        lost = detection_probabilities([(1.0, ev)], S, 1, scattered="lost")
        assert rec[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert lost[0, 1] == pytest.approx(1 - math.exp(-1.5), abs=1e-12)

    def test_readout_flip(self):
        p = detect(prepare_with_inefficiency("ud", S, 1.0), S, idle(S, 2), readout_flip=0.1)
        np.testing.assert_allclose(p[0], [0.09, 0.81, 0.01, 0.09], atol=1e-15)

    def test_bad_options(self):
        ev = evolve(ket(S, "u"), idle(S, 1))
        with pytest.raises(DomainError):
            detection_probabilities([(1.0, ev)], S, 1, scattered="vanished")
        with pytest.raises(DomainError):
            detection_probabilities([(1.0, ev)], S, 1, readout_flip=2.0)


class TestSampling:
    def test_certain_outcome(self):
        ds = sample_shots([1, 0, 0, 0], 100, 5)
        assert ds.counts.tolist() == [100, 0, 0, 0]
        assert ds.stderr.tolist() == [0, 0, 0, 0]

    def test_determinism(self):
        a, b = sample_shots([0.2, 0.3, 0.1, 0.4], 500, 42), sample_shots([0.2, 0.3, 0.1, 0.4], 500, 42)
        np.testing.assert_array_equal(a.shots, b.shots)

    def test_frequencies_sum(self):
        ds = sample_shots([0.2, 0.3, 0.1, 0.4], 123, 1)
        assert ds.frequencies.sum() == pytest.approx(1.0, abs=1e-15)
        assert len(ds.bitstrings()) == 123
        assert ds.frequency("uu") == ds.frequencies[0]

    def test_stderr(self):
        ds = sample_shots([0.5, 0.5], 1000, 9, patterns=["u", "d"])
        p = ds.frequencies[0]
        assert ds.stderr[0] == pytest.approx(math.sqrt(p * (1 - p) / 1000))

    def test_concentration(self):
        n, seeds = 10**5, 200
        bad = 0
        for seed in range(seeds):
            f = sample_shots([0.5, 0.5], n, seed, patterns=["u", "d"]).frequencies[0]
            bad += abs(f - 0.5) > 3 * math.sqrt(0.25 / n)
        assert bad / seeds <= 0.01

    def test_large_n_convergence(self):
        p = np.array([0.61, 0.2, 0.15, 0.04])
        ds = sample_shots(p, 10**6, 7)
        sigma = np.sqrt(p * (1 - p) / 10**6)
        assert np.all(np.abs(ds.frequencies - p) < 4 * sigma)

    def test_invalid_distribution(self):
        with pytest.raises(DomainError):
            sample_shots([0.5, 0.6], 10, 0, patterns=["u", "d"])
        with pytest.raises(DomainError):
            sample_shots([1.0, 0.0], 0, 0, patterns=["u", "d"])
        with pytest.raises(DimensionError):
            sample_shots([0.5, 0.25, 0.25], 10, 0)


class TestSeeds:
    def test_order_independent(self):
        forward = {(i, j): derive_rng(3, i, j).random() for i in range(4) for j in range(4)}
        backward = {(i, j): derive_rng(3, i, j).random() for i in reversed(range(4)) for j in reversed(range(4))}
        assert forward == backward

    def test_distinct_streams(self):
        assert derive_rng(3, 0, 1).random() != derive_rng(3, 1, 0).random()
        assert derive_rng(3, 0).random() != derive_rng(4, 0).random()
