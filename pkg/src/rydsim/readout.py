"""Preparation inefficiency, state-selective detection and shot sampling.

Detection patterns are strings over ``u`` (atom recaptured, read as spin up)
and ``d`` (atom lost, read as spin down), one character per atom, ordered
``uu, ud, du, dd`` for two atoms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .evolve import Evolution
from .spinmodel import LevelScheme, basis_state

#: Level -> detection outcome. The de-excitation pulse returns ``up`` to the
#: ground state (recaptured); ``down`` and ``zero`` stay in Rydberg levels and
#: are lost; atoms never excited are recaptured.
DETECTION = {"up": "u", "down": "d", "zero": "d", "ground": "u"}
MAX_BRANCH_ATOMS = 12


def detection_patterns(n_atoms: int) -> list[str]:
    return ["".join(p) for p in product("ud", repeat=n_atoms)]


def derive_rng(seed: int, *index: int) -> np.random.Generator:
    """Generator for one grid point.

    The stream depends only on ``(seed, index)``, never on execution order,
    so parallel scans reproduce serial ones.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(i) for i in index)))


@dataclass(frozen=True, eq=False)
class Branch:
    """One term of the preparation mixture."""

    weight: float
    state: np.ndarray
    prepared: tuple[bool, ...]


def prepare_with_inefficiency(recipe: str | Sequence[str], scheme: LevelScheme, eta: float) -> list[Branch]:
    """Each atom ends in its recipe level with probability ``eta``, else in ``ground``.

    Branches with zero weight are dropped, so ``eta = 1`` gives a single branch.
    """
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    levels = list(recipe)
    n = len(levels)
    if n > MAX_BRANCH_ATOMS:
        raise DimensionError(f"mixture over {n} atoms exceeds the {MAX_BRANCH_ATOMS}-atom guard")
    if eta < 1.0 and not scheme.has_ground:
        raise DimensionError("eta < 1 needs the 'ground' level in the scheme")
    branches = []
    for mask in product((True, False), repeat=n):
        k = sum(mask)
        weight = eta**k * (1.0 - eta) ** (n - k)
        if weight == 0.0:
            continue
        pattern = [lvl if ok else "ground" for lvl, ok in zip(levels, mask)]
        branches.append(Branch(weight, basis_state(scheme, pattern), tuple(mask)))
    return branches


@lru_cache(maxsize=64)
def _outcome_matrix(labels: tuple[str, ...], n_atoms: int) -> np.ndarray:
    d = len(labels)
    local = ["ud".index(DETECTION[x]) for x in labels]
    m = np.zeros((d**n_atoms, 2**n_atoms))
    for idx, digits in enumerate(product(range(d), repeat=n_atoms)):
        bits = [local[x] for x in digits]
        m[idx, int(np.ravel_multi_index(bits, (2,) * n_atoms))] = 1.0
    return m


def _set_atom(p: np.ndarray, atom: int, outcome: int, n: int) -> np.ndarray:
    """Marginalize ``atom`` out of pattern probabilities and pin it to ``outcome``."""
    t = p.shape[0]
    cube = p.reshape((t,) + (2,) * n)
    marg = cube.sum(axis=atom + 1, keepdims=True)
    out = np.zeros_like(cube)
    index = [slice(None)] * (n + 1)
    index[atom + 1] = slice(outcome, outcome + 1)
    out[tuple(index)] = marg
    return out.reshape(t, -1)


def _flip(p: np.ndarray, rate: float, n: int) -> np.ndarray:
    t = p.shape[0]
    cube = p.reshape((t,) + (2,) * n)
    for atom in range(n):
        cube = (1.0 - rate) * cube + rate * np.flip(cube, axis=atom + 1)
    return cube.reshape(t, -1)


def detection_probabilities(
    mixture: Sequence[tuple[float, Evolution]],
    scheme: LevelScheme,
    n_atoms: int,
    scattered: str = "recaptured",
    readout_flip: float = 0.0,
) -> np.ndarray:
    """Mixture-averaged pattern probabilities, shape ``(n_times, 2**n_atoms)``.

    Norm lost to scattering (non-Hermitian mode) is booked per atom from
    ``Evolution.atom_loss``: the scattered atom reads as ``scattered`` and the
    others follow the surviving state's marginal.
    """
    if scattered not in ("recaptured", "lost"):
        raise DomainError("scattered must be 'recaptured' or 'lost'")
    if not 0.0 <= readout_flip <= 1.0:
        raise DomainError("readout_flip must lie in [0, 1]")
    s_out = 0 if scattered == "recaptured" else 1
    m = _outcome_matrix(scheme.labels, n_atoms)
    total = None
    for weight, ev in mixture:
        states = np.atleast_2d(ev.states)
        if states.shape[1] != m.shape[0]:
            raise DimensionError("evolved state does not match scheme and atom count")
        surv = (np.abs(states) ** 2) @ m
        p = surv.copy()
        if ev.scattered is not None:
            for i in range(n_atoms):
                hit = ev.scattered[:, i]
                if np.any(hit):
                    p[hit] = _set_atom(p[hit], i, s_out, n_atoms)
        if ev.atom_loss is not None:
            norm2 = surv.sum(axis=1, keepdims=True)
            cond = np.divide(surv, norm2, out=np.zeros_like(surv), where=norm2 > 0)
            cond[norm2[:, 0] <= 0, 0] = 1.0
            for i in range(n_atoms):
                p += ev.atom_loss[:, i : i + 1] * _set_atom(cond, i, s_out, n_atoms)
        total = weight * p if total is None else total + weight * p
    if total is None:
        raise DomainError("empty mixture")
    if readout_flip:
        total = _flip(total, readout_flip, n_atoms)
    return total


@dataclass(frozen=True, eq=False)
class ShotDataset:
    """Per-shot outcomes (indices into ``patterns``) and derived estimates."""

    patterns: tuple[str, ...]
    shots: np.ndarray
    seed: object = None

    @property
    def n(self) -> int:
        return int(self.shots.size)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.shots, minlength=len(self.patterns))

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def stderr(self) -> np.ndarray:
        p = self.frequencies
        return np.sqrt(p * (1.0 - p) / self.n)

    def bitstrings(self) -> list[str]:
        return [self.patterns[k] for k in self.shots]

    def frequency(self, pattern: str) -> float:
        return float(self.frequencies[self.patterns.index(pattern)])


def sample_shots(probabilities, n: int, seed=None, patterns: Sequence[str] | None = None) -> ShotDataset:
    """Draw ``n`` independent shots from a pattern distribution.

    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    p = np.asarray(probabilities, dtype=float).ravel()
    if n < 1:
        raise DomainError("need at least one shot")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"invalid distribution (sum {p.sum():.12g})")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    if patterns is None:
        n_atoms = int(np.log2(p.size))
        if 2**n_atoms != p.size:
            raise DimensionError("probability vector length must be a power of two")
        patterns = detection_patterns(n_atoms)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shots = rng.choice(p.size, size=n, p=p)
    return ShotDataset(tuple(patterns), shots, None if isinstance(seed, np.random.Generator) else seed)
