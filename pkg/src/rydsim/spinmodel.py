"""Product basis, operator algebra and the rotating-frame XY Hamiltonian.

All frequencies handed to this module are ordinary frequencies in MHz; the
assembled matrices are angular frequencies in rad/us, so ``exp(-1j * H * t)``
with ``t`` in microseconds is the propagator.

Conventions
-----------
Local levels are ordered ``up, down[, zero][, ground]`` and atom 0 is the most
significant factor of the Kronecker product. ``sigma_plus`` flips down -> up.
In the frame rotating at the microwave frequency the Hamiltonian is::

    H/hbar = sum_i 2pi(-D_mw + d_i) n_up_i
           + sum_i 2pi(W_mw/2)(e^{i phi} s-_i + e^{-i phi} s+_i)
           + sum_{i<j} 2pi U_ij (s+_i s-_j + s-_i s+_j)
           + zero-level terms - (i/2) sum_i G_i n_up_i

The ``zero`` level sits ``zeeman_split`` below ``up`` (m_J = -1/2 under m_J = 3/2
for a positive g-factor), shifted by ``zero_shift``, and is Raman-coupled to
``up`` with ``2pi(W_R/2)``. ``ground`` is inert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, DomainError, GeometryError, NonHermitianError

TWO_PI = 2.0 * np.pi

#: Calculated C3 for the 61D3/2 / 62P1/2 pair, in MHz um^3 (U/h convention).
C3_MHZ_UM3 = 7456.0

LEVEL_ORDER = ("up", "down", "zero", "ground")
LEVEL_SYMBOLS = {"up": "u", "down": "d", "zero": "0", "ground": "g"}
_SYMBOL_ALIASES = {
    "u": "up", "↑": "up",
    "d": "down", "↓": "down",
    "0": "zero", "z": "zero",
    "g": "ground",
}
WILDCARDS = frozenset(".*·")


@dataclass(frozen=True)
class LevelScheme:
    """Ordered local levels shared by every atom."""

    labels: tuple[str, ...] = ("up", "down")

    def __post_init__(self):
        labels = tuple(self.labels)
        if labels[:2] != ("up", "down"):
            raise DomainError("level scheme must start with ('up', 'down')")
        extra = labels[2:]
        if len(set(labels)) != len(labels) or any(x not in ("zero", "ground") for x in extra):
            raise DomainError(f"invalid level labels {labels}")
        if list(extra) != sorted(extra, key=LEVEL_ORDER.index):
            raise DomainError("levels must be ordered up, down, zero, ground")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def build(cls, zero: bool = False, ground: bool = False) -> "LevelScheme":
        labels = ["up", "down"]
        if zero:
            labels.append("zero")
        if ground:
            labels.append("ground")
        return cls(tuple(labels))

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def has_zero(self) -> bool:
        return "zero" in self.labels

    @property
    def has_ground(self) -> bool:
        return "ground" in self.labels

    def index(self, label: str) -> int:
        label = _SYMBOL_ALIASES.get(label, label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"level {label!r} not in scheme {self.labels}") from None

    def total_dim(self, n_atoms: int) -> int:
        return self.dim ** n_atoms

    def basis_labels(self, n_atoms: int) -> list[str]:
        """Basis-state names such as ``'ud'`` in matrix order."""
        syms = [LEVEL_SYMBOLS[x] for x in self.labels]
        return ["".join(p) for p in product(syms, repeat=n_atoms)]


@dataclass(frozen=True, eq=False)
class AtomArray:
    """Atom positions (um) and pairwise dipolar couplings.

    ``coupling_overrides`` maps index pairs to U_ij/h in MHz and replaces the
    C3/R^3 value for that pair.
    """

    positions: np.ndarray
    c3: float = C3_MHZ_UM3
    coupling_overrides: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise DimensionError("positions must be an (N, 3) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(pos[i] - pos[j]) == 0.0:
                    raise GeometryError(f"atoms {i} and {j} are coincident")
        overrides = {}
        for (i, j), value in dict(self.coupling_overrides).items():
            i, j = int(i), int(j)
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise DomainError(f"invalid override pair ({i}, {j})")
            overrides[(min(i, j), max(i, j))] = float(value)
        object.__setattr__(self, "coupling_overrides", overrides)

    @classmethod
    def pair(cls, distance: float, c3: float = C3_MHZ_UM3, coupling: float | None = None) -> "AtomArray":
        """Two atoms on the quantization (z) axis separated by ``distance`` um."""
        overrides = {} if coupling is None else {(0, 1): coupling}
        return cls(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, float(distance)]]), c3, overrides)

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))

    def coupling_matrix(self) -> np.ndarray:
        n = self.n_atoms
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = pair_coupling(self, i, j)
        return out


def pair_coupling(array: AtomArray, i: int, j: int) -> float:
    """Exchange coupling U_ij/h in MHz for atoms ``i`` and ``j``."""
    n = array.n_atoms
    if i == j:
        raise DomainError("pair_coupling needs two distinct atoms")
    if not (0 <= i < n and 0 <= j < n):
        raise DomainError(f"atom index out of range for {n} atoms")
    key = (min(i, j), max(i, j))
    if key in array.coupling_overrides:
        return array.coupling_overrides[key]
    r = array.distance(i, j)
    if r == 0.0:
        raise GeometryError(f"atoms {i} and {j} are coincident")
    return array.c3 / r**3


def _per_atom(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """One piecewise-constant control epoch.

    Frequencies in MHz, rates in 1/us. Per-atom fields accept a scalar, which
    is broadcast to every atom.
    """

    n_atoms: int
    mw_rabi: float = 0.0
    mw_detuning: float = 0.0
    mw_phase: float = 0.0
    light_shifts: Sequence[float] | float = 0.0
    couplings: np.ndarray | None = None
    scattering: Sequence[float] | float = 0.0
    raman: Sequence[float] | float = 0.0
    zeeman_split: Sequence[float] | float = 15.0
    zero_shift: Sequence[float] | float = 0.0

    def __post_init__(self):
        n = int(self.n_atoms)
        if n < 1:
            raise DimensionError("n_atoms must be >= 1")
        for name in ("light_shifts", "scattering", "raman", "zeeman_split", "zero_shift"):
            object.__setattr__(self, name, _per_atom(getattr(self, name), n, name))
        if np.any(self.scattering < 0):
            raise DomainError("scattering rates must be non-negative")
        if self.couplings is None:
            cpl = np.zeros((n, n))
        else:
            cpl = np.asarray(self.couplings, dtype=float)
        if cpl.shape != (n, n):
            raise DimensionError(f"couplings must be ({n}, {n}), got {cpl.shape}")
        if not np.allclose(cpl, cpl.T, rtol=0, atol=1e-15):
            raise DomainError("coupling table must be symmetric")
        object.__setattr__(self, "couplings", cpl)

    @classmethod
    def for_array(cls, array: AtomArray, **kwargs) -> "HamiltonianSpec":
        return cls(n_atoms=array.n_atoms, couplings=array.coupling_matrix(), **kwargs)

    def replace(self, **changes) -> "HamiltonianSpec":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return HamiltonianSpec(**kw)

    @property
    def lossy(self) -> bool:
        return bool(np.any(self.scattering > 0))


@lru_cache(maxsize=256)
def _site_op(labels: tuple[str, ...], n_atoms: int, site: int, a: int, b: int) -> np.ndarray:
    """|a><b| acting on ``site``, identity elsewhere."""
    d = len(labels)
    local = np.zeros((d, d))
    local[a, b] = 1.0
    left = np.eye(d**site)
    right = np.eye(d ** (n_atoms - site - 1))
    op = np.kron(np.kron(left, local), right)
    op.setflags(write=False)
    return op


def site_operator(scheme: LevelScheme, n_atoms: int, site: int, a: str, b: str) -> np.ndarray:
    """Embedded ket-bra ``|a><b|`` on one atom."""
    if not 0 <= site < n_atoms:
        raise DimensionError(f"site {site} out of range")
    return _site_op(scheme.labels, n_atoms, site, scheme.index(a), scheme.index(b))


def sigma_plus(scheme: LevelScheme, n_atoms: int, site: int) -> np.ndarray:
    return site_operator(scheme, n_atoms, site, "up", "down")


def sigma_minus(scheme: LevelScheme, n_atoms: int, site: int) -> np.ndarray:
    return site_operator(scheme, n_atoms, site, "down", "up")


def n_up(scheme: LevelScheme, n_atoms: int, site: int) -> np.ndarray:
    return site_operator(scheme, n_atoms, site, "up", "up")


def excitation_number(scheme: LevelScheme, n_atoms: int) -> np.ndarray:
    """Total number of atoms in ``up``."""
    return sum(n_up(scheme, n_atoms, i) for i in range(n_atoms))


def swap_operator(scheme: LevelScheme, n_atoms: int, i: int, j: int) -> np.ndarray:
    """Permutation matrix exchanging the states of atoms ``i`` and ``j``."""
    d = scheme.dim
    dim = d**n_atoms
    perm = np.zeros((dim, dim))
    for idx, digits in enumerate(product(range(d), repeat=n_atoms)):
        swapped = list(digits)
        swapped[i], swapped[j] = swapped[j], swapped[i]
        target = int(np.ravel_multi_index(swapped, (d,) * n_atoms))
        perm[target, idx] = 1.0
    return perm


def basis_state(scheme: LevelScheme, pattern: str | Sequence[str]) -> np.ndarray:
    """Product state from per-atom level names or symbols, e.g. ``'ud'``."""
    items = list(pattern)
    idx = [scheme.index(x) for x in items]
    vec = np.zeros(scheme.dim ** len(idx), dtype=complex)
    vec[int(np.ravel_multi_index(idx, (scheme.dim,) * len(idx)))] = 1.0
    return vec


def _check_scheme(scheme: LevelScheme, spec: HamiltonianSpec):
    if np.any(spec.raman != 0) and not scheme.has_zero:
        raise DimensionError("Raman coupling requires the 'zero' level in the scheme")
    if scheme.total_dim(spec.n_atoms) > 4096:
        raise DimensionError("Hilbert space too large for dense simulation")


def drive_hamiltonian(scheme: LevelScheme, spec: HamiltonianSpec) -> np.ndarray:
    """Microwave coupling part of the Hamiltonian (rad/us)."""
    _check_scheme(scheme, spec)
    n = spec.n_atoms
    dim = scheme.total_dim(n)
    h = np.zeros((dim, dim), dtype=complex)
    if spec.mw_rabi == 0.0:
        return h
    amp = TWO_PI * spec.mw_rabi / 2.0
    phase = np.exp(1j * spec.mw_phase)
    for i in range(n):
        h += amp * (phase * sigma_minus(scheme, n, i) + np.conj(phase) * sigma_plus(scheme, n, i))
    return h


def build_hamiltonian(scheme: LevelScheme, spec: HamiltonianSpec) -> np.ndarray:
    """Assemble the (possibly non-Hermitian) Hamiltonian in rad/us."""
    _check_scheme(scheme, spec)
    n = spec.n_atoms
    h = drive_hamiltonian(scheme, spec)
    for i in range(n):
        nu = n_up(scheme, n, i)
        energy = -spec.mw_detuning + spec.light_shifts[i]
        if energy or spec.scattering[i]:
            h = h + (TWO_PI * energy - 0.5j * spec.scattering[i]) * nu
        if scheme.has_zero:
            z = site_operator(scheme, n, i, "zero", "zero")
            h = h + TWO_PI * (-spec.mw_detuning - spec.zeeman_split[i] + spec.zero_shift[i]) * z
            if spec.raman[i]:
                c = TWO_PI * spec.raman[i] / 2.0
                h = h + c * (site_operator(scheme, n, i, "zero", "up") + site_operator(scheme, n, i, "up", "zero"))
    for i in range(n):
        for j in range(i + 1, n):
            u = spec.couplings[i, j]
            if u:
                hop = sigma_plus(scheme, n, i) @ sigma_minus(scheme, n, j)
                h = h + TWO_PI * u * (hop + hop.T)
    return np.asarray(h, dtype=complex)


def is_hermitian(h: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    return float(np.max(np.abs(h - h.conj().T), initial=0.0)) <= rtol * scale


def eigenmodes(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues (rad/us) and orthonormal eigenvectors (columns)."""
    if not is_hermitian(h):
        raise NonHermitianError(
            "Hamiltonian has loss terms; eigenmodes need Gamma = 0 "
            "(use rydsim.evolve with the non-Hermitian or jump treatment instead)"
        )
    return np.linalg.eigh(0.5 * (h + h.conj().T))


def drive_matrix_element(h_drive: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """``|<a|H_drive|b>|`` expressed as an ordinary frequency in MHz."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if h_drive.shape != (a.size, a.size) or a.shape != b.shape:
        raise DimensionError("state and operator dimensions differ")
    terms = np.conj(a) * (h_drive @ b)
    # correctly rounded sums, so symmetric cancellations come out exactly zero
    return abs(complex(math.fsum(terms.real), math.fsum(terms.imag))) / TWO_PI
