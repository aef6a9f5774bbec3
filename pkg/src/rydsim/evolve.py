"""Piecewise-constant time evolution.

Times are in microseconds. States are plain complex numpy vectors over the
product basis of a :class:`~rydsim.spinmodel.LevelScheme`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, DomainError, NumericError
from .spinmodel import (
    LEVEL_SYMBOLS,
    WILDCARDS,
    HamiltonianSpec,
    LevelScheme,
    _SYMBOL_ALIASES,
    build_hamiltonian,
    is_hermitian,
    n_up,
    site_operator,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Ramp:
    """Linear ramp of the addressing intensity across a segment.

    Light shifts, scattering rates and Raman couplings (all proportional to
    intensity) go from ``start`` to ``end`` times their nominal value, sampled
    at the midpoints of ``substeps`` equal sub-intervals.
    """

    substeps: int
    start: float = 0.0
    end: float = 1.0

    def __post_init__(self):
        if self.substeps < 2:
            raise DomainError("a ramp needs at least 2 substeps")


@dataclass(frozen=True, eq=False)
class Segment:
    duration: float
    spec: HamiltonianSpec
    ramp: Ramp | None = None
    label: str = ""

    def __post_init__(self):
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise DomainError(f"segment duration must be finite and >= 0, got {self.duration}")

    def pieces(self) -> Iterator[tuple[float, HamiltonianSpec]]:
        if self.ramp is None:
            yield self.duration, self.spec
            return
        n = self.ramp.substeps
        dt = self.duration / n
        for k in range(n):
            s = self.ramp.start + (self.ramp.end - self.ramp.start) * (k + 0.5) / n
            yield dt, self.spec.replace(
                light_shifts=self.spec.light_shifts * s,
                scattering=self.spec.scattering * s,
                raman=self.spec.raman * s,
            )


@dataclass(frozen=True, eq=False)
class Schedule:
    """Ordered segments plus the times (from 0) at which states are recorded."""

    scheme: LevelScheme
    segments: tuple[Segment, ...]
    record_times: np.ndarray = field(default=None)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if segs:
            n = {s.spec.n_atoms for s in segs}
            if len(n) != 1:
                raise DimensionError("all segments must describe the same number of atoms")
        total = self.duration
        rec = np.array([total] if self.record_times is None else self.record_times, dtype=float).ravel()
        if np.any(np.diff(rec) < 0):
            raise DomainError("record times must be non-decreasing")
        if rec.size and (rec[0] < 0 or rec[-1] > total * (1 + 1e-12) + 1e-12):
            raise DomainError(f"record times must lie within [0, {total}]")
        object.__setattr__(self, "record_times", np.minimum(rec, total))

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def n_atoms(self) -> int | None:
        return self.segments[0].spec.n_atoms if self.segments else None

    def pieces(self) -> list[tuple[float, HamiltonianSpec]]:
        return [p for seg in self.segments for p in seg.pieces()]

    def then(self, other: "Schedule") -> "Schedule":
        """Concatenate, recording at ``other``'s times shifted by this duration."""
        rec = np.concatenate([self.record_times, other.record_times + self.duration])
        return Schedule(self.scheme, self.segments + other.segments, rec)


@dataclass(frozen=True, eq=False)
class Evolution:
    """Recorded states. ``atom_loss[k, i]`` is the probability that atom ``i``
    scattered before ``times[k]`` (non-Hermitian mode); ``scattered`` flags
    jumped atoms (trajectory mode)."""

    times: np.ndarray
    states: np.ndarray
    atom_loss: np.ndarray | None = None
    scattered: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.states) ** 2, axis=1)


class _Piece:
    """Cached propagators for one constant Hamiltonian."""

    def __init__(self, scheme: LevelScheme, spec: HamiltonianSpec):
        self.spec = spec
        self.h = build_hamiltonian(scheme, spec)
        if not np.all(np.isfinite(self.h)):
            raise NumericError("Hamiltonian has non-finite entries")
        self.hermitian = is_hermitian(self.h)
        self._cache: dict[float, np.ndarray] = {}
        if self.hermitian:
            self.w, self.v = np.linalg.eigh(0.5 * (self.h + self.h.conj().T))
        n = spec.n_atoms
        self.loss_ops = [spec.scattering[i] * n_up(scheme, n, i) for i in range(n)] if spec.lossy else None

    def apply(self, psi: np.ndarray, dt: float) -> np.ndarray:
        if dt == 0:
            return psi.copy()
        if self.hermitian:
            return self.v @ (np.exp(-1j * self.w * dt) * (self.v.conj().T @ psi))
        u = self._cache.get(dt)
        if u is None:
            u = expm(-1j * self.h * dt)
            if len(self._cache) < 64:
                self._cache[dt] = u
        return u @ psi

    def loss(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """Per-atom integrated scattering probability over ``dt`` from ``psi``."""
        out = np.zeros(len(self.loss_ops))
        for x, w in zip(_GL_NODES, _GL_WEIGHTS):
            phi = self.apply(psi, 0.5 * dt * (x + 1))
            out += w * np.array([np.vdot(phi, op @ phi).real for op in self.loss_ops])
        return 0.5 * dt * out


def propagator(h: np.ndarray, dt: float) -> np.ndarray:
    """Exact ``exp(-i H dt)``; unitary for Hermitian ``H``."""
    if dt < 0:
        raise DomainError("propagation time must be non-negative")
    h = np.asarray(h, dtype=complex)
    if not np.all(np.isfinite(h)) or not math.isfinite(dt):
        raise NumericError("non-finite Hamiltonian or time step")
    if dt == 0:
        return np.eye(h.shape[0], dtype=complex)
    if is_hermitian(h):
        w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        return (v * np.exp(-1j * w * dt)) @ v.conj().T
    return expm(-1j * h * dt)


def _checkpoints(schedule: Schedule):
    """Yield (piece_spec, duration, offsets of record times within the piece)."""
    rec = schedule.record_times
    k = 0
    t0 = 0.0
    pieces = schedule.pieces()
    for idx, (dur, spec) in enumerate(pieces):
        t1 = t0 + dur
        last = idx == len(pieces) - 1
        offs = []
        while k < rec.size and (rec[k] <= t1 or last):
            offs.append(min(max(rec[k] - t0, 0.0), dur))
            k += 1
        yield spec, dur, offs
        t0 = t1
    while k < rec.size:  # empty schedule
        yield None, 0.0, [0.0]
        k += 1


def _check_state(state, schedule: Schedule) -> np.ndarray:
    psi = np.asarray(state, dtype=complex).ravel()
    n = schedule.n_atoms
    if n is not None and psi.size != schedule.scheme.total_dim(n):
        raise DimensionError(f"state has dimension {psi.size}, schedule expects {schedule.scheme.total_dim(n)}")
    return psi


def evolve(state, schedule: Schedule) -> Evolution:
    """Exact piecewise-constant evolution, recording at ``schedule.record_times``."""
    psi = _check_state(state, schedule)
    lossy = any(s.lossy for _, s in schedule.pieces())
    n = schedule.n_atoms or 0
    states, losses = [], []
    loss = np.zeros(n)
    pieces: dict[int, _Piece] = {}
    for spec, dur, offs in _checkpoints(schedule):
        if spec is None:
            states.append(psi.copy())
            losses.append(loss.copy())
            continue
        piece = pieces.setdefault(id(spec), _Piece(schedule.scheme, spec))
        counts_loss = lossy and piece.loss_ops is not None
        for off in offs:
            states.append(piece.apply(psi, off))
            losses.append(loss + piece.loss(psi, off) if counts_loss else loss.copy())
        if counts_loss:
            loss = loss + piece.loss(psi, dur)
        psi = piece.apply(psi, dur)
    states_arr = np.array(states, dtype=complex)
    atom_loss = None
    if lossy:
        atom_loss = np.array(losses)
        deficit = np.clip(1.0 - np.sum(np.abs(states_arr) ** 2, axis=1), 0.0, None)
        tot = atom_loss.sum(axis=1)
        scale = np.divide(deficit, tot, out=np.zeros_like(tot), where=tot > 0)
        atom_loss = atom_loss * scale[:, None]
    return Evolution(np.array(schedule.record_times), states_arr, atom_loss)


def integrate_reference(state, schedule: Schedule, step: float = 1e-3) -> Evolution:
    """Fixed-step classical RK4 integration of the same schedule.

    Independent of the eigendecomposition path; used only as a cross-check.
    """
    psi = _check_state(state, schedule)
    durations = [d for d, _ in schedule.pieces() if d > 0]
    if not step > 0:
        raise DomainError("step must be positive")
    if durations and step > min(durations) / 10 * (1 + 1e-12):
        raise DomainError(
            f"step {step} us exceeds one tenth of the shortest segment ({min(durations)} us); refusing"
        )
    states = []
    for spec, dur, offs in _checkpoints(schedule):
        if spec is None:
            states.append(psi.copy())
            continue
        h = build_hamiltonian(schedule.scheme, spec)
        # step with the real mean diagonal removed (halves the spectral radius),
        # then restore that global phase exactly at each record
        c = float(np.real(np.trace(h))) / h.shape[0]
        a = -1j * (h - c * np.eye(h.shape[0]))
        t = 0.0
        for target in list(offs) + [dur]:
            span = target - t
            if span > 0:
                m = max(1, math.ceil(span / step - 1e-9))
                dt = span / m
                for _ in range(m):
                    k1 = a @ psi
                    k2 = a @ (psi + 0.5 * dt * k1)
                    k3 = a @ (psi + 0.5 * dt * k2)
                    k4 = a @ (psi + dt * k3)
                    psi = psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t = target
            states.append(psi * np.exp(-1j * c * t))
        psi = states.pop()  # end-of-piece state is not a record
    return Evolution(np.array(schedule.record_times), np.array(states, dtype=complex))


def evolve_jumps(state, schedule: Schedule, rng: np.random.Generator, dt: float = 1e-3) -> Evolution:
    """One quantum-jump trajectory.

    Scattering from ``up`` resets the atom to the inert ``ground`` level and
    sets its ``scattered`` flag. Recorded states are normalized.
    """
    psi = _check_state(state, schedule)
    scheme = schedule.scheme
    n = schedule.n_atoms or 0
    lossy = any(s.lossy for _, s in schedule.pieces())
    if lossy and not scheme.has_ground:
        raise DimensionError("jump trajectories need the 'ground' level to receive scattered atoms")
    psi = psi / np.linalg.norm(psi)
    flags = np.zeros(n, dtype=bool)
    states, marks = [], []
    threshold = rng.random()
    for spec, dur, offs in _checkpoints(schedule):
        if spec is None:
            states.append(psi.copy())
            marks.append(flags.copy())
            continue
        piece = _Piece(scheme, spec)
        t = 0.0
        for target in list(offs) + [None]:
            end = dur if target is None else target
            while t < end - 1e-15:
                h = min(dt, end - t)
                psi = piece.apply(psi, h)
                t += h
                if piece.loss_ops is not None and np.vdot(psi, psi).real < threshold:
                    w = np.array([np.vdot(psi, op @ psi).real for op in piece.loss_ops])
                    i = int(rng.choice(n, p=w / w.sum()))
                    psi = site_operator(scheme, n, i, "ground", "up") @ psi
                    psi = psi / np.linalg.norm(psi)
                    flags[i] = True
                    threshold = rng.random()
            if target is not None:
                states.append(psi / np.linalg.norm(psi))
                marks.append(flags.copy())
    states_arr = np.array(states, dtype=complex)
    return Evolution(np.array(schedule.record_times), states_arr, scattered=np.array(marks))


def _match_mask(scheme: LevelScheme, n_atoms: int, pattern: str) -> np.ndarray:
    chars = list(pattern)
    if len(chars) != n_atoms:
        raise DomainError(f"pattern {pattern!r} must have one symbol per atom ({n_atoms})")
    basis = scheme.basis_labels(n_atoms)
    want = []
    for c in chars:
        if c in WILDCARDS:
            want.append(None)
            continue
        label = _SYMBOL_ALIASES.get(c, c)
        if label not in scheme.labels:
            raise DomainError(f"malformed pattern {pattern!r}: unknown level {c!r}")
        want.append(LEVEL_SYMBOLS[label])
    return np.array([all(w is None or w == b[k] for k, w in enumerate(want)) for b in basis])


def populations(state, patterns: Sequence[str] | str, scheme: LevelScheme) -> np.ndarray:
    """Summed ``|amplitude|^2`` over basis states matching each pattern.

    Patterns use ``u d 0 g`` (or arrows) per atom and ``.``/``*``/``·`` as a
    wildcard. ``state`` may be a single vector or an array of vectors.
    """
    single = isinstance(patterns, str)
    pats = [patterns] if single else list(patterns)
    psi = np.asarray(state)
    prob = np.abs(psi) ** 2
    dim = psi.shape[-1]
    n = round(math.log(dim, scheme.dim))
    if scheme.dim**n != dim:
        raise DimensionError("state dimension is not a power of the local dimension")
    out = np.stack([prob[..., _match_mask(scheme, n, p)].sum(axis=-1) for p in pats], axis=-1)
    return out[..., 0] if single else out
