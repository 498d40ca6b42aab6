"""Neutral-atom Rydberg chain simulator with computational-basis readout.

The Hamiltonian is a global Rabi drive plus a diagonal part built from
van-der-Waals pair interactions (C / r^6) and per-atom detunings. States are
dense complex vectors over the 2^N computational basis; atom j maps to bit j
(least significant), bit set = Rydberg state. The sign convention is
Z = I - 2n, so the all-ground state reads +1 on every one-body observable.

Propagation uses a Lanczos (Krylov) approximation of exp(-i*H*t) with full
reorthogonalization and adaptive step halving.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

TWO_PI = 2.0 * math.pi

DEFAULT_RABI = TWO_PI                     # rad/us
DEFAULT_LOCAL_DETUNING = 6.0              # rad/us
DEFAULT_INTERACTION = TWO_PI * 862690.0   # rad * us^-1 * um^6
DEFAULT_SPACING = 10.0                    # um
DEFAULT_TOTAL_TIME = 4.3                  # us
DEFAULT_SNAPSHOT_STEP = 0.4               # us


class ReservoirError(ValueError):
    """Raised for invalid reservoir configurations or states."""


def chain_positions(n_atoms: int, spacing: float = DEFAULT_SPACING) -> np.ndarray:
    """Linear chain along x with the given interatomic distance, in um."""
    pos = np.zeros((n_atoms, 3))
    pos[:, 0] = spacing * np.arange(n_atoms)
    return pos


@dataclass
class ReservoirConfig:
    n_atoms: int
    positions: np.ndarray | None = None            # (N, 3) um
    rabi_amplitude: float = DEFAULT_RABI           # rad/us
    global_detuning: float = 0.0                   # rad/us
    local_detuning_amplitude: float = DEFAULT_LOCAL_DETUNING  # rad/us
    interaction_coefficient: float = DEFAULT_INTERACTION      # rad us^-1 um^6
    total_time: float = DEFAULT_TOTAL_TIME         # us
    snapshot_step: float = DEFAULT_SNAPSHOT_STEP   # us

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ReservoirError("n_atoms must be >= 1")
        if self.positions is None:
            self.positions = chain_positions(self.n_atoms)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.shape != (self.n_atoms, 3):
            raise ReservoirError("positions must have shape (n_atoms, 3)")
        if self.rabi_amplitude < 0 or self.local_detuning_amplitude < 0:
            raise ReservoirError("amplitudes must be nonnegative")
        if self.interaction_coefficient <= 0:
            raise ReservoirError("interaction coefficient must be positive")
        if not 0 < self.snapshot_step <= self.total_time:
            raise ReservoirError("need 0 < snapshot_step <= total_time")
        for j in range(self.n_atoms):
            for k in range(j + 1, self.n_atoms):
                if np.allclose(self.positions[j], self.positions[k]):
                    raise ReservoirError(f"atoms {j} and {k} are coincident")

    @property
    def snapshot_times(self) -> np.ndarray:
        """Strictly increasing schedule: multiples of the step, then the end.

        The final time is always a snapshot even when it is not a multiple
        of the step (the default 0.4 us step with a 4.3 us window gives 11
        snapshots: 0.4, 0.8, ..., 4.0, 4.3).
        """
        n_steps = int(math.floor(self.total_time / self.snapshot_step + 1e-9))
        times = [self.snapshot_step * k for k in range(1, n_steps + 1)]
        if not times or times[-1] < self.total_time - 1e-9:
            times.append(self.total_time)
        else:
            times[-1] = self.total_time if abs(times[-1] - self.total_time) < 1e-9 else times[-1]
        return np.asarray(times)

    def pair_list(self) -> list[tuple[int, int]]:
        """All atom pairs (i, j) with i < j, lexicographic."""
        return [(i, j) for i in range(self.n_atoms) for j in range(i + 1, self.n_atoms)]

    def to_dict(self) -> dict:
        return {
            "n_atoms": self.n_atoms,
            "positions": self.positions.tolist(),
            "rabi_amplitude": self.rabi_amplitude,
            "global_detuning": self.global_detuning,
            "local_detuning_amplitude": self.local_detuning_amplitude,
            "interaction_coefficient": self.interaction_coefficient,
            "total_time": self.total_time,
            "snapshot_step": self.snapshot_step,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReservoirConfig":
        doc = dict(doc)
        if doc.get("positions") is not None:
            doc["positions"] = np.asarray(doc["positions"], dtype=float)
        return cls(**doc)


@dataclass
class DetuningPattern:
    """Per-atom modulation of the local detuning, each entry in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ReservoirError("pattern must be a 1D vector")
        if np.any(np.abs(self.values) > 1.0 + 1e-12):
            raise ReservoirError("pattern entries must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class HamiltonianRep:
    """Diagonal part plus an implicit uniform single-bit-flip coupling.

    diagonal[b] collects the pair interactions of the excited bits of b
    minus the detuning of each excited bit; the Rabi term couples basis
    states differing in exactly one bit with amplitude rabi/2.
    """

    n_atoms: int
    diagonal: np.ndarray           # (2^N,) real, rad/us
    rabi_amplitude: float          # rad/us

    @property
    def dim(self) -> int:
        return 1 << self.n_atoms

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        out = self.diagonal * vec
        if self.rabi_amplitude != 0.0:
            half = 0.5 * self.rabi_amplitude
            cube = vec.reshape((2,) * self.n_atoms)
            acc = out.reshape((2,) * self.n_atoms)
            for j in range(self.n_atoms):
                # axis for bit j: bit 0 is the last axis of the cube
                acc += half * np.flip(cube, axis=self.n_atoms - 1 - j)
        return out

    def to_dense(self) -> np.ndarray:
        """Dense matrix form; only sensible for small atom counts."""
        if self.n_atoms > 12:
            raise ReservoirError("dense form limited to n_atoms <= 12")
        dim = self.dim
        H = np.diag(self.diagonal.astype(complex))
        half = 0.5 * self.rabi_amplitude
        for b in range(dim):
            for j in range(self.n_atoms):
                H[b ^ (1 << j), b] += half
        return H

    def spectral_bound(self) -> float:
        """Cheap upper bound on the spectral radius (diag range + drive)."""
        return float(np.max(np.abs(self.diagonal)) + 0.5 * abs(self.rabi_amplitude) * self.n_atoms)


@dataclass
class QuantumState:
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-8:
            raise ReservoirError(f"state norm {norm} is not 1 within 1e-8")

    @classmethod
    def all_ground(cls, n_atoms: int) -> "QuantumState":
        amps = np.zeros(1 << n_atoms, dtype=complex)
        amps[0] = 1.0
        return cls(amps)

    @property
    def n_atoms(self) -> int:
        return int(round(math.log2(len(self.amplitudes))))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class ObservableTrace:
    """Time series of one- and two-body computational-basis expectations."""

    snapshot_times: np.ndarray         # (T,)
    one_body: np.ndarray               # (T, N) of <Z_i>
    two_body: np.ndarray               # (T, N(N-1)/2) of <Z_i Z_j>, i < j lexicographic
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def to_csv(self, path) -> None:
        """Columnar debug/export format: time_us, kind, i, j, value."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_us", "kind", "i", "j", "value"])
            for t_idx, t in enumerate(self.snapshot_times):
                for i in range(self.one_body.shape[1]):
                    writer.writerow([repr(float(t)), "Z", i, "", repr(float(self.one_body[t_idx, i]))])
                for p_idx, (i, j) in enumerate(self.pairs):
                    writer.writerow([repr(float(t)), "ZZ", i, j, repr(float(self.two_body[t_idx, p_idx]))])


def build_hamiltonian(config: ReservoirConfig, pattern: DetuningPattern) -> HamiltonianRep:
    """Assemble the drive/detuning/interaction Hamiltonian for one pattern."""
    if len(pattern) != config.n_atoms:
        raise ReservoirError(
            f"pattern length {len(pattern)} does not match n_atoms {config.n_atoms}"
        )
    n = config.n_atoms
    dim = 1 << n
    detunings = config.global_detuning + pattern.values * config.local_detuning_amplitude

    bits = _bit_table(n)
    diagonal = np.zeros(dim)
    for j in range(n):
        diagonal -= detunings[j] * bits[j]
    for j in range(n):
        for k in range(j + 1, n):
            r = np.linalg.norm(config.positions[j] - config.positions[k])
            v_jk = config.interaction_coefficient / r**6
            diagonal += v_jk * (bits[j] & bits[k])
    return HamiltonianRep(n_atoms=n, diagonal=diagonal, rabi_amplitude=config.rabi_amplitude)


_BIT_CACHE: dict[int, np.ndarray] = {}


def _bit_table(n_atoms: int) -> np.ndarray:
    """bits[j][b] = 1 if bit j of basis index b is set; cached per size."""
    table = _BIT_CACHE.get(n_atoms)
    if table is None:
        idx = np.arange(1 << n_atoms, dtype=np.int64)
        table = np.stack([((idx >> j) & 1).astype(np.int8) for j in range(n_atoms)])
        _BIT_CACHE[n_atoms] = table
    return table


def _lanczos_step(h: HamiltonianRep, vec: np.ndarray, dt: float,
                  tol: float, max_m: int) -> np.ndarray | None:
    """One Krylov approximation of exp(-i*dt*H) vec, or None if not converged.

    Full reorthogonalization; the error estimate is the weight that would
    spill into the next Lanczos vector.
    """
    beta0 = np.linalg.norm(vec)
    basis = [vec / beta0]
    alphas: list[float] = []
    betas: list[float] = []
    for m in range(1, max_m + 1):
        w = h.matvec(basis[-1])
        alpha = float(np.real(np.vdot(basis[-1], w)))
        alphas.append(alpha)
        w = w - alpha * basis[-1]
        if len(basis) > 1:
            w = w - betas[-1] * basis[-2]
        for b in basis:  # reorthogonalize
            w = w - np.vdot(b, w) * b
        beta = float(np.linalg.norm(w))
        coeffs = _expm_tridiag(alphas, betas, dt)
        if beta < 1e-14 or m == h.dim:
            return beta0 * sum(c * b for c, b in zip(coeffs, basis))
        err = abs(dt) * beta * abs(coeffs[-1])
        if err < tol:
            return beta0 * sum(c * b for c, b in zip(coeffs, basis))
        betas.append(beta)
        basis.append(w / beta)
    return None


def _expm_tridiag(alphas, betas, dt) -> np.ndarray:
    """First column coefficients of exp(-i*dt*T) for symmetric tridiagonal T."""
    if len(alphas) == 1:
        return np.array([np.exp(-1j * dt * alphas[0])])
    w, u = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas[: len(alphas) - 1]))
    return u @ (np.exp(-1j * dt * w) * u[0, :].conj())


def evolve(h: HamiltonianRep, state: QuantumState, duration: float,
           tol: float = 1e-9, max_m: int = 40) -> QuantumState:
    """Propagate ``state`` for ``duration`` us under the fixed Hamiltonian."""
    if len(state.amplitudes) != h.dim:
        raise ReservoirError("state dimension does not match the Hamiltonian")
    if duration < 0:
        raise ReservoirError("duration must be nonnegative")
    if duration == 0:
        return QuantumState(state.amplitudes.copy())

    vec = state.amplitudes.copy()
    # Krylov converges once m exceeds ~|H|*dt; pre-split so max_m suffices.
    bound = h.spectral_bound()
    n_sub = max(1, int(math.ceil(duration * bound / (0.6 * max_m)))) if bound > 0 else 1
    pending = [float(duration) / n_sub] * n_sub
    while pending:
        dt = pending.pop()
        result = _lanczos_step(h, vec, dt, tol=tol, max_m=max_m)
        if result is None:
            if dt < 1e-12:
                raise ReservoirError("propagator failed to converge")
            pending.extend([dt / 2.0, dt / 2.0])
            continue
        vec = result
    vec = vec / np.linalg.norm(vec)
    return QuantumState(vec)


def expect_z(state: QuantumState, i: int) -> float:
    """<Z_i> with Z = I - 2n (ground -> +1)."""
    n = state.n_atoms
    if not 0 <= i < n:
        raise ReservoirError(f"atom index {i} out of range for {n} atoms")
    p_excited = float(state.probabilities() @ _bit_table(n)[i])
    return 1.0 - 2.0 * p_excited


def expect_zz(state: QuantumState, i: int, j: int) -> float:
    """<Z_i Z_j>, symmetric in its atom indices."""
    n = state.n_atoms
    if i == j:
        raise ReservoirError("expect_zz needs two distinct atoms")
    if not (0 <= i < n and 0 <= j < n):
        raise ReservoirError(f"atom indices ({i}, {j}) out of range for {n} atoms")
    bits = _bit_table(n)
    p = state.probabilities()
    p_i = float(p @ bits[i])
    p_j = float(p @ bits[j])
    p_ij = float(p @ (bits[i] & bits[j]))
    return 1.0 - 2.0 * p_i - 2.0 * p_j + 4.0 * p_ij


def snapshot_observables(config: ReservoirConfig, pattern: DetuningPattern) -> ObservableTrace:
    """Evolve from the all-ground state, recording observables at each snapshot."""
    h = build_hamiltonian(config, pattern)
    times = config.snapshot_times
    pairs = config.pair_list()
    n = config.n_atoms
    one_body = np.zeros((len(times), n))
    two_body = np.zeros((len(times), len(pairs)))

    state = QuantumState.all_ground(n)
    previous_t = 0.0
    bits = _bit_table(n)
    for t_idx, t in enumerate(times):
        state = evolve(h, state, t - previous_t)
        previous_t = t
        p = state.probabilities()
        p_bit = bits @ p                     # per-atom excitation probability
        one_body[t_idx] = 1.0 - 2.0 * p_bit
        for p_idx, (i, j) in enumerate(pairs):
            p_ij = float(p @ (bits[i] & bits[j]))
            two_body[t_idx, p_idx] = 1.0 - 2.0 * p_bit[i] - 2.0 * p_bit[j] + 4.0 * p_ij
    return ObservableTrace(snapshot_times=times, one_body=one_body, two_body=two_body, pairs=pairs)
