import numpy as np
import pytest

from qrcmol.reservoir import ReservoirConfig


def dense_hamiltonian(config: ReservoirConfig, pattern_values) -> np.ndarray:
    """Independent dense construction of the drive/detuning/interaction
    Hamiltonian via explicit Kronecker products (test oracle)."""
    n = config.n_atoms
    dim = 2**n
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    # number operator in the bit convention: |1><1| on the excited state
    num = np.array([[0, 0], [0, 1]], dtype=complex)
    eye = np.eye(2, dtype=complex)

    def site_op(op, j):
        # atom j lives on bit j (least significant); kron builds MSB-first
        mats = [eye] * n
        mats[n - 1 - j] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    H = np.zeros((dim, dim), dtype=complex)
    for j in range(n):
        H += 0.5 * config.rabi_amplitude * site_op(sx, j)
        detuning = config.global_detuning + pattern_values[j] * config.local_detuning_amplitude
        H -= detuning * site_op(num, j)
    for j in range(n):
        for k in range(j + 1, n):
            r = np.linalg.norm(config.positions[j] - config.positions[k])
            H += (config.interaction_coefficient / r**6) * (site_op(num, j) @ site_op(num, k))
    return H


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
