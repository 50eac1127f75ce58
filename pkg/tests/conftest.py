import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID = np.eye(2, dtype=complex)
PAULI = {"x": SX, "y": SY, "z": SZ}


def kron_string(L, factors):
    """Dense Pauli string; bit j of the basis index is site j (1 = down)."""
    ops = [ID] * L
    for site, axis in factors:
        ops[site] = PAULI[axis]
    return functools.reduce(np.kron, ops[::-1])


def kron_hamiltonian(spec):
    """Dense matrix of a HamiltonianSpec built term by term with Kronecker products."""
    H = np.zeros((1 << spec.L, 1 << spec.L), dtype=complex)
    for term in spec.terms:
        H += term.coefficient * kron_string(spec.L, term.factors)
    return H


def random_state(L, rng):
    psi = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
    return psi / np.linalg.norm(psi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
