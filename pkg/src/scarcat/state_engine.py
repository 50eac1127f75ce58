"""Dense state vectors, Krylov and Trotter evolution, and the measurement protocol.

Bit ``j`` of a basis index is 1 when site ``j`` points down (see
``pauli_model``).  A state of ``L`` spins is stored as a complex vector of
length ``2**L``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .pauli_model import (
    CompiledOperator,
    HamiltonianSpec,
    ModelError,
    PauliTerm,
    as_compiled,
    compile_terms,
    scar_action,
)

log = logging.getLogger(__name__)

L_CAP = 24
NORM_TOL = 1e-10


class EvolutionError(RuntimeError):
    """Time stepping failed to reach the requested accuracy."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class StateVector:
    L: int
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.L,):
            raise ModelError(f"amplitude array of shape {amps.shape} does not match L={self.L}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > NORM_TOL:
            raise ModelError(f"state norm {norm:.12f} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return 1 << self.L

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def distance(self, other: "StateVector") -> float:
        return float(np.linalg.norm(self.amplitudes - other.amplitudes))


@dataclass(frozen=True)
class EvolutionReport:
    method: str
    steps: int
    max_residual: float
    energy_drift: float
    norm_drift: float


def _check_L(L: int, cap: int = L_CAP):
    if not 1 <= L <= cap:
        raise ModelError(f"L={L} outside [1, {cap}]")


def product_state_up(L: int, cap: int = L_CAP) -> StateVector:
    _check_L(L, cap)
    psi = np.zeros(1 << L, complex)
    psi[0] = 1
    return StateVector(L, psi)


def basis_state(L: int, down: Iterable[int] = (), cap: int = L_CAP) -> StateVector:
    """Computational basis state with the listed sites pointing down."""
    _check_L(L, cap)
    index = 0
    for s in down:
        if not 0 <= s < L:
            raise ModelError(f"site {s} outside the chain of length {L}")
        index |= 1 << s
    psi = np.zeros(1 << L, complex)
    psi[index] = 1
    return StateVector(L, psi)


def ghz_state(L: int) -> StateVector:
    psi = np.zeros(1 << L, complex)
    psi[0] = psi[-1] = 1 / math.sqrt(2)
    return StateVector(L, psi)


def default_site(L: int) -> int:
    return L // 2


def _site_axis_view(psi: np.ndarray, L: int, site: int) -> np.ndarray:
    # axis 0 is the bit of `site`: 0 up, 1 down
    return psi.reshape(1 << (L - 1 - site), 2, 1 << site)


def rotation_matrix(theta: float) -> np.ndarray:
    """Single-site rotation in the (up, down) basis, sending up to cos|up> + sin|down>."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_y_rotation(state: StateVector, site: int, theta: float) -> StateVector:
    """Rotate one spin about y so that ``|up>`` becomes ``cos(theta)|up> + sin(theta)|down>``."""
    if not 0 <= site < state.L:
        raise ModelError(f"site {site} outside the chain of length {state.L}")
    psi = _site_axis_view(state.amplitudes.copy(), state.L, site)
    out = np.einsum("ab,ibj->iaj", rotation_matrix(theta), psi)
    return StateVector(state.L, out.reshape(-1), state.time)


def apply_operator(op, state) -> np.ndarray:
    """``O|psi>`` as a raw (unnormalized) amplitude array."""
    c = as_compiled(op)
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state, complex)
    return c.apply(psi)


def expectation(state: StateVector, op, hermitian: bool = True):
    """``<psi|O|psi>``; the imaginary part of a Hermitian expectation is checked and dropped."""
    val = np.vdot(state.amplitudes, apply_operator(op, state))
    if not hermitian:
        return complex(val)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ModelError(f"expectation of a Hermitian operator has imaginary part {val.imag:.3e}")
    return float(val.real)


def _energy(c: CompiledOperator, psi: np.ndarray) -> float:
    return float(np.vdot(psi, c.apply(psi)).real)


# ---------------------------------------------------------------------------
# Krylov


def _lanczos(c: CompiledOperator, v0: np.ndarray, m: int):
    """Lanczos with full reorthogonalisation; returns (V, alpha, beta, beta_next)."""
    n = v0.size
    V = np.zeros((m, n), complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v0
    scale = 0.0
    for j in range(m):
        w = c.apply(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w -= alpha[j] * V[j]
        if j:
            w -= beta[j - 1] * V[j - 1]
        # two passes of Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        scale = max(scale, abs(alpha[j]), b)
        if b <= 1e-13 * max(scale, 1.0):
            return V[: j + 1], alpha[: j + 1], beta[:j], 0.0
        if j + 1 < m:
            V[j + 1] = w / b
            beta[j] = b
        else:
            return V, alpha, beta[: m - 1], b
    return V, alpha, beta[: m - 1], 0.0


def evolve_krylov(
    h,
    state: StateVector,
    t: float,
    m: int = 30,
    tol: float = 1e-10,
    max_steps: int = 100_000,
) -> tuple[StateVector, EvolutionReport]:
    """``exp(-iHt)|psi>`` by restarted Lanczos with adaptive substeps.

    Each substep ``tau`` is the largest one for which the a-posteriori error
    ``beta_m |[exp(-i T tau) e_1]_m|`` stays below ``tol * tau / |t|``.
    """
    if not math.isfinite(t):
        raise ModelError("evolution time must be finite")
    c = as_compiled(h)
    if c.L != state.L:
        raise ModelError(f"operator on L={c.L} applied to state on L={state.L}")
    psi = state.amplitudes.copy()
    e0 = _energy(c, psi)
    if t == 0 or not c.groups():
        return StateVector(state.L, psi, state.time + t), EvolutionReport("krylov", 0, 0.0, 0.0, 0.0)
    done = 0.0
    steps = 0
    worst = 0.0
    sign = 1.0 if t > 0 else -1.0
    total = abs(t)
    while total - done > 1e-15 * total:
        if steps >= max_steps:
            raise EvolutionError(f"Krylov evolution did not finish in {max_steps} substeps", worst)
        nrm = np.linalg.norm(psi)
        V, alpha, beta, beta_next = _lanczos(c, psi / nrm, min(m, psi.size))
        lam, U = sla.eigh_tridiagonal(alpha, beta) if alpha.size > 1 else (alpha, np.ones((1, 1)))
        w0 = U[0].conj()

        def coeffs(tau):
            return U @ (np.exp(-1j * sign * lam * tau) * w0)

        def err(tau):
            return beta_next * abs(coeffs(tau)[-1])

        remaining = total - done
        tau = remaining
        if beta_next > 0:
            budget = lambda x: tol * x / total
            if err(tau) > budget(tau):
                lo, hi = 0.0, tau
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if err(mid) <= budget(mid):
                        lo = mid
                    else:
                        hi = mid
                tau = lo
                if tau <= 1e-14 * total:
                    raise EvolutionError("Krylov substep collapsed; increase the subspace size", err(hi))
        worst = max(worst, err(tau))
        psi = nrm * (V.T @ coeffs(tau))
        done += tau
        steps += 1
    norm = np.linalg.norm(psi)
    psi /= norm
    drift = abs(_energy(c, psi) - e0)
    return (
        StateVector(state.L, psi, state.time + t),
        EvolutionReport("krylov", steps, worst, drift, abs(norm - 1)),
    )


# ---------------------------------------------------------------------------
# Trotter


def _cyclic_window(sites: Sequence[int], L: int, periodic: bool) -> tuple[int, int]:
    """(start, span) of the shortest interval holding ``sites``; wraps when periodic."""
    lo, hi = min(sites), max(sites)
    if not periodic:
        return lo, hi - lo + 1
    best = (lo, hi - lo + 1)
    s = sorted(sites)
    for i in range(1, len(s)):
        # start just after gap between s[i-1] and s[i]
        span = s[i - 1] + L - s[i] + 1
        if span < best[1]:
            best = (s[i], span)
    return best


@dataclass
class _Gate:
    start: int
    sites: tuple[int, ...]
    matrix: np.ndarray  # local Hamiltonian, local bit k <-> sites[k]


def trotter_layers(h: HamiltonianSpec, max_width: int = 4) -> tuple[int, list[list[_Gate]]]:
    """Group the terms into layers of disjoint width-``w`` gates."""
    L = h.L
    periodic = h.boundary == "periodic"
    windows = [_cyclic_window(t.sites, L, periodic) for t in h.terms]
    w = max((span for _, span in windows), default=1)
    if w > max_width:
        raise ModelError(f"terms span {w} sites; Trotter gates support at most {max_width}, use krylov")
    w = min(w, L)
    if periodic and L % w:
        raise ModelError(f"periodic Trotter layering needs L divisible by the gate width {w}")
    buckets: dict[int, list[PauliTerm]] = {}
    for term, (a, _) in zip(h.terms, windows):
        g = a if periodic else min(a, L - w)
        buckets.setdefault(g, []).append(term)
    layers: list[list[_Gate]] = [[] for _ in range(w)]
    for g in sorted(buckets):
        sites = tuple((g + k) % L for k in range(w))
        local = {s: k for k, s in enumerate(sites)}
        terms = [
            PauliTerm(t.coefficient, tuple((local[s], a) for s, a in t.factors)) for t in buckets[g]
        ]
        mat = compile_terms(terms, w).to_dense()
        layers[g % w].append(_Gate(g, sites, mat))
    return w, [layer for layer in layers if layer]


def _apply_gate(psi: np.ndarray, L: int, sites: tuple[int, ...], U: np.ndarray) -> np.ndarray:
    w = len(sites)
    t = psi.reshape((2,) * L)
    axes = [L - 1 - s for s in reversed(sites)]  # most significant local bit first
    out = np.tensordot(U.reshape((2,) * (2 * w)), t, axes=(list(range(w, 2 * w)), axes))
    out = np.moveaxis(out, list(range(w)), axes)
    return out.reshape(-1)


def _gate_exponentials(layers, dt: float):
    out = []
    for layer in layers:
        gates = []
        for g in layer:
            lam, vec = np.linalg.eigh(g.matrix)
            gates.append((g.sites, (vec * np.exp(-1j * lam * dt)) @ vec.conj().T))
        out.append(gates)
    return out


def evolve_trotter(
    h: HamiltonianSpec,
    state: StateVector,
    t: float,
    dt: float = 0.01,
) -> tuple[StateVector, EvolutionReport]:
    """Second-order Strang splitting over layers of disjoint local gates."""
    if dt <= 0 or not math.isfinite(t):
        raise ModelError("need dt > 0 and finite t")
    if h.L != state.L:
        raise ModelError(f"operator on L={h.L} applied to state on L={state.L}")
    c = h.compiled
    psi = state.amplitudes.copy()
    e0 = _energy(c, psi)
    nsteps = max(1, int(math.ceil(abs(t) / dt - 1e-9))) if t else 0
    if nsteps == 0:
        return StateVector(state.L, psi, state.time), EvolutionReport("trotter", 0, 0.0, 0.0, 0.0)
    step = t / nsteps
    _, layers = trotter_layers(h)
    half = _gate_exponentials(layers[:-1], step / 2)
    full = _gate_exponentials(layers[-1:], step)
    sweep = half + full + half[::-1]
    worst = 0.0
    for _ in range(nsteps):
        for gates in sweep:
            for sites, U in gates:
                psi = _apply_gate(psi, state.L, sites, U)
        worst = max(worst, abs(np.linalg.norm(psi) - 1))
    norm = np.linalg.norm(psi)
    psi /= norm
    drift = abs(_energy(c, psi) - e0)
    return (
        StateVector(state.L, psi, state.time + t),
        EvolutionReport("trotter", nsteps, worst, drift, abs(norm - 1)),
    )


def evolve(h, state: StateVector, t: float, method: str = "krylov", dt: float = 0.01, **kw):
    if method == "krylov":
        return evolve_krylov(h, state, t, **kw)
    if method == "trotter":
        return evolve_trotter(h, state, t, dt=dt)
    raise ModelError(f"unknown evolution method {method!r}")


def evolve_series(h, state: StateVector, times: Sequence[float], method: str = "krylov", **kw):
    """States at each of the increasing ``times`` (measured from ``state.time``)."""
    out, reports = [], []
    cur, now = state, 0.0
    for t in times:
        if t < now - 1e-15:
            raise ModelError("times must be nondecreasing")
        cur, rep = evolve(h, cur, t - now, method, **kw)
        now = t
        out.append(cur)
        reports.append(rep)
    return out, reports


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class PreQuench:
    h0: HamiltonianSpec
    t0: float


def _scar_energy(h) -> float | None:
    if not isinstance(h, HamiltonianSpec):
        return None
    energy, residual = scar_action(h)
    return energy if residual <= 1e-12 else None


def combine_branches(flipped: StateVector, theta: float, energy: float) -> StateVector:
    """``cos(theta)|up> + sin(theta) exp(iEt) |flipped(t)>``.

    This is the exact evolution of the rotated scar divided by the global
    phase ``exp(-iEt)`` of its unflipped branch.
    """
    t = flipped.time
    psi = math.sin(theta) * np.exp(1j * energy * t) * flipped.amplitudes
    psi = np.array(psi)
    psi[0] += math.cos(theta)
    return StateVector(flipped.L, psi, t)


def prepare_protocol_state(
    h,
    theta: float,
    site: int | None = None,
    t: float = 0.0,
    pre_quench: PreQuench | None = None,
    method: str = "krylov",
    **kw,
) -> StateVector:
    """State after measuring one spin of the scar and evolving for time ``t``.

    Without a pre-quench only the flipped branch is evolved and recombined with
    the stationary scar.  A Hamiltonian without the scar, or a pre-quench,
    falls back to evolving the whole state.
    """
    if t < 0:
        raise ModelError("protocol time must be nonnegative")
    L = as_compiled(h).L
    site = default_site(L) if site is None else site
    up = product_state_up(L)
    if pre_quench is not None:
        start, _ = evolve(pre_quench.h0, up, pre_quench.t0, method, **kw)
        start = replace(start, time=0.0)
        rotated = apply_y_rotation(start, site, theta)
        return evolve(h, rotated, t, method, **kw)[0]
    energy = _scar_energy(h)
    if energy is None:
        return evolve(h, apply_y_rotation(up, site, theta), t, method, **kw)[0]
    flipped, _ = evolve(h, basis_state(L, [site]), t, method, **kw)
    return combine_branches(flipped, theta, energy)


def protocol_series(
    h,
    theta: float,
    times: Sequence[float],
    site: int | None = None,
    method: str = "krylov",
    **kw,
) -> list[StateVector]:
    """``prepare_protocol_state`` at increasing times, evolving incrementally."""
    L = as_compiled(h).L
    site = default_site(L) if site is None else site
    energy = _scar_energy(h)
    if energy is None:
        start = apply_y_rotation(product_state_up(L), site, theta)
        return evolve_series(h, start, times, method, **kw)[0]
    branch, _ = evolve_series(h, basis_state(L, [site]), times, method, **kw)
    return [combine_branches(b, theta, energy) for b in branch]


def dump_amplitudes(state: StateVector, path, threshold: float = 0.0) -> int:
    """Write ``index,re,im`` rows for amplitudes above ``threshold``; returns row count."""
    amps = state.amplitudes
    keep = np.flatnonzero(np.abs(amps) > threshold)
    with open(path, "w") as fh:
        fh.write("index,re,im\n")
        for i in keep:
            fh.write(f"{i},{amps[i].real:.17g},{amps[i].imag:.17g}\n")
    return int(keep.size)
