"""Magnetization, effective region, counting statistics, covariance and quantumness."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .pauli_model import ModelError
from .state_engine import StateVector, default_site

log = logging.getLogger(__name__)


def _popcount(x):
    return np.bitwise_count(x).astype(np.int64)


def _probabilities(state: StateVector) -> np.ndarray:
    return np.abs(state.amplitudes) ** 2


# ---------------------------------------------------------------------------
# magnetization


@dataclass(frozen=True)
class MagnetizationProfile:
    sz: np.ndarray
    time: float
    theta: float | None = None


def magnetization_profile(state: StateVector, theta: float | None = None) -> MagnetizationProfile:
    """Per-site ``<sigma^z_l>``."""
    p = _probabilities(state)
    idx = np.arange(state.dim, dtype=np.int64)
    sz = np.empty(state.L)
    for l in range(state.L):
        sz[l] = 1 - 2 * p[(idx >> l) & 1 == 1].sum()
    return MagnetizationProfile(np.clip(sz, -1, 1), state.time, theta)


def delta_sz(state: StateVector) -> float:
    """``L/2 - <S^z>``: expected number of down spins."""
    p = _probabilities(state)
    return float(p @ _popcount(np.arange(state.dim, dtype=np.int64)))


# ---------------------------------------------------------------------------
# effective region


@dataclass(frozen=True)
class EffectiveRegion:
    left: int
    right: int
    epsilon: float
    w_out: float
    site: int

    @property
    def size(self) -> int:
        return self.right - self.left + 1

    def sites(self) -> range:
        return range(self.left, self.right + 1)


class OutsideWeights:
    """``w_out(l, r)``: weight of basis states with a down spin outside ``[l, r]``.

    Weights of all contiguous blocks follow from a 2D cumulative table of the
    probability mass indexed by (lowest, highest) down site.
    """

    def __init__(self, state: StateVector):
        L = state.L
        p = _probabilities(state)
        idx = np.arange(1, state.dim, dtype=np.int64)
        lo = _popcount((idx & -idx) - 1)
        hi = np.floor(np.log2(idx)).astype(np.int64)
        W = np.zeros((L, L))
        np.add.at(W, (lo, hi), p[1:])
        # C[l, r] = sum of W[a, b] for a >= l, b <= r
        self._C = np.cumsum(np.cumsum(W[::-1], axis=0)[::-1], axis=1)
        self.total = float(p.sum())
        self.p0 = float(p[0])
        self.L = L

    def __call__(self, left: int, right: int) -> float:
        inside = self.p0 + self._C[left, right]
        return max(0.0, self.total - inside)


def effective_region(
    state: StateVector,
    epsilon: float,
    site=None,
    rule: str = "minimal",
) -> EffectiveRegion:
    """Smallest contiguous block around ``site`` outside of which the state is all up.

    ``site`` may also be a sequence of sites; the block then has to contain all
    of them.  ``rule="minimal"`` searches every block and returns one of least
    size (ties broken by lower ``w_out``, then leftmost); ``rule="greedy"``
    grows the block by the edge whose extension lowers ``w_out`` more.
    """
    if not 0 < epsilon < 1:
        raise ModelError("epsilon must lie in (0, 1)")
    L = state.L
    sites = [default_site(L)] if site is None else list(np.atleast_1d(site))
    for s in sites:
        if not 0 <= s < L:
            raise ModelError(f"site {s} outside the chain of length {L}")
    lo, hi = int(min(sites)), int(max(sites))
    anchor = int(sites[0])
    w = OutsideWeights(state)
    if rule == "minimal":
        for size in range(hi - lo + 1, L + 1):
            best = None
            for left in range(max(0, hi - size + 1), min(lo, L - size) + 1):
                val = w(left, left + size - 1)
                if val <= epsilon and (best is None or val < best[1]):
                    best = (left, val)
            if best is not None:
                return EffectiveRegion(best[0], best[0] + size - 1, epsilon, best[1], anchor)
        raise AssertionError("full chain must satisfy any epsilon")
    if rule != "greedy":
        raise ModelError(f"unknown region rule {rule!r}")
    left, right = lo, hi
    val = w(left, right)
    while val > epsilon:
        wl = w(left - 1, right) if left > 0 else math.inf
        wr = w(left, right + 1) if right < L - 1 else math.inf
        if wl == wr:
            left, right = max(left - 1, 0), min(right + 1, L - 1)
        elif wl < wr:
            left -= 1
        else:
            right += 1
        val = w(left, right)
    return EffectiveRegion(left, right, epsilon, val, anchor)


# ---------------------------------------------------------------------------
# full counting statistics


@dataclass(frozen=True)
class FcsDistribution:
    L: int
    theta: float | None
    k: np.ndarray
    G: np.ndarray
    m: np.ndarray
    P: np.ndarray
    convention_warning: bool = False

    def mean(self) -> float:
        return float(self.m @ self.P)

    def variance(self) -> float:
        mu = self.mean()
        return float(((self.m - mu) ** 2) @ self.P)

    def prob(self, m: float) -> float:
        hit = np.flatnonzero(np.isclose(self.m, m))
        return float(self.P[hit[0]]) if hit.size else 0.0


def fcs(state: StateVector, theta: float | None = None) -> FcsDistribution:
    """Generating function ``G(k) = <exp(2 pi i k S^z / (L+1))>`` and its Fourier inverse ``P(m)``."""
    L = state.L
    warn = L % 4 != 0
    if warn:
        log.warning("L=%d is not divisible by 4; magnetization labels follow the same formula", L)
    p = _probabilities(state)
    mz = L / 2 - _popcount(np.arange(state.dim, dtype=np.int64))
    k = np.arange(-(L // 2), L - L // 2 + 1)
    G = np.array([p @ np.exp(2j * np.pi * kk * mz / (L + 1)) for kk in k])
    m = L / 2 - np.arange(L + 1)  # descending: L/2, L/2 - 1, ..., -L/2
    phases = np.exp(-2j * np.pi * np.outer(m, k) / (L + 1))
    Pc = phases @ G / (L + 1)
    if np.max(np.abs(Pc.imag)) > 1e-10:
        raise ModelError("counting statistics acquired an imaginary part")
    return FcsDistribution(L, theta, k, G, m, Pc.real.copy(), warn)


def magnetization_histogram(state: StateVector) -> tuple[np.ndarray, np.ndarray]:
    """Direct histogram of ``S^z`` outcomes (m descending)."""
    L = state.L
    n = _popcount(np.arange(state.dim, dtype=np.int64))
    P = np.bincount(n, weights=_probabilities(state), minlength=L + 1)
    return L / 2 - np.arange(L + 1), P


# ---------------------------------------------------------------------------
# covariance and quantumness


@dataclass(frozen=True)
class CovarianceMatrix:
    region: EffectiveRegion | tuple[int, int]
    K: np.ndarray
    means: np.ndarray  # (|Omega|, 3) Bloch vectors

    @property
    def n_sites(self) -> int:
        return self.K.shape[0] // 3


def _pauli_images(psi: np.ndarray, L: int, site: int) -> list[np.ndarray]:
    idx = np.arange(psi.size, dtype=np.int64)
    bit = 1 << site
    sign = 1 - 2 * ((idx >> site) & 1)
    flipped = psi[idx ^ bit]
    return [flipped, -1j * sign * flipped, sign * psi]


def _region_bounds(region, L: int) -> tuple[int, int]:
    if isinstance(region, EffectiveRegion):
        left, right = region.left, region.right
    else:
        left, right = region
    if not 0 <= left <= right < L:
        raise ModelError(f"region [{left}, {right}] is empty or outside the chain")
    return left, right


def covariance_matrix(state: StateVector, region) -> CovarianceMatrix:
    """``K[(n,a),(m,b)] = <{s^a_n, s^b_m}>/2 - <s^a_n><s^b_m>``, index ``3*(n-left) + a``."""
    left, right = _region_bounds(region, state.L)
    psi = state.amplitudes
    Phi = np.array([v for n in range(left, right + 1) for v in _pauli_images(psi, state.L, n)])
    gram = (Phi.conj() @ Phi.T).real
    mean = (Phi @ psi.conj()).real
    K = gram - np.outer(mean, mean)
    K = (K + K.T) / 2
    return CovarianceMatrix(region, K, mean.reshape(-1, 3))


@dataclass(frozen=True)
class QuantumnessResult:
    value: float
    directions: np.ndarray  # (|Omega|, 3) unit vectors
    iterations: int
    converged: bool
    variance: float  # Var of sum_j n_j . sigma_j for the returned directions
    dense_value: float | None = None
    trace: tuple = field(default=(), repr=False)


def _as_K(K) -> np.ndarray:
    K = K.K if isinstance(K, CovarianceMatrix) else np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] % 3 or K.shape[0] == 0:
        raise ModelError("covariance matrix must be square with 3 entries per site")
    return K


def _normalize_blocks(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    norms = np.linalg.norm(w, axis=1)
    zero = norms < 1e-14
    if np.any(zero):
        w = w.copy()
        w[zero] = rng.normal(size=(int(zero.sum()), 3))
        norms = np.linalg.norm(w, axis=1)
    return w / norms[:, None]


def _newton_polish(K: np.ndarray, v: np.ndarray, sweeps: int = 8) -> np.ndarray:
    """Newton steps on ``(K v)_j = lam_j v_j``, ``|v_j| = 1`` from a nearby iterate."""
    n = v.shape[0]
    eye = np.eye(n)
    for _ in range(sweeps):
        w = (K @ v.ravel()).reshape(n, 3)
        lam = np.einsum("ja,ja->j", v, w)
        M = (v[:, :, None] * eye[:, None, :]).reshape(3 * n, n)
        jac = np.block([[K - np.diag(np.repeat(lam, 3)), -M], [M.T, np.zeros((n, n))]])
        res = np.concatenate([(w - lam[:, None] * v).ravel(), (np.sum(v * v, axis=1) - 1) / 2])
        step = np.linalg.lstsq(jac, -res, rcond=1e-12)[0]
        v = v + step[: 3 * n].reshape(n, 3)
        v /= np.linalg.norm(v, axis=1)[:, None]
        if np.linalg.norm(res) < 1e-14:
            break
    return v


def _fixed_point(K: np.ndarray, v: np.ndarray, rng, tol: float, max_iter: int, polish_every: int = 50):
    n = v.shape[0]
    value = float(np.einsum("i,ij,j->", v.ravel(), K, v.ravel())) / n
    trace = [value]
    for it in range(1, max_iter + 1):
        w = (K @ v.ravel()).reshape(n, 3)
        new_value = float(np.linalg.norm(w, axis=1).sum()) / n
        v_new = _normalize_blocks(w, rng)
        change = float(np.max(np.linalg.norm(v_new - v, axis=1)))
        v = v_new
        trace.append(new_value)
        if change < tol and abs(new_value - value) < tol:
            return v, it, True, trace
        value = new_value
        if it % polish_every == 0 and abs(trace[-1] - trace[-2]) < 1e-6:
            # linear convergence stalls on flat directions; accept a Newton
            # refinement only if it does not lower the value
            cand = _newton_polish(K, v)
            cval = float(cand.ravel() @ K @ cand.ravel()) / n
            if cval >= value - tol:
                v = cand
    return v, max_iter, False, trace


def quantumness_iterative(
    K,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    seed: int = 0,
    restarts: int = 4,
) -> QuantumnessResult:
    """Per-site quantumness by the block-normalized fixed-point iteration.

    Iterates ``w = K v``, ``v_j <- w_j / |w_j|``, which never decreases
    ``v^T K v`` for positive semidefinite ``K``.  The first start is ``x``-hat
    plus a small fixed-seed perturbation; further starts (block-normalized
    leading eigenvector, then random) guard against local maxima.  The value
    is ``sum_j |(K v)_j| / |Omega|``.
    """
    K = _as_K(K)
    n = K.shape[0] // 3
    rng = np.random.default_rng(seed)
    starts = [np.tile([1.0, 0.0, 0.0], (n, 1)) + 1e-3 * rng.normal(size=(n, 3))]
    if restarts > 0:
        lead = np.linalg.eigh(K)[1][:, -1].reshape(n, 3)
        starts.append(lead + 1e-3 * rng.normal(size=(n, 3)))
    starts += [rng.normal(size=(n, 3)) for _ in range(max(0, restarts - 1))]
    best = None
    for v0 in starts:
        v, it, ok, trace = _fixed_point(K, _normalize_blocks(v0, rng), rng, tol, max_iter)
        var = float(v.ravel() @ K @ v.ravel())
        cand = (var / n, v, it, ok, var, trace)
        if best is None or cand[0] > best[0] + tol:
            best = cand
    value, v, it, ok, var, trace = best
    if not ok:
        log.warning("quantumness iteration did not converge in %d sweeps", max_iter)
    # report the fixed-point form sum_j |(Kv)_j| / n, which equals var / n at convergence
    w = (K @ v.ravel()).reshape(n, 3)
    value = float(np.linalg.norm(w, axis=1).sum()) / n
    return QuantumnessResult(value, v, it, ok, var, trace=tuple(trace))


def _angles_to_vectors(x: np.ndarray) -> np.ndarray:
    th, ph = x[0::2], x[1::2]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def quantumness_dense(K, starts: int = 40, seed: int = 12345) -> QuantumnessResult:
    """Global maximum of ``v^T K v / |Omega|`` over per-site unit vectors by multi-start L-BFGS.

    Oracle for small regions (at most 8 sites).
    """
    K = _as_K(K)
    n = K.shape[0] // 3
    if n > 8:
        raise ModelError("dense quantumness oracle is limited to 8 sites")
    rng = np.random.default_rng(seed)

    def f(x):
        th, ph = x[0::2], x[1::2]
        v = _angles_to_vectors(x)
        g = 2 * (K @ v.ravel()).reshape(n, 3)
        dth = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=1)
        dph = np.stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros(n)], axis=1)
        grad = np.empty_like(x)
        grad[0::2] = np.sum(g * dth, axis=1)
        grad[1::2] = np.sum(g * dph, axis=1)
        return -float(v.ravel() @ K @ v.ravel()), -grad

    best_val, best_x = -np.inf, None
    for s in range(starts):
        x0 = np.empty(2 * n)
        x0[0::2] = np.arccos(rng.uniform(-1, 1, n))
        x0[1::2] = rng.uniform(0, 2 * np.pi, n)
        res = optimize.minimize(f, x0, jac=True, method="L-BFGS-B", options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 5000})
        if -res.fun > best_val:
            best_val, best_x = -res.fun, res.x
    v = _angles_to_vectors(best_x)
    return QuantumnessResult(best_val / n, v, starts, True, best_val, dense_value=best_val / n)
