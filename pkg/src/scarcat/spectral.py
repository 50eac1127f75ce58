"""Symmetry sectors, level statistics and the duality spectrum check."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .pauli_model import (
    HamiltonianSpec,
    ModelError,
    as_sparse,
    build_h1,
    build_h_tau,
    commutator_norm,
    semilocal_charge_values,
)

log = logging.getLogger(__name__)

PARITY_LABELS = ("Px", "Pz", "Pz_even")

POISSON_R = 2 * math.log(2) - 1  # 0.3863
GOE_R = 0.5307


class SymmetryError(ValueError):
    """Requested quantum numbers are inconsistent with each other or with H."""


@dataclass(frozen=True)
class SectorSpec:
    """Quantum numbers of a block.

    ``m``: total magnetization (S^z eigenvalue), ``k``: momentum index with
    ``T|k> = exp(2 pi i k / L)|k>``, ``parities``: eigenvalues of the
    all-site flip ``Px``, the z parity ``Pz`` and the even-site z parity
    ``Pz_even``; ``semilocal``: eigenvalue of the left-truncated semilocal
    charge.  ``None`` leaves a quantum number unresolved.
    """

    L: int
    m: float | None = None
    k: int | None = None
    parities: dict = field(default_factory=dict)
    semilocal: float | None = None

    def __post_init__(self):
        for key, val in self.parities.items():
            if key not in PARITY_LABELS:
                raise SymmetryError(f"unknown parity {key!r}; expected one of {PARITY_LABELS}")
            if val not in (1, -1):
                raise SymmetryError(f"parity {key} must be +1 or -1")
        if self.k is not None and not 0 <= self.k < self.L:
            raise SymmetryError(f"momentum index {self.k} outside [0, {self.L})")

    def __hash__(self):
        return hash((self.L, self.m, self.k, tuple(sorted(self.parities.items())), self.semilocal))

    def describe(self) -> str:
        parts = [f"L={self.L}"]
        if self.m is not None:
            parts.append(f"m={self.m:g}")
        if self.k is not None:
            parts.append(f"k={self.k}")
        parts += [f"{k}={v:+d}" for k, v in sorted(self.parities.items())]
        if self.semilocal is not None:
            parts.append(f"S~z={self.semilocal:g}")
        return ", ".join(parts)


@dataclass
class SectorBasis:
    spec: SectorSpec
    vectors: sp.csc_matrix  # 2^L x dim, orthonormal columns

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class SectorSpectrum:
    spec: SectorSpec
    eigenvalues: np.ndarray
    dimension: int


def _popcount(x):
    return np.bitwise_count(x).astype(np.int64)


def _translate(states: np.ndarray, L: int) -> np.ndarray:
    """Site j -> j+1 (mod L)."""
    full = (1 << L) - 1
    return ((states << 1) | (states >> (L - 1))) & full


def _diagonal_mask(spec: SectorSpec) -> np.ndarray:
    L = spec.L
    idx = np.arange(1 << L, dtype=np.int64)
    keep = np.ones(idx.size, bool)
    if spec.m is not None:
        downs = L / 2 - spec.m
        if downs != int(downs) or not 0 <= downs <= L:
            return np.zeros(idx.size, bool)
        keep &= _popcount(idx) == int(downs)
    if "Pz" in spec.parities:
        keep &= (1 - 2 * (_popcount(idx) & 1)) == spec.parities["Pz"]
    if "Pz_even" in spec.parities:
        even = sum(1 << j for j in range(0, L, 2))
        keep &= (1 - 2 * (_popcount(idx & even) & 1)) == spec.parities["Pz_even"]
    if spec.semilocal is not None:
        keep &= np.isclose(semilocal_charge_values(L), spec.semilocal)
    return keep


def build_sector_basis(spec: SectorSpec) -> SectorBasis:
    """Orthonormal basis of the sector as sparse columns over the computational basis."""
    L = spec.L
    full = (1 << L) - 1
    keep = _diagonal_mask(spec)
    states = np.flatnonzero(keep).astype(np.int64)
    use_k = spec.k is not None
    px = spec.parities.get("Px")

    if px is not None and states.size:
        if not np.array_equal(np.sort(states ^ full), states):
            raise SymmetryError("the spin flip does not preserve the diagonal quantum numbers")

    if use_k and states.size:
        # orbits[s] = T^s applied to every kept state
        orbits = np.empty((L, states.size), dtype=np.int64)
        orbits[0] = states
        for s in range(1, L):
            orbits[s] = _translate(orbits[s - 1], L)
        if not np.all(keep[orbits]):
            raise SymmetryError("translation does not preserve the diagonal quantum numbers")
        reps_mask = orbits.min(axis=0) == states
        reps = states[reps_mask]
        rep_orbits = orbits[:, reps_mask]
        periods = np.argmax(rep_orbits[1:] == rep_orbits[0], axis=0) + 1
        periods[~np.any(rep_orbits[1:] == rep_orbits[0], axis=0)] = L
    else:
        reps = states
        rep_orbits = states[None, :]
        periods = np.ones(states.size, dtype=np.int64)

    index_of_rep = {int(r): i for i, r in enumerate(reps)}

    def orbit_vector(i):
        """Normalised momentum state on orbit i as (rows, values), or None."""
        R = int(periods[i])
        if use_k:
            if (spec.k * R) % L:
                return None
            phases = np.exp(-2j * np.pi * spec.k * np.arange(R) / L)
            return rep_orbits[:R, i], phases / math.sqrt(R)
        return rep_orbits[:1, i], np.ones(1, complex)

    rows, cols, vals = [], [], []
    ncol = 0
    for i in range(reps.size):
        ov = orbit_vector(i)
        if ov is None:
            continue
        r_rows, r_vals = ov
        if px is None:
            rows.append(r_rows)
            vals.append(r_vals)
            cols.append(np.full(r_rows.size, ncol))
            ncol += 1
            continue
        flipped = int(reps[i]) ^ full
        j, _ = _locate_rep(flipped, index_of_rep, L, use_k)
        if j < i:
            continue
        # Px commutes with T, so Px|k, r> is the same orbit sum over flipped states
        f_rows = r_rows ^ full
        c_rows, c_vals = _sum_sparse(r_rows, r_vals, f_rows, px * r_vals)
        norm = np.linalg.norm(c_vals)
        if norm < 1e-10:
            continue
        rows.append(c_rows)
        vals.append(c_vals / norm)
        cols.append(np.full(c_rows.size, ncol))
        ncol += 1

    dim = 1 << L
    if ncol:
        mat = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, ncol)
        )
    else:
        mat = sp.csc_matrix((dim, 0), dtype=complex)
    return SectorBasis(spec, mat)


def _locate_rep(state: int, index_of_rep: dict, L: int, use_k: bool) -> tuple[int, int]:
    if not use_k:
        return index_of_rep[state], 0
    t = state
    for d in range(L):
        if t in index_of_rep:
            return index_of_rep[t], d
        t = int(_translate(np.array([t], dtype=np.int64), L)[0])
    raise SymmetryError("state outside the sector")


def _sum_sparse(r1, v1, r2, v2):
    rows = np.concatenate([r1, r2])
    vals = np.concatenate([v1, v2])
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros(uniq.size, complex)
    np.add.at(out, inv, vals)
    nz = np.abs(out) > 1e-14
    return uniq[nz], out[nz]


def sector_matrix(h, basis: SectorBasis, leak_tol: float = 1e-10) -> np.ndarray:
    """Dense block ``<b_i|H|b_j>``; raises SymmetryError if H leaks out of the sector."""
    if basis.dim == 0:
        return np.zeros((0, 0), complex)
    H = as_sparse(h)
    B = basis.vectors
    HB = H @ B
    M = (B.conj().T @ HB).toarray()
    leak = HB - B @ sp.csc_matrix(M)
    leak_norm = sp.linalg.norm(leak) if leak.nnz else 0.0
    scale = max(1.0, sp.linalg.norm(HB))
    if leak_norm > leak_tol * scale:
        raise SymmetryError(f"Hamiltonian leaks out of sector {basis.spec.describe()}: {leak_norm:.2e}")
    if not np.allclose(M, M.conj().T, atol=1e-12):
        raise SymmetryError("sector block is not Hermitian")
    return (M + M.conj().T) / 2


def sector_spectrum(h, spec: SectorSpec) -> SectorSpectrum:
    basis = build_sector_basis(spec)
    M = sector_matrix(h, basis)
    ev = np.linalg.eigvalsh(M) if basis.dim else np.zeros(0)
    return SectorSpectrum(spec, np.sort(ev), basis.dim)


def check_symmetries(h: HamiltonianSpec, spec: SectorSpec, tol: float = 1e-10) -> None:
    """Numerically verify that H commutes with the requested symmetries (L <= 10)."""
    L = spec.L
    if L > 10:
        return
    H = as_sparse(h)
    idx = np.arange(1 << L, dtype=np.int64)
    ops = {}
    if spec.m is not None:
        ops["Sz"] = sp.diags(L / 2 - _popcount(idx).astype(float))
    if spec.k is not None:
        ops["T"] = sp.csr_matrix((np.ones(idx.size), (_translate(idx, L), idx)), shape=(idx.size,) * 2)
    if "Pz" in spec.parities:
        ops["Pz"] = sp.diags(1.0 - 2 * (_popcount(idx) & 1))
    if "Pz_even" in spec.parities:
        even = sum(1 << j for j in range(0, L, 2))
        ops["Pz_even"] = sp.diags(1.0 - 2 * (_popcount(idx & even) & 1))
    if "Px" in spec.parities:
        ops["Px"] = sp.csr_matrix((np.ones(idx.size), (idx ^ ((1 << L) - 1), idx)), shape=(idx.size,) * 2)
    for name, op in ops.items():
        if commutator_norm(H, op) > tol:
            raise SymmetryError(f"Hamiltonian does not commute with {name}")


# ---------------------------------------------------------------------------
# level statistics


@dataclass
class Unfolded:
    spacings: np.ndarray
    levels: np.ndarray  # smoothed staircase at the kept eigenvalues
    zero_spacings: int
    degree: int = 0


@dataclass
class SpacingStats:
    spacings: np.ndarray
    cdf_s: np.ndarray
    cdf: np.ndarray
    mean_r: float
    n_ratios: int
    sup_poisson: float
    sup_wigner: float
    degenerate_merged: int

    def summary(self) -> dict:
        return {
            "mean_r": self.mean_r,
            "n_ratios": self.n_ratios,
            "n_spacings": int(self.spacings.size),
            "mean_spacing": float(np.mean(self.spacings)) if self.spacings.size else float("nan"),
            "sup_poisson": self.sup_poisson,
            "sup_wigner": self.sup_wigner,
            "degenerate_merged": self.degenerate_merged,
        }


def unfold(eigenvalues, degree: int = 7, trim: float = 0.05, warn: bool = True) -> Unfolded:
    """Map levels through a polynomial fit of the staircase N(E).

    The outer ``trim`` fraction of levels on each side is discarded before
    fitting.  If the degree-``degree`` fit is not monotone on the kept window
    (heavily degenerate spectra) the degree is lowered until it is.  Exactly
    degenerate levels are kept and counted.
    """
    e = np.sort(np.asarray(eigenvalues, dtype=float))
    n = e.size
    cut = int(math.floor(trim * n))
    kept = e[cut : n - cut] if cut else e
    if warn and kept.size < 200:
        log.warning("unfolding only %d levels; statistics will be noisy", kept.size)
    if kept.size < 2:
        return Unfolded(np.zeros(0), kept.copy(), 0, 0)
    zeros = int(np.count_nonzero(np.diff(kept) <= 1e-12 * max(1.0, np.abs(kept).max())))
    staircase = np.arange(kept.size, dtype=float)
    grid = np.linspace(kept[0], kept[-1], 20 * kept.size)
    deg = min(degree, max(1, np.unique(kept).size - 1))
    while True:
        fit = np.polynomial.Polynomial.fit(kept, staircase, deg)
        if deg == 1 or np.all(fit.deriv()(grid) >= 0):
            break
        deg -= 1
    smooth = fit(kept)
    return Unfolded(np.clip(np.diff(smooth), 0, None), smooth, zeros, deg)


def wigner_cdf(s):
    return 1 - np.exp(-np.pi * np.asarray(s) ** 2 / 4)


def poisson_cdf(s):
    return 1 - np.exp(-np.asarray(s))


def _sup_distance(sorted_s: np.ndarray, ref) -> float:
    n = sorted_s.size
    if n == 0:
        return float("nan")
    F = ref(sorted_s)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(max(np.max(np.abs(upper - F)), np.max(np.abs(F - lower))))


def gap_ratios(eigenvalues, degeneracy_tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """min/max ratios of consecutive gaps after merging degenerate levels."""
    e = np.sort(np.asarray(eigenvalues, dtype=float))
    if e.size == 0:
        return np.zeros(0), 0
    keep = np.concatenate([[True], np.diff(e) > degeneracy_tol])
    merged = int(e.size - np.count_nonzero(keep))
    gaps = np.diff(e[keep])
    if gaps.size < 2:
        return np.zeros(0), merged
    a, b = gaps[:-1], gaps[1:]
    return np.minimum(a, b) / np.maximum(a, b), merged


def spacing_stats(spacings, eigenvalues, degeneracy_tol: float = 1e-12) -> SpacingStats:
    """Empirical spacing CDF, sup-distances to Poisson/Wigner and mean gap ratio.

    ``eigenvalues`` may be a single spectrum or a list of spectra (one per
    symmetry sector); gap ratios are pooled over sectors.
    """
    s = np.sort(np.asarray(spacings, dtype=float))
    spectra = eigenvalues if isinstance(eigenvalues, (list, tuple)) else [eigenvalues]
    ratios, merged = [], 0
    for ev in spectra:
        r, m = gap_ratios(ev, degeneracy_tol)
        ratios.append(r)
        merged += m
    r = np.concatenate(ratios) if ratios else np.zeros(0)
    cdf = np.arange(1, s.size + 1) / max(s.size, 1)
    return SpacingStats(
        spacings=s,
        cdf_s=s,
        cdf=cdf,
        mean_r=float(np.mean(r)) if r.size else float("nan"),
        n_ratios=int(r.size),
        sup_poisson=_sup_distance(s, poisson_cdf),
        sup_wigner=_sup_distance(s, wigner_cdf),
        degenerate_merged=merged,
    )


def level_statistics(
    h,
    sectors: list[SectorSpec],
    degree: int = 7,
    trim: float = 0.05,
    min_dim: int = 10,
) -> tuple[list[SectorSpectrum], SpacingStats]:
    """Diagonalize each sector, unfold each one separately and pool the statistics."""
    spectra, spacings, ev_list = [], [], []
    for spec in sectors:
        ss = sector_spectrum(h, spec)
        spectra.append(ss)
        if ss.dimension < min_dim:
            continue
        ev = ss.eigenvalues
        spacings.append(unfold(ev, degree, trim, warn=False).spacings)
        ev_list.append(ev)
    pooled = np.concatenate(spacings) if spacings else np.zeros(0)
    if pooled.size < 200:
        log.warning("only %d pooled spacings; statistics will be noisy", pooled.size)
    return spectra, spacing_stats(pooled, ev_list)


def magnetization_sectors(L: int, m: float = 0, parities: dict | None = None) -> list[SectorSpec]:
    """Every momentum sector at fixed magnetization, with the given parities."""
    parities = parities or {}
    out = []
    for k in range(L):
        for combo in _parity_combos(parities):
            out.append(SectorSpec(L, m=m, k=k, parities=combo))
    return out


def _parity_combos(parities: dict) -> list[dict]:
    """Expand parities given as 0 ("resolve both") into explicit sign choices."""
    combos = [{}]
    for key, val in parities.items():
        choices = (1, -1) if val == 0 else (val,)
        combos = [dict(c, **{key: v}) for c in combos for v in choices]
    return combos


def h_tau_sectors(L: int, m: float = 0) -> list[SectorSpec]:
    """All fully resolved (k, Px, Pz) sectors of the dual model at magnetization m."""
    if m == 0 and L % 2 == 0:
        return magnetization_sectors(L, 0, {"Px": 0, "Pz": 0})
    return magnetization_sectors(L, m, {"Pz": 0})


def dual_sector_specs(L: int) -> tuple[SectorSpec, SectorSpec]:
    """Matching blocks of the transistor chain and of its dual.

    Zero momentum, ``Pz = Px_tau = +1``, zero semilocal charge (zero tau
    magnetization); the even-site parity equals the tau z parity, whose sign
    is fixed to ``(-1)**(L/2)`` because the m=0 block has L/2 down spins.
    """
    if L % 2:
        raise ModelError("the duality check needs even L")
    p = 1 if (L // 2) % 2 == 0 else -1
    direct = SectorSpec(L, k=0, parities={"Pz": 1, "Pz_even": p}, semilocal=0)
    dual = SectorSpec(L, m=0, k=0, parities={"Px": 1, "Pz": p})
    return direct, dual


def duality_spectrum_check(L: int, tol: float = 1e-9, **h1_params) -> dict:
    """Compare the sector spectra of the periodic transistor chain and its dual."""
    if L % 2 or L > 14 or L < 4:
        raise ModelError("duality check needs even 4 <= L <= 14")
    direct_spec, dual_spec = dual_sector_specs(L)
    h1 = build_h1(L, boundary="periodic", **h1_params)
    tau_params = {k: v for k, v in h1_params.items()}
    ht = build_h_tau(L, boundary="periodic", **tau_params)
    a = sector_spectrum(h1, direct_spec)
    b = sector_spectrum(ht, dual_spec)
    report = {
        "L": L,
        "params": h1_params,
        "dim_direct": a.dimension,
        "dim_dual": b.dimension,
        "dimensions_match": a.dimension == b.dimension,
    }
    if a.dimension == b.dimension and a.dimension:
        dev = float(np.max(np.abs(a.eigenvalues - b.eigenvalues)))
    else:
        dev = float("inf") if a.dimension != b.dimension else 0.0
    report["max_deviation"] = dev
    report["spectra_match"] = bool(a.dimension == b.dimension and dev <= tol)
    return report
