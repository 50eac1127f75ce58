"""Pauli-string Hamiltonians for spin-1/2 chains with the all-up scar.

Basis convention, shared by every module of the package: bit ``j`` of a
computational-basis index is 0 when site ``j`` points up and 1 when it points
down.  Hence ``sigma^z_j`` has eigenvalue ``(-1)**bit_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

AXES = ("x", "y", "z")
BOUNDARIES = ("open", "periodic")


class ModelError(ValueError):
    """Invalid model construction (bad size, parameters or sites)."""


class ScarResidualError(RuntimeError):
    """The all-up state is not an eigenstate of the Hamiltonian."""

    def __init__(self, residual: float, energy: float):
        super().__init__(f"|up...up> is not an eigenstate: residual norm {residual:.3e}")
        self.residual = residual
        self.energy = energy


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    factors: tuple[tuple[int, str], ...]

    def __post_init__(self):
        if not math.isfinite(self.coefficient):
            raise ModelError(f"non-finite coefficient {self.coefficient}")
        sites = [s for s, _ in self.factors]
        if len(set(sites)) != len(sites):
            raise ModelError(f"repeated site in {self.factors}")
        for s, a in self.factors:
            if a not in AXES:
                raise ModelError(f"unknown axis {a!r}")
        object.__setattr__(self, "factors", tuple(sorted((int(s), a) for s, a in self.factors)))

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.factors)

    def label(self) -> str:
        return " ".join(f"{a}{s}" for s, a in self.factors) or "1"


@dataclass(frozen=True)
class HamiltonianSpec:
    L: int
    boundary: str
    terms: tuple[PauliTerm, ...]
    label: str = ""

    def __post_init__(self):
        if self.L < 1:
            raise ModelError("L must be positive")
        if self.boundary not in BOUNDARIES:
            raise ModelError(f"boundary must be one of {BOUNDARIES}")
        for term in self.terms:
            for s in term.sites:
                if not 0 <= s < self.L:
                    raise ModelError(f"site {s} outside [0, {self.L})")
        object.__setattr__(self, "terms", tuple(self.terms))

    def __len__(self):
        return len(self.terms)

    @cached_property
    def compiled(self) -> "CompiledOperator":
        return compile_terms(self.terms, self.L)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "L": self.L,
            "boundary": self.boundary,
            "terms": [
                {"coefficient": t.coefficient, "factors": [[s, a] for s, a in t.factors]}
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HamiltonianSpec":
        terms = tuple(
            PauliTerm(float(t["coefficient"]), tuple((int(s), str(a)) for s, a in t["factors"]))
            for t in data["terms"]
        )
        return cls(int(data["L"]), data["boundary"], terms, data.get("label", ""))


def _popcount(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(x).astype(np.int64)


@dataclass
class CompiledOperator:
    """Bitmask form of a sum of Pauli strings.

    A term with flip mask ``f``, phase mask ``p`` and scalar ``c`` sends basis
    state ``|i>`` to ``c * (-1)**popcount(i & p) * |i ^ f>``; ``c`` carries
    the ``i**n_y`` factor of the ``sigma^y`` factors.
    """

    L: int
    flip: np.ndarray
    phase: np.ndarray
    scalar: np.ndarray
    _groups: list | None = field(default=None, repr=False)
    _sparse: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return 1 << self.L

    def __len__(self):
        return len(self.scalar)

    def groups(self) -> list[tuple[int, np.ndarray]]:
        """Terms merged by flip mask into (mask, diagonal weight vector) pairs."""
        if self._groups is None:
            idx = np.arange(self.dim, dtype=np.int64)
            acc: dict[int, np.ndarray] = {}
            for f, p, c in zip(self.flip, self.phase, self.scalar):
                signs = 1 - 2 * (_popcount(idx & int(p)) & 1)
                acc.setdefault(int(f), np.zeros(self.dim, complex))
                acc[int(f)] += c * signs
            self._groups = [(f, d) for f, d in sorted(acc.items()) if np.any(d != 0)]
        return self._groups

    def apply(self, psi: np.ndarray) -> np.ndarray:
        if psi.shape != (self.dim,):
            raise ModelError(f"state of length {psi.shape} does not match L={self.L}")
        out = np.zeros(self.dim, complex)
        idx = np.arange(self.dim, dtype=np.int64)
        for f, d in self.groups():
            if f == 0:
                out += d * psi
            else:
                out += (d * psi)[idx ^ f]
        return out

    def to_sparse(self) -> sp.csr_matrix:
        if self._sparse is None:
            idx = np.arange(self.dim, dtype=np.int64)
            rows, cols, vals = [], [], []
            for f, d in self.groups():
                rows.append(idx ^ f)
                cols.append(idx)
                vals.append(d)
            if rows:
                m = sp.coo_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(self.dim, self.dim),
                ).tocsr()
            else:
                m = sp.csr_matrix((self.dim, self.dim), dtype=complex)
            m.sum_duplicates()
            self._sparse = m
        return self._sparse

    def to_dense(self) -> np.ndarray:
        if self.L > 14:
            raise ModelError("dense matrices are limited to L <= 14")
        return self.to_sparse().toarray()


def compile_terms(terms: Iterable[PauliTerm], L: int) -> CompiledOperator:
    flips, phases, scalars = [], [], []
    for t in terms:
        f = p = 0
        ny = 0
        for s, a in t.factors:
            bit = 1 << s
            if a in "xy":
                f |= bit
            if a in "yz":
                p |= bit
            ny += a == "y"
        flips.append(f)
        phases.append(p)
        scalars.append(t.coefficient * 1j**ny)
    return CompiledOperator(
        L,
        np.array(flips, dtype=np.int64),
        np.array(phases, dtype=np.int64),
        np.array(scalars, dtype=complex),
    )


def as_compiled(op) -> CompiledOperator:
    if isinstance(op, CompiledOperator):
        return op
    if isinstance(op, HamiltonianSpec):
        return op.compiled
    raise TypeError(f"cannot compile {type(op).__name__}")


def as_sparse(op) -> sp.spmatrix:
    if sp.issparse(op):
        return op
    if isinstance(op, np.ndarray):
        return sp.csr_matrix(op)
    return as_compiled(op).to_sparse()


# ---------------------------------------------------------------------------
# builders


class _TermAccumulator:
    """Collects Pauli strings, merging repeated ones and dropping zeros."""

    def __init__(self, L: int, periodic: bool):
        self.L = L
        self.periodic = periodic
        self.coeffs: dict[tuple, float] = {}

    def add(self, coef: float, *factors: tuple[int, str]):
        if coef == 0:
            return
        fs = []
        for s, a in factors:
            if self.periodic:
                s %= self.L
            elif not 0 <= s < self.L:
                return
            fs.append((s, a))
        key = tuple(sorted(fs))
        self.coeffs[key] = self.coeffs.get(key, 0.0) + coef

    def spec(self, boundary: str, label: str) -> HamiltonianSpec:
        terms = tuple(PauliTerm(c, k) for k, c in self.coeffs.items() if c != 0)
        return HamiltonianSpec(self.L, boundary, terms, label)


def _check_finite(**params):
    for name, value in params.items():
        for v in np.atleast_1d(np.asarray(value, dtype=float)):
            if not math.isfinite(v):
                raise ModelError(f"parameter {name} is not finite")


def _check_boundary(boundary: str):
    if boundary not in BOUNDARIES:
        raise ModelError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")


def h1_couplings(J: float, gamma: float, w: float, Delta: float, Dz: float) -> list[tuple[str, str, float]]:
    """(alpha, beta, c) with ``J sigma.S.sigma' + D.(sigma x sigma')`` = sum c sigma^alpha sigma'^beta."""
    return [
        ("x", "x", J * (1 + gamma) / 2),
        ("y", "y", J * (1 - gamma) / 2),
        ("x", "y", J * w + Dz),
        ("y", "x", J * w - Dz),
        ("z", "z", J * Delta),
    ]


def build_h1(
    L: int,
    J: float = 0.0,
    gamma: float = 0.0,
    w: float = 0.0,
    Delta: float = 0.0,
    Dz: float = 0.0,
    hz: float = 0.0,
    boundary: str = "open",
) -> HamiltonianSpec:
    """Quantum transistor chain.

    Each three-site density ``(1 - sigma^z_l)/8 [J s_{l-1}.S.s_{l+1} + Dz (s_{l-1} x s_{l+1})_z]``
    is expanded into Pauli strings; the open chain keeps densities centred on
    ``1 <= l <= L-2`` and the field on every site.
    """
    _check_boundary(boundary)
    _check_finite(J=J, gamma=gamma, w=w, Delta=Delta, Dz=Dz, hz=hz)
    if L < 3:
        raise ModelError("build_h1 needs L >= 3")
    periodic = boundary == "periodic"
    acc = _TermAccumulator(L, periodic)
    centres = range(L) if periodic else range(1, L - 1)
    for l in centres:
        for a, b, c in h1_couplings(J, gamma, w, Delta, Dz):
            acc.add(c / 8, (l - 1, a), (l + 1, b))
            acc.add(-c / 8, (l - 1, a), (l, "z"), (l + 1, b))
    for l in range(L):
        acc.add(-hz / 2, (l, "z"))
    label = f"h1(J={J}, gamma={gamma}, w={w}, Delta={Delta}, Dz={Dz}, hz={hz})"
    return acc.spec(boundary, label)


def _padded(values: Sequence[float], n: int) -> list[float]:
    values = [float(v) for v in np.atleast_1d(values)] if len(np.atleast_1d(values)) else []
    return values + [0.0] * (n - len(values))


def build_h2(
    L: int,
    J: Sequence[float] = (),
    gamma_x: Sequence[float] = (),
    gamma_y: Sequence[float] = (),
    gamma_z: Sequence[float] = (),
    D_x: Sequence[float] = (),
    D_y: Sequence[float] = (),
    D_z: Sequence[float] = (),
    hz: float = 0.0,
    boundary: str = "open",
) -> HamiltonianSpec:
    """Generic pairwise model with the all-up state as an exact eigenstate.

    List entry ``r-1`` holds the range-``r`` coupling.  The transverse fields
    are not free: on every site they cancel the single-flip amplitudes that
    the bonds produce on the all-up state.  In the bulk this is
    ``h_x = sum_r J_r gamma^x_r / 2`` (likewise ``h_y``); sites near an open
    edge see fewer bonds and receive the correspondingly reduced field.
    """
    _check_boundary(boundary)
    lists = dict(J=J, gamma_x=gamma_x, gamma_y=gamma_y, gamma_z=gamma_z, D_x=D_x, D_y=D_y, D_z=D_z)
    _check_finite(hz=hz, **{k: v for k, v in lists.items() if len(np.atleast_1d(v))})
    rmax = max((len(np.atleast_1d(v)) for v in lists.values()), default=0)
    if rmax >= L:
        raise ModelError(f"coupling range {rmax} must be smaller than L={L}")
    Jr, gx, gy, gz, Dx, Dy, Dz = (_padded(lists[k], rmax) for k in lists)
    periodic = boundary == "periodic"
    acc = _TermAccumulator(L, periodic)
    single_flip = np.zeros(L, complex)

    def bond(coef, i, a, j, b):
        if coef == 0:
            return
        acc.add(coef, (i, a), (j, b))
        # single-flip amplitude of sigma^a_i sigma^z_j on |up...up>
        if b == "z" and a != "z":
            single_flip[i % L] += coef * (1 if a == "x" else 1j)
        if a == "z" and b != "z":
            single_flip[j % L] += coef * (1 if b == "x" else 1j)

    for r in range(1, rmax + 1):
        S = np.array(
            [
                [1.0, 0.0, gx[r - 1] / 2],
                [0.0, 1.0, gy[r - 1] / 2],
                [gx[r - 1] / 2, gy[r - 1] / 2, 1.0 + gz[r - 1]],
            ]
        )
        D = (Dx[r - 1], Dy[r - 1], Dz[r - 1])
        last = L if periodic else L - r
        for l in range(last):
            m = l + r
            for ia, a in enumerate(AXES):
                for ib, b in enumerate(AXES):
                    bond(Jr[r - 1] * S[ia, ib] / 4, l, a, m, b)
            # D . (s_l x s_m)
            bond(D[0] / 4, l, "y", m, "z")
            bond(-D[0] / 4, l, "z", m, "y")
            bond(D[1] / 4, l, "z", m, "x")
            bond(-D[1] / 4, l, "x", m, "z")
            bond(D[2] / 4, l, "x", m, "y")
            bond(-D[2] / 4, l, "y", m, "x")
    for l in range(L):
        c = single_flip[l]
        # -(hx/2) x - (hy/2) y cancels c on |up...up>
        acc.add(-c.real, (l, "x"))
        acc.add(-c.imag, (l, "y"))
        acc.add(-hz / 2, (l, "z"))
    label = f"h2(J={list(Jr)}, gamma_x={gx}, gamma_y={gy}, gamma_z={gz}, D_x={Dx}, D_y={Dy}, D_z={Dz}, hz={hz})"
    return acc.spec(boundary, label)


def build_h0(
    variant: str,
    L: int,
    h0z: float = 0.0,
    h0x: float = 0.0,
    boundary: str = "open",
) -> HamiltonianSpec:
    """Pre-measurement Ising Hamiltonians: ``ising`` ignores ``h0x``."""
    _check_boundary(boundary)
    _check_finite(h0z=h0z, h0x=h0x)
    if variant not in ("ising", "tilted_ising"):
        raise ModelError(f"unknown h0 variant {variant!r}")
    if L < 2:
        raise ModelError("build_h0 needs L >= 2")
    periodic = boundary == "periodic"
    acc = _TermAccumulator(L, periodic)
    for l in range(L if periodic else L - 1):
        acc.add(-0.25, (l, "x"), (l + 1, "x"))
    for l in range(L):
        acc.add(-0.25 * h0z, (l, "z"))
        if variant == "tilted_ising":
            acc.add(-0.25 * h0x, (l, "x"))
    return acc.spec(boundary, f"{variant}(h0z={h0z}, h0x={h0x if variant == 'tilted_ising' else 0})")


def build_h_tau(
    L: int,
    J: float = 0.0,
    gamma: float = 0.0,
    w: float = 0.0,
    Dz: float = 0.0,
    hz: float = 0.0,
    Delta: float = 0.0,
    boundary: str = "periodic",
) -> HamiltonianSpec:
    """Kramers-Wannier dual of the transistor chain, written in tau spins."""
    _check_boundary(boundary)
    _check_finite(J=J, gamma=gamma, w=w, Dz=Dz, hz=hz, Delta=Delta)
    if L < 4:
        raise ModelError("build_h_tau needs L >= 4")
    periodic = boundary == "periodic"
    acc = _TermAccumulator(L, periodic)
    centres = range(L) if periodic else range(1, L - 2)
    for l in centres:
        a, b, c, d = l - 1, l, l + 1, l + 2
        for ax in "xy":
            acc.add(J * (1 + gamma) / 16, (b, ax), (c, ax))
            acc.add(J * (1 - gamma) / 16, (a, "z"), (b, ax), (c, ax), (d, "z"))
        for zsite, weight in ((d, Dz + J * w), (a, Dz - J * w)):
            acc.add(weight / 8, (zsite, "z"), (b, "x"), (c, "y"))
            acc.add(-weight / 8, (zsite, "z"), (b, "y"), (c, "x"))
        acc.add(J * Delta / 8, (a, "z"), (b, "z"), (c, "z"), (d, "z"))
        acc.add(-J * Delta / 8, (a, "z"), (d, "z"))
    for l in range(L if periodic else L - 1):
        acc.add(-hz / 2, (l, "z"), (l + 1, "z"))
    return acc.spec(boundary, f"h_tau(J={J}, gamma={gamma}, w={w}, Dz={Dz}, hz={hz}, Delta={Delta})")


def total_sz(L: int) -> HamiltonianSpec:
    return HamiltonianSpec(L, "open", tuple(PauliTerm(0.5, ((l, "z"),)) for l in range(L)), "Sz")


def parity_z(L: int) -> HamiltonianSpec:
    return HamiltonianSpec(L, "open", (PauliTerm(1.0, tuple((l, "z") for l in range(L))),), "Pi^z")


def pauli(L: int, *factors: tuple[int, str], coefficient: float = 1.0) -> HamiltonianSpec:
    """A single Pauli string as an operator spec."""
    return HamiltonianSpec(L, "open", (PauliTerm(coefficient, tuple(factors)),), "")


# ---------------------------------------------------------------------------
# semilocal charge


@dataclass(frozen=True)
class SemilocalString:
    """Left-truncated string ``prod_{j < ell} sigma^z_j`` on an open chain."""

    ell: int
    L: int

    @property
    def term(self) -> PauliTerm:
        return PauliTerm(1.0, tuple((j, "z") for j in range(self.ell)))

    def operator(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.L, "open", (self.term,), f"Pi^z({self.ell})")


def semilocal_charge(L: int) -> tuple[list[SemilocalString], HamiltonianSpec]:
    """Densities ``Pi^z(ell)``, ell = 0..L-1, and ``(1/2) sum_ell Pi^z(ell)``."""
    if L < 1:
        raise ModelError("L must be positive")
    strings = [SemilocalString(ell, L) for ell in range(L)]
    total = HamiltonianSpec(L, "open", tuple(PauliTerm(0.5, s.term.factors) for s in strings), "S~z")
    return strings, total


def semilocal_charge_values(L: int) -> np.ndarray:
    """Eigenvalue of the truncated semilocal charge on every basis state."""
    idx = np.arange(1 << L, dtype=np.int64)
    total = np.zeros(1 << L)
    for ell in range(L):
        total += 1 - 2 * (_popcount(idx & ((1 << ell) - 1)) & 1)
    return total / 2


# ---------------------------------------------------------------------------
# structural checks


def scar_action(h: HamiltonianSpec) -> tuple[float, float]:
    """(<up|H|up>, ||H|up> - E|up>||) from the terms alone."""
    amp: dict[int, complex] = {}
    c = h.compiled
    for f, s in zip(c.flip, c.scalar):
        amp[int(f)] = amp.get(int(f), 0) + s
    energy = amp.pop(0, 0.0)
    residual = math.sqrt(sum(abs(v) ** 2 for v in amp.values()))
    return float(np.real(energy)), residual


def verify_scar(h: HamiltonianSpec, tol: float = 1e-12) -> float:
    """Eigenvalue of the all-up state; raises ScarResidualError otherwise."""
    energy, residual = scar_action(h)
    if residual > tol:
        raise ScarResidualError(residual, energy)
    return energy


def commutator_norm(a, b) -> float:
    """Frobenius norm of ``[A, B]``; operands are specs, compiled operators or matrices."""
    A, B = as_sparse(a), as_sparse(b)
    if A.shape != B.shape:
        raise ModelError(f"dimension mismatch {A.shape} vs {B.shape}")
    if A.shape[0] > 1 << 14:
        raise ModelError("commutator_norm is limited to L <= 14")
    C = (A @ B - B @ A).tocoo()
    return float(np.sqrt(np.sum(np.abs(C.data) ** 2)))


def is_hermitian(h, atol: float = 1e-14) -> bool:
    m = as_sparse(h)
    diff = (m - m.conj().T).tocoo()
    return bool(diff.nnz == 0 or np.max(np.abs(diff.data)) <= atol)
