"""Growth fits, spreading classification, bimodality and U(1) bound checks."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .observables import FcsDistribution, effective_region, magnetization_histogram
from .pauli_model import HamiltonianSpec, PauliTerm, _popcount, as_compiled, scar_action
from .state_engine import StateVector, basis_state, evolve_series

log = logging.getLogger(__name__)

BETA1_FLOOR = 0.05
DOMINANT_MASS = 0.05


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# growth fit


@dataclass(frozen=True)
class FitResult:
    b0: float
    b1: float
    b2: float
    residual: float
    n_points: int
    stderr: tuple[float, float, float]

    def beta1_is_zero(self, floor: float = BETA1_FLOOR) -> bool:
        """``|b1| < max(floor, 3 * stderr(b1))``."""
        return abs(self.b1) < max(floor, 3 * self.stderr[1])

    def beta1_positive(self, floor: float = BETA1_FLOOR) -> bool:
        return self.b1 > 0 and not self.beta1_is_zero(floor)

    def to_dict(self) -> dict:
        return {"b0": self.b0, "b1": self.b1, "b2": self.b2, "resid": self.residual,
                "n": self.n_points, "stderr": list(self.stderr)}


def fit_growth(xs, ys) -> FitResult:
    """Least squares of ``ys`` on ``b0 + b1 x + b2 / x``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError("xs and ys must be 1D arrays of equal length")
    if np.any(x <= 0):
        raise AnalysisError("fit_growth needs xs > 0")
    if np.unique(x).size < 4:
        raise AnalysisError("fit_growth needs at least 4 distinct points")
    A = np.stack([np.ones_like(x), x, 1 / x], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < 3:
        raise AnalysisError("design matrix is rank deficient")
    r = y - A @ coef
    rss = float(r @ r)
    dof = x.size - 3
    if dof > 0:
        cov = rss / dof * np.linalg.inv(A.T @ A)
        se = tuple(float(v) for v in np.sqrt(np.clip(np.diag(cov), 0, None)))
    else:
        se = (math.nan,) * 3
    return FitResult(float(coef[0]), float(coef[1]), float(coef[2]), math.sqrt(rss), int(x.size), se)


# ---------------------------------------------------------------------------
# spreading


@dataclass(frozen=True)
class SpreadingReport:
    classification: str
    slope: float
    ci: tuple[float, float]
    saturation: float | None

    def to_dict(self) -> dict:
        return {"class": self.classification, "slope": self.slope, "ci": list(self.ci),
                "saturation": self.saturation}


def classify_spreading(times, sizes, confidence: float = 0.95) -> SpreadingReport:
    """Ballistic, confined or undetermined growth of ``|Omega|`` over the trailing half."""
    t = np.asarray(times, dtype=float)
    sz = np.asarray([getattr(s, "size", s) for s in sizes], dtype=float)
    if t.size < 5 or t.size != sz.size:
        raise AnalysisError("classify_spreading needs at least 5 matching points")
    if np.any(np.diff(t) <= 0):
        raise AnalysisError("times must be increasing")
    tail = slice(t.size // 2, None)
    tt, ss = t[tail], sz[tail]
    fit = stats.linregress(tt, ss)
    q = stats.t.ppf(0.5 + confidence / 2, tt.size - 2)
    ci = (float(fit.slope - q * fit.stderr), float(fit.slope + q * fit.stderr))
    if ss.max() - ss.min() < 1:
        return SpreadingReport("confined", float(fit.slope), ci, float(ss.mean()))
    if ci[0] > 0:
        return SpreadingReport("ballistic", float(fit.slope), ci, None)
    return SpreadingReport("undetermined", float(fit.slope), ci, None)


# ---------------------------------------------------------------------------
# bimodality


@dataclass(frozen=True)
class BimodalityReport:
    peaks: list  # (m, mass, height) of every local maximum
    dominant: int
    separated: bool
    valley_ratio: float
    support: str

    def to_dict(self) -> dict:
        return {
            "peaks": [[float(m), float(mass)] for m, mass, _ in self.peaks],
            "dominant": self.dominant,
            "separated": self.separated,
            "valley_ratio": self.valley_ratio,
            "support": self.support,
        }


def _support(n: np.ndarray, P: np.ndarray, floor: float) -> tuple[np.ndarray, str]:
    """Indices of the outcome lattice respecting the parity selection rule, if any."""
    even = (n % 2 == 0) & (n > 0)
    odd = n % 2 == 1
    if np.all(P[even] < floor) and np.any(P[odd] >= floor):
        return np.flatnonzero((n == 0) | odd), "odd+origin"
    if np.all(P[odd] < floor) and np.any(P[even] >= floor):
        return np.flatnonzero(n % 2 == 0), "even"
    return np.arange(n.size), "all"


def detect_bimodality(dist, valley_threshold: float = 0.1, floor: float = 1e-10) -> BimodalityReport:
    """Peaks of ``P(m)`` on its parity sublattice and whether two of them are well separated.

    A peak is dominant when its basin carries more than 5% of the weight; the
    distribution is separated when exactly two peaks are dominant and the
    lowest point between them is below ``valley_threshold`` times the lower
    peak.
    """
    if isinstance(dist, FcsDistribution):
        m, P = dist.m, dist.P
    else:
        m, P = (np.asarray(a, dtype=float) for a in dist)
    P = np.clip(np.asarray(P, dtype=float), 0, None)
    total = P.sum()
    if total <= 0:
        raise AnalysisError("distribution has no weight")
    P = P / total
    order = np.argsort(-m)  # number of down spins increasing
    m, P = np.asarray(m)[order], P[order]
    n = np.rint(m[0] - m).astype(int)
    idx, support = _support(n, P, floor)
    seq = P[idx]
    padded = np.concatenate([[-1.0], seq, [-1.0]])
    peaks = [
        i for i in range(seq.size)
        if seq[i] > floor and seq[i] >= padded[i] and seq[i] > padded[i + 2]
    ]
    # basins split at the lowest point between consecutive peaks; the valley
    # point itself goes to the left basin
    valleys = [a + int(np.argmin(seq[a : b + 1])) for a, b in zip(peaks, peaks[1:])]
    edges = [-1] + valleys + [seq.size - 1]
    masses = [float(seq[edges[k] + 1 : edges[k + 1] + 1].sum()) for k in range(len(peaks))]
    report_peaks = [(float(m[idx[p]]), masses[k], float(seq[p])) for k, p in enumerate(peaks)]
    dom = [k for k, mass in enumerate(masses) if mass > DOMINANT_MASS]
    separated, ratio = False, math.nan
    if len(dom) == 2:
        a, b = peaks[dom[0]], peaks[dom[1]]
        valley = float(seq[a : b + 1].min())
        ratio = valley / min(seq[a], seq[b])
        separated = ratio < valley_threshold
    return BimodalityReport(report_peaks, len(dom), separated, ratio, support)


# ---------------------------------------------------------------------------
# U(1) bounds


def conserves_sz(h, tol: float = 1e-12) -> bool:
    """True if every matrix element of ``h`` connects states of equal magnetization."""
    c = as_compiled(h)
    idx = np.arange(c.dim, dtype=np.int64)
    pc = _popcount(idx)
    for f, d in c.groups():
        if f == 0:
            continue
        moves = _popcount(idx ^ f) != pc
        if np.any(np.abs(d[moves]) > tol):
            return False
    return True


def density_norm(density: HamiltonianSpec) -> float:
    """Operator norm of a local density from dense diagonalization on its support."""
    support = sorted({s for t in density.terms for s in t.sites})
    if not support:
        return 0.0
    local = {s: k for k, s in enumerate(support)}
    terms = tuple(PauliTerm(t.coefficient, tuple((local[s], a) for s, a in t.factors)) for t in density.terms)
    mat = HamiltonianSpec(len(support), "open", terms).compiled.to_dense()
    return float(np.max(np.abs(np.linalg.eigvalsh(mat))))


def density_support(density: HamiltonianSpec) -> int:
    sites = [s for t in density.terms for s in t.sites]
    return max(sites) - min(sites) + 1 if sites else 0


def translated_sum(density: HamiltonianSpec, L: int, boundary: str = "open") -> HamiltonianSpec:
    """``sum_l O_{A_l}`` with the density shifted so that its leftmost site is ``l``."""
    first = min(s for t in density.terms for s in t.sites)
    width = density_support(density)
    starts = range(L) if boundary == "periodic" else range(L - width + 1)
    terms = []
    for l in starts:
        for t in density.terms:
            terms.append(PauliTerm(t.coefficient, tuple(((s - first + l) % L, a) for s, a in t.factors)))
    merged: dict = {}
    for t in terms:
        key = tuple(sorted(t.factors))
        merged[key] = merged.get(key, 0.0) + t.coefficient
    out = tuple(PauliTerm(c, k) for k, c in merged.items() if c != 0)
    return HamiltonianSpec(L, boundary, out, f"sum of {density.label or 'density'}")


@dataclass
class U1Report:
    s: int
    flip_sites: list
    norm_density: float
    support: int
    times: list
    omega: list
    expectation_diff: list
    expectation_bound: float
    variance_excess: list
    variance_bound: list
    var_sz: list
    max_ratio_expectation: float = 0.0
    max_ratio_variance: float = 0.0
    var_sz_drift: float = 0.0
    holds: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def u1_macroscopic_check(
    h: HamiltonianSpec,
    s: int,
    density: HamiltonianSpec,
    times: Sequence[float],
    epsilon: float = 1e-3,
    flip_sites: Sequence[int] | None = None,
    theta: float = math.pi / 4,
    tol: float = 1e-9,
    **evolve_kw,
) -> U1Report:
    """Check the U(1) bounds on expectation values and variances after ``s`` flips.

    ``|<O>_s - <O>_up| <= 2 s ||O_A|| |A|`` and
    ``Var_s(O) <= Var_up(O) + 4 s ||O_A||^2 |A| |Omega|`` at every time, with
    ``Omega`` the smallest block holding all flips outside of which the state
    is all up within ``epsilon``.  Also tracks ``Var(S^z)`` of
    ``cos(theta)|up> + sin(theta)|Psi_s(t)>``, which must not change.
    """
    if not conserves_sz(h):
        raise AnalysisError("the Hamiltonian does not conserve S^z")
    L = h.L
    if flip_sites is None:
        start = L // 2 - s // 2
        flip_sites = list(range(start, start + s))
    if len(set(flip_sites)) != s:
        raise AnalysisError("need s distinct flip sites")
    energy, residual = scar_action(h)
    if residual > 1e-12:
        raise AnalysisError("the all-up state must be an eigenstate")
    O = translated_sum(density, L, h.boundary).compiled
    norm = density_norm(density)
    A = density_support(density)
    up = np.zeros(1 << L, complex)
    up[0] = 1
    Oup = O.apply(up)
    mean_up = float(np.vdot(up, Oup).real)
    var_up = float(np.vdot(Oup, Oup).real) - mean_up**2
    b1 = 2 * s * norm * A
    states, _ = evolve_series(h, basis_state(L, flip_sites), times, **evolve_kw)
    rows = dict(omega=[], expectation_diff=[], variance_excess=[], variance_bound=[], var_sz=[])
    for st in states:
        psi = st.amplitudes
        Opsi = O.apply(psi)
        mean = float(np.vdot(psi, Opsi).real)
        var = float(np.vdot(Opsi, Opsi).real) - mean**2
        omega = effective_region(st, epsilon, flip_sites).size
        rows["omega"].append(omega)
        rows["expectation_diff"].append(abs(mean - mean_up))
        rows["variance_excess"].append(var - var_up)
        rows["variance_bound"].append(4 * s * norm**2 * A * omega)
        sup = math.sin(theta) * np.exp(1j * energy * st.time) * psi
        sup[0] += math.cos(theta)
        m, P = magnetization_histogram(StateVector(L, sup))
        rows["var_sz"].append(float(m**2 @ P - (m @ P) ** 2))
    rep = U1Report(s, list(flip_sites), norm, A, list(map(float, times)), expectation_bound=b1, **rows)
    if b1 > 0:
        rep.max_ratio_expectation = max(d / b1 for d in rep.expectation_diff)
    rep.max_ratio_variance = max(
        (e / b if b > 0 else (0.0 if e <= tol else math.inf))
        for e, b in zip(rep.variance_excess, rep.variance_bound)
    )
    rep.var_sz_drift = float(np.ptp(rep.var_sz))
    rep.holds = bool(
        all(d <= b1 + tol for d in rep.expectation_diff)
        and all(e <= b + tol for e, b in zip(rep.variance_excess, rep.variance_bound))
        and rep.var_sz_drift < 1e-8
    )
    return rep
