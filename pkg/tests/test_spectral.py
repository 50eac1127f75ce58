import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scarcat.pauli_model import HamiltonianSpec, PauliTerm, build_h1, build_h2, build_h_tau
from scarcat.spectral import (
    GOE_R,
    POISSON_R,
    SectorSpec,
    SymmetryError,
    build_sector_basis,
    dual_sector_specs,
    duality_spectrum_check,
    gap_ratios,
    h_tau_sectors,
    level_statistics,
    magnetization_sectors,
    poisson_cdf,
    sector_matrix,
    sector_spectrum,
    spacing_stats,
    unfold,
    wigner_cdf,
)

CHAOTIC = dict(J=1.0, gamma=0.5, w=0.7, Dz=0.6, hz=0.0)
FOLDED = dict(J=1.0)


def poisson_levels(n, rng):
    return np.cumsum(rng.exponential(size=n))


def goe_levels(n, rng):
    a = rng.normal(size=(n, n))
    return np.linalg.eigvalsh((a + a.T) / 2)


# ---------------------------------------------------------------------------
# sector bases


def test_sector_dimensions_small():
    assert build_sector_basis(SectorSpec(4, m=0, k=0)).dim == 2
    assert build_sector_basis(SectorSpec(4, m=2, k=0)).dim == 1


@pytest.mark.parametrize("L", [6, 8])
def test_sector_completeness(L):
    total = 0
    for downs in range(L + 1):
        for k in range(L):
            total += build_sector_basis(SectorSpec(L, m=L / 2 - downs, k=k)).dim
    assert total == 2**L


def test_sector_basis_orthonormal():
    basis = build_sector_basis(SectorSpec(8, m=0, k=3, parities={"Pz": 1}))
    V = basis.vectors.toarray()
    np.testing.assert_allclose(V.conj().T @ V, np.eye(V.shape[1]), atol=1e-12)
    spec = SectorSpec(8, m=0, k=0, parities={"Px": 1, "Pz": 1})
    V = build_sector_basis(spec).vectors.toarray()
    flipped = V[::-1]  # Px reverses the basis index order
    np.testing.assert_allclose(flipped, V, atol=1e-12)


def test_sector_spec_validation():
    with pytest.raises(SymmetryError):
        SectorSpec(6, parities={"Q": 1})
    with pytest.raises(SymmetryError):
        SectorSpec(6, parities={"Px": 2})
    with pytest.raises(SymmetryError):
        SectorSpec(6, k=6)


# ---------------------------------------------------------------------------
# sector matrices


def test_sector_matrix_trivial_cases():
    basis = build_sector_basis(SectorSpec(8, m=0, k=0))
    np.testing.assert_allclose(sector_matrix(HamiltonianSpec(8, "periodic", ()), basis), 0)
    zz = HamiltonianSpec(8, "periodic", tuple(PauliTerm(0.3 * (j + 1), ((j, "z"), ((j + 2) % 8, "z"))) for j in range(8)))
    M = sector_matrix(zz, build_sector_basis(SectorSpec(8, m=1)))
    np.testing.assert_allclose(M, np.diag(np.diag(M)), atol=1e-12)


def test_sector_matrix_hermitian_chaotic():
    spec = SectorSpec(8, m=0, k=0, parities={"Px": 1, "Pz": 1})
    M = sector_matrix(build_h_tau(8, **CHAOTIC), build_sector_basis(spec))
    np.testing.assert_allclose(M, M.conj().T, atol=1e-12)
    assert np.all(np.isreal(np.linalg.eigvalsh(M)))


def test_sectors_reassemble_full_spectrum():
    L = 8
    h = build_h_tau(L, **CHAOTIC)
    full = np.linalg.eigvalsh(h.compiled.to_dense())
    parts = []
    for downs in range(L + 1):
        for k in range(L):
            parts.append(sector_spectrum(h, SectorSpec(L, m=L / 2 - downs, k=k)).eigenvalues)
    np.testing.assert_allclose(np.sort(np.concatenate(parts)), full, atol=1e-10)
    ss = sector_spectrum(h, SectorSpec(L, m=0, k=0, parities={"Px": 1, "Pz": 1}))
    assert ss.eigenvalues.min() >= full.min() - 1e-12
    assert np.all(np.diff(ss.eigenvalues) >= 0)


def test_symmetry_mismatch_detected():
    h = build_h2(8, J=[1.0], D_y=[-0.9], boundary="periodic")
    with pytest.raises(SymmetryError):
        sector_spectrum(h, SectorSpec(8, m=0, k=0))


# ---------------------------------------------------------------------------
# unfolding and statistics


def test_unfold_equal_spacing():
    u = unfold(np.arange(400.0) * 0.37)
    np.testing.assert_allclose(u.spacings, 1, atol=1e-8)
    assert u.zero_spacings == 0


def test_unfold_poisson_cdf(rng):
    u = unfold(poisson_levels(2000, rng))
    assert np.mean(u.spacings) == pytest.approx(1, abs=0.02)
    s = np.sort(u.spacings)
    stats = spacing_stats(s, poisson_levels(200, rng))
    assert stats.sup_poisson < 0.03
    assert stats.sup_wigner > stats.sup_poisson


def semicircle_staircase(e, n):
    """Exact mean level count of the GOE used by ``goe_levels`` (radius sqrt(2n))."""
    x = np.clip(e / np.sqrt(2 * n), -1, 1)
    return n * (0.5 + (x * np.sqrt(1 - x * x) + np.arcsin(x)) / np.pi)


def test_unfold_goe_cdf(rng):
    # a single 1000-level draw has KS noise of order 0.03, so use the median of five
    sups = []
    for _ in range(5):
        e = goe_levels(1000, rng)
        u = unfold(e)
        assert np.mean(u.spacings) == pytest.approx(1, abs=0.02)
        exact = np.diff(semicircle_staircase(e[50:950], 1000))
        assert np.abs(np.sort(u.spacings) - np.sort(exact)).max() < 0.05
        stats = spacing_stats(u.spacings, e)
        assert stats.sup_poisson > stats.sup_wigner
        sups.append(stats.sup_wigner)
    assert np.median(sups) < 0.03


def test_unfold_counts_degeneracies():
    e = np.concatenate([np.arange(300.0), np.arange(50.0, 60.0)])
    u = unfold(e, trim=0.0)
    assert u.zero_spacings == 10
    assert np.all(u.spacings >= 0)


def test_reference_cdfs():
    assert wigner_cdf(0.0) == 0 and poisson_cdf(0.0) == 0
    # both references have unit mean spacing
    s = np.linspace(0, 40, 400001)
    for cdf in (wigner_cdf, poisson_cdf):
        assert np.trapezoid(1 - cdf(s), s) == pytest.approx(1.0, abs=1e-6)


def test_gap_ratio_oracles(rng):
    r, _ = gap_ratios(poisson_levels(100_000, rng))
    assert r.mean() == pytest.approx(POISSON_R, abs=0.01)
    pooled = np.concatenate([gap_ratios(goe_levels(200, rng)[20:-20])[0] for _ in range(100)])
    assert pooled.mean() == pytest.approx(GOE_R, abs=0.01)
    r, _ = gap_ratios(np.arange(50.0))
    np.testing.assert_allclose(r, 1)


def test_gap_ratios_merge_degeneracies():
    e = np.array([0.0, 1.0, 1.0, 3.0, 6.0])
    r, merged = gap_ratios(e)
    assert merged == 1
    np.testing.assert_allclose(r, [0.5, 2 / 3])


@given(st.integers(0, 2**31 - 1))
def test_gap_ratios_bounded(seed):
    r, _ = gap_ratios(np.random.default_rng(seed).normal(size=60))
    assert np.all((r >= 0) & (r <= 1))


# ---------------------------------------------------------------------------
# duality and the chaotic/integrable dichotomy


@pytest.mark.parametrize(
    "L,params",
    [(8, dict(J=1.0, gamma=1.0, hz=0.3)), (8, dict(J=0.0, hz=1.0)), (10, CHAOTIC)],
)
def test_duality(L, params):
    rep = duality_spectrum_check(L, **params)
    assert rep["dimensions_match"] and rep["dim_direct"] > 0
    assert rep["max_deviation"] < 1e-9
    assert rep["spectra_match"]


def test_dual_sector_specs_sign():
    a, b = dual_sector_specs(10)
    assert a.parities["Pz_even"] == -1 and b.parities["Pz"] == -1
    a, b = dual_sector_specs(8)
    assert a.parities["Pz_even"] == 1 and b.parities["Pz"] == 1


def test_chaotic_vs_integrable_l12():
    sectors = h_tau_sectors(12)
    _, chaotic = level_statistics(build_h_tau(12, **CHAOTIC), sectors)
    _, folded = level_statistics(build_h_tau(12, **FOLDED), sectors)
    assert chaotic.mean_r > 0.48
    assert folded.mean_r < 0.43
    assert folded.degenerate_merged > 0
    summary = chaotic.summary()
    assert summary["mean_r"] == pytest.approx(chaotic.mean_r)


def test_magnetization_sectors_listing():
    specs = magnetization_sectors(8, 0, {"Pz": 0})
    assert len(specs) == 16
    assert {s.parities["Pz"] for s in specs} == {1, -1}
