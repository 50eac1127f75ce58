import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ID, SX, SY, SZ, kron_hamiltonian, kron_string, random_state
from scarcat.pauli_model import (
    HamiltonianSpec,
    ModelError,
    PauliTerm,
    ScarResidualError,
    as_compiled,
    build_h0,
    build_h1,
    build_h2,
    build_h_tau,
    commutator_norm,
    is_hermitian,
    parity_z,
    pauli,
    scar_action,
    semilocal_charge,
    semilocal_charge_values,
    total_sz,
    verify_scar,
)

CAT = dict(J=2.8, gamma=1.0)
TRANSISTOR = dict(J=1.0, gamma=0.5, w=0.7, Delta=0.0, Dz=0.6, hz=0.0)
LONG_RANGE = dict(J=[1.0, 1.0], gamma_z=[-0.6, -0.6], D_y=[-0.9])

coef = st.floats(-2, 2, allow_nan=False)


def site_op(L, site, mat):
    ops = [ID] * L
    ops[site] = mat
    out = ops[-1]
    for op in ops[-2::-1]:
        out = np.kron(out, op)
    return out


def vec_ops(L, site):
    return [site_op(L, site, m) for m in (SX, SY, SZ)]


def dense_h1(L, J=0, gamma=0, w=0, Delta=0, Dz=0, hz=0, boundary="open"):
    """Transistor chain assembled directly from its matrix definition."""
    S = np.array([[(1 + gamma) / 2, w, 0], [w, (1 - gamma) / 2, 0], [0, 0, Delta]])
    dim = 1 << L
    H = np.zeros((dim, dim), complex)
    centres = range(L) if boundary == "periodic" else range(1, L - 1)
    for l in centres:
        a, b = vec_ops(L, (l - 1) % L), vec_ops(L, (l + 1) % L)
        inner = sum(J * S[i, j] * a[i] @ b[j] for i in range(3) for j in range(3))
        inner = inner + Dz * (a[0] @ b[1] - a[1] @ b[0])
        proj = (np.eye(dim) - site_op(L, l, SZ)) / 8
        H += proj @ inner
    for l in range(L):
        H -= hz / 2 * site_op(L, l, SZ)
    return H


def dense_h2_periodic(L, J, gx, gy, gz, Dx, Dy, Dz, hz):
    dim = 1 << L
    H = np.zeros((dim, dim), complex)
    hx = 0.5 * sum(j * g for j, g in zip(J, gx))
    hy = 0.5 * sum(j * g for j, g in zip(J, gy))
    for r in range(1, len(J) + 1):
        S = np.array([[1, 0, gx[r - 1] / 2], [0, 1, gy[r - 1] / 2], [gx[r - 1] / 2, gy[r - 1] / 2, 1 + gz[r - 1]]])
        D = np.array([Dx[r - 1], Dy[r - 1], Dz[r - 1]])
        for l in range(L):
            a, b = vec_ops(L, l), vec_ops(L, (l + r) % L)
            term = sum(J[r - 1] * S[i, j] * a[i] @ b[j] for i in range(3) for j in range(3))
            cross = [a[1] @ b[2] - a[2] @ b[1], a[2] @ b[0] - a[0] @ b[2], a[0] @ b[1] - a[1] @ b[0]]
            term = term + sum(D[i] * cross[i] for i in range(3))
            H += term / 4
    for l in range(L):
        x, y, z = vec_ops(L, l)
        H -= (hx * x + hy * y + hz * z) / 2
    return H


# ---------------------------------------------------------------------------
# builders against direct matrix construction


@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_h1_matches_matrix_definition(boundary):
    params = dict(J=1.3, gamma=0.4, w=0.7, Delta=-0.5, Dz=0.6, hz=0.3)
    h = build_h1(6, boundary=boundary, **params)
    np.testing.assert_allclose(kron_hamiltonian(h), dense_h1(6, boundary=boundary, **params), atol=1e-13)
    np.testing.assert_allclose(h.compiled.to_dense(), dense_h1(6, boundary=boundary, **params), atol=1e-13)


def test_h2_matches_matrix_definition_periodic():
    J, gx, gy, gz = [1.0, 0.4], [0.3, -0.2], [0.5, 0.1], [-0.6, 0.2]
    Dx, Dy, Dz = [0.2, 0.0], [-0.9, 0.3], [0.1, -0.4]
    h = build_h2(7, J=J, gamma_x=gx, gamma_y=gy, gamma_z=gz, D_x=Dx, D_y=Dy, D_z=Dz, hz=0.35, boundary="periodic")
    np.testing.assert_allclose(h.compiled.to_dense(), dense_h2_periodic(7, J, gx, gy, gz, Dx, Dy, Dz, 0.35), atol=1e-13)


def test_cat_h1_term_structure():
    h = build_h1(8, **CAT)
    assert len(h.terms) == 12
    coefs = sorted({round(t.coefficient, 12) for t in h.terms})
    assert coefs == [-0.35, 0.35]
    for t in h.terms:
        axes = "".join(a for _, a in t.factors)
        assert axes in ("xx", "xzx")
        assert (t.coefficient > 0) == (axes == "xx")


def test_field_only_h1():
    h = build_h1(4, hz=1.0)
    assert len(h.terms) == 4
    assert all(t.coefficient == -0.5 and t.factors[0][1] == "z" for t in h.terms)


def test_h0_variants():
    h = build_h0("ising", 4, h0z=0.0)
    assert len(h.terms) == 3
    assert all(t.coefficient == -0.25 and [a for _, a in t.factors] == ["x", "x"] for t in h.terms)
    tilted = build_h0("tilted_ising", 4, h0z=0.7, h0x=0.5)
    expected = np.zeros((16, 16), complex)
    for l in range(3):
        expected -= 0.25 * kron_string(4, [(l, "x"), (l + 1, "x")])
    for l in range(4):
        expected -= 0.25 * (0.7 * kron_string(4, [(l, "z")]) + 0.5 * kron_string(4, [(l, "x")]))
    np.testing.assert_allclose(tilted.compiled.to_dense(), expected, atol=1e-14)
    assert commutator_norm(build_h0("ising", 4, h0z=2.0), parity_z(4)) < 1e-12
    assert commutator_norm(build_h0("tilted_ising", 6, h0z=0.7, h0x=0.5), parity_z(6)) > 0.1


def test_h_tau_field_only_and_hermitian():
    h = build_h_tau(6, J=0.0, gamma=0.3, w=0.2, hz=1.0)
    assert len(h.terms) == 6
    assert all(t.coefficient == -0.5 and [a for _, a in t.factors] == ["z", "z"] for t in h.terms)
    assert is_hermitian(build_h_tau(8, J=1.0, gamma=1.0, hz=0.3))
    assert is_hermitian(build_h_tau(8, J=1.0, gamma=0.5, w=0.7, Dz=0.6))


def test_empty_h2_annihilates_everything(rng):
    h = build_h2(6)
    assert h.terms == ()
    psi = random_state(6, rng)
    np.testing.assert_allclose(h.compiled.apply(psi), 0)


@pytest.mark.parametrize(
    "call",
    [
        lambda: build_h1(2, J=1),
        lambda: build_h1(6, J=np.nan),
        lambda: build_h2(4, J=[1, 1, 1, 1]),
        lambda: build_h_tau(3, J=1),
        lambda: build_h0("xyz", 4),
        lambda: build_h1(6, J=1, boundary="twisted"),
    ],
)
def test_builder_errors(call):
    with pytest.raises(ModelError):
        call()


def test_pauli_term_validation():
    with pytest.raises(ModelError):
        PauliTerm(1.0, ((0, "x"), (0, "z")))
    with pytest.raises(ModelError):
        PauliTerm(float("inf"), ((0, "x"),))
    with pytest.raises(ModelError):
        HamiltonianSpec(3, "open", (PauliTerm(1.0, ((3, "z"),)),))


def test_spec_round_trip():
    h = build_h2(8, boundary="periodic", **LONG_RANGE)
    assert HamiltonianSpec.from_dict(h.to_dict()) == h


# ---------------------------------------------------------------------------
# compiled form


@given(st.integers(0, 2**31 - 1))
def test_compiled_matches_kronecker(seed):
    rng = np.random.default_rng(seed)
    L = 6
    terms = []
    for _ in range(5):
        sites = rng.choice(L, size=rng.integers(1, 4), replace=False)
        terms.append(PauliTerm(float(rng.normal()), tuple((int(s), "xyz"[rng.integers(3)]) for s in sites)))
    spec = HamiltonianSpec(L, "open", tuple(terms))
    psi = random_state(L, rng)
    np.testing.assert_allclose(as_compiled(spec).apply(psi), kron_hamiltonian(spec) @ psi, atol=1e-13)
    np.testing.assert_allclose(spec.compiled.to_sparse().toarray(), kron_hamiltonian(spec), atol=1e-13)


def test_pauli_helper_single_site():
    up = np.zeros(2, complex)
    up[0] = 1
    np.testing.assert_allclose(pauli(1, (0, "z")).compiled.apply(up), up)
    np.testing.assert_allclose(pauli(1, (0, "x")).compiled.apply(up), [0, 1])
    np.testing.assert_allclose(pauli(1, (0, "y")).compiled.apply(up), [0, 1j])


# ---------------------------------------------------------------------------
# scar and symmetries


@given(st.tuples(coef, coef, coef, coef, coef, coef), st.sampled_from(["open", "periodic"]))
def test_h1_scar_property(p, boundary):
    J, gamma, w, Delta, Dz, hz = p
    h = build_h1(8, J, gamma, w, Delta, Dz, hz, boundary=boundary)
    assert verify_scar(h) == pytest.approx(-8 * hz / 2, abs=1e-12)
    assert is_hermitian(h)


@given(st.lists(coef, min_size=8, max_size=8), st.integers(1, 2), coef)
def test_h2_scar_property(c, r, hz):
    lists = [c[i : i + r] for i in range(0, 7, 2)][:4]
    h = build_h2(8, J=lists[0], gamma_x=lists[1], gamma_y=lists[2], gamma_z=lists[3], D_x=c[:r], D_y=c[1 : 1 + r], D_z=c[2 : 2 + r], hz=hz)
    energy = verify_scar(h)
    dense = kron_hamiltonian(h)
    assert energy == pytest.approx(dense[0, 0].real, abs=1e-12)
    assert np.allclose(dense, dense.conj().T, atol=1e-14)


def test_named_parameter_scars():
    assert verify_scar(build_h1(8, **TRANSISTOR)) == 0.0
    h2 = build_h2(8, **LONG_RANGE)
    assert verify_scar(h2) == pytest.approx(kron_hamiltonian(h2)[0, 0].real, abs=1e-12)


def test_ising_is_not_a_scar():
    with pytest.raises(ScarResidualError) as exc:
        verify_scar(build_h0("ising", 6, h0z=1.0))
    assert exc.value.residual > 0.1
    energy, residual = scar_action(build_h0("ising", 6, h0z=1.0))
    assert residual == pytest.approx(exc.value.residual)


def test_semilocal_charge_small_chains():
    strings, q = semilocal_charge(1)
    assert len(strings) == 1
    np.testing.assert_allclose(q.compiled.to_dense(), 0.5 * np.eye(2))
    _, q3 = semilocal_charge(3)
    expected = 0.5 * (np.eye(8) + kron_string(3, [(0, "z")]) + kron_string(3, [(0, "z"), (1, "z")]))
    np.testing.assert_allclose(q3.compiled.to_dense(), expected)
    for L in (4, 9):
        assert semilocal_charge_values(L)[0] == pytest.approx(L / 2)


def test_semilocal_string_algebra():
    L = 5
    strings, _ = semilocal_charge(L)
    for s in strings:
        P = s.operator().compiled.to_dense()
        direct = np.eye(1 << L)
        for j in range(s.ell):
            direct = direct @ kron_string(L, [(j, "z")])
        np.testing.assert_allclose(P, direct, atol=1e-14)
        np.testing.assert_allclose(P @ P, np.eye(1 << L), atol=1e-14)
        for j in range(L):
            Z = kron_string(L, [(j, "z")])
            assert np.allclose(P @ Z, Z @ P)
            X = kron_string(L, [(j, "x")])
            sign = -1 if j < s.ell else 1
            assert np.allclose(P @ X, sign * X @ P)


@pytest.mark.parametrize("params", [CAT, TRANSISTOR, dict(J=0.8, gamma=-0.3, w=0.2, Delta=0.9, Dz=-0.4, hz=0.7)])
def test_h1_commutes_with_semilocal_charge(params):
    for L in (6, 9):
        assert commutator_norm(build_h1(L, **params), semilocal_charge(L)[1]) < 1e-12


def test_u1_h2_conserves_sz():
    h = build_h2(6, J=[1.0], gamma_z=[-0.6])
    assert commutator_norm(h, total_sz(6)) < 1e-12
    assert commutator_norm(build_h2(6, **LONG_RANGE), total_sz(6)) > 0.1


def test_commutator_dimension_mismatch():
    with pytest.raises(ModelError):
        commutator_norm(build_h1(4, J=1), build_h1(5, J=1))
