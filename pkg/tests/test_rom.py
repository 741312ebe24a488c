import numpy as np
import pytest
from scipy.integrate import trapezoid

from podmpc.errors import BlowUpError, DimensionError
from podmpc.field import Grid3, VectorField3, advect, inner_product, laplacian_op
from podmpc.pod import PodBasis, reconstruct
from podmpc.rom import (RomModel, assemble_rom, integrate_rom, read_rom, rom_jacobian, rom_rhs, write_rom)


def random_model(n, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return RomModel(0.01, rng.standard_normal(n) * scale, rng.standard_normal((n, n)) * scale,
                    rng.standard_normal((n, n, n)) * scale)


def projected_ns_rhs(basis, a, nu):
    """Direct Galerkin projection of -(v.grad)v + nu lap v for v = reconstruct(a)."""
    v = reconstruct(basis, a)
    rhs = -1.0 * advect(v, v) + nu * laplacian_op(v)
    return np.array([inner_product(rhs, phi) for phi in basis.modes])


def direct_triple(phi_j, phi_i, phi_k):
    """<(phi_j . grad) phi_i, phi_k> with independent differencing and nested 1-D trapezoids."""
    g = phi_i.grid
    axes = g.axes()
    total = np.zeros(g.dims)
    for c in range(3):
        dirs = np.gradient(phi_i.values[..., c], *axes, edge_order=1)
        conv_c = sum(phi_j.values[..., d] * dirs[d] for d in range(3))
        total += conv_c * phi_k.values[..., c]
    return trapezoid(trapezoid(trapezoid(total, axes[2], axis=2), axes[1], axis=1), axes[0], axis=0)


def test_constant_mode_zero_mean():
    g = Grid3.from_bounds((0, 0, 0), (1, 1, 1), (4, 4, 4))
    phi = VectorField3.constant(g, (1 / np.sqrt(g.volume), 0, 0))
    basis = PodBasis(g, VectorField3.zeros(g), (phi,), [1.0], 1.0)
    model = assemble_rom(basis, 0.1)
    assert np.allclose(model.c, 0) and np.allclose(model.L, 0) and np.allclose(model.Q, 0)


def test_zero_mean_linear_term_is_viscous(flow_basis):
    basis = PodBasis(flow_basis.grid, VectorField3.zeros(flow_basis.grid), flow_basis.modes,
                     flow_basis.eigenvalues, flow_basis.total_energy)
    nu = 0.05
    model = assemble_rom(basis, nu)
    expected = np.array([[nu * inner_product(laplacian_op(pi), pk) for pi in basis.modes] for pk in basis.modes])
    assert np.allclose(model.L, expected, rtol=1e-12, atol=1e-14)
    assert np.allclose(model.c, 0.0)


def test_quadratic_entry_against_direct_quadrature(flow_basis):
    model = assemble_rom(flow_basis, 0.01)
    phi = flow_basis.modes
    # Q_2[1][3] in one-based numbering
    direct = -direct_triple(phi[2], phi[0], phi[1])
    assert model.Q[1, 0, 2] == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_rhs_matches_galerkin_projection(flow_basis):
    nu = 0.02
    model = assemble_rom(flow_basis, nu)
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.standard_normal(flow_basis.n)
        a /= max(1.0, np.linalg.norm(a))
        ref = projected_ns_rhs(flow_basis, a, nu)
        assert np.linalg.norm(rom_rhs(model, a) - ref) <= 1e-6 * np.linalg.norm(ref)


def test_length_unit_scaling(flow_basis):
    # advective terms scale with 1/ell, viscous ones with nu/ell^2
    ell, nu = 1e3, 0.3
    inviscid = assemble_rom(flow_basis, 0.0)
    viscous = assemble_rom(flow_basis, nu)
    scaled = assemble_rom(flow_basis, nu * ell**2, length_unit=ell)
    assert np.allclose(scaled.Q, inviscid.Q / ell, rtol=1e-12, atol=1e-15)
    assert np.allclose(scaled.L, inviscid.L / ell + (viscous.L - inviscid.L), rtol=1e-10, atol=1e-12)
    assert np.allclose(scaled.c, inviscid.c / ell + (viscous.c - inviscid.c), rtol=1e-10, atol=1e-12)


def test_rhs_examples():
    n = 3
    L = np.arange(9.0).reshape(3, 3)
    c = np.array([1.0, -2.0, 0.5])
    m = RomModel(0.0, c, L, np.zeros((n, n, n)))
    assert np.array_equal(rom_rhs(m, np.zeros(n)), c)
    lin = RomModel.linear(L)
    a = np.array([1.0, 2.0, -1.0])
    assert np.allclose(rom_rhs(lin, a), L @ a)
    Q = np.zeros((2, 2, 2))
    Q[0] = [[0, 1], [0, 0]]
    m2 = RomModel(0.0, np.zeros(2), np.zeros((2, 2)), Q)
    assert np.allclose(rom_rhs(m2, [2.0, 3.0]), [6.0, 0.0])
    with pytest.raises(DimensionError):
        rom_rhs(m2, [1.0, 2.0, 3.0])


def test_only_symmetric_part_of_q_matters():
    m = random_model(4, seed=1)
    Qs = 0.5 * (m.Q + np.swapaxes(m.Q, 1, 2))
    ms = RomModel(m.nu, m.c, m.L, Qs)
    a = np.random.default_rng(2).standard_normal(4)
    assert np.allclose(rom_rhs(m, a), rom_rhs(ms, a), rtol=1e-14, atol=1e-14)


def test_jacobian_examples():
    L = np.array([[-1.0, 2.0], [0.5, -3.0]])
    lin = RomModel.linear(L)
    assert np.array_equal(rom_jacobian(lin, [4.0, -1.0]), L)
    m = random_model(3, seed=4)
    assert np.array_equal(rom_jacobian(m, np.zeros(3)), m.L)


def test_jacobian_matches_finite_differences():
    m = random_model(4, seed=5)
    rng = np.random.default_rng(6)
    for _ in range(10):
        a = rng.standard_normal(4)
        h = 1e-6 * max(1.0, np.linalg.norm(a))
        fd = np.column_stack([(rom_rhs(m, a + h * e) - rom_rhs(m, a - h * e)) / (2 * h) for e in np.eye(4)])
        J = rom_jacobian(m, a)
        assert np.linalg.norm(J - fd) <= 1e-6 * np.linalg.norm(J)


def test_integrate_zero_span_and_exponential():
    m = RomModel.linear([[-1.0]])
    assert integrate_rom(m, [1.0], 2.0, 2.0, 0.1).a[0] == 1.0
    res = integrate_rom(m, [1.0], 0.0, 1.0, 0.01)
    assert res.t == 1.0
    assert res.a[0] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_integrate_lands_on_end_time():
    m = RomModel.linear([[-1.0]])
    # 0.35 / 0.1 -> three full steps and one of 0.05
    res = integrate_rom(m, [1.0], 0.0, 0.35, 0.1)
    assert res.a[0] == pytest.approx(np.exp(-0.35), abs=1e-6)


def test_rk4_fourth_order():
    m = RomModel.linear([[-1.0]])
    dts = np.array([0.2, 0.1, 0.05])
    errs = [abs(integrate_rom(m, [1.0], 0.0, 1.0, h).a[0] - np.exp(-1.0)) for h in dts]
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 3.8


def test_blow_up_is_reported():
    Q = np.ones((1, 1, 1))
    m = RomModel(0.0, [0.0], [[0.0]], Q)  # da/dt = a^2 escapes at t = 1/a0
    with pytest.raises(BlowUpError) as err:
        integrate_rom(m, [1.0], 0.0, 5.0, 0.01)
    assert 0.9 < err.value.t <= 5.0


def test_integration_deterministic():
    m = random_model(5, seed=8, scale=0.05)
    a0 = np.linspace(-1, 1, 5)
    r1 = integrate_rom(m, a0, 0.0, 3.0, 0.07)
    r2 = integrate_rom(m, a0, 0.0, 3.0, 0.07)
    assert np.array_equal(r1.a, r2.a)


def test_rom_archive_roundtrip(tmp_path):
    m = random_model(3, seed=9)
    path = tmp_path / "m.rom"
    write_rom(path, m)
    lines = path.read_text().splitlines()
    assert lines[0].split()[:3] == ["ROM", "1", "3"]
    assert len(lines) == 1 + 1 + 3 + 9
    back = read_rom(path)
    assert back.nu == m.nu
    assert np.array_equal(back.c, m.c) and np.array_equal(back.L, m.L) and np.array_equal(back.Q, m.Q)
