import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from liempc import hydro, sim
from liempc.hydro import FossenState, VesselParams
from liempc.lie import hat3


@pytest.fixture(scope="module")
def otter():
    return hydro.load_vessel()


def simple_params(**kw):
    base = dict(mass=10.0, cog=np.zeros(3), inertia=np.diag([1.0, 2.0, 3.0]),
                added_mass=np.zeros((6, 6)), damping_linear=-np.ones(6),
                damping_quadratic=-np.ones(6), restoring=np.zeros((6, 6)),
                lever_arm=0.5, thrust_coeff_pos=0.01, thrust_coeff_neg=0.005)
    base.update(kw)
    return VesselParams(**base)


def fd_jac(f, x, h=1e-6):
    cols = []
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


vec6 = st.lists(st.floats(-2, 2, allow_nan=False), min_size=6, max_size=6).map(np.array)


def test_point_mass_matrix():
    p = simple_params()
    assert np.array_equal(p.M, np.diag([10, 10, 10, 1, 2, 3.0]))


def test_otter_mass_is_spd(otter):
    M = otter.M
    assert np.array_equal(M, M.T)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    assert np.isfinite(np.linalg.cond(M))


def test_mass_symmetry_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        L = rng.normal(size=(3, 3))
        A = rng.normal(size=(6, 6))
        p = simple_params(cog=rng.normal(size=3) * 0.1, inertia=L @ L.T + 5 * np.eye(3),
                          added_mass=A @ A.T)
        assert np.array_equal(p.M, p.M.T)


def test_rigid_body_block_formula(otter):
    m, (xg, yg, zg) = otter.mass, otter.cog
    M = otter.M_RB
    assert np.allclose(M[:3, 3:], -m * hat3(otter.cog))
    assert np.allclose(M[3:, :3], m * hat3(otter.cog))
    assert np.allclose(M[:3, :3], m * np.eye(3))


def test_non_pd_mass_rejected():
    p = simple_params(added_mass=-20 * np.eye(6))
    with pytest.raises(hydro.VesselParamError):
        p.M


def test_coriolis_zero_and_skew(otter):
    assert np.array_equal(hydro.coriolis(otter.M, np.zeros(6)), np.zeros((6, 6)))
    rng = np.random.default_rng(1)
    for _ in range(1000):
        nu = rng.normal(size=6)
        C = hydro.coriolis(otter.M, nu)
        assert np.max(np.abs(C + C.T)) < 1e-9
        assert abs(nu @ C @ nu) < 1e-9


def test_coriolis_upper_right_block(otter):
    nu = np.array([0.3, -0.2, 0.1, 0.05, -0.1, 0.2])
    M = otter.M
    C = hydro.coriolis(M, nu)
    assert np.allclose(C[:3, 3:], -hat3(M[:3, :3] @ nu[:3] + M[:3, 3:] @ nu[3:]))


def test_added_mass_mask_zeroes_listed_entries(otter):
    nu = np.array([0.5, 0.2, 0.1, 0.05, 0.02, 0.3])
    C = hydro.coriolis(otter.added_mass, nu, otter.am_mask)
    for i, j in [(5, 0), (5, 1), (0, 5), (1, 5)]:
        assert C[i, j] == 0.0
    assert np.count_nonzero(otter.am_mask == 0) == 4


def test_damping_examples():
    p = simple_params()
    assert np.array_equal(hydro.damping(p, np.zeros(6)), np.eye(6))
    lin = np.array([-1.0, 0, 0, 0, 0, 0])
    quad = np.array([-2.0, 0, 0, 0, 0, 0])
    p = simple_params(damping_linear=lin, damping_quadratic=quad)
    assert hydro.damping(p, np.array([0.5, 0, 0, 0, 0, 0]))[0, 0] == 2.0


def test_damping_dissipative(otter):
    rng = np.random.default_rng(2)
    for _ in range(1000):
        nu = rng.normal(size=6)
        D = hydro.damping(otter, nu)
        assert np.count_nonzero(D - np.diag(np.diag(D))) == 0
        assert nu @ D @ nu >= 0


def test_restoring(otter):
    assert np.array_equal(hydro.restoring(otter, np.zeros(6)), np.zeros(6))
    p0 = otter.replace(restoring=np.zeros((6, 6)))
    rng = np.random.default_rng(3)
    assert np.array_equal(hydro.restoring(p0, rng.normal(size=6)), np.zeros(6))
    g = hydro.restoring(otter, np.array([0, 0, 0, 0.01, 0, 0]))
    assert math.isclose(g[3], otter.restoring[3, 3] * 0.01)


def test_equilibrium_and_drift_with_current(otter):
    p = otter.replace(restoring=np.zeros((6, 6)))
    z = FossenState(np.zeros(6), np.zeros(6))
    e_dot, n_dot = hydro.continuous_dynamics(p, z, np.zeros(6))
    assert not np.any(e_dot) and not np.any(n_dot)
    eta = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.7])
    v_c = np.array([0.3, -0.2, 0.0])
    nu = hydro.current_body(eta, v_c)
    _, n_dot = hydro.continuous_dynamics(p, FossenState(eta, nu), np.zeros(6), v_c)
    assert np.allclose(n_dot, 0.0, atol=1e-15)


def test_pure_surge_thrust_from_rest():
    p = simple_params()
    tau = np.array([5.0, 0, 0, 0, 0, 0])
    _, n_dot = hydro.continuous_dynamics(p, FossenState(np.zeros(6), np.zeros(6)), tau)
    assert np.allclose(n_dot, [0.5, 0, 0, 0, 0, 0])


def test_coriolis_jacobian_zero_and_block(otter):
    assert np.array_equal(hydro.coriolis_jacobian(otter.M, np.zeros(6)), np.zeros((6, 6)))
    rng = np.random.default_rng(4)
    xi_bar = rng.normal(size=6)
    J_lie = hydro.reorder_matrix(hydro.coriolis_jacobian(otter.M, hydro.reorder(xi_bar)))
    w, v = xi_bar[:3], xi_bar[3:]
    M = otter.M
    # Lie-ordered top-left block from the Fossen blocks M22 (angular) and M12
    assert np.allclose(J_lie[:3, :3], hat3(w) @ M[3:, 3:] + hat3(v) @ M[:3, 3:])


def test_coriolis_jacobian_finite_differences(otter):
    rng = np.random.default_rng(5)
    for _ in range(100):
        nu_bar = rng.normal(size=6)
        for M, mask in ((otter.M, None), (otter.added_mass, otter.am_mask)):
            J = hydro.coriolis_jacobian(M, nu_bar, mask)
            Jfd = fd_jac(lambda x: hydro.coriolis(M, x, mask) @ nu_bar, nu_bar)
            assert np.max(np.abs(J - Jfd)) <= 1e-6 * max(1.0, np.max(np.abs(Jfd)))


def test_masked_jacobian_column_form_matches_block_when_unmasked(otter):
    rng = np.random.default_rng(6)
    nu_bar = rng.normal(size=6)
    a = hydro.coriolis_jacobian(otter.M, nu_bar)
    b = hydro.coriolis_jacobian(otter.M, nu_bar, np.ones((6, 6)))
    assert np.allclose(a, b, atol=1e-12)


def test_damping_jacobian(otter):
    assert np.array_equal(hydro.damping_jacobian(otter, np.zeros(6)), np.zeros((6, 6)))
    quad = np.array([-2.0, 0, 0, 0, 0, 0])
    p = simple_params(damping_quadratic=quad)
    assert hydro.damping_jacobian(p, np.array([0.5, 0, 0, 0, 0, 0]))[0, 0] == 1.0
    rng = np.random.default_rng(7)
    for _ in range(100):
        nu = rng.normal(size=6)
        nu[np.abs(nu) < 1e-3] = 1e-3
        total = hydro.damping(otter, nu) + hydro.damping_jacobian(otter, nu)
        Jfd = fd_jac(lambda x: hydro.damping(otter, x) @ x, nu)
        assert np.max(np.abs(total - Jfd)) <= 1e-6 * max(1.0, np.max(np.abs(Jfd)))


def test_allocation():
    p = simple_params()
    F = 10.0
    tau = hydro.allocate_thrust(p, [F, F])
    assert np.allclose(tau, [0, 0, 0, 2 * F, 0, 0])
    tau = hydro.allocate_thrust(p, [F, -F])
    assert np.allclose(tau, [0, 0, 2 * p.lever_arm * F, 0, 0, 0])
    u = np.array([3.0, -1.0])
    assert np.allclose(hydro.allocate_pinv(p, hydro.allocate_thrust(p, u)), u)


def test_clamp_thrust(otter):
    lo, hi = otter.thrust_limits
    u, flag = hydro.clamp_thrust(otter, np.array([hi + 1, lo - 1]))
    assert flag and u[0] == hi and u[1] == lo
    u, flag = hydro.clamp_thrust(otter, np.array([0.0, 1.0]))
    assert not flag


def test_rpm_round_trip(otter):
    n = np.linspace(-100, 100, 201)
    assert np.allclose(hydro.force_to_rpm(otter, hydro.rpm_to_force(otter, n)), n)


def test_reorder():
    v = np.array([1, 2, 3, 4, 5, 6.0])
    assert np.array_equal(hydro.reorder(v), [4, 5, 6, 1, 2, 3])
    assert np.array_equal(hydro.reorder(hydro.reorder(v)), v)


def test_reordered_coriolis_is_workless(otter):
    rng = np.random.default_rng(8)
    for _ in range(100):
        xi = rng.normal(size=6)
        C_lie = hydro.reorder_matrix(hydro.coriolis(otter.M, hydro.reorder(xi)))
        assert abs(xi @ C_lie @ xi) < 1e-9


@settings(max_examples=25, deadline=None)
@given(vec6)
def test_kinetic_energy_nonincreasing(nu0):
    p = hydro.load_vessel().replace(restoring=np.zeros((6, 6)))
    s = FossenState(np.zeros(6), 0.5 * nu0)
    E = sim.mechanical_energy(p, s)
    for _ in range(80):
        s = sim.rk4_step(p, s, None, np.zeros(6), 1 / 80, include_restoring=False)
        E1 = sim.mechanical_energy(p, s)
        assert E1 <= E + 1e-12
        E = E1


def test_current_equivariance(otter):
    """Same relative motion with and without current; positions differ by v_c t."""
    rng = np.random.default_rng(9)
    v_c = np.array([0.4, -0.3, 0.0])
    eta0 = np.array([0, 0, 0, 0.02, -0.01, 0.5])
    nu_r0 = rng.normal(size=6) * 0.3
    tau = otter.T @ np.array([30.0, 10.0])
    a = FossenState(eta0.copy(), nu_r0 + hydro.current_body(eta0, v_c))
    b = FossenState(eta0.copy(), nu_r0.copy())
    h = 1 / 80
    for _ in range(400):
        a = sim.rk4_step(otter, a, v_c, tau, h)
        b = sim.rk4_step(otter, b, None, tau, h)
    t = 400 * h
    assert np.allclose(a.eta[3:], b.eta[3:], atol=1e-9)
    assert np.allclose(a.eta[:3] - v_c * t, b.eta[:3], atol=1e-9)
    assert np.allclose(a.nu - hydro.current_body(a.eta, v_c), b.nu, atol=1e-9)


def test_parse_round_trip(otter):
    p = hydro.parse_vessel(hydro.dump_vessel(otter))
    for key in ("M", "added_mass", "damping_linear", "damping_quadratic", "restoring",
                "am_mask"):
        assert np.array_equal(getattr(p, key), getattr(otter, key))
    assert p.thrust_limits == otter.thrust_limits


def _line_of(text, key):
    return next(i + 1 for i, ln in enumerate(text.splitlines()) if ln.startswith(key + ":"))


def test_parse_errors_report_line(otter):
    d = yaml.safe_load(hydro.dump_vessel(otter))
    d["old_damping"] = 1.0
    text = yaml.safe_dump(d, sort_keys=False)
    with pytest.raises(hydro.VesselParamError,
                       match=rf"<string>:{_line_of(text, 'old_damping')}: unknown key"):
        hydro.parse_vessel(text)
    d = yaml.safe_load(hydro.dump_vessel(otter))
    d["damping_linear"][0] = 1.0
    text = yaml.safe_dump(d, sort_keys=False)
    with pytest.raises(hydro.VesselParamError,
                       match=rf":{_line_of(text, 'damping_linear')}: damping"):
        hydro.parse_vessel(text)
    with pytest.raises(hydro.VesselParamError, match="missing key"):
        hydro.parse_vessel("mass: 1.0\n")
    with pytest.raises(hydro.VesselParamError, match="invalid YAML"):
        hydro.parse_vessel("mass: [1.0\n")


def test_parse_rejects_non_pd(otter):
    bad = otter.replace(added_mass=-200 * np.eye(6))
    with pytest.raises(hydro.VesselParamError, match="positive definite"):
        hydro.parse_vessel(hydro.dump_vessel(bad))
