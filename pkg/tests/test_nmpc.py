import numpy as np
import pytest

from liempc import errmpc, hydro, lie, nmpc
from liempc.errmpc import ErrorStateMPC, HorizonConfig, MpcWeights
from liempc.nmpc import EulerModel, NlpConfig, NmpcController

PARAMS = hydro.load_vessel()


def exact_rates(s, u, restoring=True):
    eta_dot, nu_dot = hydro.continuous_dynamics(PARAMS, hydro.FossenState(s[:6], s[6:]),
                                                PARAMS.T @ u, include_restoring=restoring)
    return np.r_[eta_dot, nu_dot]


def sample_state(rng):
    eta = np.r_[rng.normal(size=3), 0.1 * rng.normal(size=2), rng.uniform(-3, 3)]
    return np.r_[eta, 0.5 * rng.normal(size=6)]


def test_rates_match_plant_model():
    rng = np.random.default_rng(0)
    model = EulerModel(PARAMS, 0.05)
    simple = EulerModel(PARAMS, 0.05, include_restoring=False)
    for _ in range(20):
        s, u = sample_state(rng), 30 * rng.normal(size=2)
        assert np.allclose(model.rates(s, u), exact_rates(s, u), atol=1e-10)
        assert np.allclose(simple.rates(s, u), exact_rates(s, u, False), atol=1e-10)


def test_rest_state_is_fixed_point():
    model = EulerModel(PARAMS, 0.05)
    S = model.rollout(np.zeros(12), np.zeros((10, 2)))
    assert np.array_equal(S, np.zeros((11, 12)))


def test_euler_step_local_error_is_second_order():
    rng = np.random.default_rng(1)
    s, u = sample_state(rng), np.array([30.0, 10.0])
    errs = []
    hs = np.array([0.02, 0.01, 0.005])
    for h in hs:
        ref = s.copy()
        for _ in range(64):  # RK4 with fine steps as the reference flow
            k1 = exact_rates(ref, u)
            k2 = exact_rates(ref + h / 128 * k1, u)
            k3 = exact_rates(ref + h / 128 * k2, u)
            k4 = exact_rates(ref + h / 64 * k3, u)
            ref = ref + h / 384 * (k1 + 2 * k2 + 2 * k3 + k4)
        errs.append(np.linalg.norm(EulerModel(PARAMS, h).step(s, u) - ref))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - 2.0) < 0.1


def test_simple_equals_full_without_restoring():
    rng = np.random.default_rng(2)
    flat = PARAMS.replace(restoring=np.zeros((6, 6)))
    full, simple = EulerModel(flat, 0.05), EulerModel(PARAMS, 0.05, include_restoring=False)
    S = np.array([sample_state(rng) for _ in range(5)])
    U = 20 * rng.normal(size=(5, 2))
    for s, u in zip(S, U):
        assert np.allclose(full.rates(s, u), simple.rates(s, u), atol=1e-14)
    assert np.allclose(full.jacobians(S), simple.jacobians(S), atol=1e-14)


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(3)
    model = EulerModel(PARAMS, 0.05)
    S = np.array([sample_state(rng) for _ in range(10)])
    S[:, 6:] = np.where(np.abs(S[:, 6:]) < 1e-2, 1e-2, S[:, 6:])
    F = model.jacobians(S)
    u = np.array([10.0, -5.0])
    h = 1e-6
    for k, s in enumerate(S):
        Ffd = np.column_stack([(model.step(s + h * e, u) - model.step(s - h * e, u)) / (2 * h)
                               for e in np.eye(12)])
        assert np.max(np.abs(F[k] - Ffd)) <= 1e-6 * max(1.0, np.max(np.abs(Ffd)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    model = EulerModel(PARAMS, 0.05)
    w = nmpc.default_weights()
    s0, U = sample_state(rng), 10 * rng.normal(size=(8, 2))
    Sd = np.array([sample_state(rng) for _ in range(9)])
    g = nmpc.gradient(model, model.rollout(s0, U), U, Sd, w)
    h = 1e-5
    for k in range(8):
        for j in range(2):
            E = np.zeros_like(U)
            E[k, j] = h
            Jp = nmpc.objective(model.rollout(s0, U + E), U + E, Sd, w)
            Jm = nmpc.objective(model.rollout(s0, U - E), U - E, Sd, w)
            assert abs((Jp - Jm) / (2 * h) - g[k, j]) <= 1e-5 * max(1.0, abs(g[k, j]))


def straight_reference(N, dt=0.05, speed=0.5):
    t = dt * np.arange(N + 1)
    eta_d = np.zeros((N + 1, 6))
    eta_d[:, 0] = speed * t
    nu_d = np.zeros((N + 1, 6))
    nu_d[:, 0] = speed
    return eta_d, nu_d


def test_sqp_objective_is_monotone_and_stationary():
    model = EulerModel(PARAMS, 0.05)
    # Gauss-Newton converges linearly on this large-residual problem
    cfg = NlpConfig(max_iter=400, tol=1e-12)
    eta_d, nu_d = straight_reference(40)
    Sd = np.hstack([eta_d, nu_d])
    s0 = np.r_[1.0, -1.5, 0, 0, 0, 0.4, np.zeros(6)]
    w = nmpc.default_weights()
    U0 = np.zeros((40, 2))
    g0 = np.max(np.abs(nmpc.gradient(model, model.rollout(s0, U0), U0, Sd, w)))
    U, S, diag = nmpc.sqp_solve(model, cfg, s0, Sd, w, U0)
    hist = np.array(diag["objective_history"])
    assert np.all(np.diff(hist) <= 0)
    assert diag["objective"] == hist[-1] < hist[0]
    assert diag["converged"]
    assert diag["stationarity"] <= 1e-6 * g0
    assert np.allclose(S, model.rollout(s0, U))


def test_on_reference_holds_force_balance():
    """The drag-balancing input keeps the model on a straight reference, and
    the optimizer recovers it once the input penalty is negligible.

    With a finite R the plan tapers thrust near the horizon end and pushes a
    little harder early on, so u0 is not the balance itself.
    """
    eta_d, nu_d = straight_reference(40)
    drag = hydro.hydro_forces(PARAMS, np.zeros(6), nu_d[0], False)
    u_bal = hydro.allocate_pinv(PARAMS, drag, order="fossen")
    model = EulerModel(PARAMS, 0.05)
    S = model.rollout(np.r_[eta_d[0], nu_d[0]], np.tile(u_bal, (40, 1)))
    assert np.allclose(S, np.hstack([eta_d, nu_d]), atol=1e-10)
    w = MpcWeights.from_diagonals([100] * 3 + [10] * 3 + [1] * 6, [1e-9, 1e-9])
    ctrl = NmpcController(PARAMS, weights=w, horizon=HorizonConfig(N=40))
    step = ctrl.solve_step(eta_d[0], nu_d[0], eta_d, nu_d)
    assert np.allclose(step.u0, u_bal, rtol=1e-4)


def test_first_iterate_agrees_with_error_state_mpc_near_rest():
    """With a resting reference, matched weights and a small offset the two
    controllers solve nearly the same LQ problem, so their first inputs point
    the same way."""
    N = 60
    q_lie = [30] * 3 + [100] * 3 + [1] * 6
    q_z = [100] * 3 + [30] * 3 + [1] * 6   # [position, Euler, linear vel, angular vel]
    r = [1e-2, 1e-2]
    eta = np.array([0.05, -0.04, 0, 0, 0, 0.03])
    prop = ErrorStateMPC(PARAMS, weights=MpcWeights.from_diagonals(q_lie, r),
                         horizon=HorizonConfig(N=N))
    u_prop = prop.solve_step(lie.euler_to_pose(eta), np.zeros(6), lie.Pose.identity(),
                             np.zeros((N + 1, 6))).u0
    base = NmpcController(PARAMS, simple=True, weights=MpcWeights.from_diagonals(q_z, r),
                          horizon=HorizonConfig(N=N), config=NlpConfig(max_iter=1))
    u_nmpc = base.solve_step(eta, np.zeros(6), np.zeros((N + 1, 6)), np.zeros((N + 1, 6))).u0
    cos = u_prop @ u_nmpc / (np.linalg.norm(u_prop) * np.linalg.norm(u_nmpc))
    assert np.degrees(np.arccos(min(cos, 1.0))) < 10.0


def test_controller_wraps_heading_and_warm_starts():
    ctrl = NmpcController(PARAMS, horizon=HorizonConfig(N=20))
    eta_d, nu_d = straight_reference(20)
    eta = np.array([0.2, 0.1, 0, 0, 0, 2 * np.pi + 0.05])
    a = ctrl.solve_step(eta, np.zeros(6), eta_d, nu_d)
    ctrl.reset()
    eta[5] = 0.05
    b = ctrl.solve_step(eta, np.zeros(6), eta_d, nu_d)
    assert np.allclose(a.u0, b.u0, atol=1e-9)
    ws = ctrl.warm_start()
    assert np.array_equal(ws[:-1], b.inputs[1:]) and np.array_equal(ws[-1], b.inputs[-1])
    assert ctrl.kind == "nmpc"
    assert NmpcController(PARAMS, simple=True).kind == "nmpc-simple"


def test_config_validation():
    with pytest.raises(ValueError):
        NlpConfig(max_iter=0)
    with pytest.raises(ValueError):
        NlpConfig(backtrack=1.5)


def test_rollout_helper_uses_fossen_ordering():
    S = nmpc.rollout_nonlinear(PARAMS, np.zeros(6), np.array([0.5, 0, 0, 0, 0, 0]),
                               np.zeros((3, 2)))
    assert S.shape == (4, 12)
    assert S[1, 0] == pytest.approx(0.5 * 0.05)
    assert errmpc.NX == nmpc.NS
