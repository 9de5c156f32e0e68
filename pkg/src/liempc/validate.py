"""Randomized invariant suites behind ``liempc validate``.

Each suite draws its cases from a seeded generator and returns a
:class:`SuiteResult`. The functions under test can be swapped through
``overrides`` so that a deliberately broken implementation can be checked
to make its suite fail.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hydro, lie, qp, sim
from .errmpc import linearize_dynamics


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tol: float
    seed: int
    cases: int

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name:<22} worst={self.worst:.3e} tol={self.tol:.0e} "
                f"cases={self.cases} seed={self.seed}")


def random_pose(rng, max_angle=3.0):
    w = rng.normal(size=3)
    w *= rng.uniform(0, max_angle) / np.linalg.norm(w)
    return lie.Pose(lie.exp_so3(w), rng.normal(size=3))


def random_nu(rng, scale=1.0):
    return scale * rng.normal(size=6)


def group_suite(rng, cases, seed, **_):
    worst = 0.0
    for _ in range(cases):
        xi = rng.normal(size=6)
        xi[:3] *= rng.uniform(0, 3.0) / np.linalg.norm(xi[:3])
        worst = max(worst, np.max(np.abs(lie.log_se3(lie.exp_se3(xi)) - xi)))
        X, Y = random_pose(rng), random_pose(rng)
        worst = max(worst, np.max(np.abs(lie.adjoint(X @ Y) - lie.adjoint(X) @ lie.adjoint(Y))))
        g, Xd = random_pose(rng), random_pose(rng, 1.0)
        X = Xd @ random_pose(rng, 2.5)
        a = lie.left_error(Xd, X).algebra
        b = lie.left_error(g @ Xd, g @ X).algebra
        worst = max(worst, np.max(np.abs(a - b)))
    tol = 1e-8
    return SuiteResult("group_axioms", worst <= tol, worst, tol, seed, cases)


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def jacobian_suite(rng, cases, seed, coriolis_jacobian=None, damping_jacobian=None, **_):
    """Coriolis/damping Jacobians and the linearized twist rate vs central differences."""
    params = hydro.load_vessel()
    cj = coriolis_jacobian or hydro.coriolis_jacobian
    dj = damping_jacobian or hydro.damping_jacobian
    h = 1e-6
    worst = 0.0
    for _ in range(cases):
        nu = random_nu(rng)
        for M in (params.M_RB, params.M):
            # d(C(nu) nu)/d nu = C(nu) + dC/dnu term
            J = hydro.coriolis(M, nu) + cj(M, nu)
            Jfd = np.empty((6, 6))
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                Jfd[:, j] = (hydro.coriolis(M, nu + e) @ (nu + e)
                             - hydro.coriolis(M, nu - e) @ (nu - e)) / (2 * h)
            worst = max(worst, _rel(J, Jfd))
        # keep away from the |nu| kink for the damping check
        nu = np.where(np.abs(nu) < 1e-3, 1e-3, nu)
        Jd = dj(params, nu)
        Jfd = np.empty((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            Jfd[:, j] = (hydro.damping(params, nu + e) @ (nu + e)
                         - hydro.damping(params, nu - e) @ (nu - e)) / (2 * h)
        worst = max(worst, _rel(Jd + hydro.damping(params, nu), Jfd))
        xi_d = hydro.reorder(nu)
        H, _b = linearize_dynamics(params, xi_d)

        def force(xi):
            n = hydro.reorder(xi)
            return -hydro.reorder(hydro.hydro_forces(params, None, n, include_restoring=False))

        Hfd = np.empty((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            Hfd[:, j] = (force(xi_d + e) - force(xi_d - e)) / (2 * h)
        worst = max(worst, _rel(H, Hfd))
    tol = 1e-6
    return SuiteResult("jacobians", worst <= tol, worst, tol, seed, cases)


def random_lq(rng, N=None, n=None, m=None, bounds=False):
    N = N or int(rng.integers(1, 21))
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 4))
    ny = n
    A = np.eye(n) + 0.3 * rng.normal(size=(N, n, n))
    B = rng.normal(size=(N, n, m))
    h = 0.1 * rng.normal(size=(N, n))
    G = rng.normal(size=(N + 1, ny, n))
    d = rng.normal(size=(N + 1, ny))
    L = rng.normal(size=(ny, ny))
    Q = L @ L.T + 0.1 * np.eye(ny)
    L = rng.normal(size=(m, m))
    R = L @ L.T + 0.1 * np.eye(m)
    P = 2 * Q
    prob = qp.LqProblem(A, B, h, G, d, Q, R, P, rng.normal(size=n))
    if bounds:
        prob.u_min, prob.u_max = np.full(m, -np.inf), np.full(m, np.inf)
    return prob


def solver_suite(rng, cases, seed, **_):
    worst = 0.0
    for _ in range(cases):
        prob = random_lq(rng)
        s = qp.riccati_solve(prob)
        ref = qp.dense_kkt_solve(prob)
        worst = max(worst, abs(s.objective - ref.objective) / max(1.0, abs(ref.objective)))
        worst = max(worst, max(qp.kkt_residual(prob, s)))
    tol = 1e-8
    return SuiteResult("solver_equivalence", worst <= tol, worst, tol, seed, cases)


def energy_suite(rng, cases, seed, **_):
    """Unforced, restoring-free, current-free runs never gain kinetic energy."""
    params = hydro.load_vessel()
    worst = 0.0
    for _ in range(cases):
        state = hydro.FossenState(np.zeros(6), random_nu(rng, 0.5))
        E = sim.mechanical_energy(params, state)
        for _k in range(200):
            state = sim.rk4_step(params, state, None, np.zeros(6), 1.0 / 80.0,
                                 include_restoring=False)
            E1 = sim.mechanical_energy(params, state)
            worst = max(worst, (E1 - E) / max(E, 1e-12))
            E = E1
    tol = 1e-12
    return SuiteResult("energy_dissipation", worst <= tol, worst, tol, seed, cases)


SUITES = {"group_axioms": group_suite, "jacobians": jacobian_suite,
          "solver_equivalence": solver_suite, "energy_dissipation": energy_suite}


def run_all(seed=0, cases=20, only=None, overrides=None):
    overrides = overrides or {}
    out = []
    for i, (name, fn) in enumerate(SUITES.items()):
        if only and name not in only:
            continue
        s = seed + i
        out.append(fn(np.random.default_rng(s), cases, s, **overrides))
    return out
