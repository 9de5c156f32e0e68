"""Convex error-state MPC on SE(3).

The decision state is ``x = [psi; xi]``: log coordinates of the left error
``X_d^-1 X`` and the body twist, both in Lie ordering. Around each reference
twist the error dynamics and the Euler-Poincare hydrodynamics are linearized,
discretized with a forward-Euler step and handed to the Riccati/ADMM solver.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import hydro
from .lie import left_error, little_adjoint
from .qp import LqProblem, admm_box_solve, riccati_solve

NX = 12


@dataclass
class MpcWeights:
    Q: np.ndarray
    P: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("Q", "P", "R"):
            W = np.asarray(getattr(self, name), dtype=float)
            if np.max(np.abs(W - W.T)) > 1e-12:
                raise ValueError(f"weight {name} must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) < -1e-12:
                raise ValueError(f"weight {name} must be positive semidefinite")
            setattr(self, name, W)
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ValueError("input weight R must be positive definite")

    @classmethod
    def from_diagonals(cls, q, r, p_scale=10.0, p=None):
        Q = np.diag(np.asarray(q, dtype=float))
        P = p_scale * Q if p is None else np.diag(np.asarray(p, dtype=float))
        return cls(Q, P, np.diag(np.asarray(r, dtype=float)))

    @classmethod
    def default(cls):
        # y = [psi_rot, psi_pos, dpsi_rot, dpsi_lin]
        return cls.from_diagonals([30] * 3 + [100] * 3 + [1] * 6, [1e-2] * 2)


@dataclass
class HorizonConfig:
    N: int = 100
    dt: float = 0.05

    def __post_init__(self):
        if self.N < 1 or self.dt <= 0:
            raise ValueError("horizon needs N >= 1 and dt > 0")


@dataclass
class StageModel:
    A_t: np.ndarray
    B_t: np.ndarray
    h_t: np.ndarray
    G: np.ndarray
    d: np.ndarray
    dt: float

    @property
    def A(self):
        return np.eye(NX) + self.A_t * self.dt

    @property
    def B(self):
        return self.B_t * self.dt

    @property
    def h(self):
        return self.h_t * self.dt


@dataclass
class ErrorState:
    psi: np.ndarray
    xi: np.ndarray

    @property
    def x(self):
        return np.concatenate([self.psi, self.xi])


def linearize_dynamics(params, xi_d):
    """(H_t, b_t) with M xi' ~ H_t xi + b_t + tau around the twist xi_d (Lie order)."""
    nu = hydro.reorder(xi_d)
    C = hydro.vessel_coriolis(params, nu)
    D = hydro.damping(params, nu)
    Jc = hydro.vessel_coriolis_jacobian(params, nu)
    Jd = hydro.damping_jacobian(params, nu)
    H = -C - D - Jc - Jd
    b = (Jc + Jd) @ nu
    return hydro.reorder_matrix(H), hydro.reorder(b)


def build_stage(params, xi_d, dt):
    xi_d = np.asarray(xi_d, dtype=float)
    H, b = linearize_dynamics(params, xi_d)
    Minv = hydro.reorder_matrix(params.Minv)
    ad = little_adjoint(xi_d)
    A_t = np.zeros((NX, NX))
    A_t[:6, :6] = -ad
    A_t[:6, 6:] = np.eye(6)
    A_t[6:, 6:] = Minv @ H
    B_t = np.zeros((NX, params.T.shape[1]))
    B_t[6:] = Minv @ hydro.thrust_matrix(params, "lie")
    h_t = np.concatenate([-xi_d, Minv @ b])
    G = np.zeros((NX, NX))
    G[:6, :6] = np.eye(6)
    G[6:, :6] = -ad
    G[6:, 6:] = np.eye(6)
    d = np.concatenate([np.zeros(6), xi_d])
    return StageModel(A_t, B_t, h_t, G, d, dt)


def _hat_batch(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


def _coriolis_tensor(params):
    """C(e_j) for the vessel (rigid body + masked added mass), Lie ordering."""
    T = np.empty((6, 6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = 1.0
        T[j] = hydro.reorder_matrix(hydro.vessel_coriolis(params, hydro.reorder(e)))
    return T


class HorizonBuilder:
    """Vectorized stage assembly for a whole horizon of reference twists.

    Uses that C(xi) is linear in xi, so C(xi) = sum_j xi_j C(e_j) and
    d(C(xi) xi_bar)/d xi has columns C(e_j) xi_bar.
    """

    def __init__(self, params):
        self.params = params
        self.Ct = _coriolis_tensor(params)
        self.Minv = hydro.reorder_matrix(params.Minv)
        self.MinvT = self.Minv @ hydro.thrust_matrix(params, "lie")
        self.lin = hydro.reorder(params.damping_linear)
        self.quad = hydro.reorder(params.damping_quadratic)

    def build(self, xi_d, dt):
        """Discrete (A, B, h) for stages 0..K-2 and (G, d) for all K twists."""
        xi_d = np.asarray(xi_d, dtype=float)
        K = xi_d.shape[0]
        Ns = K - 1
        xs = xi_d[:Ns]
        C = np.einsum("kj,jab->kab", xs, self.Ct)
        Jc = np.einsum("jab,kb->kaj", self.Ct, xs)
        absx = np.abs(xs)
        # -C - D - Jc - Jd with D = -diag(lin + quad|x|), Jd = -diag(quad|x|)
        H = -C - Jc
        idx = np.arange(6)
        H[:, idx, idx] += self.lin + 2.0 * self.quad * absx
        b = np.einsum("kab,kb->ka", Jc, xs) - self.quad * absx * xs
        ad = np.zeros((K, 6, 6))
        W = _hat_batch(xi_d[:, :3])
        ad[:, :3, :3] = W
        ad[:, 3:, 3:] = W
        ad[:, 3:, :3] = _hat_batch(xi_d[:, 3:])

        A = np.zeros((Ns, NX, NX))
        A[:, :6, :6] = -dt * ad[:Ns]
        A[:, :6, 6:] = dt * np.eye(6)
        A[:, 6:, 6:] = dt * np.einsum("ab,kbc->kac", self.Minv, H)
        A[:, np.arange(NX), np.arange(NX)] += 1.0
        B = np.zeros((Ns, NX, self.MinvT.shape[1]))
        B[:, 6:] = dt * self.MinvT
        h = np.empty((Ns, NX))
        h[:, :6] = -dt * xs
        h[:, 6:] = dt * (b @ self.Minv.T)
        G = np.zeros((K, NX, NX))
        G[:, :6, :6] = np.eye(6)
        G[:, 6:, :6] = -ad
        G[:, 6:, 6:] = np.eye(6)
        d = np.zeros((K, NX))
        d[:, 6:] = xi_d
        return A, B, h, G, d


def compute_error_state(X, xi, X_d):
    """ErrorState for pose X with twist xi against the reference pose X_d."""
    return ErrorState(left_error(X_d, X).algebra, np.asarray(xi, dtype=float))


@dataclass
class StepResult:
    u0: np.ndarray
    inputs: np.ndarray
    predicted: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class ErrorStateMPC:
    """Receding-horizon controller solving the linearized error-state QP.

    Not safe for concurrent ``solve_step`` calls on one instance.
    """

    kind = "proposed"

    def __init__(self, params, weights=None, horizon=None, constrained=False,
                 tol=1e-6, max_iter=4000):
        self.params = params
        self.weights = weights or MpcWeights.default()
        self.horizon = horizon or HorizonConfig()
        self.constrained = constrained
        self.tol = tol
        self.max_iter = max_iter
        self.builder = HorizonBuilder(params)
        self.last = None

    def problem(self, x0, ref_twists):
        N, dt = self.horizon.N, self.horizon.dt
        xi_d = _window(ref_twists, N)
        A, B, h, G, d = self.builder.build(xi_d, dt)
        w = self.weights
        prob = LqProblem(A, B, h, G, d, w.Q, w.R, w.P, np.asarray(x0, dtype=float))
        if self.constrained:
            lo, hi = self.params.thrust_limits
            prob.u_min = np.full(prob.m, lo)
            prob.u_max = np.full(prob.m, hi)
        return prob

    def solve_step(self, X, xi, X_d, ref_twists):
        """First input of the optimal thrust sequence.

        ``ref_twists`` holds the reference twists xi_{d,0..N} (N entries are
        padded by repeating the last one).
        """
        t0 = time.perf_counter()
        es = compute_error_state(X, xi, X_d)
        prob = self.problem(es.x, ref_twists)
        if self.constrained:
            sol = admm_box_solve(prob, tol=self.tol, max_iter=self.max_iter)
        else:
            sol = riccati_solve(prob)
        elapsed = time.perf_counter() - t0
        diag = {"iterations": sol.iterations, "primal_residual": sol.primal_residual,
                "dual_residual": sol.dual_residual, "objective": sol.objective,
                "solve_ms": 1e3 * elapsed}
        self.last = StepResult(sol.inputs[0].copy(), sol.inputs, sol.states, diag)
        return self.last

    def control(self, eta, nu, window):
        """Controller interface used by the simulation harness."""
        X = window.current_pose(eta)
        return self.solve_step(X, hydro.reorder(nu), window.poses[0], window.twists)


def _window(ref_twists, N):
    xi = np.atleast_2d(np.asarray(ref_twists, dtype=float))
    if xi.shape[0] < N:
        raise ValueError(f"reference window needs at least N={N} twists, got {xi.shape[0]}")
    if xi.shape[0] == N:
        xi = np.vstack([xi, xi[-1]])
    return xi[:N + 1]
