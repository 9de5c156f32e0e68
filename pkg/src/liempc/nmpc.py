"""Nonlinear MPC baselines on Euler-coordinate dynamics, solved by SQP.

State ``s = [eta; nu]`` in Fossen ordering, explicit-Euler discretization at
the controller step. Each SQP iteration linearizes the rollout (analytic
forward sensitivities), solves the Gauss-Newton LQ subproblem with the
Riccati solver and backtracks on the true objective.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import hydro
from .errmpc import HorizonConfig, MpcWeights, StepResult
from .lie import GIMBAL_MARGIN, GimbalLockError, wrap_angle
from .qp import LqProblem, riccati_solve

NS = 12


@dataclass
class NlpConfig:
    max_iter: int = 10
    tol: float = 1e-3          # inf-norm of the accepted input step (N)
    backtrack: float = 0.5
    min_step: float = 1e-3
    armijo: float = 1e-4
    include_restoring: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("NlpConfig needs tol > 0 and max_iter >= 1")
        if not 0 < self.backtrack < 1 or not 0 < self.min_step <= 1:
            raise ValueError("backtrack and min_step must lie in (0, 1)")


def default_weights():
    # z = [position, Euler angles, linear velocity, angular velocity]
    return MpcWeights.from_diagonals([100] * 3 + [10] * 3 + [1] * 6, [1e-3] * 2)


class EulerModel:
    """Discrete Fossen model with precomputed constant terms."""

    def __init__(self, params, dt, include_restoring=True):
        self.params = params
        self.dt = dt
        self.include_restoring = include_restoring
        self.Minv = params.Minv
        self.MinvT = params.Minv @ params.T
        self.lin = params.damping_linear
        self.quad = params.damping_quadratic
        Ct = np.empty((6, 6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1.0
            Ct[j] = hydro.vessel_coriolis(params, e)
        self.Ct = Ct
        G = params.restoring if include_restoring else np.zeros((6, 6))
        self.Gsel = G * np.array([0, 0, 1, 1, 1, 0], dtype=float)

    def _trig(self, eta):
        phi, th, psi = eta[3], eta[4], eta[5]
        if abs(th) >= math.pi / 2 - GIMBAL_MARGIN:
            raise GimbalLockError(f"pitch {th!r} too close to +-pi/2")
        return (math.cos(phi), math.sin(phi), math.cos(th), math.sin(th),
                math.cos(psi), math.sin(psi))

    def rates(self, s, u):
        eta, nu = s[:6], s[6:]
        cf, sf, ct, st, cp, sp = self._trig(eta)
        R = np.array([[cp * ct, -sp * cf + cp * st * sf, sp * sf + cp * cf * st],
                      [sp * ct, cp * cf + sf * st * sp, -cp * sf + st * sp * cf],
                      [-st, ct * sf, ct * cf]])
        tt = st / ct
        Tq = np.array([[1.0, sf * tt, cf * tt], [0.0, cf, -sf], [0.0, sf / ct, cf / ct]])
        C = np.tensordot(nu, self.Ct, axes=1)
        f = C @ nu - (self.lin + self.quad * np.abs(nu)) * nu + self.Gsel @ eta
        out = np.empty(NS)
        out[:3] = R @ nu[:3]
        out[3:6] = Tq @ nu[3:]
        out[6:] = self.MinvT @ u - self.Minv @ f
        return out

    def step(self, s, u):
        return s + self.dt * self.rates(s, u)

    def rollout(self, s0, inputs):
        S = np.empty((len(inputs) + 1, NS))
        S[0] = s0
        for k, u in enumerate(inputs):
            S[k + 1] = S[k] + self.dt * self.rates(S[k], u)
        return S

    def jacobians(self, S):
        """Discrete state Jacobians F_k at the states S[0..N-1] (batched)."""
        eta, nu = S[:, :6], S[:, 6:]
        K = len(S)
        phi, th, psi = eta[:, 3], eta[:, 4], eta[:, 5]
        if np.any(np.abs(th) >= math.pi / 2 - GIMBAL_MARGIN):
            raise GimbalLockError("pitch too close to +-pi/2 in rollout")
        cf, sf, ct, st, cp, sp = (np.cos(phi), np.sin(phi), np.cos(th), np.sin(th),
                                  np.cos(psi), np.sin(psi))
        z, o = np.zeros(K), np.ones(K)
        Rx = np.stack([o, z, z, z, cf, -sf, z, sf, cf], -1).reshape(K, 3, 3)
        Ry = np.stack([ct, z, st, z, o, z, -st, z, ct], -1).reshape(K, 3, 3)
        Rz = np.stack([cp, -sp, z, sp, cp, z, z, z, o], -1).reshape(K, 3, 3)
        E1 = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
        E2 = np.array([[0, 0, 1], [0, 0, 0], [-1, 0, 0]], dtype=float)
        E3 = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
        RzRy = Rz @ Ry
        R = RzRy @ Rx
        v, w = nu[:, :3], nu[:, 3:]
        F = np.zeros((K, NS, NS))
        F[:, :3, 3] = np.einsum("kab,kb->ka", R @ E1, v)
        F[:, :3, 4] = np.einsum("kab,kb->ka", Rz @ E2 @ Ry @ Rx, v)
        F[:, :3, 5] = np.einsum("ab,kbc,kc->ka", E3, R, v)
        tt = st / ct
        q, r = w[:, 1], w[:, 2]
        # d(T(phi, theta) w)/d(phi, theta)
        F[:, 3, 3] = cf * tt * q - sf * tt * r
        F[:, 4, 3] = -sf * q - cf * r
        F[:, 5, 3] = (cf * q - sf * r) / ct
        F[:, 3, 4] = (sf * q + cf * r) / ct**2
        F[:, 5, 4] = (sf * q + cf * r) * st / ct**2
        F[:, :3, 6:9] = R
        F[:, 3, 9], F[:, 3, 10], F[:, 3, 11] = 1.0, sf * tt, cf * tt
        F[:, 4, 10], F[:, 4, 11] = cf, -sf
        F[:, 5, 10], F[:, 5, 11] = sf / ct, cf / ct
        C = np.einsum("kj,jab->kab", nu, self.Ct)
        Jc = np.einsum("jab,kb->kaj", self.Ct, nu)
        dfn = C + Jc
        idx = np.arange(6)
        dfn[:, idx, idx] -= self.lin + 2.0 * self.quad * np.abs(nu)
        F[:, 6:, 6:] = -np.einsum("ab,kbc->kac", self.Minv, dfn)
        F[:, 6:, :6] = -self.Minv @ self.Gsel
        F *= self.dt
        F[:, np.arange(NS), np.arange(NS)] += 1.0
        return F

    @property
    def B(self):
        Bk = np.zeros((NS, self.MinvT.shape[1]))
        Bk[6:] = self.dt * self.MinvT
        return Bk


def rollout_nonlinear(params, eta0, nu0, inputs, dt=0.05, include_restoring=True):
    """Explicit-Euler rollout; ``nu0`` in Fossen ordering [v; omega]."""
    model = EulerModel(params, dt, include_restoring)
    return model.rollout(np.concatenate([eta0, nu0]), np.atleast_2d(inputs))


def objective(S, U, Sd, weights):
    Z = Sd - S
    Q, P, R = weights.Q, weights.P, weights.R
    return float(np.einsum("ka,ab,kb->", Z[:-1], Q, Z[:-1]) + Z[-1] @ P @ Z[-1]
                 + np.einsum("ka,ab,kb->", U, R, U))


def gradient(model, S, U, Sd, weights, F=None):
    """Exact gradient of the objective w.r.t. the inputs (adjoint sweep)."""
    F = model.jacobians(S[:-1]) if F is None else F
    B = model.B
    Z = Sd - S
    lam = -2.0 * weights.P @ Z[-1]
    g = np.empty_like(U)
    for k in range(len(U) - 1, -1, -1):
        g[k] = 2.0 * weights.R @ U[k] + B.T @ lam
        lam = F[k].T @ lam - 2.0 * weights.Q @ Z[k]
    return g


def sqp_solve(model, config, s0, Sd, weights, U0):
    """Gauss-Newton SQP from the initial guess U0.

    Returns (U, S, diagnostics). Non-convergence keeps the best iterate and
    sets ``converged`` False rather than raising.
    """
    U = np.array(U0, dtype=float)
    S = model.rollout(s0, U)
    J = objective(S, U, Sd, weights)
    history = [J]
    B = model.B
    converged, it, F = False, 0, None
    for it in range(1, config.max_iter + 1):
        F = model.jacobians(S[:-1])
        N = len(U)
        prob = LqProblem(F, np.broadcast_to(B, (N,) + B.shape), -U @ B.T,
                         np.broadcast_to(np.eye(NS), (N + 1, NS, NS)), Sd - S,
                         weights.Q, weights.R, weights.P, np.zeros(NS))
        sol = riccati_solve(prob)
        step = sol.inputs - U
        pred = J - sol.objective
        if pred <= 0.0:
            converged = True
            break
        alpha, accepted = 1.0, False
        while alpha >= config.min_step:
            Ut = U + alpha * step
            St = model.rollout(s0, Ut)
            Jt = objective(St, Ut, Sd, weights)
            if Jt <= J - config.armijo * alpha * pred:
                accepted = True
                break
            alpha *= config.backtrack
        if not accepted:
            break
        U, S, J = Ut, St, Jt
        history.append(J)
        F = None
        if alpha * np.max(np.abs(step)) <= config.tol:
            converged = True
            break
    g = gradient(model, S, U, Sd, weights, F)
    diag = {"iterations": it, "objective": J, "objective_history": history,
            "converged": converged, "stationarity": float(np.max(np.abs(g)))}
    return U, S, diag


class NmpcController:
    """Receding-horizon SQP controller (NMPC, or NMPC-simple without g(eta))."""

    def __init__(self, params, simple=False, weights=None, horizon=None, config=None):
        self.params = params
        self.config = config or NlpConfig(include_restoring=not simple)
        if simple:
            self.config.include_restoring = False
        self.kind = "nmpc-simple" if not self.config.include_restoring else "nmpc"
        self.weights = weights or default_weights()
        self.horizon = horizon or HorizonConfig()
        self.model = EulerModel(params, self.horizon.dt, self.config.include_restoring)
        self.u_prev = None
        self.last = None

    def reset(self):
        self.u_prev = None

    def warm_start(self):
        N = self.horizon.N
        if self.u_prev is None:
            return np.zeros((N, self.params.T.shape[1]))
        return np.vstack([self.u_prev[1:], self.u_prev[-1:]])

    def solve_step(self, eta, nu, eta_d, nu_d):
        """``eta_d``/``nu_d``: (N+1, 6) reference window in Fossen ordering."""
        t0 = time.perf_counter()
        N = self.horizon.N
        Sd = np.hstack([eta_d[:N + 1], nu_d[:N + 1]])
        eta = np.array(eta, dtype=float)
        eta[5] = Sd[0, 5] + wrap_angle(eta[5] - Sd[0, 5])
        s0 = np.concatenate([eta, nu])
        U, S, diag = sqp_solve(self.model, self.config, s0, Sd, self.weights, self.warm_start())
        self.u_prev = U
        diag["solve_ms"] = 1e3 * (time.perf_counter() - t0)
        self.last = StepResult(U[0].copy(), U, S, diag)
        return self.last

    def control(self, eta, nu, window):
        return self.solve_step(eta, nu, window.eta, window.nu)
