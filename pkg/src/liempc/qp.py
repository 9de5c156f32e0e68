"""Solvers for the time-varying LQ tracking problem

    min  sum_{k<N} y_k' Q y_k + u_k' R u_k  +  y_N' P y_N,   y_k = G_k x_k - d_k
    s.t. x_{k+1} = A_k x_k + B_k u_k + h_k,  x_0 given,  u_min <= u_k <= u_max

:func:`riccati_solve` handles the unconstrained problem exactly in O(N);
:func:`admm_box_solve` adds input boxes by operator splitting on top of the
same recursion. :func:`dense_kkt_solve` is the monolithic reference.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np


class QpError(RuntimeError):
    """Base class for solver failures."""


class NotPositiveDefinite(QpError):
    pass


class NotConverged(QpError):
    def __init__(self, msg, primal, dual, iterations):
        super().__init__(f"{msg} (primal {primal:.3e}, dual {dual:.3e}, {iterations} it)")
        self.primal = primal
        self.dual = dual
        self.iterations = iterations


@dataclass
class LqProblem:
    A: np.ndarray            # (N, n, n)
    B: np.ndarray            # (N, n, m)
    h: np.ndarray            # (N, n)
    G: np.ndarray            # (N+1, ny, n)
    d: np.ndarray            # (N+1, ny)
    Q: np.ndarray            # (ny, ny) or (N, ny, ny)
    R: np.ndarray            # (m, m)
    P: np.ndarray            # (ny, ny)
    x0: np.ndarray           # (n,)
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None

    def __post_init__(self):
        N, n, m = self.B.shape
        if self.A.shape != (N, n, n) or self.h.shape != (N, n):
            raise ValueError("inconsistent dynamics dimensions")
        if self.G.shape[0] != N + 1 or self.G.shape[2] != n or self.d.shape != self.G.shape[:2]:
            raise ValueError("inconsistent output dimensions")
        if self.x0.shape != (n,) or self.R.shape != (m, m):
            raise ValueError("inconsistent x0/R dimensions")

    @property
    def N(self):
        return self.B.shape[0]

    @property
    def n(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.B.shape[2]

    def stage_Q(self, k):
        return self.Q[k] if self.Q.ndim == 3 else self.Q

    def bounds(self):
        lo = np.full((self.N, self.m), -np.inf) if self.u_min is None else np.broadcast_to(self.u_min, (self.N, self.m))
        hi = np.full((self.N, self.m), np.inf) if self.u_max is None else np.broadcast_to(self.u_max, (self.N, self.m))
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    @property
    def has_bounds(self):
        lo, hi = self.bounds()
        return bool(np.isfinite(lo).any() or np.isfinite(hi).any())


@dataclass
class QpSolution:
    inputs: np.ndarray       # (N, m)
    states: np.ndarray       # (N+1, n), states[0] = x0
    objective: float
    multipliers: np.ndarray  # (N, n), costates of x_1..x_N
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    iterations: int = 1
    wall_time: float = 0.0
    status: str = "solved"
    info: dict = field(default_factory=dict)


class KktResidual(NamedTuple):
    stationarity: float
    primal: float
    complementarity: float


def _quadratic_terms(problem):
    """Per-stage state cost x'Qx x + 2 qx'x from the output form."""
    N = problem.N
    Qx = np.empty((N + 1, problem.n, problem.n))
    qx = np.empty((N + 1, problem.n))
    for k in range(N + 1):
        W = problem.P if k == N else problem.stage_Q(k)
        GW = problem.G[k].T @ W
        Qx[k] = GW @ problem.G[k]
        qx[k] = -GW @ problem.d[k]
    return Qx, qx


def objective(problem, inputs, states):
    J = 0.0
    for k in range(problem.N):
        y = problem.G[k] @ states[k] - problem.d[k]
        J += y @ problem.stage_Q(k) @ y + inputs[k] @ problem.R @ inputs[k]
    y = problem.G[-1] @ states[-1] - problem.d[-1]
    return float(J + y @ problem.P @ y)


def rollout(problem, inputs):
    x = np.empty((problem.N + 1, problem.n))
    x[0] = problem.x0
    for k in range(problem.N):
        x[k + 1] = problem.A[k] @ x[k] + problem.B[k] @ inputs[k] + problem.h[k]
    return x


def _factor(A, B, Qx, R):
    """Backward pass for the quadratic part: S_k, feedback K_k and Huu^-1 B'."""
    N = len(A)
    n = Qx.shape[1]
    S = Qx[N]
    Ss = [None] * (N + 1)
    Ss[N] = S
    K, HiBt = [None] * N, [None] * N
    for k in range(N - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        SA = S @ Ak
        if Bk.shape[1] == 0:
            K[k], HiBt[k] = np.zeros((0, n)), np.zeros((0, n))
            S = Qx[k] + Ak.T @ SA
        else:
            BtS = Bk.T @ S
            Huu = R[k] + BtS @ Bk
            try:
                np.linalg.cholesky(Huu)
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite(f"input Hessian not positive definite at stage {k}") from None
            sol = np.linalg.solve(Huu, np.hstack([BtS @ Ak, Bk.T, np.eye(Bk.shape[1])]))
            K[k] = -sol[:, :n]
            HiBt[k] = (sol[:, n:2 * n], sol[:, 2 * n:])
            S = Qx[k] + Ak.T @ SA + (BtS @ Ak).T @ K[k]
            S = 0.5 * (S + S.T)
        Ss[k] = S
    return Ss, K, HiBt


def _affine(A, B, factor, h, qx, r, x0):
    """Linear-term backward pass and forward rollout for a given factorization."""
    Ss, K, HiBt = factor
    N = len(A)
    n = x0.shape[0]
    s = qx[N]
    ss = [None] * (N + 1)
    ss[N] = s
    kff = [None] * N
    for k in range(N - 1, -1, -1):
        Sh = Ss[k + 1] @ h[k] + s
        if B[k].shape[1] == 0:
            kff[k] = np.zeros(0)
            s = qx[k] + A[k].T @ Sh
        else:
            HiB, Hi = HiBt[k]
            kff[k] = -(HiB @ Sh + Hi @ r[k])
            # Hux' kff = -(B'SA)' Huu^-1 g = K' g
            s = qx[k] + A[k].T @ Sh + K[k].T @ (B[k].T @ Sh + r[k])
        ss[k] = s
    xs = np.empty((N + 1, n))
    xs[0] = x0
    us = []
    lam = np.empty((N, n))
    for k in range(N):
        u = K[k] @ xs[k] + kff[k]
        us.append(u)
        xs[k + 1] = A[k] @ xs[k] + B[k] @ u + h[k]
        lam[k] = 2.0 * (Ss[k + 1] @ xs[k + 1] + ss[k + 1])
    return us, xs, lam


def _riccati(A, B, h, Qx, qx, R, r, x0):
    """Affine Riccati recursion with stage-wise (possibly varying) input sizes.

    Stage cost x'Qx x + 2qx'x + u'R u + 2r'u. Returns inputs, states and the
    costates lambda_{k+1} = 2 (S_{k+1} x_{k+1} + s_{k+1}).
    """
    return _affine(A, B, _factor(A, B, Qx, R), h, qx, r, x0)


def riccati_solve(problem):
    """Exact minimizer of the unconstrained LQ problem."""
    if problem.has_bounds:
        raise ValueError("riccati_solve does not handle input bounds; use admm_box_solve")
    t0 = time.perf_counter()
    Qx, qx = _quadratic_terms(problem)
    N, m = problem.N, problem.m
    Rs = np.broadcast_to(problem.R, (N, m, m))
    us, xs, lam = _riccati(problem.A, problem.B, problem.h, Qx, qx, Rs,
                           np.zeros((N, m)), problem.x0)
    u = np.array(us)
    return QpSolution(u, xs, objective(problem, u, xs), lam,
                      wall_time=time.perf_counter() - t0)


def _solve_fixed(problem, Qx, qx, free, fixed_vals):
    """Riccati solve with the non-free input components pinned to fixed_vals."""
    N = problem.N
    Bs, hs, Rs, rs = [], [], [], []
    for k in range(N):
        f = free[k]
        c = np.where(f, 0.0, fixed_vals[k])
        Bs.append(problem.B[k][:, f])
        hs.append(problem.h[k] + problem.B[k] @ c)
        Rs.append(problem.R[np.ix_(f, f)])
        rs.append(problem.R[f] @ c)
    vs, xs, lam = _riccati(problem.A, Bs, hs, Qx, qx, Rs, rs, problem.x0)
    u = np.array(fixed_vals, dtype=float, copy=True)
    for k in range(N):
        u[k, free[k]] = vs[k]
    return u, xs, lam


def admm_box_solve(problem, tol=1e-6, max_iter=4000, alpha=1.6, rho=None,
                   adaptive=True, polish=True, warm_start=True):
    """Box-constrained LQ problem by ADMM on the splitting u = z, z in box.

    The u-update is an unconstrained LQ problem solved by the Riccati
    recursion (factorization reused until the penalty changes). The iterate
    starts from the clipped unconstrained solution unless ``warm_start`` is
    False. After
    convergence the active set is polished with an exact equality-constrained
    solve; the polished point is kept only if it passes the KKT sign checks.
    """
    t0 = time.perf_counter()
    N, m, n = problem.N, problem.m, problem.n
    lo, hi = problem.bounds()
    if np.any(lo > hi):
        raise ValueError("input bounds with u_min > u_max")
    Qx, qx = _quadratic_terms(problem)
    R = problem.R

    # unconstrained solution gives the warm start and the curvature scale
    us0, _, _ = _riccati(problem.A, problem.B, problem.h, Qx, qx,
                         np.broadcast_to(R, (N, m, m)), np.zeros((N, m)), problem.x0)
    u = np.array(us0) if warm_start else np.zeros((N, m))
    z = np.clip(u, lo, hi)
    w = np.zeros((N, m))
    if rho is None:
        rho = 2.0 * float(np.mean(np.diag(R)))
    eye = np.eye(m)

    it = 0
    r_prim = r_dual = np.inf
    converged = False
    factor, factor_rho = None, None
    while it < max_iter:
        it += 1
        if factor_rho != rho:
            Rr = np.broadcast_to(R + 0.5 * rho * eye, (N, m, m))
            factor, factor_rho = _factor(problem.A, problem.B, Qx, Rr), rho
        r_lin = -0.5 * rho * (z - w)
        us, _, _ = _affine(problem.A, problem.B, factor, problem.h, qx, r_lin, problem.x0)
        u = np.array(us)
        u_hat = alpha * u + (1.0 - alpha) * z
        z_prev = z
        z = np.clip(u_hat + w, lo, hi)
        w = w + u_hat - z
        r_prim = float(np.max(np.abs(u - z)))
        r_dual = float(rho * np.max(np.abs(z - z_prev)))
        scale_p = max(np.max(np.abs(u)), np.max(np.abs(z)))
        scale_d = rho * np.max(np.abs(w))
        if r_prim <= tol * (1.0 + scale_p) and r_dual <= tol * (1.0 + scale_d):
            converged = True
            break
        if adaptive and it % 25 == 0 and r_prim > 0:
            # a zero dual residual (e.g. pinned boxes) still calls for a larger rho
            ratio = r_prim / max(r_dual, 1e-12 * (1.0 + scale_d))
            if ratio > 10.0 or ratio < 0.1:
                new_rho = float(np.clip(rho * np.sqrt(ratio), 1e-8, 1e8))
                w *= rho / new_rho
                rho = new_rho

    if not converged:
        raise NotConverged("ADMM did not converge", r_prim, r_dual, it)

    xs = rollout(problem, z)
    lam = _costates(problem, z, xs)
    sol = QpSolution(z.copy(), xs, objective(problem, z, xs), lam, r_prim, r_dual, it,
                     status="solved", info={"rho": rho, "polished": False})
    if polish:
        act_tol = 1e-6 * (1.0 + np.max(np.abs(z)))
        at_lo = z <= lo + act_tol
        at_hi = z >= hi - act_tol
        free = ~(at_lo | at_hi)
        pinned = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
        up, xp, lamp = _solve_fixed(problem, Qx, qx, free, pinned)
        cand = QpSolution(up, xp, objective(problem, up, xp), lamp, 0.0, 0.0, it,
                          info={"rho": rho, "polished": True})
        res = kkt_residual(problem, cand)
        if res.primal <= 1e-9 * (1.0 + np.max(np.abs(up))) and res.stationarity <= max(
                1e-6, kkt_residual(problem, sol).stationarity):
            sol = cand
    sol.wall_time = time.perf_counter() - t0
    return sol


def _costates(problem, inputs, states):
    """Multipliers that make the state-stationarity conditions hold exactly."""
    N = problem.N
    lam = np.empty((N, problem.n))
    yN = problem.G[N] @ states[N] - problem.d[N]
    lam[N - 1] = 2.0 * problem.G[N].T @ problem.P @ yN
    for k in range(N - 1, 0, -1):
        y = problem.G[k] @ states[k] - problem.d[k]
        lam[k - 1] = 2.0 * problem.G[k].T @ problem.stage_Q(k) @ y + problem.A[k].T @ lam[k]
    return lam


def kkt_residual(problem, solution):
    """Infinity norms of the KKT conditions at ``solution``.

    Costates are recomputed from the state-stationarity equations, so the
    reported stationarity is the input gradient 2 R u_k + B_k' lambda_{k+1}
    projected on the box, primal is the dynamics/bound violation and
    complementarity is max |mu_i * slack_i|.
    """
    u, x = solution.inputs, solution.states
    N = problem.N
    lo, hi = problem.bounds()
    defect = [x[0] - problem.x0]
    for k in range(N):
        defect.append(x[k + 1] - (problem.A[k] @ x[k] + problem.B[k] @ u[k] + problem.h[k]))
    viol = np.maximum(np.maximum(lo - u, u - hi), 0.0)
    primal = max(float(np.max(np.abs(defect))), float(np.max(viol, initial=0.0)))

    lam = _costates(problem, u, x)
    grad = np.array([2.0 * problem.R @ u[k] + problem.B[k].T @ lam[k] for k in range(N)])
    act_tol = 1e-6 * (1.0 + np.max(np.abs(u)))
    at_hi = np.isfinite(hi) & (u >= hi - act_tol)
    at_lo = np.isfinite(lo) & (u <= lo + act_tol)
    stat = np.where(at_hi, np.maximum(grad, 0.0), np.where(at_lo, np.maximum(-grad, 0.0), np.abs(grad)))
    mu_hi = np.where(at_hi, np.maximum(-grad, 0.0), 0.0)
    mu_lo = np.where(at_lo, np.maximum(grad, 0.0), 0.0)
    slack_hi = np.where(np.isfinite(hi), hi - u, 0.0)
    slack_lo = np.where(np.isfinite(lo), u - lo, 0.0)
    comp = np.maximum(np.abs(mu_hi * slack_hi), np.abs(mu_lo * slack_lo))
    return KktResidual(float(np.max(stat)), primal, float(np.max(comp, initial=0.0)))


def dense_kkt_solve(problem):
    """Monolithic equality-constrained KKT solve (reference; ignores bounds)."""
    N, n, m = problem.N, problem.n, problem.m
    nx = (N + 1) * n
    nz = nx + N * m
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    for k in range(N + 1):
        W = problem.P if k == N else problem.stage_Q(k)
        sl = slice(k * n, (k + 1) * n)
        H[sl, sl] += problem.G[k].T @ W @ problem.G[k]
        f[sl] += -problem.G[k].T @ W @ problem.d[k]
    for k in range(N):
        sl = slice(nx + k * m, nx + (k + 1) * m)
        H[sl, sl] += problem.R
    ne = (N + 1) * n
    E = np.zeros((ne, nz))
    e = np.zeros(ne)
    E[:n, :n] = np.eye(n)
    e[:n] = problem.x0
    for k in range(N):
        rows = slice((k + 1) * n, (k + 2) * n)
        E[rows, k * n:(k + 1) * n] = problem.A[k]
        E[rows, (k + 1) * n:(k + 2) * n] = -np.eye(n)
        E[rows, nx + k * m:nx + (k + 1) * m] = problem.B[k]
        e[rows] = -problem.h[k]
    K = np.block([[2.0 * H, E.T], [E, np.zeros((ne, ne))]])
    rhs = np.concatenate([-2.0 * f, e])
    z = np.linalg.solve(K, rhs)
    xs = z[:nx].reshape(N + 1, n)
    u = z[nx:nz].reshape(N, m)
    # rows read A x_k - x_{k+1} + B u_k = -h_k, so their multipliers are the costates
    lam = z[nz + n:].reshape(N, n)
    return QpSolution(u, xs, objective(problem, u, xs), lam, status="dense")
