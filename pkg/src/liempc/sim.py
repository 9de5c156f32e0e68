"""Plant simulation, reference generation and closed-loop experiments."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import hydro
from .lie import Pose, exp_se3, euler_to_pose, wrap_angle
from .qp import QpError

log = logging.getLogger(__name__)

PROFILES = ("turning", "zigzag")
SURGE = 0.5
TURN_RATE = 0.1
ZIGZAG_AMP = 0.1
ZIGZAG_PERIOD = 5.0
CONVERGE_AFTER = 30.0
CONVERGE_TOL = 0.15
FINAL_WINDOW = 5.0


# -- reference -----------------------------------------------------------------

@dataclass
class ReferenceTrajectory:
    profile: str
    dt: float
    times: np.ndarray
    poses: list
    twists: np.ndarray      # Lie ordering, twists[k] acts over [t_k, t_k+1)
    yaw: np.ndarray         # unwrapped heading, consistent with poses

    def __len__(self):
        return len(self.times)

    def eta(self, k):
        X = self.poses[k]
        return np.concatenate([X.p, [0.0, 0.0, self.yaw[k]]])

    def window(self, k, N):
        """Reference window of N+1 samples starting at tick k.

        Past the end of the trajectory the last twist is held and poses keep
        being integrated with it.
        """
        K = len(self.times)
        poses, twists, yaw = [], [], []
        for j in range(k, k + N + 1):
            if j < K:
                poses.append(self.poses[j])
                twists.append(self.twists[j])
                yaw.append(self.yaw[j])
            else:
                xi = self.twists[-1]
                poses.append(poses[-1] @ exp_se3(xi * self.dt))
                twists.append(xi)
                yaw.append(yaw[-1] + xi[2] * self.dt)
        return RefWindow(poses, np.array(twists), np.array(yaw))


@dataclass
class RefWindow:
    poses: list
    twists: np.ndarray
    yaw: np.ndarray

    @property
    def eta(self):
        out = np.zeros((len(self.poses), 6))
        out[:, :3] = [X.p for X in self.poses]
        out[:, 5] = self.yaw
        return out

    @property
    def nu(self):
        return self.twists[:, hydro.PERM]

    @staticmethod
    def current_pose(eta):
        return euler_to_pose(eta)


def reference_twist(profile, t, dt):
    """Reference twist held over [t, t + dt)."""
    if profile == "turning":
        r = TURN_RATE
    elif profile == "zigzag":
        # interval average of ZIGZAG_AMP sin(t / T): heading is exact at ticks
        T = ZIGZAG_PERIOD
        r = ZIGZAG_AMP * T * (math.cos(t / T) - math.cos((t + dt) / T)) / dt
    else:
        raise ValueError(f"unknown reference profile {profile!r}")
    return np.array([0.0, 0.0, r, SURGE, 0.0, 0.0])


def generate_reference(profile, duration=60.0, dt=0.05, start=None):
    K = int(round(duration / dt)) + 1
    times = dt * np.arange(K)
    twists = np.array([reference_twist(profile, t, dt) for t in times])
    poses = [start or Pose.identity()]
    for k in range(K - 1):
        poses.append(poses[-1] @ exp_se3(twists[k] * dt))
    yaw0 = math.atan2(poses[0].R[1, 0], poses[0].R[0, 0])
    yaw = yaw0 + np.concatenate([[0.0], np.cumsum(twists[:-1, 2] * dt)])
    return ReferenceTrajectory(profile, dt, times, poses, twists, yaw)


# -- plant ---------------------------------------------------------------------

def current_vector(speed, direction):
    """NED current velocity for a speed (m/s) and direction it flows towards (rad)."""
    return np.array([speed * math.cos(direction), speed * math.sin(direction), 0.0])


def _relative_rhs(params, eta, nu_r, tau, v_c, include_restoring):
    return hydro.relative_dynamics(params, eta, nu_r, tau, v_c, include_restoring)


def rk4_step(params, state, current, tau, h, include_restoring=True):
    """One classical RK4 step of the plant.

    Integration runs in relative coordinates (eta, nu_r); for a constant
    irrotational current this is the same ODE as the absolute form, and the
    relative form keeps the step exactly equivariant under the current.
    """
    v_c = np.zeros(3) if current is None else np.asarray(current, dtype=float)
    eta = state.eta
    nu_r = state.nu - hydro.current_body(eta, v_c)

    def f(e, n):
        return _relative_rhs(params, e, n, tau, v_c, include_restoring)

    k1e, k1n = f(eta, nu_r)
    k2e, k2n = f(eta + 0.5 * h * k1e, nu_r + 0.5 * h * k1n)
    k3e, k3n = f(eta + 0.5 * h * k2e, nu_r + 0.5 * h * k2n)
    k4e, k4n = f(eta + h * k3e, nu_r + h * k3n)
    eta1 = eta + h / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e)
    nu_r1 = nu_r + h / 6.0 * (k1n + 2 * k2n + 2 * k3n + k4n)
    return hydro.FossenState(eta1, nu_r1 + hydro.current_body(eta1, v_c))


def mechanical_energy(params, state):
    """Kinetic energy 0.5 nu' M nu (restoring-free, current-free runs)."""
    return 0.5 * state.nu @ params.M @ state.nu


# -- metrics -------------------------------------------------------------------

def position_error(eta, eta_d):
    """Euclidean position error (m) per sample; the single metric definition."""
    eta, eta_d = np.atleast_2d(eta), np.atleast_2d(eta_d)
    return np.linalg.norm(eta[:, :3] - eta_d[:, :3], axis=1)


def heading_error(eta, eta_d):
    eta, eta_d = np.atleast_2d(eta), np.atleast_2d(eta_d)
    return np.array([wrap_angle(a) for a in eta[:, 5] - eta_d[:, 5]])


def _mean_or_nan(x):
    return float(np.mean(x)) if len(x) else math.nan


def final_error(t, pos_err, duration, window=FINAL_WINDOW):
    mask = t >= duration - window - 1e-9
    return _mean_or_nan(pos_err[mask])


def converged(t, pos_err, after=CONVERGE_AFTER, tol=CONVERGE_TOL):
    """All samples after `after` below tol; an episode that never got there is not converged."""
    tail = pos_err[t > after]
    return bool(len(tail) and np.all(tail < tol))


def yaw_jerk(t, r, after=CONVERGE_AFTER):
    """Mean absolute yaw-rate derivative over t > after (smoothness proxy)."""
    rdot = np.diff(r) / np.diff(t)
    sel = t[1:] > after
    if not np.any(sel):
        return math.nan     # episode ended before the window opened
    return float(np.mean(np.abs(rdot[sel])))


# -- episodes ------------------------------------------------------------------

@dataclass
class EpisodeConfig:
    profile: str = "turning"
    duration: float = 60.0
    control_rate: float = 20.0
    plant_rate: float = 80.0
    init_radius: float = 5.0
    heading_range: tuple = (-math.pi, math.pi)
    current_speed: float = 0.0
    current_direction: float = 0.0
    controller: str = "proposed"
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        ratio = self.plant_rate / self.control_rate
        if self.control_rate <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("plant rate must be an integer multiple of the control rate")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def dt(self):
        return 1.0 / self.control_rate

    @property
    def substeps(self):
        return int(round(self.plant_rate / self.control_rate))

    @property
    def current(self):
        return current_vector(self.current_speed, self.current_direction)


@dataclass
class EpisodeResult:
    config: EpisodeConfig
    t: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    u: np.ndarray
    eta_d: np.ndarray
    pos_err: np.ndarray
    heading_err: np.ndarray
    solve_ms: np.ndarray
    initial: np.ndarray
    aborted: bool = False
    abort_reason: str = ""
    abort_kind: str = ""      # "solver" for QP failures, "controller" otherwise
    diagnostics: list = field(default_factory=list)

    @property
    def final_error(self):
        return final_error(self.t, self.pos_err, self.config.duration)

    @property
    def converged(self):
        return converged(self.t, self.pos_err)

    @property
    def yaw_jerk(self):
        return yaw_jerk(self.t, self.nu[:, 5])

    @property
    def mean_solve_ms(self):
        return _mean_or_nan(self.solve_ms)

    def summary(self):
        def num(x):
            return None if math.isnan(x) else x

        return {"seed": self.config.seed, "final_error_m": num(self.final_error),
                "converged": self.converged, "max_error_after_30s_m":
                float(np.max(self.pos_err[self.t > CONVERGE_AFTER], initial=0.0)),
                "mean_solve_ms": num(self.mean_solve_ms),
                "yaw_jerk": num(self.yaw_jerk),
                "aborted": self.aborted, "abort_reason": self.abort_reason}


def initial_state(config, reference, rng):
    """Random start: uniform in the offset disc, heading uniform in range."""
    r = config.init_radius * math.sqrt(rng.uniform())
    a = rng.uniform(-math.pi, math.pi)
    lo, hi = config.heading_range
    psi = rng.uniform(lo, hi)
    eta0 = reference.eta(0)
    eta0[:2] += [r * math.cos(a), r * math.sin(a)]
    eta0[5] += psi
    return hydro.FossenState(eta0, np.zeros(6))


def run_episode(config, controller, params, reference=None, state0=None, keep_diagnostics=False):
    """Closed-loop run at the control rate with a zero-order-hold plant."""
    dt, sub = config.dt, config.substeps
    h = dt / sub
    ticks = int(round(config.duration / dt))
    ref = reference or generate_reference(config.profile, config.duration, dt)
    N = controller.horizon.N
    if state0 is None:
        state0 = initial_state(config, ref, np.random.default_rng(config.seed))
    state = state0.copy()
    v_c = config.current
    restoring = True

    t = dt * np.arange(ticks)
    eta = np.zeros((ticks, 6))
    nu = np.zeros((ticks, 6))
    u = np.zeros((ticks, 2))
    eta_d = np.zeros((ticks, 6))
    solve_ms = np.zeros(ticks)
    diags = []
    aborted, reason, kind = False, "", ""
    for k in range(ticks):
        win = ref.window(k, N)
        eta[k], nu[k], eta_d[k] = state.eta, state.nu, win.eta[0]
        try:
            step = controller.control(state.eta, state.nu, win)
        except Exception as exc:  # noqa: BLE001 - any controller failure ends the run
            aborted, reason = True, f"{type(exc).__name__}: {exc}"
            kind = "solver" if isinstance(exc, QpError) else "controller"
            log.warning("episode seed=%d aborted at t=%.2f: %s", config.seed, t[k], reason)
            ticks = k
            break
        uk, _ = hydro.clamp_thrust(params, step.u0)
        u[k] = uk
        solve_ms[k] = step.diagnostics.get("solve_ms", 0.0)
        if keep_diagnostics:
            diags.append(step.diagnostics)
        tau = params.T @ uk
        for _ in range(sub):
            state = rk4_step(params, state, v_c, tau, h, restoring)
    sl = slice(0, ticks)
    pe = position_error(eta[sl], eta_d[sl])
    he = heading_error(eta[sl], eta_d[sl])
    return EpisodeResult(config, t[sl], eta[sl], nu[sl], u[sl], eta_d[sl], pe, he,
                         solve_ms[sl], state0.eta.copy(), aborted, reason, kind, diags)


# -- output --------------------------------------------------------------------

CSV_COLUMNS = ("t", "x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r",
               "u1", "u2", "pos_err", "solve_ms")


def episode_table(result):
    return np.column_stack([result.t, result.eta, result.nu, result.u,
                            result.pos_err, result.solve_ms])


def write_episode_csv(path, result):
    np.savetxt(path, episode_table(result), delimiter=",", header=",".join(CSV_COLUMNS),
               comments="", fmt="%.10g")


def read_episode_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {c: data[:, i] for i, c in enumerate(CSV_COLUMNS)}


# -- batches -------------------------------------------------------------------

@dataclass
class ControllerSpec:
    """Picklable recipe for building a controller inside a worker."""
    kind: str = "proposed"
    options: dict = field(default_factory=dict)

    def build(self, params):
        from .errmpc import ErrorStateMPC
        from .nmpc import NmpcController
        if self.kind == "proposed":
            return ErrorStateMPC(params, **self.options)
        if self.kind in ("nmpc", "nmpc-simple"):
            return NmpcController(params, simple=self.kind == "nmpc-simple", **self.options)
        raise ValueError(f"unknown controller kind {self.kind!r}")


def episode_seeds(seed, n):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def _run_one(args):
    config, spec, params = args
    return run_episode(config, spec.build(params), params)


def _map(fn, jobs_args, jobs):
    if jobs is None or jobs <= 1 or len(jobs_args) <= 1:
        return [fn(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, jobs_args))


@dataclass
class MonteCarloResult:
    episodes: list

    @property
    def final_errors(self):
        return np.array([e.final_error for e in self.episodes])

    @property
    def convergence_fraction(self):
        return float(np.mean([e.converged for e in self.episodes]))

    @property
    def mean_solve_ms(self):
        return _mean_or_nan(np.concatenate([e.solve_ms for e in self.episodes]))

    def summary(self):
        fe = self.final_errors
        return {"episodes": len(self.episodes), "mean_final_error_m": float(np.mean(fe)),
                "max_final_error_m": float(np.max(fe)),
                "convergence_fraction": self.convergence_fraction,
                "mean_solve_ms": self.mean_solve_ms,
                "aborted": int(sum(e.aborted for e in self.episodes)),
                "per_episode": [e.summary() for e in self.episodes]}


def run_monte_carlo(config, params, spec=None, n=10, jobs=1):
    """n seeded episodes; results ordered by episode index regardless of jobs."""
    spec = spec or ControllerSpec(config.controller)
    seeds = episode_seeds(config.seed, n)
    args = [(replace(config, seed=s), spec, params) for s in seeds]
    return MonteCarloResult(_map(_run_one, args, jobs))


@dataclass
class SweepRow:
    controller: str
    speed: float
    angle: float
    mean_final_error: float
    max_final_error: float
    mean_solve_ms: float


@dataclass
class SweepResult:
    rows: list

    def worst_by_speed(self, controller=None):
        out = {}
        for r in self.rows:
            if controller is None or r.controller == controller:
                out[r.speed] = max(out.get(r.speed, -np.inf), r.mean_final_error)
        return out


def run_current_sweep(config, params, spec=None, speeds=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
                      angles=12, episodes=1, jobs=1):
    """Final error over a (speed, encounter angle) grid.

    ``angles`` is a count (evenly spaced over the circle) or explicit radians.
    """
    spec = spec or ControllerSpec(config.controller)
    if np.isscalar(angles):
        angles = 2 * math.pi * np.arange(int(angles)) / int(angles)
    seeds = episode_seeds(config.seed, episodes)
    grid, args = [], []
    for s in speeds:
        for a in angles:
            grid.append((float(s), float(a)))
            for sd in seeds:
                args.append((replace(config, current_speed=float(s),
                                     current_direction=float(a), seed=sd), spec, params))
    results = _map(_run_one, args, jobs)
    rows = []
    for i, (s, a) in enumerate(grid):
        eps = results[i * episodes:(i + 1) * episodes]
        fe = [e.final_error for e in eps]
        rows.append(SweepRow(spec.kind, s, a, float(np.mean(fe)), float(np.max(fe)),
                             _mean_or_nan(np.concatenate([e.solve_ms for e in eps]))))
    return SweepResult(rows), results


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
