"""Fossen 6-DOF marine-craft model.

Everything here works in Fossen ordering ``nu = [u, v, w, p, q, r]`` unless
a function says otherwise. :func:`reorder` converts to and from the Lie
ordering ``xi = [p, q, r, u, v, w]`` used by the controller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .lie import hat3, rotation_zyx, euler_rate_matrix

# [linear; angular] <-> [angular; linear]
PERM = np.r_[3:6, 0:3]

PARAM_KEYS = (
    "name", "mass", "cog", "inertia", "added_mass", "damping_linear",
    "damping_quadratic", "restoring", "lever_arm", "thrust_coeff_pos",
    "thrust_coeff_neg", "thrust_limits", "coriolis_am_mask",
)


class VesselParamError(ValueError):
    pass


def reorder(v):
    """Swap the two 3-blocks of a 6-vector (involutive)."""
    return np.asarray(v, dtype=float)[PERM]


def reorder_matrix(A):
    """Congruence ``P A P^T`` with the block-swap permutation ``P``."""
    return np.asarray(A, dtype=float)[np.ix_(PERM, PERM)]


@dataclass(frozen=True, eq=False)
class VesselParams:
    mass: float
    cog: np.ndarray
    inertia: np.ndarray
    added_mass: np.ndarray
    damping_linear: np.ndarray
    damping_quadratic: np.ndarray
    restoring: np.ndarray
    lever_arm: float
    thrust_coeff_pos: float
    thrust_coeff_neg: float
    thrust_limits: tuple = (-math.inf, math.inf)
    # 1 keeps an entry of C_AM, 0 neglects it
    am_mask: np.ndarray = field(default_factory=lambda: np.ones((6, 6)))
    name: str = "vessel"

    @cached_property
    def M_RB(self):
        return rigid_body_mass(self.mass, self.cog, self.inertia)

    @cached_property
    def M(self):
        return assemble_mass(self)

    @cached_property
    def Minv(self):
        return np.linalg.inv(self.M)

    @cached_property
    def T(self):
        """Thrust configuration matrix (Fossen ordering, 6x2)."""
        l = self.lever_arm
        return np.array([[1.0, 1.0], [0, 0], [0, 0], [0, 0], [0, 0], [l, -l]])

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


@dataclass
class FossenState:
    eta: np.ndarray
    nu: np.ndarray

    def copy(self):
        return FossenState(self.eta.copy(), self.nu.copy())


def rigid_body_mass(m, cog, inertia):
    xg, yg, zg = cog
    M = np.zeros((6, 6))
    M[:3, :3] = m * np.eye(3)
    M[:3, 3:] = np.array([[0.0, m * zg, -m * yg],
                          [-m * zg, 0.0, m * xg],
                          [m * yg, -m * xg, 0.0]])
    M[3:, :3] = M[:3, 3:].T
    M[3:, 3:] = inertia
    return M


def assemble_mass(params):
    M = rigid_body_mass(params.mass, params.cog, params.inertia) + params.added_mass
    if np.max(np.abs(M - M.T)) > 1e-9 * max(1.0, np.max(np.abs(M))):
        raise VesselParamError("mass matrix M_RB + M_AM is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise VesselParamError("mass matrix M_RB + M_AM is not positive definite") from None
    return M


def coriolis(M, nu, mask=None):
    """Coriolis-centripetal matrix of ``M`` at velocity ``nu`` (Kirchhoff form)."""
    nu1, nu2 = nu[:3], nu[3:]
    a = hat3(M[:3, :3] @ nu1 + M[:3, 3:] @ nu2)
    b = hat3(M[3:, :3] @ nu1 + M[3:, 3:] @ nu2)
    C = np.zeros((6, 6))
    C[:3, 3:] = -a
    C[3:, :3] = -a
    C[3:, 3:] = -b
    if mask is not None:
        C *= mask
    return C


def vessel_coriolis(params, nu):
    return coriolis(params.M_RB, nu) + coriolis(params.added_mass, nu, params.am_mask)


def damping(params, nu_r):
    return -np.diag(params.damping_linear + params.damping_quadratic * np.abs(nu_r))


def restoring(params, eta):
    delta = np.array([0.0, 0.0, eta[2], eta[3], eta[4], 0.0])
    return params.restoring @ delta


def coriolis_jacobian(M, nu_bar, mask=None):
    """d(C(nu) nu_bar)/d nu, constant because C is linear in nu.

    Unmasked matrices use the closed block form; a masked C is differentiated
    column by column through C(e_j) nu_bar.
    """
    if mask is not None:
        J = np.empty((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1.0
            J[:, j] = coriolis(M, e, mask) @ nu_bar
        return J
    W = hat3(nu_bar[3:])
    V = hat3(nu_bar[:3])
    M11, M12, M21, M22 = M[:3, :3], M[:3, 3:], M[3:, :3], M[3:, 3:]
    return np.block([[W @ M11, W @ M12],
                     [V @ M11 + W @ M21, V @ M12 + W @ M22]])


def vessel_coriolis_jacobian(params, nu_bar):
    return (coriolis_jacobian(params.M_RB, nu_bar)
            + coriolis_jacobian(params.added_mass, nu_bar, params.am_mask))


def damping_jacobian(params, nu_bar):
    """d(D(nu) nu_bar)/d nu at nu_bar; the |.| kink uses the subgradient 0."""
    return -np.diag(params.damping_quadratic * np.abs(nu_bar))


def kinematics(eta):
    """J_Theta(eta): block-diagonal map from body velocity to eta rates."""
    J = np.zeros((6, 6))
    J[:3, :3] = rotation_zyx(*eta[3:6])
    J[3:, 3:] = euler_rate_matrix(eta[3], eta[4])
    return J


def current_body(eta, v_c_ned):
    """Body-frame current velocity (zero angular part)."""
    R = rotation_zyx(*eta[3:6])
    return np.concatenate([R.T @ v_c_ned, np.zeros(3)])


def hydro_forces(params, eta, nu_r, include_restoring=True):
    """C(nu_r) nu_r + D(nu_r) nu_r (+ g(eta))."""
    f = (vessel_coriolis(params, nu_r) + damping(params, nu_r)) @ nu_r
    if include_restoring:
        f = f + restoring(params, eta)
    return f


def relative_dynamics(params, eta, nu_r, tau, v_c_ned=None, include_restoring=True):
    """Rates of (eta, nu_r) under a constant irrotational current."""
    J = kinematics(eta)
    eta_dot = J @ nu_r
    if v_c_ned is not None:
        eta_dot[:3] += v_c_ned
    nu_r_dot = params.Minv @ (tau - hydro_forces(params, eta, nu_r, include_restoring))
    return eta_dot, nu_r_dot


def continuous_dynamics(params, state, tau, v_c_ned=None, include_restoring=True):
    """(eta_dot, nu_dot) of the plant ``M nu_r' + C nu_r + D nu_r + g = tau``.

    ``nu_dot`` adds the rate of the body-frame current, ``-omega x v_c``.
    """
    eta, nu = state.eta, state.nu
    nu_c = np.zeros(6) if v_c_ned is None else current_body(eta, v_c_ned)
    eta_dot, nu_r_dot = relative_dynamics(params, eta, nu - nu_c, tau, v_c_ned,
                                          include_restoring)
    nu_dot = nu_r_dot
    if v_c_ned is not None:
        nu_dot = nu_dot.copy()
        nu_dot[:3] -= np.cross(nu[3:], nu_c[:3])
    return eta_dot, nu_dot


def thrust_matrix(params, order="lie"):
    return params.T[PERM] if order == "lie" else params.T


def clamp_thrust(params, u):
    """Clip thruster forces to their limits; also report whether any clipped."""
    lo, hi = params.thrust_limits
    uc = np.clip(u, lo, hi)
    return uc, bool(np.any(uc != u))


def allocate_thrust(params, u, order="lie"):
    return thrust_matrix(params, order) @ np.asarray(u, dtype=float)


def allocate_pinv(params, tau, order="lie"):
    """Least-squares thruster forces for a desired generalized force."""
    return np.linalg.pinv(thrust_matrix(params, order)) @ tau


def rpm_to_force(params, n):
    n = np.asarray(n, dtype=float)
    k = np.where(n > 0, params.thrust_coeff_pos, params.thrust_coeff_neg)
    return k * n * np.abs(n)


def force_to_rpm(params, f):
    f = np.asarray(f, dtype=float)
    k = np.where(f > 0, params.thrust_coeff_pos, params.thrust_coeff_neg)
    return np.sign(f) * np.sqrt(np.abs(f) / k)


# -- parameter files -------------------------------------------------------

def _key_lines(text):
    node = yaml.compose(text)
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def _matrix(raw, shape, key):
    try:
        a = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"'{key}' must be numeric") from None
    if a.shape != shape:
        raise ValueError(f"'{key}' must have shape {shape}, got {a.shape}")
    return a


def parse_vessel(text, source="<string>"):
    """Build :class:`VesselParams` from YAML text, with line-level errors."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise VesselParamError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise VesselParamError(f"{source}: expected a mapping of parameter keys")
    lines = _key_lines(text)

    def fail(key, msg):
        line = lines.get(key)
        where = f"{source}:{line}" if line else source
        raise VesselParamError(f"{where}: {msg}")

    unknown = set(data) - set(PARAM_KEYS)
    for key in sorted(unknown):
        fail(key, f"unknown key '{key}'")
    for key in PARAM_KEYS:
        if key not in data and key != "name":
            raise VesselParamError(f"{source}: missing key '{key}'")

    def get(key, shape):
        try:
            return _matrix(data[key], shape, key)
        except ValueError as exc:
            fail(key, str(exc))

    mass = float(data["mass"])
    if mass <= 0:
        fail("mass", "mass must be positive")
    inertia = get("inertia", (3, 3))
    if np.max(np.abs(inertia - inertia.T)) > 1e-9:
        fail("inertia", "inertia tensor is not symmetric")
    added = get("added_mass", (6, 6))
    if np.max(np.abs(added - added.T)) > 1e-9:
        fail("added_mass", "added mass matrix is not symmetric")
    lin = get("damping_linear", (6,))
    quad = get("damping_quadratic", (6,))
    if np.any(lin > 0):
        fail("damping_linear", "damping coefficients must be non-positive (SNAME)")
    if np.any(quad > 0):
        fail("damping_quadratic", "damping coefficients must be non-positive (SNAME)")
    limits = get("thrust_limits", (2,))
    if limits[0] >= limits[1]:
        fail("thrust_limits", "thrust_limits must be [min, max] with min < max")
    mask = np.ones((6, 6))
    for entry in data["coriolis_am_mask"] or []:
        i, j = (int(x) for x in entry)
        if not (0 <= i < 6 and 0 <= j < 6):
            fail("coriolis_am_mask", f"mask entry {entry} out of range")
        mask[i, j] = 0.0

    params = VesselParams(
        mass=mass, cog=get("cog", (3,)), inertia=inertia, added_mass=added,
        damping_linear=lin, damping_quadratic=quad,
        restoring=get("restoring", (6, 6)),
        lever_arm=float(data["lever_arm"]),
        thrust_coeff_pos=float(data["thrust_coeff_pos"]),
        thrust_coeff_neg=float(data["thrust_coeff_neg"]),
        thrust_limits=(float(limits[0]), float(limits[1])),
        am_mask=mask, name=str(data.get("name", "vessel")),
    )
    try:
        params.M
    except VesselParamError as exc:
        fail("added_mass", str(exc))
    return params


def load_vessel(path_or_name="otter"):
    """Load a vessel parameter file; bare names resolve to shipped files."""
    p = Path(str(path_or_name))
    if p.suffix in (".yaml", ".yml") or p.exists():
        return parse_vessel(p.read_text(), str(p))
    ref = resources.files("liempc") / "data" / f"{path_or_name}.yaml"
    return parse_vessel(ref.read_text(), f"{path_or_name}.yaml")


def dump_vessel(params):
    """Serialize to the parameter-file format (inverse of parse_vessel)."""
    masked = [[int(i), int(j)] for i, j in zip(*np.nonzero(params.am_mask == 0))]
    d = {
        "name": params.name, "mass": float(params.mass), "cog": params.cog.tolist(),
        "inertia": params.inertia.tolist(), "added_mass": params.added_mass.tolist(),
        "damping_linear": params.damping_linear.tolist(),
        "damping_quadratic": params.damping_quadratic.tolist(),
        "restoring": params.restoring.tolist(), "lever_arm": float(params.lever_arm),
        "thrust_coeff_pos": float(params.thrust_coeff_pos),
        "thrust_coeff_neg": float(params.thrust_coeff_neg),
        "thrust_limits": list(params.thrust_limits), "coriolis_am_mask": masked,
    }
    return yaml.safe_dump(d, sort_keys=False)
