"""SO(3)/SE(3) kernel: hat/vee maps, exp/log, adjoints and the left error.

Twists use the Lie ordering ``xi = [omega; v]`` (angular first). Fossen
ordering ``nu = [v; omega]`` is handled by :func:`liempc.hydro.reorder`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

SMALL_ANGLE = 1e-5
ORTHO_TOL = 1e-9
# pi - theta below this leaves the rotation axis sign undetermined
BRANCH_EPS = 1e-6
GIMBAL_MARGIN = 1e-6


class BranchError(ValueError):
    """Logarithm requested at (or numerically at) a rotation angle of pi."""


class GimbalLockError(ValueError):
    """Euler-angle conversion requested at |pitch| = pi/2."""


def hat3(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def vee3(S, tol=ORTHO_TOL):
    S = np.asarray(S, dtype=float)
    if np.max(np.abs(S + S.T)) > tol:
        raise ValueError("vee3: matrix is not skew-symmetric")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def hat6(xi):
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = hat3(xi[:3])
    out[:3, 3] = xi[3:]
    return out


def vee6(X, tol=ORTHO_TOL):
    X = np.asarray(X, dtype=float)
    if np.max(np.abs(X[3])) > tol:
        raise ValueError("vee6: bottom row of an se(3) matrix must be zero")
    return np.concatenate([vee3(X[:3, :3], tol), X[:3, 3]])


def _so3_coeffs(theta):
    """Return sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return (1.0 - t2 / 6.0 + t2 * t2 / 120.0,
                0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    s, c = math.sin(theta), math.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def exp_so3(omega):
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    a, b, _ = _so3_coeffs(theta)
    W = hat3(omega)
    return np.eye(3) + a * W + b * (W @ W)


def log_so3(R):
    """Principal-branch logarithm of a rotation matrix as a 3-vector."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_t)
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        # theta / (2 sin theta) ~ 1/2 + theta^2/12
        return (0.5 + theta * theta / 12.0) * skew
    if math.pi - theta < BRANCH_EPS:
        raise BranchError(f"log_so3: rotation angle {theta!r} is at the branch cut pi")
    if theta < 3.0:
        return theta / (2.0 * math.sin(theta)) * skew
    # near pi: recover the axis from the symmetric part, sign from the skew part
    aat = ((R + R.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
    i = int(np.argmax(np.diag(aat)))
    axis = aat[i] / math.sqrt(aat[i, i])
    if axis @ skew < 0.0:
        axis = -axis
    return theta * axis


def left_jacobian_so3(omega):
    theta = float(np.linalg.norm(omega))
    _, b, c = _so3_coeffs(theta)
    W = hat3(omega)
    return np.eye(3) + b * W + c * (W @ W)


def left_jacobian_inv_so3(omega):
    theta = float(np.linalg.norm(omega))
    W = hat3(omega)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        k = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        a, b, _ = _so3_coeffs(theta)
        k = (1.0 - a / (2.0 * b)) / theta**2
    return np.eye(3) - 0.5 * W + k * (W @ W)


@dataclass(frozen=True)
class Pose:
    """Element of SE(3): rotation ``R`` (3x3) and position ``p`` (m)."""

    R: np.ndarray
    p: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def translation(cls, p):
        return cls(np.eye(3), np.asarray(p, dtype=float))

    @classmethod
    def from_matrix(cls, X, tol=ORTHO_TOL):
        X = np.asarray(X, dtype=float)
        if np.max(np.abs(X[3] - [0.0, 0.0, 0.0, 1.0])) > tol:
            raise ValueError("homogeneous matrix must have last row (0, 0, 0, 1)")
        return cls(X[:3, :3].copy(), X[:3, 3].copy())

    @property
    def matrix(self):
        X = np.eye(4)
        X[:3, :3] = self.R
        X[:3, 3] = self.p
        return X

    def inverse(self):
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.p)

    def __matmul__(self, other):
        return Pose(self.R @ other.R, self.R @ other.p + self.p)

    def is_valid(self, tol=ORTHO_TOL):
        return (np.linalg.norm(self.R @ self.R.T - np.eye(3)) <= tol
                and abs(np.linalg.det(self.R) - 1.0) <= tol)


def exp_se3(xi):
    xi = np.asarray(xi, dtype=float)
    omega, v = xi[:3], xi[3:]
    return Pose(exp_so3(omega), left_jacobian_so3(omega) @ v)


def log_se3(X):
    omega = log_so3(X.R)
    return np.concatenate([omega, left_jacobian_inv_so3(omega) @ X.p])


def adjoint(X):
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = X.R
    Ad[3:, 3:] = X.R
    Ad[3:, :3] = hat3(X.p) @ X.R
    return Ad


def little_adjoint(xi):
    xi = np.asarray(xi, dtype=float)
    W = hat3(xi[:3])
    ad = np.zeros((6, 6))
    ad[:3, :3] = W
    ad[3:, 3:] = W
    ad[3:, :3] = hat3(xi[3:])
    return ad


@dataclass(frozen=True)
class LeftError:
    group: Pose
    algebra: np.ndarray


def left_error(X_d, X):
    """Left-invariant tracking error ``X_d^-1 X`` and its log coordinates."""
    Psi = X_d.inverse() @ X
    return LeftError(Psi, log_se3(Psi))


def project_to_so3(R):
    """Closest rotation in Frobenius norm (polar decomposition)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def repair_pose(X, tol=1e-7):
    """Re-orthonormalize ``X.R`` if it drifted by more than ``tol``."""
    drift = np.linalg.norm(X.R @ X.R.T - np.eye(3))
    if drift <= tol:
        return X
    log.info("orthonormality repair: drift %.3e > %.1e", drift, tol)
    return Pose(project_to_so3(X.R), X.p)


def rotation_zyx(phi, theta, psi):
    """Body-to-NED rotation ``Rz(psi) Ry(theta) Rx(phi)``."""
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    return np.array([
        [cpsi * cth, -spsi * cphi + cpsi * sth * sphi, spsi * sphi + cpsi * cphi * sth],
        [spsi * cth, cpsi * cphi + sphi * sth * spsi, -cpsi * sphi + sth * spsi * cphi],
        [-sth, cth * sphi, cth * cphi],
    ])


def euler_rate_matrix(phi, theta):
    """T(Theta) mapping body angular rates [p, q, r] to Euler-angle rates."""
    if abs(theta) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta!r} too close to +-pi/2")
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, tth = math.cos(theta), math.tan(theta)
    return np.array([[1.0, sphi * tth, cphi * tth],
                     [0.0, cphi, -sphi],
                     [0.0, sphi / cth, cphi / cth]])


def euler_to_pose(eta):
    eta = np.asarray(eta, dtype=float)
    return Pose(rotation_zyx(*eta[3:6]), eta[:3].copy())


def pose_to_euler(X, yaw_hint=None):
    """Inverse of :func:`euler_to_pose`.

    ``yaw_hint`` selects the yaw branch closest to a previous value so that
    yaw stays continuous over long turning runs.
    """
    R = X.R
    theta = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    if abs(theta) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {theta!r} too close to +-pi/2")
    phi = math.atan2(R[2, 1], R[2, 2])
    psi = math.atan2(R[1, 0], R[0, 0])
    if yaw_hint is not None:
        psi = yaw_hint + wrap_angle(psi - yaw_hint)
    return np.concatenate([X.p, [phi, theta, psi]])


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi
