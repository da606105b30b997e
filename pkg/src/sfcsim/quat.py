"""Quaternion algebra, scalar-first convention.

A quaternion ``q = (w, x, y, z)`` represents the rotation taking body-frame
vectors to the inertial frame: ``v_N = rot(q) @ v_B``.  The direction cosine
matrix mapping inertial to body is its transpose, ``dcm_inertial_to_body``.
The kinematic differential equation used throughout is

    dq/dt = 0.5 * q * (0, omega_B)

with ``omega_B`` the body-frame rotational velocity and ``*`` the Hamilton
product.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def qmul(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Hamilton product q*p, both scalar-first."""
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = p
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def qconj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def rot_body_to_inertial(q: np.ndarray) -> np.ndarray:
    """Rotation matrix R with v_N = R @ v_B."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def dcm_inertial_to_body(q: np.ndarray) -> np.ndarray:
    """DCM C with v_B = C @ v_N; the transpose of rot_body_to_inertial."""
    return rot_body_to_inertial(q).T


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a body-frame vector into the inertial frame."""
    return rot_body_to_inertial(q) @ v


def deriv(q: np.ndarray, omega_b: np.ndarray) -> np.ndarray:
    """Kinematic rate dq/dt = 0.5 * q * (0, omega_B)."""
    return 0.5 * qmul(q, np.concatenate(([0.0], omega_b)))


def rk4_step(q: np.ndarray, omega_b: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step of the kinematics with omega_B held constant; renormalized."""
    k1 = deriv(q, omega_b)
    k2 = deriv(q + 0.5 * dt * k1, omega_b)
    k3 = deriv(q + 0.5 * dt * k2, omega_b)
    k4 = deriv(q + dt * k3, omega_b)
    return normalize(q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def angle_between(q1: np.ndarray, q2: np.ndarray) -> float:
    """Rotation angle in radians taking q1 to q2."""
    dot = abs(float(np.dot(q1, q2)))
    return 2.0 * np.arccos(min(1.0, dot))
