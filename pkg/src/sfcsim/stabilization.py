"""Scale-factor compensation and computational stabilization.

Compensation divides each measured channel by (1 + estimated scale factor),
the exact inverse of the distortion when the estimate is right.  The
compensated rates drive an onboard attitude-change quaternion ``dq``
(integrated at the fixed 20 ms navigation rate, reset to identity each
episode).  Stabilization reconstructs the line-of-sight direction from the
compensated angles and rotates it back to the episode-start inertial frame,
so that body rotation does not masquerade as target motion.  Any residual
scale-factor error leaks body rotation into the stabilized angles; that is
the parasitic feedback this package exists to study.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .seeker import Observation

DQ_UPDATE_DT_S = 0.02
EPS_HAT_CLAMP = 0.45


@dataclass
class CompensatedObservation:
    theta_u: float
    theta_v: float
    omega: np.ndarray
    clamped: bool = False

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.theta_u, self.theta_v, *self.omega])


@dataclass
class StabilizerState:
    """Integrated attitude change since episode start, identity at reset."""

    dq: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())


def compensate(obs: Observation, eps_hat: np.ndarray) -> CompensatedObservation:
    """Divide each channel by (1 + estimated scale factor).

    Estimates that would bring a denominator near zero are clamped to
    +/-EPS_HAT_CLAMP and flagged; a sane estimator never emits such values,
    so the flag surfaces divergence rather than being a normal path.
    """
    eps_hat = np.asarray(eps_hat, dtype=float)
    clamped = bool(np.any(np.abs(1.0 + eps_hat) <= 0.5))
    if clamped:
        eps_hat = np.clip(eps_hat, -EPS_HAT_CLAMP, EPS_HAT_CLAMP)
    return CompensatedObservation(
        theta_u=float(obs.theta_u / (1.0 + eps_hat[0])),
        theta_v=float(obs.theta_v / (1.0 + eps_hat[1])),
        omega=np.asarray(obs.omega) / (1.0 + eps_hat[2:5]),
        clamped=clamped)


def integrate_dq(state: StabilizerState, omega_bar: np.ndarray,
                 dt: float = DQ_UPDATE_DT_S) -> StabilizerState:
    """Advance dq one RK4 step driven by the compensated rates."""
    return StabilizerState(dq=quat.rk4_step(state.dq, omega_bar, dt))


def stabilize(theta_u_bar: float, theta_v_bar: float,
              dq: np.ndarray) -> tuple[float, float, bool]:
    """Rotate compensated look angles to the episode-start frame.

    Reconstructs the unit line-of-sight from the two angles (x component by
    normalization; its radicand can only go negative under extreme estimator
    error near the field-of-view edge, in which case it is clamped to zero
    and flagged), applies the inverse of the integrated attitude change, and
    re-projects.  Returns (theta_u_s, theta_v_s, clamped).
    """
    y = np.sin(theta_u_bar)
    z = np.sin(theta_v_bar)
    rad = 1.0 - y * y - z * z
    clamped = rad < 0.0
    x = np.sqrt(max(rad, 0.0))
    los_s = quat.rot_body_to_inertial(dq) @ np.array([x, y, z])
    theta_u_s = float(np.arcsin(np.clip(los_s[1], -1.0, 1.0)))
    theta_v_s = float(np.arcsin(np.clip(los_s[2], -1.0, 1.0)))
    return theta_u_s, theta_v_s, bool(clamped)
