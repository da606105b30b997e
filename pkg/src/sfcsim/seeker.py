"""Strapdown seeker observation model.

The seeker reports the target's body-frame elevation/azimuth angles and the
vehicle rotational velocity, each corrupted by a multiplicative scale-factor
error and additive Gaussian noise:

    measured_angle = (1 + eps_theta) * true_angle + noise
    measured_rate  = (1 + eps_omega) * true_rate  + noise   (component-wise)

Angle scale factors are either held constant over an episode or made
angle-dependent through a sinusoid in the true look angle (amplitude,
wavenumber, and phase drawn per episode).  The rotational-velocity scale
factor is a per-episode constant 3-vector.  Measured angles pass through a
first-order lag filter updated at the navigation rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat

SIGMA_THETA_DEFAULT = 1e-3
SIGMA_OMEGA_DEFAULT = 1e-3
TAU_ANGLE_FILTER_S = 0.02
BORESIGHT = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class ScaleFactorConfig:
    """Per-case bounds for the episode scale-factor draws.

    ``lad`` selects the angle-dependent sinusoidal model; otherwise the angle
    scale factors are constants drawn from [a_theta_lo, a_theta_hi].  The
    rotational-velocity scale factor components are drawn from
    [a_omega_lo, a_omega_hi] in both modes.  Degenerate lo == hi bounds pin
    the draw (used by the fixed-amplitude case).
    """

    case_id: int
    lad: bool
    a_theta_lo: float
    a_theta_hi: float
    a_omega_lo: float
    a_omega_hi: float
    k_lo: float = 0.5
    k_hi: float = 3.0
    phi_lo: float = -np.pi
    phi_hi: float = np.pi

    def __post_init__(self):
        if self.a_theta_lo > self.a_theta_hi or self.a_omega_lo > self.a_omega_hi:
            raise ValueError("bounds must be ordered lo <= hi")


#: Evaluation case matrix: amplitude bounds by case id.
CASES: dict[int, ScaleFactorConfig] = {
    0: ScaleFactorConfig(0, False, -1e-4, 1e-4, -1e-4, 1e-4),
    1: ScaleFactorConfig(1, False, -1e-3, 1e-3, -1e-3, 1e-3),
    2: ScaleFactorConfig(2, False, -5e-3, 5e-3, -5e-3, 5e-3),
    3: ScaleFactorConfig(3, True, 0.0, 5e-3, -5e-3, 5e-3),
    4: ScaleFactorConfig(4, False, -1e-2, 1e-2, -1e-2, 1e-2),
    5: ScaleFactorConfig(5, True, 0.0, 1e-2, -1e-2, 1e-2),
    6: ScaleFactorConfig(6, True, 5e-3, 5e-3, 5e-3, 5e-3),
    # harness-only sentinel: error-free seeker for tuning and sanity gates
    -1: ScaleFactorConfig(-1, False, 0.0, 0.0, 0.0, 0.0),
}


@dataclass
class ScaleFactorDraw:
    """Episode-constant scale-factor parameters sampled from a config."""

    lad: bool
    eps_omega: np.ndarray
    # angle-dependent mode
    a_u: float = 0.0
    a_v: float = 0.0
    k_u: float = 1.0
    k_v: float = 1.0
    phi_u: float = 0.0
    phi_v: float = 0.0
    # constant mode
    eps_u: float = 0.0
    eps_v: float = 0.0

    def epsilon_theta(self, theta_u: float, theta_v: float) -> tuple[float, float]:
        """Angle scale factors at the given true look angles."""
        if not self.lad:
            return self.eps_u, self.eps_v
        return angle_epsilon(self, theta_u, theta_v)

    def epsilon_vector(self, theta_u: float, theta_v: float) -> np.ndarray:
        """Ground-truth 5-vector (angle factors, then rate factors)."""
        eu, ev = self.epsilon_theta(theta_u, theta_v)
        return np.array([eu, ev, *self.eps_omega])


@dataclass
class Observation:
    """Measured seeker output: two filtered angles and three raw rates."""

    theta_u: float
    theta_v: float
    omega: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.theta_u, self.theta_v, *self.omega])


def los_body_angles(r_m: np.ndarray, r_t: np.ndarray,
                    q: np.ndarray) -> tuple[float, float]:
    """True body-frame look angles of the target.

    The line-of-sight unit vector is rotated into the body frame and
    projected on the body y (elevation) and z (azimuth) axes.
    """
    rel = r_t - r_m
    dist = np.linalg.norm(rel)
    if dist == 0.0:
        raise ValueError("zero-range line of sight is undefined")
    los_b = quat.dcm_inertial_to_body(q) @ (rel / dist)
    return float(np.arcsin(np.clip(los_b[1], -1, 1))), \
        float(np.arcsin(np.clip(los_b[2], -1, 1)))


def sample_scale_factors(config: ScaleFactorConfig,
                         rng: np.random.Generator) -> ScaleFactorDraw:
    """Draw the episode's scale-factor parameters.

    Draw order is fixed (angle parameters, then the rate vector) so episode
    streams are reproducible.
    """
    if config.lad:
        a_u = rng.uniform(config.a_theta_lo, config.a_theta_hi)
        a_v = rng.uniform(config.a_theta_lo, config.a_theta_hi)
        k_u = rng.uniform(config.k_lo, config.k_hi)
        k_v = rng.uniform(config.k_lo, config.k_hi)
        phi_u = rng.uniform(config.phi_lo, config.phi_hi)
        phi_v = rng.uniform(config.phi_lo, config.phi_hi)
        eps_omega = rng.uniform(config.a_omega_lo, config.a_omega_hi, size=3)
        return ScaleFactorDraw(lad=True, eps_omega=eps_omega, a_u=a_u,
                               a_v=a_v, k_u=k_u, k_v=k_v, phi_u=phi_u,
                               phi_v=phi_v)
    eps_u = rng.uniform(config.a_theta_lo, config.a_theta_hi)
    eps_v = rng.uniform(config.a_theta_lo, config.a_theta_hi)
    eps_omega = rng.uniform(config.a_omega_lo, config.a_omega_hi, size=3)
    return ScaleFactorDraw(lad=False, eps_omega=eps_omega, eps_u=eps_u,
                           eps_v=eps_v)


def angle_epsilon(draw: ScaleFactorDraw, theta_u: float,
                  theta_v: float) -> tuple[float, float]:
    """Angle-dependent scale factors: A*cos(2*pi*theta/k + phi) per axis."""
    eps_u = draw.a_u * np.cos(2.0 * np.pi * theta_u / draw.k_u + draw.phi_u)
    eps_v = draw.a_v * np.cos(2.0 * np.pi * theta_v / draw.k_v + draw.phi_v)
    return float(eps_u), float(eps_v)


def lag_poly(dt: float, tau: float) -> float:
    # RK4 stability polynomial of dx/dt = -x/tau over one step
    a = dt / tau
    return 1.0 - a + a * a / 2.0 - a ** 3 / 6.0 + a ** 4 / 24.0


def observe(r_m, r_t, q, omega, draw: ScaleFactorDraw, sigma_theta: float,
            sigma_omega: float, tau_theta: float, dt: float,
            filter_state: np.ndarray | None, rng: np.random.Generator):
    """One seeker measurement.

    Applies the scale factors at the true look angles, adds Gaussian noise,
    then passes the two angles through the first-order filter (one RK4 lag
    update per navigation step; the first sample initializes the filter).
    ``tau_theta = 0`` bypasses the filter.  Rates are not filtered.

    Returns (observation, filter_state', (theta_u_true, theta_v_true)).
    """
    theta_u, theta_v = los_body_angles(r_m, r_t, q)
    eps_u, eps_v = draw.epsilon_theta(theta_u, theta_v)
    noise_theta = rng.normal(0.0, sigma_theta, size=2) if sigma_theta > 0 \
        else np.zeros(2)
    noise_omega = rng.normal(0.0, sigma_omega, size=3) if sigma_omega > 0 \
        else np.zeros(3)
    raw = np.array([(1.0 + eps_u) * theta_u + noise_theta[0],
                    (1.0 + eps_v) * theta_v + noise_theta[1]])
    omega_meas = (1.0 + draw.eps_omega) * np.asarray(omega) + noise_omega

    if tau_theta <= 0.0:
        filtered = raw
    elif filter_state is None:
        filtered = raw
    else:
        r4 = lag_poly(dt, tau_theta)
        filtered = raw + (filter_state - raw) * r4
    obs = Observation(theta_u=float(filtered[0]), theta_v=float(filtered[1]),
                      omega=omega_meas)
    return obs, filtered, (theta_u, theta_v)
