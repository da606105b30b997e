"""Engagement construction, target maneuvers, termination, and statistics.

Episodes start with the missile at the frame origin at a reference altitude
of 200 km and the target placed 50-55 km away in a skewed head-on corridor.
The target flies at 4000 m/s roughly toward the missile; the missile flies
at 3000 m/s along the gravity-corrected collision-triangle direction, then
both its velocity and attitude are perturbed by the drawn pointing errors.

Angle conventions (the repo's convention, validated by the coast oracle):
the target position direction uses polar angle theta from +z and azimuth phi
from +x; the target velocity is tilted off the target-to-missile line by
beta (in the horizontal plane of that line) and alpha (out of plane).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import dynamics, fastpath, quat, seeker

MISSILE_SPEED_MPS = 3000.0
TARGET_SPEED_MPS = 4000.0
RANGE_LO_M = 50_000.0
RANGE_HI_M = 55_000.0
POLAR_LO_RAD = math.radians(80.0)
POLAR_HI_RAD = math.radians(100.0)
AZIMUTH_MAX_RAD = math.radians(10.0)
VEL_ANGLE_MAX_RAD = math.radians(10.0)
POINTING_ERR_MAX_RAD = math.radians(5.0)
TARGET_ACCEL_MAX = 5.0 * dynamics.G_REF
COM_PCT_MAX = 0.025
ENGAGEMENT_ALTITUDE_M = 200_000.0

FOV_HALF_ANGLE_DEFAULT_RAD = math.radians(30.0)
OMEGA_LIMIT_RADPS = 12.0

MANEUVER_NONE = 0
MANEUVER_BANG_BANG = 1
MANEUVER_VERTICAL_S = 2

# seed-stream tags for the per-episode substreams
STREAM_SCENARIO = 0
STREAM_SCALE_FACTORS = 1
STREAM_NOISE = 2


@dataclass(frozen=True)
class ScenarioDraw:
    """One episode's sampled initial conditions and maneuver schedule."""

    range_m: float
    polar_rad: float
    azimuth_rad: float
    beta_rad: float
    alpha_rad: float
    heading_err_rad: float
    attitude_err_rad: float
    heading_clock_rad: float
    attitude_clock_rad: float
    accel_max: float
    maneuver_kind: int
    maneuver_start_s: float
    maneuver_param_s: float
    maneuver_dir: tuple[float, float, float]
    com_pct: tuple[float, float, float]

    @property
    def maneuver_tuple(self) -> tuple:
        """Packed form consumed by the fused integrator."""
        return (self.maneuver_kind, self.accel_max, self.maneuver_start_s,
                self.maneuver_param_s, *self.maneuver_dir)


@dataclass
class EpisodeRecord:
    """Outcome of one episode."""

    case_id: int
    episode_index: int
    miss_m: float
    fuel_used_kg: float
    reason: str
    duration_s: float
    clamp_events: int = 0
    trajectory: dict | None = None

    @property
    def violated(self) -> bool:
        return self.reason in ("fov", "omega", "fuel", "fault")


def episode_rngs(master_seed: int, case_id: int, episode_index: int):
    """Three independent generators per episode: scenario, factors, noise.

    Only the scale-factor stream is keyed by the case id, so runs that
    differ only in case share engagement geometry and sensor noise
    episode for episode: cross-case comparisons are paired."""

    def stream(tag, with_case=False):
        # two's-complement fold keeps the sentinel case id seedable
        ids = (master_seed, case_id & 0xFFFFFFFF, episode_index, tag) \
            if with_case else (master_seed, episode_index, tag)
        return np.random.default_rng(np.random.SeedSequence(ids))

    return (stream(STREAM_SCENARIO),
            stream(STREAM_SCALE_FACTORS, with_case=True),
            stream(STREAM_NOISE))


def sample_scenario(rng: np.random.Generator) -> ScenarioDraw:
    """Draw an episode's engagement parameters.  Draw order is fixed."""
    range_m = rng.uniform(RANGE_LO_M, RANGE_HI_M)
    polar = rng.uniform(POLAR_LO_RAD, POLAR_HI_RAD)
    azimuth = rng.uniform(-AZIMUTH_MAX_RAD, AZIMUTH_MAX_RAD)
    beta = rng.uniform(-VEL_ANGLE_MAX_RAD, VEL_ANGLE_MAX_RAD)
    alpha = rng.uniform(-VEL_ANGLE_MAX_RAD, VEL_ANGLE_MAX_RAD)
    heading_err = rng.uniform(0.0, POINTING_ERR_MAX_RAD)
    attitude_err = rng.uniform(0.0, POINTING_ERR_MAX_RAD)
    heading_clock = rng.uniform(0.0, 2.0 * math.pi)
    attitude_clock = rng.uniform(0.0, 2.0 * math.pi)
    accel_max = rng.uniform(0.0, TARGET_ACCEL_MAX)
    if rng.uniform() < 0.5:
        kind = MANEUVER_BANG_BANG
        start = rng.uniform(0.0, 6.0)
        param = rng.uniform(1.0, 4.0)
        raw = rng.standard_normal(3)
        direction = tuple(raw / np.linalg.norm(raw))
    else:
        kind = MANEUVER_VERTICAL_S
        start = rng.uniform(1.0, 5.0)
        param = rng.uniform(1.0, 5.0)
        direction = (0.0, 0.0, 1.0)
    com_pct = tuple(rng.uniform(-COM_PCT_MAX, COM_PCT_MAX, size=3))
    return ScenarioDraw(range_m, polar, azimuth, beta, alpha, heading_err,
                        attitude_err, heading_clock, attitude_clock,
                        accel_max, kind, start, param, direction, com_pct)


def _perp_basis(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # any stable orthonormal pair spanning the plane normal to u
    helper = np.array([0.0, 0.0, 1.0])
    if abs(u @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    p1 = np.cross(u, helper)
    p1 /= np.linalg.norm(p1)
    return p1, np.cross(u, p1)


def collision_triangle(r0: np.ndarray, v_t: np.ndarray,
                       missile_speed: float) -> tuple[np.ndarray, float]:
    """Constant-velocity intercept direction and time to go.

    Solves for s = 1/t_go in |r0*s + v_t| = missile_speed and keeps the
    larger root (the sooner intercept).  Raises ValueError when the target
    cannot be reached (receding faster than the missile can chase).
    """
    a = float(r0 @ r0)
    b = 2.0 * float(r0 @ v_t)
    c = float(v_t @ v_t) - missile_speed ** 2
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise ValueError("no collision-triangle solution")
    s = (-b + math.sqrt(disc)) / (2.0 * a)
    if s <= 0.0:
        raise ValueError("intercept lies in the past")
    u = (r0 * s + v_t) / missile_speed
    return u, 1.0 / s


def gravity_corrected_triangle(r0: np.ndarray, v_t: np.ndarray,
                               missile_speed: float,
                               gravity: dynamics.GravityModel,
                               r_m: np.ndarray,
                               iterations: int = 8) -> tuple[np.ndarray, float]:
    """Collision triangle with a ballistic-drop correction.

    Fixed-point iteration: lead the straight-line aim point by the relative
    gravity displacement accumulated over the current time-to-go estimate,
    evaluating both accelerations at the initial positions.
    """
    g_m = gravity.accel(r_m)
    g_t = gravity.accel(r_m + r0)
    dg = g_t - g_m
    u, t_go = collision_triangle(r0, v_t, missile_speed)
    for _ in range(iterations):
        r_eff = r0 + 0.5 * dg * t_go ** 2
        u, t_go = collision_triangle(r_eff, v_t, missile_speed)
    return u, t_go


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    return quat.rotate(quat.from_axis_angle(axis, angle), v)


def init_episode(draw: ScenarioDraw, gravity: dynamics.GravityModel
                 ) -> tuple[dynamics.MissileState, dynamics.TargetState]:
    """Build the initial missile and target states for a draw."""
    st, ct = math.sin(draw.polar_rad), math.cos(draw.polar_rad)
    sp, cp = math.sin(draw.azimuth_rad), math.cos(draw.azimuth_rad)
    d_hat = np.array([st * cp, st * sp, ct])
    r_t = draw.range_m * d_hat

    # target velocity: head-on base direction tilted by (beta, alpha)
    e1 = -d_hat
    e2, e3 = _perp_basis(e1)
    ca, sa = math.cos(draw.alpha_rad), math.sin(draw.alpha_rad)
    cb, sb = math.cos(draw.beta_rad), math.sin(draw.beta_rad)
    v_t = TARGET_SPEED_MPS * (ca * (cb * e1 + sb * e2) + sa * e3)

    u_hat, _ = gravity_corrected_triangle(r_t, v_t, MISSILE_SPEED_MPS,
                                          gravity, np.zeros(3))

    # heading error: tip the velocity off the solution about a random
    # perpendicular clock angle
    p1, p2 = _perp_basis(u_hat)
    h_axis = math.cos(draw.heading_clock_rad) * p1 \
        + math.sin(draw.heading_clock_rad) * p2
    v_m = MISSILE_SPEED_MPS * _rotate_about(u_hat, h_axis,
                                            draw.heading_err_rad)

    # attitude: boresight on the LOS via the minimal rotation from +x, then
    # tipped off by the attitude error about a body-frame clock angle
    los = d_hat
    x_hat = np.array([1.0, 0.0, 0.0])
    cross = np.cross(x_hat, los)
    cn = np.linalg.norm(cross)
    if cn < 1e-12:
        q0 = quat.IDENTITY.copy() if los[0] > 0 else \
            quat.from_axis_angle([0, 0, 1], math.pi)
    else:
        q0 = quat.from_axis_angle(cross / cn,
                                  math.atan2(cn, float(x_hat @ los)))
    tip_axis = np.array([0.0, math.cos(draw.attitude_clock_rad),
                         math.sin(draw.attitude_clock_rad)])
    q = quat.qmul(q0, quat.from_axis_angle(tip_axis, draw.attitude_err_rad))

    r_com_full = np.array([
        draw.com_pct[0] * dynamics.CYL_HEIGHT_M / 2.0,
        draw.com_pct[1] * dynamics.CYL_RADIUS_M,
        draw.com_pct[2] * dynamics.CYL_RADIUS_M,
    ])
    missile = dynamics.MissileState(
        r=np.zeros(3), v=v_m, q=quat.normalize(q), omega=np.zeros(3),
        m=dynamics.WET_MASS_KG, F_B=np.zeros(3), L_B=np.zeros(3),
        thrust_mag=0.0, r_com_full=r_com_full, m_prev=dynamics.WET_MASS_KG)
    target = dynamics.TargetState(r=r_t, v=v_t)
    return missile, target


def target_accel_command(draw: ScenarioDraw, t: float,
                         v_t: np.ndarray) -> np.ndarray:
    """Lateral target acceleration at time t (orthogonal to velocity)."""
    ax, ay, az = fastpath.maneuver_accel(draw.maneuver_tuple, t,
                                         float(v_t[0]), float(v_t[1]),
                                         float(v_t[2]))
    return np.array([ax, ay, az])


def check_termination(missile: dynamics.MissileState,
                      target: dynamics.TargetState,
                      fov_half_angle: float, t: float) -> str | None:
    """First triggered constraint, or None.

    Checks the true body look angles against the field-of-view half-angle,
    the rotational-velocity limit, and fuel exhaustion.  Intercept
    completion is detected by the integrator's closest-approach logic, not
    here.
    """
    theta_u, theta_v = seeker.los_body_angles(missile.r, target.r, missile.q)
    if abs(theta_u) > fov_half_angle or abs(theta_v) > fov_half_angle:
        return "fov"
    if np.max(np.abs(missile.omega)) > OMEGA_LIMIT_RADPS:
        return "omega"
    if missile.m <= dynamics.DRY_MASS_KG:
        return "fuel"
    return None


@dataclass(frozen=True)
class StatsRow:
    """Aggregate statistics over a batch of episodes (one results row)."""

    case_id: int
    n: int
    hit50_pct: float
    hit100_pct: float
    fuel_mu_kg: float
    fuel_sigma_kg: float
    violation_pct: float
    mean_miss_m: float
    median_miss_m: float


def aggregate_records(records: list[EpisodeRecord]) -> StatsRow:
    """Population-sigma statistics in the results-table column order."""
    if not records:
        raise ValueError("no episodes to aggregate")
    misses = np.array([r.miss_m for r in records])
    fuels = np.array([r.fuel_used_kg for r in records])
    violations = np.array([r.violated for r in records])
    n = len(records)
    return StatsRow(
        case_id=records[0].case_id,
        n=n,
        hit50_pct=100.0 * float(np.mean(misses < 0.5)),
        hit100_pct=100.0 * float(np.mean(misses < 1.0)),
        fuel_mu_kg=float(np.mean(fuels)),
        fuel_sigma_kg=float(np.std(fuels)),
        violation_pct=100.0 * float(np.mean(violations)),
        mean_miss_m=float(np.mean(misses)),
        median_miss_m=float(np.median(misses)),
    )


def monte_carlo(case_id: int, n_episodes: int, master_seed: int,
                params=None, mode: str = "deploy", config=None,
                episode_offset: int = 0, collect_records: bool = False):
    """Run a batch of independent episodes and aggregate statistics.

    ``params`` enables scale-factor compensation using the given network;
    ``None`` runs the uncompensated baseline.  Episode seeds derive from
    (master_seed, case, episode index), so batches are order-independent
    and reproducible.
    """
    from . import trainer

    cfg = config or trainer.default_run_options()
    records = []
    for i in range(n_episodes):
        rec, _ = trainer.run_episode(case_id, episode_offset + i,
                                     master_seed, params=params, mode=mode,
                                     options=cfg)
        records.append(rec)
    stats = aggregate_records(records)
    return (stats, records) if collect_records else stats
