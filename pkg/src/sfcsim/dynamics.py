"""Rigid-body dynamics: thruster wrench with ignition lag, rotational and
translational equations of motion, time-varying mass properties, gravity.

The missile is a cylinder spinning-axis-along-body-x with wet mass 50 kg and
dry mass 25 kg.  Four divert thrusters (5000 N, through the centroid) and six
attitude-control pairs (125 N each) are switched on or off by the autopilot.
Commanded force and torque pass through a first-order ignition lag before
acting on the body.  All integrators are fixed-step RK4.

Each ``*_step`` function advances one state block over a single substep with
the other blocks' values frozen at their substep-start values;
``step_missile`` composes them in a documented order.  ``fastpath`` mirrors
that composition with scalar arithmetic and is equivalence-tested against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import quat

# Vehicle geometry and mass limits
CYL_HEIGHT_M = 1.0
CYL_RADIUS_M = 0.25
WET_MASS_KG = 50.0
DRY_MASS_KG = 25.0
FUEL_CAPACITY_KG = WET_MASS_KG - DRY_MASS_KG

DIVERT_THRUST_N = 5000.0
ACS_THRUST_N = 125.0
TAU_THRUST_S = 0.02

G_REF = 9.81
MU_EARTH = 3.986004418e14
R_EARTH_M = 6371.0e3

# Principal moments per unit mass for the cylinder: (x, y, z) body axes
_J_COEF = np.array([
    CYL_RADIUS_M**2 / 2.0,
    (3.0 * CYL_RADIUS_M**2 + CYL_HEIGHT_M**2) / 12.0,
    (3.0 * CYL_RADIUS_M**2 + CYL_HEIGHT_M**2) / 12.0,
])


def cylinder_inertia(m: float) -> np.ndarray:
    """Inertia tensor (3x3, body axes) of the vehicle at mass ``m``."""
    return np.diag(m * _J_COEF)


@dataclass(frozen=True)
class GravityModel:
    """Gravitational acceleration field in engagement-frame coordinates.

    mode "point":   inverse-square field of a point mass whose center sits at
                    ``center`` (engagement frame); default places the frame
                    origin at a configurable altitude with +z up.
    mode "uniform": constant ``g_uniform`` everywhere.
    mode "off":     zero field, for unit tests and coast oracles.
    """

    mode: str = "point"
    mu: float = MU_EARTH
    center: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -(R_EARTH_M + 200e3)]))
    g_uniform: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def accel(self, r: np.ndarray) -> np.ndarray:
        if self.mode == "off":
            return np.zeros(3)
        if self.mode == "uniform":
            return self.g_uniform
        d = r - self.center
        return -self.mu * d / np.linalg.norm(d) ** 3


def gravity_point(altitude_m: float = 200e3) -> GravityModel:
    return GravityModel(
        mode="point",
        center=np.array([0.0, 0.0, -(R_EARTH_M + altitude_m)]))


def gravity_off() -> GravityModel:
    return GravityModel(mode="off")


def gravity_uniform(g: np.ndarray) -> GravityModel:
    return GravityModel(mode="uniform", g_uniform=np.asarray(g, dtype=float))


@dataclass(frozen=True)
class ThrusterTable:
    """Body-frame thruster geometry: 16 rows of direction, position, thrust.

    Rows 0-3 are the divert thrusters (forces along -y, +y, +z, -z through
    the centroid).  Rows 4-15 are attitude-control thrusters operating in
    same-torque pairs; pair torques at zero center-of-mass offset:

        rows (4,5)   -> (-62.5, 0, 0) N*m      rows (6,7)   -> (+62.5, 0, 0)
        rows (8,9)   -> (0, +125, 0)           rows (10,11) -> (0, -125, 0)
        rows (12,13) -> (0, 0, -125)           rows (14,15) -> (0, 0, +125)
    """

    directions: np.ndarray
    positions: np.ndarray
    thrust: np.ndarray

    # Index groups used by the allocation logic
    DIVERT_NEG_Y = 0
    DIVERT_POS_Y = 1
    DIVERT_POS_Z = 2
    DIVERT_NEG_Z = 3
    PAIR_NEG_X = (4, 5)
    PAIR_POS_X = (6, 7)
    PAIR_POS_Y = (8, 9)
    PAIR_NEG_Y = (10, 11)
    PAIR_NEG_Z = (12, 13)
    PAIR_POS_Z = (14, 15)


def default_thruster_table() -> ThrusterTable:
    directions = np.array([
        [0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
    ])
    positions = np.array([
        [0.0, -0.25, 0.0],
        [0.0, 0.25, 0.0],
        [0.0, 0.0, 0.25],
        [0.0, 0.0, -0.25],
        [0.0, -0.25, 0.0],
        [0.0, 0.25, 0.0],
        [0.0, 0.0, 0.25],
        [0.0, 0.0, -0.25],
        [0.5, 0.0, -0.25],
        [-0.5, 0.0, 0.25],
        [0.5, 0.0, 0.25],
        [-0.5, 0.0, -0.25],
        [0.5, -0.25, 0.0],
        [-0.5, 0.25, 0.0],
        [0.5, 0.25, 0.0],
        [-0.5, -0.25, 0.0],
    ])
    thrust = np.array([DIVERT_THRUST_N] * 4 + [ACS_THRUST_N] * 12)
    return ThrusterTable(directions=directions, positions=positions,
                         thrust=thrust)


@dataclass
class MissileState:
    """Full rigid-body state plus lagged actuator levels.

    ``F_B``/``L_B`` are the lagged body force and torque actually acting on
    the vehicle; ``thrust_mag`` is the equally lagged sum of individual
    thruster force magnitudes, which drives fuel flow (attitude pairs burn
    fuel even though their net force cancels).  ``r_com_full`` is the
    center-of-mass offset reached at full fuel depletion; the instantaneous
    offset scales linearly with fuel used.  ``m_prev`` is the mass at the
    previous substep, used for the backward-difference inertia rate.
    """

    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    m: float
    F_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    L_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thrust_mag: float = 0.0
    r_com_full: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m_prev: float | None = None

    def __post_init__(self):
        if self.m_prev is None:
            self.m_prev = self.m

    @property
    def r_com(self) -> np.ndarray:
        return self.r_com_full * (WET_MASS_KG - self.m) / FUEL_CAPACITY_KG

    @property
    def J(self) -> np.ndarray:
        return cylinder_inertia(self.m)

    @property
    def fuel_used(self) -> float:
        return WET_MASS_KG - self.m


@dataclass
class TargetState:
    r: np.ndarray
    v: np.ndarray


def thruster_wrench(commands, table: ThrusterTable,
                    r_com: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Commanded body force and torque for a set of on/off flags.

    Force is the sum of active thruster forces; torque sums
    (position - r_com) x force over active thrusters.
    """
    commands = np.asarray(commands, dtype=bool)
    if commands.shape != (16,):
        raise ValueError("expected 16 on/off flags")
    forces = table.directions * table.thrust[:, None]
    active = forces[commands]
    arms = table.positions[commands] - r_com
    f = active.sum(axis=0) if active.size else np.zeros(3)
    torque = np.cross(arms, active).sum(axis=0) if active.size else np.zeros(3)
    return f, torque


def commanded_thrust_mag(commands, table: ThrusterTable) -> float:
    """Sum of force magnitudes over active thrusters (drives fuel flow)."""
    commands = np.asarray(commands, dtype=bool)
    return float(table.thrust[commands].sum())


def _rk4_linear_lag(x, x_cmd, tau: float, dt: float):
    """One RK4 step of dx/dt = (x_cmd - x)/tau."""
    def f(y):
        return (x_cmd - y) / tau
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lag_step(F_B, L_B, F_cmd, L_cmd, tau_u: float,
             dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Advance the lagged force/torque one RK4 substep toward the command."""
    return (_rk4_linear_lag(F_B, F_cmd, tau_u, dt),
            _rk4_linear_lag(L_B, L_cmd, tau_u, dt))


def euler_rotation_step(omega, J, Jdot, L_B, dt: float) -> np.ndarray:
    """RK4 step of J*domega/dt = -omega x (J omega) - Jdot omega + L_B."""
    def f(w):
        return np.linalg.solve(J, -np.cross(w, J @ w) - Jdot @ w + L_B)
    k1 = f(omega)
    k2 = f(omega + 0.5 * dt * k1)
    k3 = f(omega + 0.5 * dt * k2)
    k4 = f(omega + dt * k3)
    return omega + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def quaternion_step(q, omega, dt: float) -> np.ndarray:
    """RK4 step of the attitude kinematics; returns a renormalized quaternion."""
    return quat.rk4_step(q, omega, dt)


def rotational_step(q, omega, J, Jdot, L_B,
                    dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Jointly advance attitude and rotational velocity one RK4 step.

    The attitude kinematics and the rotational equations of motion are
    integrated as one coupled system (each RK4 stage evaluates the quaternion
    rate with that stage's rotational velocity).  Integrating them separately
    with frozen inputs is only first-order accurate in the coupling and
    visibly drifts the inertial angular momentum at tumble rates.
    """
    def f(qq, w):
        dq = quat.deriv(qq, w)
        dw = np.linalg.solve(J, -np.cross(w, J @ w) - Jdot @ w + L_B)
        return dq, dw

    k1q, k1w = f(q, omega)
    k2q, k2w = f(q + 0.5 * dt * k1q, omega + 0.5 * dt * k1w)
    k3q, k3w = f(q + 0.5 * dt * k2q, omega + 0.5 * dt * k2w)
    k4q, k4w = f(q + dt * k3q, omega + dt * k3w)
    q2 = quat.normalize(q + (dt / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q))
    w2 = omega + (dt / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
    return q2, w2


def translational_step(r, v, m, F_B, q, gravity: GravityModel, i_sp: float,
                       dt: float, thrust_scalar: float | None = None):
    """RK4 step of position, velocity, and mass.

    The body force is rotated to the inertial frame with the substep-start
    attitude and held constant; gravity is re-evaluated at each RK4 stage.
    ``thrust_scalar`` is the total thrust magnitude for fuel flow
    dm/dt = -thrust_scalar/(i_sp*g_ref); defaults to |F_B|, which is exact
    only when no attitude pairs are firing.
    """
    if thrust_scalar is None:
        thrust_scalar = float(np.linalg.norm(F_B))
    f_n = quat.rot_body_to_inertial(q) @ F_B
    mdot = -thrust_scalar / (i_sp * G_REF)

    def f(state):
        rr, vv, mm = state
        return vv, f_n / mm + gravity.accel(rr), mdot

    def madd(s, k, h):
        return s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2]

    s0 = (r, v, m)
    k1 = f(s0)
    k2 = f(madd(s0, k1, 0.5 * dt))
    k3 = f(madd(s0, k2, 0.5 * dt))
    k4 = f(madd(s0, k3, dt))
    r2 = r + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    v2 = v + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    m2 = m + (dt / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return r2, v2, m2


def target_step(target: TargetState, a_com, gravity: GravityModel,
                dt: float) -> TargetState:
    """RK4 step of the target with commanded acceleration held constant."""
    a_com = np.asarray(a_com, dtype=float)

    def f(state):
        rr, vv = state
        return vv, a_com + gravity.accel(rr)

    s0 = (target.r, target.v)
    k1 = f(s0)
    k2 = f((s0[0] + 0.5 * dt * k1[0], s0[1] + 0.5 * dt * k1[1]))
    k3 = f((s0[0] + 0.5 * dt * k2[0], s0[1] + 0.5 * dt * k2[1]))
    k4 = f((s0[0] + dt * k3[0], s0[1] + dt * k3[1]))
    r2 = target.r + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    v2 = target.v + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    return TargetState(r=r2, v=v2)


def step_missile(state: MissileState, commands, table: ThrusterTable,
                 gravity: GravityModel, i_sp: float, tau_u: float,
                 dt: float) -> MissileState:
    """Advance the missile one substep, composing the block integrators.

    The attitude/rotational-velocity pair advances jointly (see
    ``rotational_step``); translation and the actuator lag read the
    substep-start values of the other blocks: the lagged wrench and start
    attitude drive translation, then the lag states move toward the wrench
    commanded about the current center of mass.
    """
    if state.m <= DRY_MASS_KG:
        # fuel exhausted: engine dead, commands ignored, wrench collapses
        state = replace(state, F_B=np.zeros(3), L_B=np.zeros(3),
                        thrust_mag=0.0)
        f_cmd, l_cmd = np.zeros(3), np.zeros(3)
        mag_cmd = 0.0
    else:
        f_cmd, l_cmd = thruster_wrench(commands, table, state.r_com)
        mag_cmd = commanded_thrust_mag(commands, table)

    j_now = cylinder_inertia(state.m)
    jdot = (j_now - cylinder_inertia(state.m_prev)) / dt

    q2, omega2 = rotational_step(state.q, state.omega, j_now, jdot,
                                 state.L_B, dt)
    r2, v2, m2 = translational_step(
        state.r, state.v, state.m, state.F_B, state.q, gravity, i_sp, dt,
        thrust_scalar=state.thrust_mag)
    f2, l2 = lag_step(state.F_B, state.L_B, f_cmd, l_cmd, tau_u, dt)
    mag2 = _rk4_linear_lag(state.thrust_mag, mag_cmd, tau_u, dt)

    return replace(state, r=r2, v=v2, q=q2, omega=omega2, m=m2,
                   F_B=f2, L_B=l2, thrust_mag=float(mag2), m_prev=state.m)
