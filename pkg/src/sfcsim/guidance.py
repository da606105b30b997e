"""Classical guidance and attitude control driving the on/off thrusters.

Lateral guidance is augmented proportional navigation: each stabilized
angle channel runs a three-state Kalman filter (angle, rate, unseen
lateral acceleration) with the 2/t_go closing-geometry divergence term
and own-divert feedforward in the process model.  The tracked rate and
acceleration form the command, which is mapped into the body frame
through the accumulated attitude delta and quantized onto the four
divert thrusters by a leaky sigma-delta duty accumulator.  A fixed
smoothing window cannot serve both regimes: resolving the endgame rate
through 1 mrad angle noise needs seconds of averaging, while the closing
geometry turns over in tenths of a second; the filter's time-varying
gain is the resolution.  The acceleration process noise is scheduled per
episode by a fixed wide-band shadow filter (see GuidanceState.append),
because target maneuver intensity spans zero to the full envelope and no
single spread serves both ends.

Attitude control is a phase-plane corridor law.  A single attitude pair
delivers a fixed rate increment of roughly 1 rad/s per 40 ms command, far
too coarse for continuous tracking, so the controller fires only when the
predicted look angle leaves a wide corridor or a body rate exceeds the
damping threshold, and coasts otherwise.  Sparse pulses also keep the
sampled-rate attitude reconstruction clean; continuous chatter would
alias thrust transients into the stabilized angles.  Commands update at
25 Hz (every second navigation step) and hold between updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .dynamics import G_REF, ThrusterTable, default_thruster_table

MISSILE_SPEED_NOMINAL = 3000.0
TARGET_SPEED_NOMINAL = 4000.0

N_THRUSTERS = 16

# commanded-impulse mass bookkeeping uses the same thrust table the plant
# does; nothing here is measured, it is what the autopilot ordered
_THRUST_N = default_thruster_table().thrust


@dataclass(frozen=True)
class GuidanceConfig:
    """Gains and deadbands; values frozen after the ideal-conditions gate."""

    nav_gain: float = 4.0
    apn_weight: float = 0.5  # feedforward fraction of the tracked accel
    closing_speed: float | None = None  # None: nominal head-on sum
    isp_s: float = 250.0  # for commanded-impulse mass bookkeeping
    cmd_dt: float = 0.04  # command slot duration, s
    kf_accel_sigma: float = 30.0  # m/s^2, shadow spread and schedule cap
    kf_accel_sigma_quiet: float = 2.0  # m/s^2, schedule floor
    kf_man_tau: float = 1.5  # s, unseen-accel correlation time
    kf_meas_sigma: float = 1e-4  # rad, stabilized-angle measurement noise
    sched_tau: float = 2.5  # s, accel-power smoothing for the schedule
    sched_gain: float = 1.2  # spread per unit smoothed accel magnitude
    sched_prior: float = 15.0  # m/s^2, climatological accel prior at launch
    accel_deadband: float = 12.0  # m/s^2 per body axis
    divert_accel_ref: float = 100.0  # m/s^2, one divert at nominal mass
    duty_leak: float = 0.97  # per-slot carry retention; < 1 rejects noise
    duty_fire_threshold: float = 0.5  # accumulated duty that fires a pulse
    att_corridor: float = 0.15  # rad, look-angle corridor half width
    att_horizon: float = 0.4  # s, look-ahead for the corridor test
    omega_damp: float = 0.6  # rad/s, body-rate damping threshold
    terminal_quiet_s: float = 0.25  # s of time-to-go with attitude ballistic
    handoff_s: float = 0.12  # s of damp-only slots before the quiet window


def closing_speed_estimate(config: GuidanceConfig,
                           measured: float | None = None) -> float:
    """Closing speed held constant per episode.

    Priority: explicit config override, then the launch-cue measurement,
    then the nominal head-on sum of the two vehicle speeds.
    """
    if config.closing_speed is not None:
        return config.closing_speed
    if measured is not None:
        return measured
    return MISSILE_SPEED_NOMINAL + TARGET_SPEED_NOMINAL


def _tracker_cov() -> np.ndarray:
    return np.diag([1e-6, 2.5e-5, 100.0])


@dataclass
class GuidanceState:
    """Per-channel angle/rate/accel trackers plus quantizer carry state."""

    x_u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P_u: np.ndarray = field(default_factory=_tracker_cov)
    P_v: np.ndarray = field(default_factory=_tracker_cov)
    # shadow trackers: fixed wide-band twins that sense maneuver intensity
    x_su: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x_sv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P_su: np.ndarray = field(default_factory=_tracker_cov)
    P_sv: np.ndarray = field(default_factory=_tracker_cov)
    sched_power: np.ndarray = field(default_factory=lambda: np.full(2, -1.0))
    initialized: bool = False
    t_last: float = 0.0
    last_command: np.ndarray = field(
        default_factory=lambda: np.zeros(N_THRUSTERS))
    duty_carry: np.ndarray = field(default_factory=lambda: np.zeros(2))
    last_divert: np.ndarray = field(default_factory=lambda: np.zeros(2))
    range_briefed: float | None = None  # launch-cue initial range, m
    v_c: float | None = None  # launch-cue closing speed, m/s
    mass_est: float | None = None  # launch mass minus commanded impulse

    def t_go(self, t: float) -> float:
        if self.range_briefed is None or self.v_c is None:
            return np.inf
        return self.range_briefed / self.v_c - t

    def append(self, t: float, theta_u_s: float, theta_v_s: float,
               config: GuidanceConfig) -> None:
        """Fold one stabilized-angle sample into the two channel trackers.

        State per channel: stabilized LOS angle, its rate, and the unseen
        lateral acceleration (target maneuver) modelled as a mean-reverting
        process.  Kinematics: angle' = rate; rate' = 2 rate / t_go +
        (a_unseen - a_own) / (v_c t_go); own divert acceleration is known
        and fed forward, so the third state settles on the target's part.
        The accel state is what makes noise and maneuver coexist: it
        aggregates innovations over its correlation time, so the rate can
        stay heavily smoothed without lagging a sustained maneuver.

        The accel spread is scheduled, not fixed.  Maneuver intensity is
        drawn per episode from zero up to the full envelope; a spread wide
        enough for the hard cases passes angle noise straight into the
        rate on the gentle ones.  Each channel therefore runs a second,
        fixed wide-band shadow tracker whose only job is to sense maneuver
        intensity: its accel power, debiased by its own covariance and
        smoothed over sched_tau, sets the primary spread within
        [quiet, cap].  The shadow never feeds the command, so the schedule
        cannot lock itself quiet the way gating the primary on its own
        accel state would.  Innovation-gate schemes (smoothed NIS with a
        fast trip) were tried first and latch permanently here: a rate
        lag that costs metres of terminal miss biases the innovations by
        well under one sigma, so the gate either never fires or never
        clears.
        """
        if not self.initialized:
            for x in (self.x_u, self.x_su):
                x[:] = (theta_u_s, 0.0, 0.0)
            for x in (self.x_v, self.x_sv):
                x[:] = (theta_v_s, 0.0, 0.0)
            self.sched_power[:] = (config.sched_prior / config.sched_gain) ** 2
            self.initialized = True
            self.t_last = t
            return
        dt_s = t - self.t_last
        self.t_last = t
        if dt_s <= 0.0:
            return
        tg = max(self.t_go(t) + dt_s, 0.2)  # t_go at interval start
        v_c = self.v_c if self.v_c is not None else \
            MISSILE_SPEED_NOMINAL + TARGET_SPEED_NOMINAL
        ctrl = dt_s / (v_c * tg)
        decay = math.exp(-dt_s / config.kf_man_tau)
        F = np.array([[1.0, dt_s, 0.0],
                      [0.0, 1.0 + 2.0 * dt_s / tg, ctrl],
                      [0.0, 0.0, decay]])
        q33 = 1.0 - decay * decay
        r_m = config.kf_meas_sigma ** 2
        h = np.array([1.0, 0.0, 0.0])
        alpha = dt_s / config.sched_tau
        q_shadow = np.diag([0.0, 0.0, config.kf_accel_sigma ** 2 * q33])

        def kf_step(x, P, Q, z, a_own):
            xp = F @ x
            xp[1] -= a_own * ctrl
            Pp = F @ P @ F.T + Q
            ph = Pp @ h
            s = float(h @ ph) + r_m
            k = ph / s
            x[:] = xp + k * (z - float(h @ xp))
            Pn = Pp - np.outer(k, ph)
            P[:] = 0.5 * (Pn + Pn.T)  # keep the update symmetric

        channels = (
            (self.x_u, self.P_u, self.x_su, self.P_su, theta_u_s,
             self.last_divert[0]),
            (self.x_v, self.P_v, self.x_sv, self.P_sv, theta_v_s,
             self.last_divert[1]))
        for ch, (x, P, xs, Ps, z, a_own) in enumerate(channels):
            kf_step(xs, Ps, q_shadow, z, a_own)
            excess = xs[2] * xs[2] - Ps[2, 2]
            self.sched_power[ch] = (1.0 - alpha) * self.sched_power[ch] \
                + alpha * max(excess, 0.0)
            sa = min(max(config.sched_gain * math.sqrt(self.sched_power[ch]),
                         config.kf_accel_sigma_quiet), config.kf_accel_sigma)
            kf_step(x, P, np.diag([0.0, 0.0, sa * sa * q33]), z, a_own)


def guidance_step(state: GuidanceState, theta_u_bar: float,
                  theta_v_bar: float, omega_bar: np.ndarray,
                  dq: np.ndarray, v_c: float,
                  config: GuidanceConfig) -> np.ndarray:
    """Compute the 16 on/off thruster flags for the next command interval.

    ``theta_*_bar`` are the compensated body-frame look angles (attitude
    loop), the angle/rate trackers in ``state`` feed the guidance loop,
    and ``dq`` maps the stabilized-frame acceleration command into the
    current body frame.
    """
    # augmented proportional navigation in the stabilized frame: the rate
    # term nulls the line-of-sight drift, the weighted acceleration term
    # leads the estimated target maneuver
    gain = config.nav_gain
    w = config.apn_weight
    a_stab = np.array([0.0,
                       gain * (v_c * state.x_u[1] + w * state.x_u[2]),
                       gain * (v_c * state.x_v[1] + w * state.x_v[2])])
    dcm = quat.dcm_inertial_to_body(dq)
    a_body = dcm @ a_stab

    # sigma-delta duty quantizer: one divert moves the closing velocity in
    # 4 m/s lumps, far too coarse near intercept, so fractional demand is
    # carried between command slots and fired on accumulator overflow.
    # the carry leaks rather than resets: zero-mean noise demand hovers
    # near zero and rarely fires, persistent real demand accumulates
    flags = np.zeros(N_THRUSTERS)
    a_fired_body = np.zeros(3)
    tt = ThrusterTable
    pos_divert = (tt.DIVERT_POS_Y, tt.DIVERT_POS_Z)
    neg_divert = (tt.DIVERT_NEG_Y, tt.DIVERT_NEG_Z)
    # one divert's actual acceleration drifts ~20% across the flight as
    # fuel burns off; book the commanded impulse so the duty scale and the
    # tracker feedforward follow the real pulse size
    a_ref = _THRUST_N[tt.DIVERT_POS_Y] / state.mass_est \
        if state.mass_est is not None else config.divert_accel_ref
    for ax in range(2):
        a = a_body[1 + ax]
        duty = 0.0 if abs(a) < config.accel_deadband else \
            max(-1.0, min(1.0, a / a_ref))
        carry = config.duty_leak * state.duty_carry[ax] + duty
        fired = 0.0
        if carry >= config.duty_fire_threshold:
            flags[pos_divert[ax]] = 1.0
            carry -= 1.0
            fired = a_ref
        elif carry <= -config.duty_fire_threshold:
            flags[neg_divert[ax]] = 1.0
            carry += 1.0
            fired = -a_ref
        state.duty_carry[ax] = carry
        a_fired_body[1 + ax] = fired

    # rate-tracker feedforward: the fired accelerations, mapped back into
    # the stabilized frame the trackers live in
    state.last_divert = (dcm.T @ a_fired_body)[1:3]

    # navigated time-to-go from the briefed initial range: inside the last
    # quarter second an attitude pulse cannot move the look angle usefully
    # before closest approach, but its thrust transient does alias into the
    # stabilized angles and fakes a line-of-sight rate at the worst moment
    t_go = state.t_go(state.t_last)

    # attitude: keep the target inside the look-angle corridor and arrest
    # excess body rates with isolated pulses; coast otherwise.  Corridor
    # pulses stop a few slots before the damp rule does, so whatever rate
    # the last corridor pulse leaves behind still gets arrested before the
    # quiet window freezes the attitude for the final approach
    corridor_live = t_go > config.terminal_quiet_s + config.handoff_s
    if t_go > config.terminal_quiet_s:
        om = np.asarray(omega_bar)
        cor, damp = config.att_corridor, config.omega_damp
        hor = min(config.att_horizon, t_go)
        pos_pairs = (tt.PAIR_POS_X, tt.PAIR_POS_Y, tt.PAIR_POS_Z)
        neg_pairs = (tt.PAIR_NEG_X, tt.PAIR_NEG_Y, tt.PAIR_NEG_Z)

        # yaw: rotation about +z drives theta_u down
        u_pred = theta_u_bar - om[2] * hor
        if corridor_live and u_pred > cor and om[2] < damp:
            flags[list(pos_pairs[2])] = 1.0
        elif corridor_live and u_pred < -cor and om[2] > -damp:
            flags[list(neg_pairs[2])] = 1.0
        elif abs(om[2]) > damp:
            flags[list(neg_pairs[2] if om[2] > 0 else pos_pairs[2])] = 1.0

        # pitch: rotation about +y drives theta_v up
        v_pred = theta_v_bar + om[1] * hor
        if corridor_live and v_pred > cor and om[1] > -damp:
            flags[list(neg_pairs[1])] = 1.0
        elif corridor_live and v_pred < -cor and om[1] < damp:
            flags[list(pos_pairs[1])] = 1.0
        elif abs(om[1]) > damp:
            flags[list(neg_pairs[1] if om[1] > 0 else pos_pairs[1])] = 1.0

        # roll carries no look-angle information, damp only
        if abs(om[0]) > damp:
            flags[list(neg_pairs[0] if om[0] > 0 else pos_pairs[0])] = 1.0

    if state.mass_est is not None:
        spent = float(flags @ _THRUST_N) * config.cmd_dt \
            / (config.isp_s * G_REF)
        state.mass_est = max(state.mass_est - spent, 1.0)
    state.last_command = flags
    return flags
