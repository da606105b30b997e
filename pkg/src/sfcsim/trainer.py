"""Episode execution and online training of the scale-factor estimator.

The episode loop runs at the 20 ms navigation rate.  Each step: the
guidance policy picks the thruster command from the compensated observation
history, the network predicts the next observation and the scale-factor
estimate from (previous prediction error, command), the environment
advances (switching to fine substeps inside the terminal range), the next
measurement is taken, and the prediction error is formed.  In train mode
every step appends aligned entries to the rollout buffers; every
``update_every`` episodes the network trains on the buffered rollouts in
truncated windows.

A constraint stop (field of view, rate limit, fuel) ends guidance but not
physics: the vehicles coast with thrusters commanded off until closest
approach so the recorded miss stays a physical quantity.  Such episodes
count as violations regardless of the coasted miss.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, estimator, fastpath, guidance, quat, scenario, seeker
from . import stabilization
from .config import RunConfig


def default_run_options() -> RunConfig:
    return RunConfig()


def gravity_from_config(cfg: RunConfig) -> dynamics.GravityModel:
    if cfg.gravity_mode == "point":
        return dynamics.gravity_point(cfg.altitude_m)
    if cfg.gravity_mode == "uniform":
        return dynamics.gravity_uniform(cfg.uniform_gravity_mps2)
    return dynamics.gravity_off()


def guidance_config(cfg: RunConfig) -> guidance.GuidanceConfig:
    # stabilized-angle noise as the rate trackers see it.  The seeker adds
    # sensor noise to the raw angle and then filters, so deconvolving the
    # filter returns the raw sample: white noise at the sensor sigma, no
    # amplification.  The matched chain keeps the filtered angle, whose
    # noise is the same white sequence through the lag (smaller but
    # correlated); its stationary sigma is used as an approximation.
    r4 = seeker.lag_poly(cfg.nav_dt_s, cfg.tau_angle_filter_s) \
        if cfg.tau_angle_filter_s > 0.0 else 0.0
    if cfg.angle_chain == "matched" and r4 != 0.0:
        gain = float(np.sqrt((1.0 - r4) / (1.0 + r4)))
    else:
        gain = 1.0
    meas = max(cfg.kf_meas_floor_rad, gain * cfg.sigma_theta_rad)
    return guidance.GuidanceConfig(
        nav_gain=cfg.nav_gain, apn_weight=cfg.apn_weight,
        closing_speed=cfg.closing_speed_mps,
        kf_accel_sigma=cfg.kf_accel_sigma_mps2,
        kf_accel_sigma_quiet=cfg.kf_accel_sigma_quiet_mps2,
        kf_man_tau=cfg.kf_man_tau_s, kf_meas_sigma=meas,
        sched_tau=cfg.kf_sched_tau_s, sched_gain=cfg.kf_sched_gain,
        sched_prior=cfg.kf_sched_prior_mps2,
        isp_s=cfg.i_sp_s, cmd_dt=cfg.cmd_every_n * cfg.nav_dt_s,
        accel_deadband=cfg.accel_deadband,
        divert_accel_ref=cfg.divert_accel_ref_mps2,
        att_corridor=cfg.att_corridor_rad, att_horizon=cfg.att_horizon_s,
        omega_damp=cfg.omega_damp_radps,
        terminal_quiet_s=cfg.terminal_quiet_s, handoff_s=cfg.handoff_s,
        duty_leak=cfg.duty_leak,
        duty_fire_threshold=cfg.duty_fire_threshold)


@dataclass
class EpisodeData:
    """Per-episode aligned step sequences feeding the five rollout rings."""

    o0: np.ndarray
    u: np.ndarray  # (T, 16) commands
    e: np.ndarray  # (T, 5) prediction errors input at each step
    h: np.ndarray  # (T, H) hidden state input at each step
    next_obs: np.ndarray  # (T, 5) measured observation after the step
    eps_true: np.ndarray  # (T, 5) ground-truth scale factors after the step

    def __len__(self) -> int:
        return self.u.shape[0]


class RolloutBuffers:
    """Ring of the most recent episodes; the five buffers stay aligned
    because one record holds an episode's slice of all of them."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.episodes: deque[EpisodeData] = deque(maxlen=capacity)

    def append(self, data: EpisodeData) -> None:
        self.episodes.append(data)

    def __len__(self) -> int:
        return len(self.episodes)

    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def segments(self, segment_len: int, hidden: int):
        """Non-overlapping truncation windows in episode order."""
        for ep in self.episodes:
            T = len(ep)
            for start in range(0, T, segment_len):
                stop = min(start + segment_len, T)
                yield estimator.Segment(
                    e=ep.e[start:stop], u=ep.u[start:stop],
                    h0=ep.h[start], obs_target=ep.next_obs[start:stop],
                    eps_target=ep.eps_true[start:stop],
                    o0=ep.o0 if start == 0 else None)


def _unpack_vectors(ms: tuple):
    r_m = np.array(ms[0:3])
    q = np.array(ms[6:10])
    omega = np.array(ms[10:13])
    return r_m, q, omega


def _range_m(ms: tuple, ts: tuple) -> float:
    dx = ts[0] - ms[0]
    dy = ts[1] - ms[1]
    dz = ts[2] - ms[2]
    return float(np.sqrt(dx * dx + dy * dy + dz * dz))


def _command_tuple(flags: np.ndarray, table: dynamics.ThrusterTable) -> tuple:
    f, l0 = dynamics.thruster_wrench(flags, table, np.zeros(3))
    mag = dynamics.commanded_thrust_mag(flags, table)
    return (f[0], f[1], f[2], l0[0], l0[1], l0[2], mag)


def run_episode(case_id: int, episode_index: int, master_seed: int,
                params: estimator.PcmParams | None = None,
                mode: str = "deploy", options: RunConfig | None = None,
                collect_trajectory: bool = False
                ) -> tuple[scenario.EpisodeRecord, EpisodeData | None]:
    """Run one engagement.  Returns the record and, in train mode, the
    aligned buffer entries."""
    if mode not in ("train", "deploy"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = options or default_run_options()
    gravity = gravity_from_config(cfg)
    g_cfg = guidance_config(cfg)
    table = dynamics.default_thruster_table()
    rng_scn, rng_sf, rng_noise = scenario.episode_rngs(
        master_seed, case_id, episode_index)

    draw = None
    for _ in range(100):
        cand = scenario.sample_scenario(rng_scn)
        try:
            missile, target = scenario.init_episode(cand, gravity)
        except ValueError:
            continue
        draw = cand
        break
    if draw is None:
        raise RuntimeError("scenario resampling failed 100 times")
    sf_draw = seeker.sample_scale_factors(seeker.CASES[case_id], rng_sf)

    ms = fastpath.pack_missile(missile)
    ts = fastpath.pack_target(target)
    grav = fastpath.pack_gravity(gravity)
    com_full = tuple(missile.r_com_full)
    man = (scenario.MANEUVER_NONE, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0) \
        if cfg.disable_target_maneuver else draw.maneuver_tuple
    dt = cfg.nav_dt_s
    fov = cfg.fov_half_angle_rad

    # first measurement initializes the angle filter and the hidden state
    r_m, q, omega = _unpack_vectors(ms)
    r_t = np.array(ts[0:3])
    obs, filt, (tu, tv) = seeker.observe(
        r_m, r_t, q, omega, sf_draw, cfg.sigma_theta_rad,
        cfg.sigma_omega_radps, cfg.tau_angle_filter_s, dt, None, rng_noise)
    o0 = obs.vector

    est_state = estimator.init_state(o0, params) if params is not None \
        else None
    eps_hat = np.zeros(5)
    e_vec = np.zeros(5)
    pred_obs = None

    stab = stabilization.StabilizerState()
    gstate = guidance.GuidanceState()
    # launch cue: the fire-control track that initialized the engagement
    # supplies the initial range and range rate, so guidance can navigate
    # its own time-to-go without an onboard ranging sensor
    rel_r = r_t - r_m
    rel_v = np.array(ts[3:6]) - np.array(ms[3:6])
    rng0 = float(np.linalg.norm(rel_r))
    v_c0 = float(-(rel_r @ rel_v) / rng0)
    v_c = guidance.closing_speed_estimate(g_cfg, v_c0)
    gstate.range_briefed = rng0
    gstate.v_c = v_c
    gstate.mass_est = float(ms[13])
    comp = stabilization.compensate(obs, eps_hat)
    su, sv, s_clamp = stabilization.stabilize(comp.theta_u, comp.theta_v,
                                              stab.dq)
    gstate.append(0.0, su, sv, g_cfg)

    # the seeker's angle filter is a known scalar exponential.  Two ways to
    # keep it out of the stabilize composition (mixing filtered angles with
    # raw integrated rates leaks body wobble into the stabilized angles):
    # "deconvolve" inverts the filter from adjacent samples, recovering the
    # raw angle and its white sensor noise exactly (the noise enters before
    # the filter); "matched" applies the same filter to the rate sequence
    # feeding the attitude delta (correlated noise at the filter's own
    # bandwidth, small transient leak).
    # rates are averaged over adjacent samples because the sampled rate
    # misstates the rotation accrued across a torque transient.
    dec_r4 = seeker.lag_poly(dt, cfg.tau_angle_filter_s) \
        if cfg.tau_angle_filter_s > 0.0 else 0.0
    matched = cfg.angle_chain == "matched"
    ang_prev = np.array([comp.theta_u, comp.theta_v])
    ang_dec = ang_prev.copy()
    rate_prev = comp.omega.copy()
    rate_f = comp.omega.copy()

    train = mode == "train" and params is not None
    buf_u, buf_e, buf_h, buf_obs, buf_eps = [], [], [], [], []
    traj = {k: [] for k in ("t", "theta_u_meas", "theta_v_meas",
                            "theta_u_stab", "theta_v_stab", "eps_true",
                            "eps_hat", "omega_meas", "fuel_kg", "flags")} \
        if collect_trajectory else None

    flags = np.zeros(guidance.N_THRUSTERS)
    cmd = _command_tuple(flags, table)
    fine = False
    d2_tail = (None, None)
    min_d2 = np.inf
    clamp_events = 1 if (comp.clamped or s_clamp) else 0
    t = 0.0
    reason = None
    miss = None
    k = 0
    fault = False

    while True:
        # guidance on every cmd_every_n-th nav step, held between updates
        if k % cfg.cmd_every_n == 0:
            flags = guidance.guidance_step(gstate, comp.theta_u,
                                           comp.theta_v, comp.omega,
                                           stab.dq, v_c, g_cfg)
            cmd = _command_tuple(flags, table)

        if params is not None:
            h_input = est_state.h
            try:
                pred_obs, eps_next, est_state = estimator.forward_step(
                    e_vec, flags, est_state, params)
            except estimator.FaultEpisodeError:
                fault = True
                reason = "fault"
                break
        if train:
            buf_u.append(flags.copy())
            buf_e.append(e_vec.copy())
            buf_h.append(h_input.copy())

        # integrate one navigation interval, fine substeps near intercept
        rng_now = _range_m(ms, ts)
        want_fine = rng_now < cfg.fine_switch_range_m
        if want_fine != fine:
            fine = want_fine
            d2_tail = (None, None)
            ms = ms[:21] + (ms[13],)  # m_prev := m across the dt change
        if fine:
            sub_dt = dt / cfg.fine_substeps
            n_sub = cfg.fine_substeps
        else:
            sub_dt = dt
            n_sub = 1
        ms, ts, steps, closed, miss_val, d2_tail = fastpath.advance(
            ms, ts, cmd, man, grav, cfg.i_sp_s, cfg.tau_thrust_s, com_full,
            sub_dt, n_sub, t, True, d2_tail)
        t += steps * sub_dt
        if d2_tail[1] is not None:
            min_d2 = min(min_d2, d2_tail[1])
        if closed:
            reason = "intercept"
            miss = miss_val
            break

        # next measurement and prediction error
        r_m, q, omega = _unpack_vectors(ms)
        r_t = np.array(ts[0:3])
        obs, filt, (tu, tv) = seeker.observe(
            r_m, r_t, q, omega, sf_draw, cfg.sigma_theta_rad,
            cfg.sigma_omega_radps, cfg.tau_angle_filter_s, dt, filt,
            rng_noise)
        eps_true = sf_draw.epsilon_vector(tu, tv)
        if train:
            buf_obs.append(obs.vector)
            buf_eps.append(eps_true)
        if params is not None:
            e_vec = pred_obs - obs.vector
            eps_hat = eps_next

        comp = stabilization.compensate(obs, eps_hat)
        ang_now = np.array([comp.theta_u, comp.theta_v])
        # trapezoid plus two-sample coning term: the rotation axis shifts
        # between samples, and the commutator error would random-walk into
        # the stabilized angles over the flight
        rate_mid = 0.5 * (comp.omega + rate_prev) \
            + (dt / 12.0) * np.cross(rate_prev, comp.omega)
        rate_prev = comp.omega
        if matched:
            rate_f = dec_r4 * rate_f + (1.0 - dec_r4) * rate_mid
            ang_dec, rate_used = ang_now, rate_f
        else:
            ang_dec = (ang_now - dec_r4 * ang_prev) / (1.0 - dec_r4) \
                if dec_r4 != 0.0 else ang_now
            rate_used = rate_mid
        ang_prev = ang_now
        stab = stabilization.integrate_dq(stab, rate_used, dt)
        su, sv, s_clamp = stabilization.stabilize(ang_dec[0], ang_dec[1],
                                                  stab.dq)
        if comp.clamped or s_clamp:
            clamp_events += 1
        gstate.append(t, su, sv, g_cfg)

        if traj is not None:
            traj["t"].append(t)
            traj["theta_u_meas"].append(obs.theta_u)
            traj["theta_v_meas"].append(obs.theta_v)
            traj["theta_u_stab"].append(su)
            traj["theta_v_stab"].append(sv)
            traj["eps_true"].append(eps_true)
            traj["eps_hat"].append(eps_hat.copy())
            traj["omega_meas"].append(obs.omega.copy())
            traj["fuel_kg"].append(dynamics.WET_MASS_KG - ms[13])
            traj["flags"].append(int(sum(1 << i for i, fl
                                         in enumerate(flags) if fl > 0.5)))

        # with a few metres left even a sub-metre offset subtends the whole
        # field of view for one sample; closest approach owns termination
        # from here, constraint checks would only misclassify the closure
        if _range_m(ms, ts) > 50.0:
            missile_now = fastpath.unpack_missile(ms, np.array(com_full))
            target_now = fastpath.unpack_target(ts)
            reason = scenario.check_termination(missile_now, target_now,
                                                fov, t)
            if reason is not None:
                break
        if t > cfg.timeout_s:
            reason = "timeout"
            break
        k += 1

    if reason in ("fov", "omega", "fuel"):
        # guidance is lost but physics keeps going: coast blind to closest
        # approach so the miss stays physically meaningful
        cmd = _command_tuple(np.zeros(guidance.N_THRUSTERS), table)
        while t <= cfg.timeout_s:
            rng_now = _range_m(ms, ts)
            want_fine = rng_now < cfg.fine_switch_range_m
            if want_fine != fine:
                fine = want_fine
                d2_tail = (None, None)
                ms = ms[:21] + (ms[13],)
            sub_dt = dt / cfg.fine_substeps if fine else dt
            n_sub = cfg.fine_substeps if fine else 1
            ms, ts, steps, closed, miss_val, d2_tail = fastpath.advance(
                ms, ts, cmd, man, grav, cfg.i_sp_s, cfg.tau_thrust_s,
                com_full, sub_dt, n_sub, t, True, d2_tail)
            t += steps * sub_dt
            if d2_tail[1] is not None:
                min_d2 = min(min_d2, d2_tail[1])
            if closed:
                miss = miss_val
                break

    if miss is None:
        miss = float(np.sqrt(min_d2)) if np.isfinite(min_d2) else \
            _range_m(ms, ts)
        if reason is None:
            reason = "timeout"

    fuel_used = dynamics.WET_MASS_KG - ms[13]
    record = scenario.EpisodeRecord(
        case_id=case_id, episode_index=episode_index, miss_m=float(miss),
        fuel_used_kg=float(fuel_used), reason=reason, duration_s=t,
        clamp_events=clamp_events)
    if traj is not None:
        record.trajectory = {
            "t": np.array(traj["t"]),
            "theta_u_meas": np.array(traj["theta_u_meas"]),
            "theta_v_meas": np.array(traj["theta_v_meas"]),
            "theta_u_stab": np.array(traj["theta_u_stab"]),
            "theta_v_stab": np.array(traj["theta_v_stab"]),
            "eps_true": np.array(traj["eps_true"]).reshape(-1, 5),
            "eps_hat": np.array(traj["eps_hat"]).reshape(-1, 5),
            "omega_meas": np.array(traj["omega_meas"]).reshape(-1, 3),
            "fuel_kg": np.array(traj["fuel_kg"]),
            "flags": np.array(traj["flags"], dtype=np.int64),
        }

    data = None
    if train and not fault and buf_u:
        data = EpisodeData(
            o0=o0, u=np.array(buf_u), e=np.array(buf_e),
            h=np.array(buf_h),
            next_obs=np.array(buf_obs).reshape(-1, 5),
            eps_true=np.array(buf_eps).reshape(-1, 5))
        n = min(len(data.u), len(data.next_obs))
        data.u = data.u[:n]
        data.e = data.e[:n]
        data.h = data.h[:n]
        data.next_obs = data.next_obs[:n]
        data.eps_true = data.eps_true[:n]
    return record, data


def update_params(buffers: RolloutBuffers, params: estimator.PcmParams,
                  adam: estimator.AdamState, cfg: RunConfig
                  ) -> tuple[estimator.PcmParams, estimator.AdamState, dict]:
    """One training pass over the buffered rollouts.

    Desk-scale default takes an optimizer step per truncation window;
    ``whole_buffer_step`` accumulates the full-buffer gradient into one
    step, matching the reference schedule.
    """
    if len(buffers) == 0:
        raise ValueError("empty rollout buffers")
    n_steps = buffers.total_steps()
    before = np.zeros(3)
    skipped = 0
    for _ in range(cfg.buffer_passes):
        if cfg.whole_buffer_step:
            total = params.zeros_like()
            for seg in buffers.segments(cfg.segment_len, params.hidden):
                grads, losses = estimator.backward(seg, params)
                before += losses
                for kname in total:
                    total[kname] += grads[kname]
            if all(np.all(np.isfinite(v)) for v in total.values()):
                params, adam = estimator.adam_update(params, total, adam)
            else:
                skipped += 1
        else:
            for seg in buffers.segments(cfg.segment_len, params.hidden):
                grads, losses = estimator.backward(seg, params)
                before += losses
                if not np.isfinite(losses[0]):
                    skipped += 1
                    continue
                params, adam = estimator.adam_update(params, grads, adam)
    before /= cfg.buffer_passes

    after = np.zeros(3)
    for seg in buffers.segments(cfg.segment_len, params.hidden):
        after += estimator.segment_loss(seg, params)
    metrics = {
        "loss_before": before[0] / n_steps,
        "loss_obs_before": before[1] / n_steps,
        "loss_eps_before": before[2] / n_steps,
        "loss_after": after[0] / n_steps,
        "loss_obs_after": after[1] / n_steps,
        "loss_eps_after": after[2] / n_steps,
        "steps": n_steps,
        "skipped": skipped,
    }
    return params, adam, metrics


@dataclass
class CurvePoint:
    episode: int
    window_hit50_pct: float
    window_hit100_pct: float
    loss: float
    loss_obs: float
    loss_eps: float
    mean_fuel_kg: float


@dataclass
class TrainResult:
    params: estimator.PcmParams
    adam: estimator.AdamState
    curve: list[CurvePoint]
    records: list[scenario.EpisodeRecord]


def train(case_id: int, master_seed: int, cfg: RunConfig,
          params: estimator.PcmParams | None = None,
          adam: estimator.AdamState | None = None,
          episode_offset: int = 0,
          progress=None) -> TrainResult:
    """Alternate rollout collection and updates per the schedule."""
    if params is None:
        params = estimator.init_params(
            cfg.hidden, np.random.default_rng(cfg.init_seed))
    if adam is None:
        adam = estimator.AdamState.for_params(params, lr=cfg.learning_rate)
    buffers = RolloutBuffers(cfg.buffer_capacity)
    curve: list[CurvePoint] = []
    records: list[scenario.EpisodeRecord] = []
    window = cfg.success_window

    for i in range(cfg.total_episodes):
        record, data = run_episode(case_id, episode_offset + i, master_seed,
                                   params=params, mode="train", options=cfg)
        records.append(record)
        if data is not None:
            buffers.append(data)
        if (i + 1) % cfg.update_every == 0 and len(buffers) > 0:
            params, adam, metrics = update_params(buffers, params, adam, cfg)
            recent = records[-window:]
            misses = np.array([r.miss_m for r in recent])
            curve.append(CurvePoint(
                episode=i + 1,
                window_hit50_pct=100.0 * float(np.mean(misses < 0.5)),
                window_hit100_pct=100.0 * float(np.mean(misses < 1.0)),
                loss=metrics["loss_before"],
                loss_obs=metrics["loss_obs_before"],
                loss_eps=metrics["loss_eps_before"],
                mean_fuel_kg=float(np.mean(
                    [r.fuel_used_kg for r in recent]))))
            if progress is not None:
                progress(i + 1, curve[-1])
    return TrainResult(params=params, adam=adam, curve=curve,
                       records=records)
