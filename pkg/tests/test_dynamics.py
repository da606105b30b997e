"""Oracles and properties for the rigid-body dynamics block integrators."""

import numpy as np
import pytest

from sfcsim import dynamics as dyn
from sfcsim import fastpath, quat

TABLE = dyn.default_thruster_table()


def flags(*on):
    f = np.zeros(16, dtype=bool)
    for i in on:
        f[i] = True
    return f


class TestThrusterWrench:
    def test_all_off(self):
        f, l = dyn.thruster_wrench(flags(), TABLE, np.zeros(3))
        assert np.all(f == 0) and np.all(l == 0)

    def test_single_divert_through_centroid(self):
        f, l = dyn.thruster_wrench(flags(0), TABLE, np.zeros(3))
        assert np.allclose(f, [0.0, -5000.0, 0.0])
        assert np.allclose(l, 0.0)

    # Hand-computed cross products: r x F summed over each pair
    PAIR_TORQUES = [
        ((4, 5), (-62.5, 0.0, 0.0)),
        ((6, 7), (62.5, 0.0, 0.0)),
        ((8, 9), (0.0, 125.0, 0.0)),
        ((10, 11), (0.0, -125.0, 0.0)),
        ((12, 13), (0.0, 0.0, -125.0)),
        ((14, 15), (0.0, 0.0, 125.0)),
    ]

    @pytest.mark.parametrize("pair,torque", PAIR_TORQUES)
    def test_acs_pairs_pure_torque(self, pair, torque):
        f, l = dyn.thruster_wrench(flags(*pair), TABLE, np.zeros(3))
        assert np.allclose(f, 0.0, atol=1e-12)
        assert np.allclose(l, torque)

    def test_com_shift_divert_torque_cancelled_by_pair(self):
        # 5% of the half-height: +z divert torque about y is +125 N*m,
        # exactly cancelled by the negative-y pair
        r_com = np.array([0.025, 0.0, 0.0])
        f1, l1 = dyn.thruster_wrench(flags(2), TABLE, r_com)
        assert np.allclose(l1, [0.0, 125.0, 0.0])
        f2, l2 = dyn.thruster_wrench(
            flags(2, *TABLE.PAIR_NEG_Y), TABLE, r_com)
        assert np.allclose(f2, [0.0, 0.0, 5000.0])
        assert np.allclose(l2, 0.0, atol=1e-9)

    def test_direction_vectors_unit(self):
        assert np.allclose(np.linalg.norm(TABLE.directions, axis=1), 1.0)

    def test_thrust_levels(self):
        assert np.all(TABLE.thrust[:4] == 5000.0)
        assert np.all(TABLE.thrust[4:] == 125.0)


class TestLag:
    def test_fixed_point(self):
        f = np.array([10.0, -5.0, 2.0])
        f2, l2 = dyn.lag_step(f, f, f, f, 0.02, 0.02)
        assert np.allclose(f2, f)

    def test_first_order_response_at_tau(self):
        # integrate to t = tau with fine substeps; closed form 1 - e^-1
        tau = 0.02
        n = 1000
        f = np.zeros(3)
        cmd = np.array([100.0, -40.0, 7.0])
        for _ in range(n):
            f, _ = dyn.lag_step(f, np.zeros(3), cmd, np.zeros(3), tau, tau / n)
        expect = (1.0 - np.exp(-1.0)) * cmd
        assert np.allclose(f, expect, rtol=1e-6)

    def test_decay_after_five_tau(self):
        tau = 0.02
        f = np.array([50.0, 50.0, 50.0])
        f0 = f.copy()
        for _ in range(500):
            f, _ = dyn.lag_step(f, np.zeros(3), np.zeros(3), np.zeros(3),
                                tau, 5 * tau / 500)
        assert np.linalg.norm(f) < 0.01 * np.linalg.norm(f0)


class TestEulerRotation:
    def test_principal_axis_spin_constant(self):
        j = dyn.cylinder_inertia(40.0)
        w = np.array([3.0, 0.0, 0.0])
        w2 = dyn.euler_rotation_step(w, j, np.zeros((3, 3)), np.zeros(3), 0.02)
        assert np.allclose(w2, w, atol=1e-14)

    def test_spherical_inertia_constant(self):
        j = np.eye(3) * 2.5
        w = np.array([1.0, -2.0, 0.5])
        w2 = dyn.euler_rotation_step(w, j, np.zeros((3, 3)), np.zeros(3), 0.02)
        assert np.allclose(w2, w, atol=1e-14)

    def test_momentum_norm_conserved_per_step(self):
        j = dyn.cylinder_inertia(40.0)
        w = np.array([2.0, -1.5, 0.8])
        h0 = np.linalg.norm(j @ w)
        w2 = dyn.euler_rotation_step(w, j, np.zeros((3, 3)), np.zeros(3), 0.02)
        h1 = np.linalg.norm(j @ w2)
        assert abs(h1 - h0) / h0 < 1e-8

    def test_inertial_momentum_drift_torque_free(self):
        # co-propagate attitude and rate for 1 s; fixed inertia (no burn)
        j = dyn.cylinder_inertia(40.0)
        w = np.array([2.0, -1.5, 0.8])
        q = quat.from_axis_angle([0.3, 0.2, 0.9], 0.7)
        h0 = quat.rot_body_to_inertial(q) @ (j @ w)
        for _ in range(50):
            q, w = dyn.rotational_step(q, w, j, np.zeros((3, 3)),
                                       np.zeros(3), 0.02)
        h1 = quat.rot_body_to_inertial(q) @ (j @ w)
        assert np.linalg.norm(h1 - h0) / np.linalg.norm(h0) < 1e-6


class TestQuaternionStep:
    def test_zero_rate_identity(self):
        q = quat.from_axis_angle([0, 0, 1], 0.4)
        assert np.allclose(dyn.quaternion_step(q, np.zeros(3), 0.02), q)

    def test_axis_angle_closed_form(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        w = np.array([np.pi, 0.0, 0.0])
        for _ in range(50):
            q = dyn.quaternion_step(q, w, 0.02)
        assert np.allclose(q, [0.0, 1.0, 0.0, 0.0], atol=1e-6)

    def test_norm_preserved(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = quat.normalize(rng.normal(size=4))
            w = rng.normal(size=3) * 5
            q2 = dyn.quaternion_step(q, w, 0.02)
            assert abs(np.linalg.norm(q2) - 1.0) < 1e-9


class TestTranslational:
    def test_coast(self):
        g = dyn.gravity_off()
        r, v, m = dyn.translational_step(
            np.zeros(3), np.array([10.0, 0, 0]), 40.0, np.zeros(3),
            quat.IDENTITY, g, 250.0, 0.02)
        assert np.allclose(r, [0.2, 0, 0])
        assert m == 40.0

    def test_fuel_rate_single_divert(self):
        g = dyn.gravity_off()
        dt = 0.02
        _, _, m2 = dyn.translational_step(
            np.zeros(3), np.zeros(3), 50.0, np.array([0, 5000.0, 0]),
            quat.IDENTITY, g, 250.0, dt)
        rate = (50.0 - m2) / dt
        assert rate == pytest.approx(5000.0 / (250.0 * 9.81), rel=1e-6)
        assert rate == pytest.approx(2.0387, abs=2e-4)

    def test_force_over_mass(self):
        g = dyn.gravity_off()
        dt = 1e-4
        _, v2, _ = dyn.translational_step(
            np.zeros(3), np.zeros(3), 50.0, np.array([0, 5000.0, 0]),
            quat.IDENTITY, g, 250.0, dt, thrust_scalar=0.0)
        assert np.allclose(v2 / dt, [0, 100.0, 0], rtol=1e-9)

    def test_body_force_rotated(self):
        g = dyn.gravity_off()
        q = quat.from_axis_angle([0, 0, 1], np.pi / 2)  # body y -> inertial -x
        dt = 1e-5
        _, v2, _ = dyn.translational_step(
            np.zeros(3), np.zeros(3), 50.0, np.array([0, 5000.0, 0]), q, g,
            250.0, dt, thrust_scalar=0.0)
        assert np.allclose(v2 / dt, [-100.0, 0.0, 0.0], atol=1e-6)


class TestTarget:
    def test_ballistic(self):
        t = dyn.TargetState(r=np.zeros(3), v=np.array([100.0, 0, 0]))
        t2 = dyn.target_step(t, np.zeros(3), dyn.gravity_off(), 0.02)
        assert np.allclose(t2.r, [2.0, 0, 0])
        assert np.allclose(t2.v, t.v)

    def test_orthogonal_accel_preserves_speed(self):
        v = np.array([4000.0, 0.0, 0.0])
        t = dyn.TargetState(r=np.zeros(3), v=v.copy())
        a = np.array([0.0, 49.05, 0.0])
        t2 = dyn.target_step(t, a, dyn.gravity_off(), 0.02)
        assert abs(np.linalg.norm(t2.v) - 4000.0) / 4000.0 < 1e-4

    def test_max_accel_bound_value(self):
        assert np.linalg.norm([0.0, 49.05, 0.0]) == pytest.approx(5 * 9.81)


class TestGravity:
    def test_point_magnitude_at_origin(self):
        g = dyn.gravity_point(200e3)
        mag = np.linalg.norm(g.accel(np.zeros(3)))
        assert 8.0 <= mag <= 9.81
        assert mag == pytest.approx(
            dyn.MU_EARTH / (dyn.R_EARTH_M + 200e3) ** 2, rel=1e-12)

    def test_uniform(self):
        g = dyn.gravity_uniform([0, 0, -9.0])
        assert np.allclose(g.accel(np.array([5e5, 1e5, -3e4])), [0, 0, -9.0])

    def test_off(self):
        assert np.all(dyn.gravity_off().accel(np.ones(3)) == 0)


class TestComposedStep:
    def test_mass_monotone_and_fuel_integral(self):
        # random on/off schedule ending with engines off; trapezoid oracle
        rng = np.random.default_rng(3)
        g = dyn.gravity_off()
        dt = 0.002
        state = dyn.MissileState(
            r=np.zeros(3), v=np.zeros(3), q=quat.IDENTITY.copy(),
            omega=np.zeros(3), m=50.0)
        mags = [state.thrust_mag]
        masses = [state.m]
        n_on = int(1.5 / dt)
        n_off = int(0.5 / dt)
        cmds = flags(0, 2, 8, 9)
        for k in range(n_on + n_off):
            if k < n_on and rng.random() < 0.02:
                cmds = np.asarray(rng.random(16) < 0.3)
            if k >= n_on:
                cmds = flags()
            state = dyn.step_missile(state, cmds, TABLE, g, 250.0, 0.02, dt)
            mags.append(state.thrust_mag)
            masses.append(state.m)
        assert all(b <= a + 1e-12 for a, b in zip(masses, masses[1:]))
        burned = 50.0 - state.m
        integral = np.trapezoid(mags, dx=dt) / (250.0 * 9.81)
        assert burned == pytest.approx(integral, rel=1e-3)
        assert burned > 0.1

    def test_com_migrates_with_fuel(self):
        g = dyn.gravity_off()
        state = dyn.MissileState(
            r=np.zeros(3), v=np.zeros(3), q=quat.IDENTITY.copy(),
            omega=np.zeros(3), m=50.0,
            r_com_full=np.array([0.025, 0.0, 0.0]))
        assert np.allclose(state.r_com, 0.0)
        for _ in range(100):
            state = dyn.step_missile(state, flags(0, 1, 2, 3), TABLE, g,
                                     250.0, 0.02, 0.02)
        frac = state.fuel_used / dyn.FUEL_CAPACITY_KG
        assert frac > 0.5
        assert np.allclose(state.r_com, [0.025 * frac, 0, 0])


def random_missile(rng):
    return dyn.MissileState(
        r=rng.normal(size=3) * 1000,
        v=rng.normal(size=3) * 500,
        q=quat.normalize(rng.normal(size=4)),
        omega=rng.normal(size=3) * 2,
        m=float(rng.uniform(30, 50)),
        F_B=rng.normal(size=3) * 1000,
        L_B=rng.normal(size=3) * 50,
        thrust_mag=float(rng.uniform(0, 15000)),
        r_com_full=rng.uniform(-0.025, 0.025, size=3),
        m_prev=None)


class TestFastpathEquivalence:
    @pytest.mark.parametrize("dt", [0.02, 0.02 / 300.0])
    @pytest.mark.parametrize("gravity", ["off", "uniform", "point"])
    def test_substep_matches_block_composition(self, dt, gravity):
        rng = np.random.default_rng(hash((dt, gravity)) % 2**32)
        g = {"off": dyn.gravity_off(),
             "uniform": dyn.gravity_uniform([0.1, -9.0, 0.4]),
             "point": dyn.gravity_point(200e3)}[gravity]
        for trial in range(20):
            state = random_missile(rng)
            state.m_prev = state.m - rng.uniform(0, 0.04) * dt / 0.02
            target = dyn.TargetState(r=rng.normal(size=3) * 2000,
                                     v=rng.normal(size=3) * 1000)
            cmds = rng.random(16) < 0.4
            n_steps = 5

            ref_m, ref_t = state, target
            for _ in range(n_steps):
                ref_t = dyn.target_step(ref_t, np.zeros(3), g, dt)
                ref_m = dyn.step_missile(ref_m, cmds, TABLE, g, 250.0,
                                         0.02, dt)

            f_cmd, _ = dyn.thruster_wrench(cmds, TABLE, np.zeros(3))
            l0 = np.cross(TABLE.positions[cmds],
                          TABLE.directions[cmds]
                          * TABLE.thrust[cmds, None]).sum(axis=0)
            cmd = (*f_cmd, *l0, dyn.commanded_thrust_mag(cmds, TABLE))
            ms, ts, steps, closed, _, _ = fastpath.advance(
                fastpath.pack_missile(state), fastpath.pack_target(target),
                cmd, (0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0), fastpath.pack_gravity(g),
                250.0, 0.02, tuple(state.r_com_full), dt, n_steps, 0.0, False)
            assert steps == n_steps and not closed
            got = fastpath.unpack_missile(ms, state.r_com_full)

            for name in ("r", "v", "q", "omega", "F_B", "L_B"):
                ref_val = getattr(ref_m, name)
                got_val = getattr(got, name)
                scale = max(1.0, np.max(np.abs(ref_val)))
                assert np.max(np.abs(ref_val - got_val)) / scale < 1e-12, name
            assert got.m == pytest.approx(ref_m.m, rel=1e-13)
            assert got.thrust_mag == pytest.approx(ref_m.thrust_mag,
                                                   rel=1e-12, abs=1e-9)
            got_t = fastpath.unpack_target(ts)
            assert np.allclose(got_t.r, ref_t.r, rtol=1e-12, atol=1e-9)
            assert np.allclose(got_t.v, ref_t.v, rtol=1e-12, atol=1e-9)


class TestClosestApproach:
    def test_coast_miss_matches_analytic(self):
        # zero thrust, zero gravity: point of closest approach in closed form
        rng = np.random.default_rng(11)
        g = dyn.gravity_off()
        for _ in range(5):
            offset = rng.uniform(0.1, 5.0)
            r_rel = np.array([900.0, offset, -0.3 * offset])
            v_rel = np.array([-7000.0, 0.0, 0.0])
            t_star = -np.dot(r_rel, v_rel) / np.dot(v_rel, v_rel)
            analytic = np.linalg.norm(r_rel + t_star * v_rel)

            state = dyn.MissileState(
                r=np.zeros(3), v=np.array([3000.0, 0.0, 0.0]),
                q=quat.IDENTITY.copy(), omega=np.zeros(3), m=40.0)
            target = dyn.TargetState(r=r_rel.copy(),
                                     v=np.array([-4000.0, 0.0, 0.0]))
            cmd = (0.0,) * 6 + (0.0,)
            dt = 0.02 / 300.0
            ms, ts = fastpath.pack_missile(state), fastpath.pack_target(target)
            seed = (None, None)
            closed = False
            for _ in range(20):
                ms, ts, _, closed, miss, seed = fastpath.advance(
                    ms, ts, cmd, (0, 0, 0, 1, 0, 0, 0),
                    fastpath.pack_gravity(g), 250.0, 0.02, (0, 0, 0), dt,
                    300, 0.0, True, seed)
                if closed:
                    break
            assert closed
            assert abs(miss - analytic) < 1e-3
