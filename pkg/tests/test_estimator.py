"""Oracles for the recurrent estimator: forward math, exact gradients, ADAM."""

import math

import numpy as np
import pytest

from sfcsim import estimator as est


def zero_params(hidden=4):
    p = est.init_params(hidden, np.random.default_rng(0))
    return est.PcmParams(**{k: np.zeros_like(v) for k, v in p.items()})


def random_segment(rng, params, T=10, episode_initial=True):
    e = 0.1 * rng.standard_normal((T, est.OBS_DIM))
    u = rng.integers(0, 2, (T, est.CMD_DIM)).astype(float)
    obs_t = rng.standard_normal((T, est.OBS_DIM))
    eps_t = 0.01 * rng.standard_normal((T, est.OBS_DIM))
    o0 = 0.2 * rng.standard_normal(est.OBS_DIM)
    h0 = est.init_hidden(o0, params)
    return est.Segment(e=e, u=u, h0=h0, obs_target=obs_t, eps_target=eps_t,
                       o0=o0 if episode_initial else None)


class TestInitHidden:
    def test_zero_params(self):
        p = zero_params()
        assert np.allclose(est.init_hidden(np.ones(5), p), 0.0)

    def test_zero_input_nonzero_bias(self):
        p = est.init_params(4, np.random.default_rng(1))
        h = est.init_hidden(np.zeros(5), p)
        expect = np.tanh(p.W_fch2 @ np.tanh(p.b_fch1) + p.b_fch2)
        assert np.allclose(h, expect, atol=1e-15)

    def test_matches_straightline(self):
        rng = np.random.default_rng(2)
        p = est.init_params(6, rng)
        o0 = rng.standard_normal(5)
        inner = np.tanh(p.W_fch1.dot(o0) + p.b_fch1)
        expect = np.tanh(p.W_fch2.dot(inner) + p.b_fch2)
        assert np.allclose(est.init_hidden(o0, p), expect, atol=1e-12)


class TestGruStep:
    def test_zero_params_halves_hidden(self):
        p = zero_params()
        h_prev = np.array([1.0, -2.0, 0.5, 4.0])
        assert np.allclose(est.gru_step(np.zeros(4), h_prev, p),
                           0.5 * h_prev)

    def test_zero_everything(self):
        p = zero_params()
        assert np.allclose(est.gru_step(np.zeros(4), np.zeros(4), p), 0.0)

    def test_scalar_hand_calculation(self):
        p = zero_params(1)
        vals = dict(W_xr=0.3, b_xr=0.1, W_hh=-0.2, b_hh=0.05, W_xz=0.4,
                    b_xz=-0.1, W_hz=0.2, b_hz=0.0, W_xn=0.5, b_xn=0.2,
                    W_hn=-0.3, b_hn=0.1)
        for k, v in vals.items():
            getattr(p, k)[:] = v
        x, h = 0.7, -0.4

        def sig(a):
            return 1.0 / (1.0 + math.exp(-a))

        r = sig(0.3 * x + 0.1 + (-0.2) * h + 0.05)
        z = sig(0.4 * x - 0.1 + 0.2 * h + 0.0)
        n = math.tanh(0.5 * x + 0.2 + r * ((-0.3) * h + 0.1))
        expect = (1 - z) * n + z * h
        got = est.gru_step(np.array([x]), np.array([h]), p)
        assert got[0] == pytest.approx(expect, abs=1e-12)


class TestForwardStep:
    def test_zero_params_zero_outputs(self):
        p = zero_params()
        st = est.PcmState(h=np.ones(4))
        o, eps, _ = est.forward_step(np.ones(5), np.ones(16), st, p)
        assert np.allclose(o, 0.0) and np.allclose(eps, 0.0)

    def test_head_linearity(self):
        rng = np.random.default_rng(3)
        p = est.init_params(4, rng)
        st = est.PcmState(h=rng.standard_normal(4))
        e, u = rng.standard_normal(5), rng.standard_normal(16)
        o1, _, _ = est.forward_step(e, u, st, p)
        p2 = p.copy()
        p2.W_fc3 *= 2.0
        p2.b_fc3 *= 2.0
        o2, _, _ = est.forward_step(e, u, st, p2)
        assert np.allclose(o2, 2.0 * o1, atol=1e-14)

    def test_three_step_unroll_matches(self):
        rng = np.random.default_rng(4)
        p = est.init_params(5, rng)
        o0 = rng.standard_normal(5)
        es = rng.standard_normal((3, 5))
        us = rng.standard_normal((3, 16))

        def sig(a):
            return 1.0 / (1.0 + np.exp(-a))

        h = np.tanh(p.W_fch2 @ np.tanh(p.W_fch1 @ o0 + p.b_fch1) + p.b_fch2)
        expect = []
        for t in range(3):
            x = np.tanh(p.W_fc1 @ np.concatenate([es[t], us[t]]) + p.b_fc1)
            r = sig(p.W_xr @ x + p.b_xr + p.W_hh @ h + p.b_hh)
            z = sig(p.W_xz @ x + p.b_xz + p.W_hz @ h + p.b_hz)
            n = np.tanh(p.W_xn @ x + p.b_xn + r * (p.W_hn @ h + p.b_hn))
            h = (1 - z) * n + z * h
            expect.append((p.W_fc3 @ h + p.b_fc3, p.W_fc4 @ h + p.b_fc4))

        st = est.init_state(o0, p)
        for t in range(3):
            o, eps, st = est.forward_step(es[t], us[t], st, p)
            assert np.allclose(o, expect[t][0], atol=1e-10)
            assert np.allclose(eps, expect[t][1], atol=1e-10)

    def test_nonfinite_input_faults(self):
        p = zero_params()
        st = est.PcmState(h=np.zeros(4))
        bad = np.array([np.nan, 0, 0, 0, 0])
        with pytest.raises(est.FaultEpisodeError):
            est.forward_step(bad, np.zeros(16), st, p)

    def test_forward_does_not_mutate_params(self):
        rng = np.random.default_rng(5)
        p = est.init_params(4, rng)
        before = {k: v.copy() for k, v in p.items()}
        st = est.PcmState(h=rng.standard_normal(4))
        est.forward_step(rng.standard_normal(5), rng.standard_normal(16),
                         st, p)
        for k, v in p.items():
            assert np.array_equal(v, before[k])


class TestLoss:
    def test_perfect_zero(self):
        a = np.random.default_rng(0).standard_normal((7, 5))
        assert est.loss(a, a, a, a) == (0.0, 0.0, 0.0)

    def test_single_component(self):
        po = np.zeros((1, 5))
        o = np.zeros((1, 5))
        o[0, 2] = 2.0
        total, l_o, l_e = est.loss(po, o, np.zeros((1, 5)), np.zeros((1, 5)))
        assert total == 4.0 and l_o == 4.0 and l_e == 0.0

    def test_brute_force(self):
        rng = np.random.default_rng(6)
        po, o, pe, e = (rng.standard_normal((11, 5)) for _ in range(4))
        total, l_o, l_e = est.loss(po, o, pe, e)
        bo = sum((po[i, j] - o[i, j]) ** 2
                 for i in range(11) for j in range(5))
        be = sum((pe[i, j] - e[i, j]) ** 2
                 for i in range(11) for j in range(5))
        assert l_o == pytest.approx(bo, rel=1e-9)
        assert l_e == pytest.approx(be, rel=1e-9)
        assert total == pytest.approx(bo + be, rel=1e-9)


class TestBackward:
    def test_zero_loss_zero_grads(self):
        rng = np.random.default_rng(7)
        p = est.init_params(4, rng)
        seg = random_segment(rng, p, T=5)
        # replay the forward pass and use its own outputs as targets
        st = est.init_state(seg.o0, p)
        obs_t, eps_t = [], []
        for t in range(len(seg)):
            o, eps, st = est.forward_step(seg.e[t], seg.u[t], st, p)
            obs_t.append(o)
            eps_t.append(eps)
        seg.obs_target = np.array(obs_t)
        seg.eps_target = np.array(eps_t)
        grads, (total, _, _) = est.backward(seg, p)
        assert total < 1e-24
        for k, gv in grads.items():
            assert np.allclose(gv, 0.0, atol=1e-12), k

    def test_doubling_residuals_quadruples_loss(self):
        rng = np.random.default_rng(8)
        p = est.init_params(4, rng)
        seg = random_segment(rng, p, T=6)
        _, (l1, _, _) = est.backward(seg, p)
        # push targets twice as far from the fixed predictions
        st = est.init_state(seg.o0, p)
        obs_p, eps_p = [], []
        for t in range(len(seg)):
            o, eps, st = est.forward_step(seg.e[t], seg.u[t], st, p)
            obs_p.append(o)
            eps_p.append(eps)
        obs_p, eps_p = np.array(obs_p), np.array(eps_p)
        seg2 = est.Segment(e=seg.e, u=seg.u, h0=seg.h0,
                           obs_target=obs_p + 2 * (seg.obs_target - obs_p),
                           eps_target=eps_p + 2 * (seg.eps_target - eps_p),
                           o0=seg.o0)
        _, (l2, _, _) = est.backward(seg2, p)
        assert l2 == pytest.approx(4.0 * l1, rel=1e-12)

    def _fd_check(self, seg, p, names=None, rel_tol=1e-4, delta=1e-5):
        grads, _ = est.backward(seg, p)
        failures = []
        checked = 0
        for k, arr in p.items():
            if names is not None and k not in names:
                continue
            it = np.ndindex(arr.shape)
            for idx in it:
                orig = arr[idx]
                arr[idx] = orig + delta
                lp, _, _ = est.segment_loss(seg, p)
                arr[idx] = orig - delta
                lm, _, _ = est.segment_loss(seg, p)
                arr[idx] = orig
                fd = (lp - lm) / (2 * delta)
                an = grads[k][idx]
                denom = max(abs(fd), abs(an), 1e-8)
                if abs(fd - an) / denom >= rel_tol:
                    failures.append((k, idx, fd, an))
                checked += 1
        return checked, failures

    def test_finite_difference_all_params_episode_initial(self):
        rng = np.random.default_rng(9)
        p = est.init_params(8, rng)
        seg = random_segment(rng, p, T=10, episode_initial=True)
        checked, failures = self._fd_check(seg, p)
        assert checked == p.n_params()
        assert not failures, failures[:5]

    def test_finite_difference_mid_episode(self):
        rng = np.random.default_rng(10)
        p = est.init_params(8, rng)
        seg = random_segment(rng, p, T=10, episode_initial=False)
        grads, _ = est.backward(seg, p)
        # the initializer is upstream of a stored constant: no gradient
        for k in ("W_fch1", "b_fch1", "W_fch2", "b_fch2"):
            assert np.all(grads[k] == 0.0)
        _, failures = self._fd_check(
            seg, p, names={"W_fc1", "b_fc1", "W_xr", "W_hh", "W_xn", "W_hn",
                           "b_hn", "W_fc3", "b_fc4"})
        assert not failures, failures[:5]

    def test_backward_does_not_mutate(self):
        rng = np.random.default_rng(11)
        p = est.init_params(4, rng)
        seg = random_segment(rng, p, T=4)
        before = {k: v.copy() for k, v in p.items()}
        est.backward(seg, p)
        for k, v in p.items():
            assert np.array_equal(v, before[k])


class TestAdam:
    def test_zero_gradient_no_motion(self):
        p = est.init_params(4, np.random.default_rng(12))
        adam = est.AdamState.for_params(p)
        p2, adam2 = est.adam_update(p, p.zeros_like(), adam)
        for k, v in p2.items():
            assert np.array_equal(v, getattr(p, k))
        assert adam2.t == 1

    def test_first_step_closed_form(self):
        p = zero_params(4)
        adam = est.AdamState.for_params(p, lr=1e-3)
        g = p.zeros_like()
        g["W_fc1"][:] = 1000.0
        g["b_fc1"][:] = -1000.0
        p2, _ = est.adam_update(p, g, adam)
        # first bias-corrected step is -lr * g / (|g| + eps)
        assert np.allclose(p2.W_fc1, -1e-3, rtol=1e-9)
        assert np.allclose(p2.b_fc1, 1e-3, rtol=1e-9)

    def test_fixed_gradient_magnitude_limit(self):
        p = zero_params(2)
        adam = est.AdamState.for_params(p, lr=1e-3)
        g = p.zeros_like()
        g["b_fc3"][:] = 0.37
        prev = p.b_fc3.copy()
        for _ in range(500):
            p, adam = est.adam_update(p, g, adam)
        step = np.abs(p.b_fc3 - prev) / 500
        assert np.allclose(step, 1e-3, rtol=2e-2)

    def test_update_determinism(self):
        def run():
            rng = np.random.default_rng(13)
            p = est.init_params(6, rng)
            adam = est.AdamState.for_params(p)
            seg = random_segment(rng, p, T=8)
            for _ in range(3):
                g, _ = est.backward(seg, p)
                p, adam = est.adam_update(p, g, adam)
            return p

        p1, p2 = run(), run()
        for k, v in p1.items():
            assert np.array_equal(v, getattr(p2, k))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        p = est.init_params(6, rng)
        adam = est.AdamState.for_params(p)
        seg = random_segment(rng, p, T=5)
        g, _ = est.backward(seg, p)
        p, adam = est.adam_update(p, g, adam)
        path = tmp_path / "ck.npz"
        est.save_checkpoint(path, p, adam, meta={"episodes": 120})
        p2, adam2, meta = est.load_checkpoint(path)
        for k, v in p.items():
            assert np.array_equal(v, getattr(p2, k))
        assert adam2.t == adam.t
        assert np.array_equal(adam2.m["W_fc1"], adam.m["W_fc1"])
        assert int(meta["episodes"]) == 120

    def test_params_only(self, tmp_path):
        p = est.init_params(4, np.random.default_rng(15))
        path = tmp_path / "p.npz"
        est.save_checkpoint(path, p)
        p2, adam, _ = est.load_checkpoint(path)
        assert adam is None
        assert p2.hidden == 4
