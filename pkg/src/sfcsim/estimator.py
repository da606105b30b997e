"""Recurrent predictive network that infers seeker scale-factor errors.

The network consumes the previous prediction error e (5) and the thruster
command vector u (16), passes them through a tanh input layer and a gated
recurrent unit, and emits two linear heads: the predicted next observation
and the current scale-factor estimate.  The hidden state is initialized from
the first observation of the episode through a two-layer tanh map, so the
initializer is trained jointly with the rest of the network.

Everything is plain float64 numpy.  Gradients are exact: backpropagation
through time over stored rollout segments, with the hidden-state initializer
receiving gradient only on segments that start an episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

OBS_DIM = 5
CMD_DIM = 16
IN_DIM = OBS_DIM + CMD_DIM
HIDDEN_DEFAULT = 64

ADAM_LR_DEFAULT = 5e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class FaultEpisodeError(RuntimeError):
    """Raised when the network receives or produces non-finite values."""


@dataclass
class PcmParams:
    """All trainable arrays.  Field order fixes the parameter ordering."""

    # hidden-state initializer: h0 = tanh(W_fch2 tanh(W_fch1 o0 + b) + b)
    W_fch1: np.ndarray
    b_fch1: np.ndarray
    W_fch2: np.ndarray
    b_fch2: np.ndarray
    # input layer over [e; u]
    W_fc1: np.ndarray
    b_fc1: np.ndarray
    # recurrent gates
    W_xr: np.ndarray
    b_xr: np.ndarray
    W_hh: np.ndarray
    b_hh: np.ndarray
    W_xz: np.ndarray
    b_xz: np.ndarray
    W_hz: np.ndarray
    b_hz: np.ndarray
    W_xn: np.ndarray
    b_xn: np.ndarray
    W_hn: np.ndarray
    b_hn: np.ndarray
    # output heads: predicted next observation / scale-factor estimate
    W_fc3: np.ndarray
    b_fc3: np.ndarray
    W_fc4: np.ndarray
    b_fc4: np.ndarray

    @property
    def hidden(self) -> int:
        return self.b_fc1.shape[0]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "PcmParams":
        return PcmParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.items()}

    def n_params(self) -> int:
        return sum(v.size for _, v in self.items())

    def assert_finite(self) -> None:
        for k, v in self.items():
            if not np.all(np.isfinite(v)):
                raise FaultEpisodeError(f"non-finite parameter {k}")


def init_params(hidden: int = HIDDEN_DEFAULT,
                rng: np.random.Generator | None = None) -> PcmParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and biases."""
    rng = rng or np.random.default_rng(0)

    def layer(out_dim, in_dim):
        k = 1.0 / np.sqrt(in_dim)
        return (rng.uniform(-k, k, (out_dim, in_dim)),
                rng.uniform(-k, k, out_dim))

    W_fch1, b_fch1 = layer(hidden, OBS_DIM)
    W_fch2, b_fch2 = layer(hidden, hidden)
    W_fc1, b_fc1 = layer(hidden, IN_DIM)
    W_xr, b_xr = layer(hidden, hidden)
    W_hh, b_hh = layer(hidden, hidden)
    W_xz, b_xz = layer(hidden, hidden)
    W_hz, b_hz = layer(hidden, hidden)
    W_xn, b_xn = layer(hidden, hidden)
    W_hn, b_hn = layer(hidden, hidden)
    W_fc3, b_fc3 = layer(OBS_DIM, hidden)
    W_fc4, b_fc4 = layer(OBS_DIM, hidden)
    return PcmParams(W_fch1, b_fch1, W_fch2, b_fch2, W_fc1, b_fc1,
                     W_xr, b_xr, W_hh, b_hh, W_xz, b_xz, W_hz, b_hz,
                     W_xn, b_xn, W_hn, b_hn, W_fc3, b_fc3, W_fc4, b_fc4)


@dataclass
class PcmState:
    """Per-episode mutable state threaded through forward steps."""

    h: np.ndarray
    e: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    pred_obs: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))
    eps_hat: np.ndarray = field(default_factory=lambda: np.zeros(OBS_DIM))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = ADAM_LR_DEFAULT
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: PcmParams,
                   lr: float = ADAM_LR_DEFAULT) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), lr=lr)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split form avoids overflow warnings for large negative inputs
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_hidden(o0: np.ndarray, params: PcmParams) -> np.ndarray:
    """Learned hidden-state initialization from the first observation."""
    g = np.tanh(params.W_fch1 @ o0 + params.b_fch1)
    return np.tanh(params.W_fch2 @ g + params.b_fch2)


def init_state(o0: np.ndarray, params: PcmParams) -> PcmState:
    """Episode-start state: learned h0, zero error and zero estimates."""
    return PcmState(h=init_hidden(np.asarray(o0, float), params))


def gru_step(x: np.ndarray, h_prev: np.ndarray,
             params: PcmParams) -> np.ndarray:
    r = _sigmoid(params.W_xr @ x + params.b_xr
                 + params.W_hh @ h_prev + params.b_hh)
    z = _sigmoid(params.W_xz @ x + params.b_xz
                 + params.W_hz @ h_prev + params.b_hz)
    n = np.tanh(params.W_xn @ x + params.b_xn
                + r * (params.W_hn @ h_prev + params.b_hn))
    return (1.0 - z) * n + z * h_prev


def forward_step(e: np.ndarray, u: np.ndarray, state: PcmState,
                 params: PcmParams) -> tuple[np.ndarray, np.ndarray, PcmState]:
    """One network step: returns (predicted next obs, estimate, new state)."""
    e = np.asarray(e, float)
    u = np.asarray(u, float)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(u))
            and np.all(np.isfinite(state.h))):
        raise FaultEpisodeError("non-finite network input")
    x = np.tanh(params.W_fc1 @ np.concatenate([e, u]) + params.b_fc1)
    h = gru_step(x, state.h, params)
    pred_obs = params.W_fc3 @ h + params.b_fc3
    eps_hat = params.W_fc4 @ h + params.b_fc4
    if not (np.all(np.isfinite(pred_obs)) and np.all(np.isfinite(eps_hat))):
        raise FaultEpisodeError("non-finite network output")
    return pred_obs, eps_hat, PcmState(h=h, e=e, pred_obs=pred_obs,
                                       eps_hat=eps_hat)


def loss(pred_obs: np.ndarray, obs: np.ndarray, pred_eps: np.ndarray,
         eps: np.ndarray) -> tuple[float, float, float]:
    """Sums of squared residuals for both heads: (total, obs, eps)."""
    l_o = float(np.sum((np.asarray(pred_obs) - np.asarray(obs)) ** 2))
    l_e = float(np.sum((np.asarray(pred_eps) - np.asarray(eps)) ** 2))
    return l_o + l_e, l_o, l_e


@dataclass
class Segment:
    """One truncated-backprop window of stored rollout data.

    ``e``/``u`` are the per-step network inputs, ``obs_target`` and
    ``eps_target`` the supervision, ``h0`` the hidden state recorded when the
    rollout originally reached the first step of this window.  When the
    window starts an episode, ``o0`` carries the first observation and the
    hidden state is recomputed from it so the initializer receives gradient.
    """

    e: np.ndarray
    u: np.ndarray
    h0: np.ndarray
    obs_target: np.ndarray
    eps_target: np.ndarray
    o0: np.ndarray | None = None

    def __len__(self) -> int:
        return self.e.shape[0]


def _forward_segment(seg: Segment, params: PcmParams):
    """Unrolled forward pass with the caches backward needs."""
    T = len(seg)
    if seg.o0 is not None:
        g = np.tanh(params.W_fch1 @ seg.o0 + params.b_fch1)
        h = np.tanh(params.W_fch2 @ g + params.b_fch2)
    else:
        g = None
        h = seg.h0
    cache = []
    l_o = l_e = 0.0
    for t in range(T):
        inp = np.concatenate([seg.e[t], seg.u[t]])
        x = np.tanh(params.W_fc1 @ inp + params.b_fc1)
        h_prev = h
        r = _sigmoid(params.W_xr @ x + params.b_xr
                     + params.W_hh @ h_prev + params.b_hh)
        z = _sigmoid(params.W_xz @ x + params.b_xz
                     + params.W_hz @ h_prev + params.b_hz)
        mrec = params.W_hn @ h_prev + params.b_hn
        n = np.tanh(params.W_xn @ x + params.b_xn + r * mrec)
        h = (1.0 - z) * n + z * h_prev
        res_o = (params.W_fc3 @ h + params.b_fc3) - seg.obs_target[t]
        res_e = (params.W_fc4 @ h + params.b_fc4) - seg.eps_target[t]
        l_o += float(res_o @ res_o)
        l_e += float(res_e @ res_e)
        cache.append((inp, x, h_prev, r, z, mrec, n, h, res_o, res_e))
    return cache, g, (l_o + l_e, l_o, l_e)


def backward(seg: Segment, params: PcmParams
             ) -> tuple[dict[str, np.ndarray], tuple[float, float, float]]:
    """Exact gradients of the segment loss w.r.t. every parameter."""
    cache, g_init, losses = _forward_segment(seg, params)
    grads = params.zeros_like()
    dh = np.zeros(params.hidden)
    for t in range(len(seg) - 1, -1, -1):
        inp, x, h_prev, r, z, mrec, n, h, res_o, res_e = cache[t]
        do = 2.0 * res_o
        de = 2.0 * res_e
        grads["W_fc3"] += np.outer(do, h)
        grads["b_fc3"] += do
        grads["W_fc4"] += np.outer(de, h)
        grads["b_fc4"] += de
        dh = dh + params.W_fc3.T @ do + params.W_fc4.T @ de

        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z

        dan = dn * (1.0 - n * n)
        grads["W_xn"] += np.outer(dan, x)
        grads["b_xn"] += dan
        dr = dan * mrec
        dmrec = dan * r
        grads["W_hn"] += np.outer(dmrec, h_prev)
        grads["b_hn"] += dmrec
        dh_prev = dh_prev + params.W_hn.T @ dmrec
        dx = params.W_xn.T @ dan

        dar = dr * r * (1.0 - r)
        grads["W_xr"] += np.outer(dar, x)
        grads["b_xr"] += dar
        grads["W_hh"] += np.outer(dar, h_prev)
        grads["b_hh"] += dar
        dh_prev = dh_prev + params.W_hh.T @ dar
        dx = dx + params.W_xr.T @ dar

        daz = dz * z * (1.0 - z)
        grads["W_xz"] += np.outer(daz, x)
        grads["b_xz"] += daz
        grads["W_hz"] += np.outer(daz, h_prev)
        grads["b_hz"] += daz
        dh_prev = dh_prev + params.W_hz.T @ daz
        dx = dx + params.W_xz.T @ daz

        dax = dx * (1.0 - x * x)
        grads["W_fc1"] += np.outer(dax, inp)
        grads["b_fc1"] += dax
        dh = dh_prev

    if seg.o0 is not None:
        # h0 = tanh(W_fch2 g + b), g = tanh(W_fch1 o0 + b)
        h0 = np.tanh(params.W_fch2 @ g_init + params.b_fch2)
        da2 = dh * (1.0 - h0 * h0)
        grads["W_fch2"] += np.outer(da2, g_init)
        grads["b_fch2"] += da2
        dg = params.W_fch2.T @ da2
        da1 = dg * (1.0 - g_init * g_init)
        grads["W_fch1"] += np.outer(da1, seg.o0)
        grads["b_fch1"] += da1
    return grads, losses


def segment_loss(seg: Segment,
                 params: PcmParams) -> tuple[float, float, float]:
    """Segment loss without gradients (used by metrics and tests)."""
    _, _, losses = _forward_segment(seg, params)
    return losses


def adam_update(params: PcmParams, grads: dict[str, np.ndarray],
                adam: AdamState) -> tuple[PcmParams, AdamState]:
    """Standard bias-corrected ADAM step.  Returns fresh objects."""
    t = adam.t + 1
    new_m, new_v = {}, {}
    out = {}
    bc1 = 1.0 - adam.beta1 ** t
    bc2 = 1.0 - adam.beta2 ** t
    for k, p in params.items():
        gk = grads[k]
        mk = adam.beta1 * adam.m[k] + (1.0 - adam.beta1) * gk
        vk = adam.beta2 * adam.v[k] + (1.0 - adam.beta2) * gk * gk
        new_m[k] = mk
        new_v[k] = vk
        out[k] = p - adam.lr * (mk / bc1) / (np.sqrt(vk / bc2) + adam.eps)
    return PcmParams(**out), AdamState(m=new_m, v=new_v, t=t, lr=adam.lr,
                                       beta1=adam.beta1, beta2=adam.beta2,
                                       eps=adam.eps)


def save_checkpoint(path, params: PcmParams, adam: AdamState | None = None,
                    meta: dict | None = None) -> None:
    """Write params (and optionally optimizer state) to an .npz file."""
    payload: dict[str, np.ndarray] = {"hidden": np.array(params.hidden)}
    for k, v in params.items():
        payload[f"p_{k}"] = v
    if adam is not None:
        payload["adam_t"] = np.array(adam.t)
        payload["adam_lr"] = np.array(adam.lr)
        for k in adam.m:
            payload[f"m_{k}"] = adam.m[k]
            payload[f"v_{k}"] = adam.v[k]
    for k, v in (meta or {}).items():
        payload[f"meta_{k}"] = np.asarray(v)
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[PcmParams, AdamState | None, dict]:
    with np.load(path, allow_pickle=False) as z:
        kw = {k[2:]: z[k].copy() for k in z.files if k.startswith("p_")}
        params = PcmParams(**kw)
        adam = None
        if "adam_t" in z.files:
            adam = AdamState(
                m={k[2:]: z[k].copy() for k in z.files
                   if k.startswith("m_")},
                v={k[2:]: z[k].copy() for k in z.files
                   if k.startswith("v_")},
                t=int(z["adam_t"]), lr=float(z["adam_lr"]))
        meta = {k[5:]: z[k].copy() for k in z.files if k.startswith("meta_")}
    params.assert_finite()
    return params, adam, meta
