"""Batched LSTM layer with full backpropagation through time.

Gate blocks are stacked as (output, input, forget, candidate), so ``W`` is (4H, D),
``U`` is (4H, H) and ``b`` is (4H,). With that order the three sigmoid gates are one
contiguous slice in the forward pass, and the three blocks driven by the cell-state
gradient (input, forget, candidate) are one contiguous slice in the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DomainError

# gate block offsets, in units of H
O, I, F, G = 0, 1, 2, 3


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int,
              forget_bias: float = 1.0) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[F * hidden:(F + 1) * hidden] = forget_bias
    return {
        "W": rng.uniform(-bound, bound, size=(4 * hidden, input_dim)),
        "U": rng.uniform(-bound, bound, size=(4 * hidden, hidden)),
        "b": b,
    }


def lstm_step(params: dict[str, np.ndarray], x, h, c):
    """One recurrence step: gates from ``x`` and ``h``, then the new (h, c)."""
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    if (W.shape != (4 * H, x.shape[-1]) or U.shape != (4 * H, H) or b.shape != (4 * H,)
            or h.shape[-1] != H or c.shape[-1] != H):
        raise DomainError(
            f"lstm_step shape mismatch: x {x.shape}, h {h.shape}, c {c.shape} "
            f"for W {W.shape}, U {U.shape}, b {b.shape}"
        )
    a = x @ W.T + h @ U.T + b
    o = sigmoid(a[..., O * H:(O + 1) * H])
    i = sigmoid(a[..., I * H:(I + 1) * H])
    f = sigmoid(a[..., F * H:(F + 1) * H])
    g = np.tanh(a[..., G * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def _gate_scale(H: int) -> np.ndarray:
    # sigmoid(a) = 0.5 * tanh(a / 2) + 0.5: halve the sigmoid pre-activations so one
    # tanh call serves all four blocks
    s = np.full(4 * H, 0.5)
    s[G * H:] = 1.0
    return s


@dataclass
class LstmCache:
    x: np.ndarray       # (B, T, D) inputs
    gates: np.ndarray   # (T, B, 4H) post-activation
    c: np.ndarray       # (T + 1, B, H); c[0] is the zero initial state
    h: np.ndarray       # (T + 1, B, H)
    tanh_c: np.ndarray  # (T, B, H)


def _recur(zs_at, T: int, B: int, U: np.ndarray, keep_cache: bool):
    """Run the recurrence given pre-scaled input projections ``zs_at(t)`` of shape (B, 4H)."""
    H = U.shape[1]
    dt = U.dtype
    s = _gate_scale(H).astype(dt)
    UsT = np.ascontiguousarray((U * s[:, None]).T)
    h = np.zeros((B, H), dt)
    c = np.zeros((B, H), dt)
    if keep_cache:
        gates = np.empty((T, B, 4 * H), dt)
        cs = np.zeros((T + 1, B, H), dt)
        hs = np.zeros((T + 1, B, H), dt)
        tcs = np.empty((T, B, H), dt)
    a = np.empty((B, 4 * H), dt)
    for t in range(T):
        np.dot(h, UsT, out=a)
        a += zs_at(t)
        np.tanh(a, out=a)
        sig = a[:, :3 * H]
        sig *= 0.5
        sig += 0.5
        c = a[:, F * H:(F + 1) * H] * c
        c += a[:, I * H:(I + 1) * H] * a[:, G * H:]
        tc = np.tanh(c)
        h = a[:, O * H:(O + 1) * H] * tc
        if keep_cache:
            gates[t] = a
            cs[t + 1] = c
            hs[t + 1] = h
            tcs[t] = tc
    if keep_cache:
        return h, (gates, cs, hs, tcs)
    return h, None


def lstm_forward(params: dict[str, np.ndarray], x: np.ndarray, keep_cache: bool = True):
    """Run sequences ``x`` (B, T, D) from zero state; return the final hidden state (B, H)."""
    W, U, b = params["W"], params["U"], params["b"]
    B, T, D = x.shape
    H = U.shape[1]
    s = _gate_scale(H).astype(W.dtype)
    x = x.astype(W.dtype, copy=False)
    z = (x.reshape(B * T, D) @ (W * s[:, None]).T + b * s).reshape(B, T, 4 * H)
    zs = np.ascontiguousarray(z.transpose(1, 0, 2))
    h, raw = _recur(zs.__getitem__, T, B, U, keep_cache)
    if raw is None:
        return h, None
    return h, LstmCache(x, *raw)


def frame_projection(params: dict[str, np.ndarray], features: np.ndarray) -> np.ndarray:
    """Pre-scaled input projection of every frame, for windowed inference.

    Windows overlap heavily, so projecting each frame once and gathering is much
    cheaper than projecting each window.
    """
    W, b = params["W"], params["b"]
    s = _gate_scale(params["U"].shape[1]).astype(W.dtype)
    return features @ (W * s[:, None]).T + b * s


def lstm_forward_gathered(params: dict[str, np.ndarray], zs_at, T: int, B: int) -> np.ndarray:
    """Final hidden state where step ``t`` input projection comes from ``zs_at(t)``.

    Zero-padded frames must project to the (scaled) bias, as ``frame_projection`` of a
    zero row does.
    """
    h, _ = _recur(zs_at, T, B, params["U"], keep_cache=False)
    return h


def lstm_backward(params: dict[str, np.ndarray], cache: LstmCache, dh_last: np.ndarray):
    """Gradients w.r.t. W, U, b given dL/dh at the final step (no loss on earlier steps)."""
    U = params["U"]
    H = U.shape[1]
    gates, cs, tcs = cache.gates, cache.c, cache.tanh_c
    T, B, _ = gates.shape
    o = gates[..., O * H:(O + 1) * H]
    i = gates[..., I * H:(I + 1) * H]
    f = gates[..., F * H:(F + 1) * H]
    g = gates[..., G * H:]
    # time-vectorized local derivatives; only the chain through dh/dc stays in the loop
    dc_from_h = o * (1.0 - tcs * tcs)
    d_o = tcs * o * (1.0 - o)
    d_ifg = np.stack([g * i * (1.0 - i), cs[:-1] * f * (1.0 - f), i * (1.0 - g * g)], axis=2)
    f = np.ascontiguousarray(f)

    da_all = np.empty((T, B, 4 * H), gates.dtype)
    blocks = da_all.reshape(T, B, 4, H)
    dh = dh_last.astype(gates.dtype, copy=False)
    dc = np.zeros((B, H), gates.dtype)
    for t in range(T - 1, -1, -1):
        dc += dh * dc_from_h[t]
        np.multiply(dc[:, None, :], d_ifg[t], out=blocks[t, :, 1:, :])
        np.multiply(dh, d_o[t], out=blocks[t, :, 0, :])
        dc *= f[t]
        dh = da_all[t] @ U
    flat = da_all.transpose(1, 0, 2).reshape(B * T, 4 * H)
    dW = flat.T @ cache.x.reshape(B * T, -1)
    dU = da_all.reshape(T * B, 4 * H).T @ cache.h[:-1].reshape(T * B, H)
    db = flat.sum(axis=0)
    return {"W": dW, "U": dU, "b": db}
