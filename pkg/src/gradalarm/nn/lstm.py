"""LSTM cell with exact backpropagation through time.

Gate layout inside the stacked weight matrices is ``[input, forget,
candidate, output]`` along the last axis. Sequences are time-major
``[S, B, D]`` at this level; the network wrapper transposes batch-major
input as needed.
"""

from __future__ import annotations

import numpy as np

from gradalarm.errors import ConfigError

from .layers import sigmoid


def lstm_forward(wx: np.ndarray, wh: np.ndarray, b: np.ndarray, x: np.ndarray):
    """Run the LSTM recurrence over a time-major sequence.

    Args:
        wx: Input kernel ``[D, 4H]``.
        wh: Recurrent kernel ``[H, 4H]``.
        b: Gate bias ``[4H]``.
        x: Input sequence ``[S, B, D]`` with ``S >= 1``.

    Returns:
        ``(h_seq [S, B, H], (h_last, c_last), cache)``.
    """
    if x.ndim != 3:
        raise ConfigError(f"lstm expects [S, B, D] input, got shape {tuple(x.shape)}")
    s, batch, d = x.shape
    if s < 1:
        raise ConfigError("lstm needs at least one time step")
    if wx.shape[0] != d:
        raise ConfigError(f"lstm input dim mismatch: kernel {wx.shape[0]}, input {d}")
    hidden = wh.shape[0]
    if wx.shape[1] != 4 * hidden or wh.shape[1] != 4 * hidden or b.shape[0] != 4 * hidden:
        raise ConfigError("lstm gate shapes are inconsistent")

    h_seq = np.zeros((s, batch, hidden), dtype=x.dtype)
    c_seq = np.zeros((s, batch, hidden), dtype=x.dtype)
    gates = np.zeros((s, batch, 4 * hidden), dtype=x.dtype)
    h_prev = np.zeros((batch, hidden), dtype=x.dtype)
    c_prev = np.zeros((batch, hidden), dtype=x.dtype)

    for t in range(s):
        z = x[t] @ wx + h_prev @ wh + b
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = sigmoid(z[:, 3 * hidden :])
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        gates[t, :, :hidden] = i
        gates[t, :, hidden : 2 * hidden] = f
        gates[t, :, 2 * hidden : 3 * hidden] = g
        gates[t, :, 3 * hidden :] = o
        c_seq[t] = c
        h_seq[t] = h
        h_prev, c_prev = h, c

    cache = (x, wx, wh, gates, h_seq, c_seq)
    return h_seq, (h_seq[-1], c_seq[-1]), cache


def lstm_backward(cache, dh_seq: np.ndarray):
    """Backpropagate through time given gradients w.r.t. every hidden state.

    Returns ``(dx [S, B, D], dwx, dwh, db)``.
    """
    x, wx, wh, gates, h_seq, c_seq = cache
    s, batch, hidden = h_seq.shape

    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros_like(wx[0])
    dx = np.zeros_like(x)
    dh_next = np.zeros((batch, hidden), dtype=x.dtype)
    dc_next = np.zeros((batch, hidden), dtype=x.dtype)

    for t in range(s - 1, -1, -1):
        i = gates[t, :, :hidden]
        f = gates[t, :, hidden : 2 * hidden]
        g = gates[t, :, 2 * hidden : 3 * hidden]
        o = gates[t, :, 3 * hidden :]
        c = c_seq[t]
        c_prev = c_seq[t - 1] if t > 0 else np.zeros_like(c)
        h_prev = h_seq[t - 1] if t > 0 else np.zeros_like(h_seq[0])
        tanh_c = np.tanh(c)

        dh = dh_seq[t] + dh_next
        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev

        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dwx += x[t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[t] = dz @ wx.T
        dh_next = dz @ wh.T
        dc_next = dc * f

    return dx, dwx, dwh, db
