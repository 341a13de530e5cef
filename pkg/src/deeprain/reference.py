"""Brute-force reference implementations used as independent oracles.

Everything here is written as plain loops and straight-line formula
transcriptions, deliberately sharing no code with the fast paths in
``tensor``, ``autodiff``, ``model``, or ``optim``. The self-test command and
the test suite compare the production implementations against these.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(input, kernels, bias=None):
    """Direct quadruple-loop same-padded convolution over [C,H,W]."""
    c, h, w = input.shape
    o, _, kh, kw = kernels.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((o, h, w), dtype=np.float64)
    for oo in range(o):
        for y in range(h):
            for x in range(w):
                acc = 0.0 if bias is None else float(bias[oo])
                for cc in range(c):
                    for dy in range(kh):
                        for dx in range(kw):
                            yy = y + dy - ph
                            xx = x + dx - pw
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += float(kernels[oo, cc, dy, dx]) * float(
                                    input[cc, yy, xx]
                                )
                out[oo, y, x] = acc
    return out


def avg_pool2d_naive(t, factor):
    """Window-enumeration average pooling with valid-cell edge handling."""
    c, h, w = t.shape
    oh = -(-h // factor)
    ow = -(-w // factor)
    out = np.zeros((c, oh, ow), dtype=np.float64)
    for cc in range(c):
        for oy in range(oh):
            for ox in range(ow):
                vals = []
                for y in range(oy * factor, min((oy + 1) * factor, h)):
                    for x in range(ox * factor, min((ox + 1) * factor, w)):
                        vals.append(float(t[cc, y, x]))
                out[cc, oy, ox] = sum(vals) / len(vals)
    return out


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def convlstm_cell_naive(params, x, h_prev, c_prev):
    """Straight-line transcription of the ConvLSTM gate equations.

    i = sigma(W_xi * x + W_hi * h + b_i)
    f = sigma(W_xf * x + W_hf * h + b_f)
    o = sigma(W_xo * x + W_ho * h + b_o)
    c_t = f . c_prev + i . tanh(W_xc * x + W_hc * h + b_c)
    h_t = o . tanh(c_t)

    where * is the same-padded convolution and . the elementwise product,
    evaluated with the brute-force convolution above. ``params`` is a mapping
    with keys w_xi, w_xf, w_xo, w_xc, w_hi, w_hf, w_ho, w_hc, b_i, b_f, b_o,
    b_c.
    """
    i = _sig(
        conv2d_naive(x, params["w_xi"], params["b_i"])
        + conv2d_naive(h_prev, params["w_hi"])
    )
    f = _sig(
        conv2d_naive(x, params["w_xf"], params["b_f"])
        + conv2d_naive(h_prev, params["w_hf"])
    )
    o = _sig(
        conv2d_naive(x, params["w_xo"], params["b_o"])
        + conv2d_naive(h_prev, params["w_ho"])
    )
    g = np.tanh(
        conv2d_naive(x, params["w_xc"], params["b_c"])
        + conv2d_naive(h_prev, params["w_hc"])
    )
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def fclstm_cell_naive(params, x, h_prev, c_prev):
    """Same gate algebra with matrix products instead of convolutions."""
    i = _sig(params["w_xi"] @ x + params["w_hi"] @ h_prev + params["b_i"])
    f = _sig(params["w_xf"] @ x + params["w_hf"] @ h_prev + params["b_f"])
    o = _sig(params["w_xo"] @ x + params["w_ho"] @ h_prev + params["b_o"])
    g = np.tanh(params["w_xc"] @ x + params["w_hc"] @ h_prev + params["b_c"])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def adam_trace_scalar(theta0, grad_fn, lr, beta1, beta2, eps, steps):
    """Hand-stepped scalar Adam recurrence in plain Python floats."""
    theta = float(theta0)
    m = 0.0
    v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = float(grad_fn(theta))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out
