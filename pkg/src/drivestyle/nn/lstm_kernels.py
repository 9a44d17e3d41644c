"""Compiled LSTM recursions.

The time loop is inherently sequential; running it through the interpreter
costs far more than the arithmetic, so both directions are compiled.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


# libm tanh is about twice the cost of exp and dominates the cell update,
# so both activations are built on exp/expm1 with overflow-safe branches


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _tanh(z):
    e = math.expm1(-2.0 * abs(z))
    t = -e / (2.0 + e)
    return t if z >= 0.0 else -t


@njit(cache=True)
def _matmul_into(a, b, out):
    # explicit loops beat a BLAS call at these sizes
    n, m = a.shape
    p = b.shape[1]
    for r in range(n):
        for j in range(p):
            out[r, j] = 0.0
        for k in range(m):
            a_rk = a[r, k]
            for j in range(p):
                out[r, j] += a_rk * b[k, j]


@njit(cache=True)
def lstm_forward_kernel(projected, wh):
    """Run the cell over ``projected [B, T, 4H]`` (input projection plus bias).

    Returns ``gates [T, B, 4H]`` (activated i, f, g, o), ``cells [T+1, B, H]``,
    ``hiddens [T+1, B, H]`` (index 0 holds the zero initial state) and
    ``cell_tanh [T, B, H]`` for the backward pass.
    """
    batch, time, four_h = projected.shape
    hidden = four_h // 4
    gates = np.empty((time, batch, four_h))
    cells = np.zeros((time + 1, batch, hidden))
    hiddens = np.zeros((time + 1, batch, hidden))
    cell_tanh = np.empty((time, batch, hidden))
    z = np.empty((batch, four_h))
    for t in range(time):
        _matmul_into(hiddens[t], wh, z)
        for b in range(batch):
            for k in range(hidden):
                i = _sigmoid(z[b, k] + projected[b, t, k])
                f = _sigmoid(z[b, hidden + k] + projected[b, t, hidden + k])
                g = _tanh(z[b, 2 * hidden + k] + projected[b, t, 2 * hidden + k])
                o = _sigmoid(z[b, 3 * hidden + k] + projected[b, t, 3 * hidden + k])
                gates[t, b, k] = i
                gates[t, b, hidden + k] = f
                gates[t, b, 2 * hidden + k] = g
                gates[t, b, 3 * hidden + k] = o
                c = f * cells[t, b, k] + i * g
                cells[t + 1, b, k] = c
                tc = _tanh(c)
                cell_tanh[t, b, k] = tc
                hiddens[t + 1, b, k] = o * tc
    return gates, cells, hiddens, cell_tanh


@njit(cache=True)
def lstm_backward_kernel(grad_h, gates, cells, hiddens, cell_tanh, wh):
    """Backpropagate ``grad_h [B, H]`` on the last hidden state through time.

    Returns ``dz [B, T, 4H]`` (gradient on pre-activations, equal to the
    gradient on the projected input) and ``d w_hidden [H, 4H]``.
    """
    time, batch, four_h = gates.shape
    hidden = four_h // 4
    dz = np.empty((batch, time, four_h))
    dz_t = np.empty((batch, four_h))
    dwh = np.zeros((hidden, four_h))
    dh = grad_h.copy()
    dc = np.zeros((batch, hidden))
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(time - 1, -1, -1):
        for b in range(batch):
            for k in range(hidden):
                i = gates[t, b, k]
                f = gates[t, b, hidden + k]
                g = gates[t, b, 2 * hidden + k]
                o = gates[t, b, 3 * hidden + k]
                tc = cell_tanh[t, b, k]
                d_o = dh[b, k] * tc
                dcell = dc[b, k] + dh[b, k] * o * (1.0 - tc * tc)
                dz_t[b, k] = dcell * g * i * (1.0 - i)
                dz_t[b, hidden + k] = dcell * cells[t, b, k] * f * (1.0 - f)
                dz_t[b, 2 * hidden + k] = dcell * i * (1.0 - g * g)
                dz_t[b, 3 * hidden + k] = d_o * o * (1.0 - o)
                dc[b, k] = dcell * f
        dz[:, t, :] = dz_t
        for b in range(batch):
            for k in range(hidden):
                hk = hiddens[t, b, k]
                for j in range(four_h):
                    dwh[k, j] += hk * dz_t[b, j]
        _matmul_into(dz_t, wh_t, dh)
    return dz, dwh
