"""Compiled inner loops for LSTM sequences and CTC recursions.

All kernels operate on plain float64 arrays and are deterministic. Gate
layout inside the 4H axis is [input | forget | cell | output]. Padded
frames (t >= lengths[b]) keep zero states and zero stored gates, which
also makes the backward pass propagate exact zeros through them.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, fastmath=False)
def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


@njit(cache=True)
def lstm_sequence_forward(xp, wh, lengths, reverse):
    """Run one LSTM direction over a padded batch.

    xp       : [B, T, 4H] input projections (x @ Wx + b), precomputed
    wh       : [H, 4H] recurrent weights
    lengths  : [B] valid frame counts
    reverse  : process frames T-1..0 instead of 0..T-1

    Returns h [B,T,H], c [B,T,H] and the activated gates [B,T,4H].
    """
    B, T, H4 = xp.shape
    H = H4 // 4
    h = np.zeros((B, T, H))
    c = np.zeros((B, T, H))
    gates = np.zeros((B, T, H4))
    hprev = np.zeros((B, H))
    cprev = np.zeros((B, H))
    for step in range(T):
        t = T - 1 - step if reverse else step
        z = np.dot(hprev, wh)
        for b in range(B):
            if t >= lengths[b]:
                continue
            for j in range(H):
                zi = z[b, j] + xp[b, t, j]
                zf = z[b, H + j] + xp[b, t, H + j]
                zg = z[b, 2 * H + j] + xp[b, t, 2 * H + j]
                zo = z[b, 3 * H + j] + xp[b, t, 3 * H + j]
                gi = 1.0 / (1.0 + math.exp(-zi))
                gf = 1.0 / (1.0 + math.exp(-zf))
                gg = math.tanh(zg)
                go = 1.0 / (1.0 + math.exp(-zo))
                cn = gf * cprev[b, j] + gi * gg
                hn = go * math.tanh(cn)
                gates[b, t, j] = gi
                gates[b, t, H + j] = gf
                gates[b, t, 2 * H + j] = gg
                gates[b, t, 3 * H + j] = go
                c[b, t, j] = cn
                h[b, t, j] = hn
                cprev[b, j] = cn
                hprev[b, j] = hn
    return h, c, gates


@njit(cache=True)
def lstm_sequence_backward(dh_out, h, c, gates, wh, lengths, reverse):
    """Backpropagate through lstm_sequence_forward.

    dh_out is the gradient w.r.t. the emitted hidden sequence. Returns
    (dxp [B,T,4H], dwh [H,4H]); the gradient w.r.t. the input
    projections also carries the bias and input-weight gradients since
    xp = x @ Wx + b.
    """
    B, T, H = dh_out.shape
    H4 = 4 * H
    dxp = np.zeros((B, T, H4))
    dwh = np.zeros((H, H4))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    hprev = np.zeros((B, H))
    dz = np.zeros((B, H4))
    whT = wh.T.copy()
    for step in range(T):
        t = step if reverse else T - 1 - step
        for b in range(B):
            if t >= lengths[b]:
                for j in range(H4):
                    dz[b, j] = 0.0
                continue
            for j in range(H):
                gi = gates[b, t, j]
                gf = gates[b, t, H + j]
                gg = gates[b, t, 2 * H + j]
                go = gates[b, t, 3 * H + j]
                tc = math.tanh(c[b, t, j])
                dh = dh_out[b, t, j] + dh_next[b, j]
                dc = dc_next[b, j] + dh * go * (1.0 - tc * tc)
                if reverse:
                    cp = c[b, t + 1, j] if t + 1 < T else 0.0
                else:
                    cp = c[b, t - 1, j] if t > 0 else 0.0
                dz[b, j] = dc * gg * gi * (1.0 - gi)
                dz[b, H + j] = dc * cp * gf * (1.0 - gf)
                dz[b, 2 * H + j] = dc * gi * (1.0 - gg * gg)
                dz[b, 3 * H + j] = dh * tc * go * (1.0 - go)
                dc_next[b, j] = dc * gf
        for b in range(B):
            for j in range(H):
                if reverse:
                    hprev[b, j] = h[b, t + 1, j] if t + 1 < T else 0.0
                else:
                    hprev[b, j] = h[b, t - 1, j] if t > 0 else 0.0
        dwh += np.dot(hprev.T.copy(), dz)
        dh_next = np.dot(dz, whT)
        for b in range(B):
            for j in range(H4):
                dxp[b, t, j] = dz[b, j]
    return dxp, dwh


@njit(cache=True)
def ctc_forward_backward(log_probs, ext):
    """CTC negative log-likelihood and its gradient w.r.t. log_probs.

    log_probs : [T, V] normalized per-frame log distributions
    ext       : [S] blank-extended label (blank, l1, blank, ..., blank)

    The alpha/beta recursions run entirely in log space. Returns
    (loss, grad [T, V]) where loss = -log p(label | input).
    """
    T, V = log_probs.shape
    S = ext.shape[0]
    blank = ext[0]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _logaddexp(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _logaddexp(a, alpha[t - 1, s - 2])
            if a != NEG_INF:
                alpha[t, s] = a + log_probs[t, ext[s]]

    ll = alpha[T - 1, S - 1]
    if S > 1:
        ll = _logaddexp(ll, alpha[T - 1, S - 2])

    # beta excludes the emission at the current frame, so that
    # alpha[t,s] + beta[t,s] is the full path mass through (t, s).
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[t + 1, s]
            if b != NEG_INF:
                b = b + log_probs[t + 1, ext[s]]
            if s + 1 < S and beta[t + 1, s + 1] != NEG_INF:
                b = _logaddexp(b, beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
            if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                if beta[t + 1, s + 2] != NEG_INF:
                    b = _logaddexp(b, beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
            beta[t, s] = b

    grad = np.zeros((T, V))
    for t in range(T):
        for s in range(S):
            g = alpha[t, s] + beta[t, s]
            if g != NEG_INF:
                grad[t, ext[s]] -= math.exp(g - ll)
    return -ll, grad
