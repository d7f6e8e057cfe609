"""Compiled inner loops for the collision integrals.

All routines work on flattened velocity lattices (C order over d axes) and on
half of a symmetric sphere quadrature: every direction sigma in the half set
has its antipode -sigma in the full set, and the caller has already doubled
the weights and symmetrized the angular function, which is exact for the
symmetrized gain term.
"""

from __future__ import annotations

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # prefer layers that need no version probe; old TBB builds only produce a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

MAX_D = 3


@njit(cache=True, inline="always")
def _smooth_step(t):
    # C-infinity transition: 1 for t <= 0, 0 for t >= 1
    if t <= 0.0:
        return 1.0
    if t >= 1.0:
        return 0.0
    a = math.exp(-1.0 / (1.0 - t))
    b = math.exp(-1.0 / t)
    return a / (a + b)


@njit(cache=True)
def mollifier_value(speed, rel_speed, abs_cos, delta):
    """Product of three smooth cut-offs in |v|, |v - v_*| and |cos theta|."""
    if delta <= 0.0:
        return 0.0
    inv = 1.0 / delta
    t_speed = _smooth_step((speed - inv) / inv)
    if t_speed == 0.0:
        return 0.0
    t_low = 1.0 - _smooth_step((rel_speed - delta) / delta)
    t_high = _smooth_step((rel_speed - inv) / inv)
    t_cos = _smooth_step((abs_cos - (1.0 - 2.0 * delta)) / delta)
    return t_speed * t_low * t_high * t_cos


@njit(cache=True, inline="always")
def _table_lookup(btab, z):
    # linear interpolation of the angular table on a uniform grid over [-1, 1]
    m = btab.shape[0]
    s = (z + 1.0) * 0.5 * (m - 1)
    if s <= 0.0:
        return btab[0]
    if s >= m - 1:
        return btab[m - 1]
    k = int(s)
    f = s - k
    return (1.0 - f) * btab[k] + f * btab[k + 1]


@njit(cache=True, inline="always")
def _envelope(y, d, inv_t):
    # Gaussian envelope exp(-|y|^2 / (2T)); interpolation acts on f / envelope
    if inv_t == 0.0:
        return 1.0
    s = 0.0
    for a in range(d):
        s += y[a] * y[a]
    return math.exp(-0.5 * inv_t * s)


@njit(cache=True, inline="always")
def _gauss(y, d):
    s = 0.0
    for a in range(d):
        s += y[a] * y[a]
    return (2.0 * math.pi) ** (-0.5 * d) * math.exp(-0.5 * s)


@njit(cache=True)
def _stencil(y, d, vmin, dv, nv, order, vmax, idx_out, w_out, ax_idx, ax_w):
    """Tensor Lagrange stencil of a point; returns the number of entries (0 outside the box)."""
    for a in range(d):
        if abs(y[a]) > vmax * (1.0 + 1e-12):
            return 0
    half = order // 2
    for a in range(d):
        t = (y[a] - vmin) / dv
        base = int(math.floor(t)) - (half - 1)
        if base < 0:
            base = 0
        if base > nv - order:
            base = nv - order
        for m in range(order):
            ax_idx[a, m] = base + m
            num = 1.0
            den = 1.0
            for n in range(order):
                if n != m:
                    num *= t - (base + n)
                    den *= m - n
            ax_w[a, m] = num / den
    count = 1
    for a in range(d):
        count *= order
    for c in range(count):
        rem = c
        flat = 0
        w = 1.0
        for a in range(d - 1, -1, -1):
            m = rem % order
            rem //= order
            stride = 1
            for _ in range(d - 1 - a):
                stride *= nv
            flat += ax_idx[a, m] * stride
            w *= ax_w[a, m]
        idx_out[c] = flat
        w_out[c] = w
    return count


@njit(cache=True, inline="always")
def _pair_geometry(vnodes, i, j, sig, s, d, vp, vq):
    """Fill post-collision velocities; returns (|v - v_*|, cos theta)."""
    r2 = 0.0
    for a in range(d):
        g = vnodes[i, a] - vnodes[j, a]
        r2 += g * g
    r = math.sqrt(r2)
    dot = 0.0
    for a in range(d):
        c = 0.5 * (vnodes[i, a] + vnodes[j, a])
        vp[a] = c + 0.5 * r * sig[s, a]
        vq[a] = c - 0.5 * r * sig[s, a]
        if r > 0.0:
            dot += (vnodes[i, a] - vnodes[j, a]) * sig[s, a]
    if r > 0.0:
        cos = dot / r
    else:
        cos = sig[s, 0]  # any fixed reference axis; the integrand does not depend on it
    return r, cos


@njit(cache=True, parallel=True)
def loss_weights(vnodes, w_v, sig, sw, btab, gamma, c_phi):
    """K[i, j] = w_j * sum_s w_s B(v_i - v_j, sigma_s); nu = K @ mu, loss = K @ g."""
    nvt, d = vnodes.shape
    ns = sig.shape[0]
    K = np.zeros((nvt, nvt))
    for i in prange(nvt):
        for j in range(nvt):
            r2 = 0.0
            for a in range(d):
                g = vnodes[i, a] - vnodes[j, a]
                r2 += g * g
            r = math.sqrt(r2)
            kin = c_phi * r**gamma if gamma > 0.0 else c_phi
            acc = 0.0
            for s in range(ns):
                dot = 0.0
                if r > 0.0:
                    for a in range(d):
                        dot += (vnodes[i, a] - vnodes[j, a]) * sig[s, a]
                    cos = dot / r
                else:
                    cos = sig[s, 0]
                acc += sw[s] * _table_lookup(btab, cos)
            K[i, j] = w_v[j] * kin * acc
    return K


@njit(cache=True, parallel=True)
def gain_direct(G, H, vnodes, w_v, sig, sw, btab, gamma, c_phi, vmin, dv, nv, order, vmax, inv_t):
    """Symmetrized gain 1/2 int B (H'G'_* + H'_*G') for fields stored as (N_v, N_x).

    G and H must already be divided by the interpolation envelope at the nodes.
    """
    nvt, d = vnodes.shape
    nxt = G.shape[1]
    ns = sig.shape[0]
    cnt_max = order**d
    out = np.zeros((nvt, nxt))
    for i in prange(nvt):
        vp = np.empty(d)
        vq = np.empty(d)
        ip = np.empty(cnt_max, dtype=np.int64)
        wp = np.empty(cnt_max)
        iq = np.empty(cnt_max, dtype=np.int64)
        wq = np.empty(cnt_max)
        ax_idx = np.empty((d, order), dtype=np.int64)
        ax_w = np.empty((d, order))
        hp = np.empty(nxt)
        gp = np.empty(nxt)
        hq = np.empty(nxt)
        gq = np.empty(nxt)
        acc = np.zeros(nxt)
        for j in range(nvt):
            for s in range(ns):
                r, cos = _pair_geometry(vnodes, i, j, sig, s, d, vp, vq)
                kin = c_phi * r**gamma if gamma > 0.0 else c_phi
                bw = kin * _table_lookup(btab, cos) * sw[s] * w_v[j]
                if bw == 0.0:
                    continue
                cp = _stencil(vp, d, vmin, dv, nv, order, vmax, ip, wp, ax_idx, ax_w)
                if cp == 0:
                    continue
                cq = _stencil(vq, d, vmin, dv, nv, order, vmax, iq, wq, ax_idx, ax_w)
                if cq == 0:
                    continue
                hp[:] = 0.0
                gp[:] = 0.0
                hq[:] = 0.0
                gq[:] = 0.0
                for c in range(cp):
                    a = ip[c]
                    w = wp[c]
                    for x in range(nxt):
                        hp[x] += w * H[a, x]
                        gp[x] += w * G[a, x]
                for c in range(cq):
                    a = iq[c]
                    w = wq[c]
                    for x in range(nxt):
                        hq[x] += w * H[a, x]
                        gq[x] += w * G[a, x]
                ew = 0.5 * bw * _envelope(vp, d, inv_t) * _envelope(vq, d, inv_t)
                for x in range(nxt):
                    acc[x] += ew * (hp[x] * gq[x] + hq[x] * gp[x])
        for x in range(nxt):
            out[i, x] = acc[x]
    return out


@njit(cache=True, parallel=True)
def linear_parts(vnodes, w_v, mu, sig, sw, btab, gamma, c_phi, vmin, dv, nv, order, vmax, inv_t, env_nodes, delta):
    """Matrices of h -> int Theta B [mu'_* h' + mu' h'_* - mu h_*] and of the same with 1 - Theta.

    The Maxwellian at post-collision velocities is evaluated exactly; only h is
    interpolated. Pass delta <= 0 to put everything into the second matrix.
    """
    nvt, d = vnodes.shape
    ns = sig.shape[0]
    cnt_max = order**d
    A = np.zeros((nvt, nvt))
    R = np.zeros((nvt, nvt))
    for i in prange(nvt):
        vp = np.empty(d)
        vq = np.empty(d)
        ip = np.empty(cnt_max, dtype=np.int64)
        wp = np.empty(cnt_max)
        iq = np.empty(cnt_max, dtype=np.int64)
        wq = np.empty(cnt_max)
        ax_idx = np.empty((d, order), dtype=np.int64)
        ax_w = np.empty((d, order))
        speed = 0.0
        for a in range(d):
            speed += vnodes[i, a] ** 2
        speed = math.sqrt(speed)
        for j in range(nvt):
            for s in range(ns):
                r, cos = _pair_geometry(vnodes, i, j, sig, s, d, vp, vq)
                kin = c_phi * r**gamma if gamma > 0.0 else c_phi
                bw = kin * _table_lookup(btab, cos) * sw[s] * w_v[j]
                if bw == 0.0:
                    continue
                th = mollifier_value(speed, r, abs(cos), delta)
                wa = bw * th
                wr = bw - wa
                # loss part - mu(v) h(v_*)
                A[i, j] -= wa * mu[i]
                R[i, j] -= wr * mu[i]
                mup = _gauss(vp, d)
                muq = _gauss(vq, d)
                ep = _envelope(vp, d, inv_t)
                eq = _envelope(vq, d, inv_t)
                cp = _stencil(vp, d, vmin, dv, nv, order, vmax, ip, wp, ax_idx, ax_w)
                for c in range(cp):
                    f = muq * ep * wp[c] / env_nodes[ip[c]]
                    A[i, ip[c]] += wa * f
                    R[i, ip[c]] += wr * f
                cq = _stencil(vq, d, vmin, dv, nv, order, vmax, iq, wq, ax_idx, ax_w)
                for c in range(cq):
                    f = mup * eq * wq[c] / env_nodes[iq[c]]
                    A[i, iq[c]] += wa * f
                    R[i, iq[c]] += wr * f
    return A, R


@njit(cache=True, parallel=True)
def gain_tensor(vnodes, w_v, sig, sw, btab, gamma, c_phi, vmin, dv, nv, order, vmax, inv_t, env_nodes):
    """Dense T[i, a, b] with gain_i(g, h) = sum_ab T[i,a,b] g_a h_b (symmetric in a, b)."""
    nvt, d = vnodes.shape
    ns = sig.shape[0]
    cnt_max = order**d
    T = np.zeros((nvt, nvt, nvt))
    for i in prange(nvt):
        vp = np.empty(d)
        vq = np.empty(d)
        ip = np.empty(cnt_max, dtype=np.int64)
        wp = np.empty(cnt_max)
        iq = np.empty(cnt_max, dtype=np.int64)
        wq = np.empty(cnt_max)
        ax_idx = np.empty((d, order), dtype=np.int64)
        ax_w = np.empty((d, order))
        for j in range(nvt):
            for s in range(ns):
                r, cos = _pair_geometry(vnodes, i, j, sig, s, d, vp, vq)
                kin = c_phi * r**gamma if gamma > 0.0 else c_phi
                bw = kin * _table_lookup(btab, cos) * sw[s] * w_v[j]
                if bw == 0.0:
                    continue
                cp = _stencil(vp, d, vmin, dv, nv, order, vmax, ip, wp, ax_idx, ax_w)
                if cp == 0:
                    continue
                cq = _stencil(vq, d, vmin, dv, nv, order, vmax, iq, wq, ax_idx, ax_w)
                if cq == 0:
                    continue
                ew = 0.5 * bw * _envelope(vp, d, inv_t) * _envelope(vq, d, inv_t)
                for c in range(cp):
                    for e in range(cq):
                        w = ew * wp[c] * wq[e] / (env_nodes[ip[c]] * env_nodes[iq[e]])
                        T[i, ip[c], iq[e]] += w
                        T[i, iq[e], ip[c]] += w
    return T

