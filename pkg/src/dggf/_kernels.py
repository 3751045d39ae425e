"""Compiled loops for the fused Taylor activation primitive.

Activation codes: 0 tanh, 1 sine, 2 softplus.
"""

import math

import numba
import numpy as np

CODES = {"tanh": 0, "sine": 1, "softplus": 2}


def act_derivs(code, z, s, d1, d2, d3):
    """Fill activation values and derivatives; transcendental parts stay in numpy."""
    if code == 0:
        np.tanh(z, out=s)
        _tanh_derivs(s, d1, d2, d3)
    elif code == 1:
        np.sin(z, out=s)
        np.cos(z, out=d1)
        np.negative(s, out=d2)
        np.negative(d1, out=d3)
    else:
        np.logaddexp(0.0, z, out=s)
        np.tanh(0.5 * z, out=d1)
        _softplus_derivs(d1, d2, d3)


@numba.njit(cache=True)
def _tanh_derivs(s, d1, d2, d3):
    nb, nw = s.shape
    for b in range(nb):
        for j in range(nw):
            t = s[b, j]
            a1 = 1.0 - t * t
            a2 = -2.0 * t * a1
            d1[b, j] = a1
            d2[b, j] = a2
            d3[b, j] = -2.0 * (a1 * a1 + t * a2)


@numba.njit(cache=True)
def _softplus_derivs(d1, d2, d3):
    # d1 holds tanh(z/2) on entry and the logistic sigmoid on exit
    nb, nw = d1.shape
    for b in range(nb):
        for j in range(nw):
            p = 0.5 * (1.0 + d1[b, j])
            a2 = p * (1.0 - p)
            d1[b, j] = p
            d2[b, j] = a2
            d3[b, j] = a2 * (1.0 - 2.0 * p)


@numba.njit(cache=True)
def taylor_act_forward(dz, d2z, s, d1, d2, out):
    k = dz.shape[0]
    nb, nw = s.shape
    out[0] = s
    for c in range(k):
        for b in range(nb):
            for j in range(nw):
                t = dz[c, b, j]
                a1 = d1[b, j]
                out[1 + c, b, j] = a1 * t
                out[1 + k + c, b, j] = d2[b, j] * t * t + a1 * d2z[c, b, j]


@numba.njit(cache=True)
def taylor_act_backward(g, dz, d2z, d1, d2, d3, gin):
    k = dz.shape[0]
    nb, nw = d1.shape
    for b in range(nb):
        for j in range(nw):
            gin[0, b, j] = g[0, b, j] * d1[b, j]
    for c in range(k):
        for b in range(nb):
            for j in range(nw):
                a1 = d1[b, j]
                a2 = d2[b, j]
                t = dz[c, b, j]
                gh = g[1 + c, b, j]
                gh2 = g[1 + k + c, b, j]
                gin[0, b, j] += gh * t * a2 + gh2 * (t * t * d3[b, j] + d2z[c, b, j] * a2)
                gin[1 + c, b, j] = gh * a1 + 2.0 * gh2 * a2 * t
                gin[1 + k + c, b, j] = gh2 * a1


@numba.njit(cache=True)
def winding_and_distance(points, poly):
    """Winding number of a closed polyline around each point, and the
    distance from each point to the polyline."""
    n = points.shape[0]
    m = poly.shape[0]
    wind = np.zeros(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        w = 0
        best = np.inf
        for j in range(m):
            ax = poly[j, 0]
            ay = poly[j, 1]
            bx = poly[(j + 1) % m, 0]
            by = poly[(j + 1) % m, 1]
            cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
            if ay <= py:
                if by > py and cross > 0:
                    w += 1
            elif by <= py and cross < 0:
                w -= 1
            ex = bx - ax
            ey = by - ay
            ll = ex * ex + ey * ey
            t = ((px - ax) * ex + (py - ay) * ey) / ll if ll > 0 else 0.0
            t = min(1.0, max(0.0, t))
            dx = ax + t * ex - px
            dy = ay + t * ey - py
            d = dx * dx + dy * dy
            if d < best:
                best = d
        wind[i] = w
        dist[i] = math.sqrt(best)
    return wind, dist
