"""Direct-summation conv2d kernels compiled with numba.

Gather-style loops: every parallel iteration owns its output elements and
sums its own terms in a fixed sequential order, so results are bit-identical
for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _forward(xp, w, sT, sF, y):
    N, Cin, _, _ = xp.shape
    Cout, _, kT, kF = w.shape
    _, _, OT, OF = y.shape
    for idx in prange(N * Cout):
        n = idx // Cout
        co = idx % Cout
        for ot in range(OT):
            it0 = ot * sT
            for ci in range(Cin):
                for kt in range(kT):
                    for kf in range(kF):
                        wv = w[co, ci, kt, kf]
                        for of in range(OF):
                            y[n, co, ot, of] += wv * xp[n, ci, it0 + kt, of * sF + kf]


@njit(parallel=True, cache=True)
def _backward_weight(xp, gy, sT, sF, gw):
    N, Cin, _, _ = xp.shape
    Cout, _, kT, kF = gw.shape
    _, _, OT, OF = gy.shape
    for idx in prange(Cout * Cin):
        co = idx // Cin
        ci = idx % Cin
        for kt in range(kT):
            for kf in range(kF):
                acc = xp.dtype.type(0)
                for n in range(N):
                    for ot in range(OT):
                        it = ot * sT + kt
                        for of in range(OF):
                            acc += gy[n, co, ot, of] * xp[n, ci, it, of * sF + kf]
                gw[co, ci, kt, kf] = acc


@njit(parallel=True, cache=True)
def _backward_input(gy, w, sT, sF, gxp):
    N, Cin, TP, FP = gxp.shape
    Cout, _, kT, kF = w.shape
    _, _, OT, OF = gy.shape
    for idx in prange(N * Cin):
        n = idx // Cin
        ci = idx % Cin
        for it in range(TP):
            for jf in range(FP):
                acc = gxp.dtype.type(0)
                for kt in range(kT):
                    ot, rt = divmod(it - kt, sT)
                    if rt != 0 or ot < 0 or ot >= OT:
                        continue
                    for kf in range(kF):
                        of, rf = divmod(jf - kf, sF)
                        if rf != 0 or of < 0 or of >= OF:
                            continue
                        for co in range(Cout):
                            acc += gy[n, co, ot, of] * w[co, ci, kt, kf]
                gxp[n, ci, it, jf] = acc


def _pad(x, pT, pF):
    if pT == 0 and pF == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pT, pT), (pF, pF)))


def conv2d_forward(x, w, stride, pad):
    N, Cin, T, F = x.shape
    Cout, _, kT, kF = w.shape
    sT, sF = stride
    pT, pF = pad
    OT = (T + 2 * pT - kT) // sT + 1
    OF = (F + 2 * pF - kF) // sF + 1
    xp = np.ascontiguousarray(_pad(x, pT, pF))
    y = np.zeros((N, Cout, OT, OF), dtype=x.dtype)
    _forward(xp, np.ascontiguousarray(w), sT, sF, y)
    return y


def conv2d_backward(x, w, stride, pad, gy):
    N, Cin, T, F = x.shape
    sT, sF = stride
    pT, pF = pad
    xp = np.ascontiguousarray(_pad(x, pT, pF))
    w = np.ascontiguousarray(w)
    gy = np.ascontiguousarray(gy)
    gw = np.zeros_like(w)
    _backward_weight(xp, gy, sT, sF, gw)
    gxp = np.zeros_like(xp)
    _backward_input(gy, w, sT, sF, gxp)
    if pT or pF:
        gx = np.ascontiguousarray(gxp[:, :, pT:pT + T, pF:pF + F])
    else:
        gx = gxp
    return gx, gw
