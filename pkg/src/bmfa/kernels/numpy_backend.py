"""Vectorized conv2d kernels: strided im2col windows fed to BLAS matmuls.

Forward and the weight gradient are single large matmuls over the unfolded
input; the input gradient scatters one vectorized slice-add per kernel tap.
All reductions happen in a fixed order, so results are reproducible
run-to-run for identical inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad(x: np.ndarray, pT: int, pF: int) -> np.ndarray:
    if pT == 0 and pF == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pT, pT), (pF, pF)))


def _windows(xp: np.ndarray, kT: int, kF: int, sT: int, sF: int,
             OT: int, OF: int) -> np.ndarray:
    """(N,Cin,OT,OF,kT,kF) view over the padded input; no copy."""
    n, c, _, _ = xp.shape
    bs, cs, ts, fs = xp.strides
    return as_strided(
        xp,
        shape=(n, c, OT, OF, kT, kF),
        strides=(bs, cs, ts * sT, fs * sF, ts, fs),
        writeable=False,
    )


def conv2d_forward(x, w, stride, pad):
    """Cross-correlate x (N,Cin,T,F) with w (Cout,Cin,kT,kF)."""
    N, Cin, T, F = x.shape
    Cout, _, kT, kF = w.shape
    sT, sF = stride
    pT, pF = pad
    OT = (T + 2 * pT - kT) // sT + 1
    OF = (F + 2 * pF - kF) // sF + 1
    xp = _pad(x, pT, pF)
    cols = _windows(xp, kT, kF, sT, sF, OT, OF)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * OT * OF, Cin * kT * kF)
    y = cols @ w.reshape(Cout, -1).T
    return np.ascontiguousarray(y.reshape(N, OT, OF, Cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, stride, pad, gy):
    """Gradients of conv2d_forward w.r.t. input and weight.

    Returns (gx, gw); the bias gradient is a plain sum handled by the caller.
    """
    N, Cin, T, F = x.shape
    Cout, _, kT, kF = w.shape
    sT, sF = stride
    pT, pF = pad
    _, _, OT, OF = gy.shape

    xp = _pad(x, pT, pF)
    cols = _windows(xp, kT, kF, sT, sF, OT, OF)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * OT * OF, Cin * kT * kF)
    gmat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(N * OT * OF, Cout)

    gw = (gmat.T @ cols).reshape(w.shape)

    gcols = gmat @ w.reshape(Cout, -1)
    gcols = gcols.reshape(N, OT, OF, Cin, kT, kF).transpose(0, 3, 1, 2, 4, 5)
    gxp = np.zeros_like(xp)
    for kt in range(kT):
        for kf in range(kF):
            gxp[:, :, kt:kt + sT * OT:sT, kf:kf + sF * OF:sF] += gcols[..., kt, kf]
    if pT or pF:
        gx = gxp[:, :, pT:pT + T, pF:pF + F]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), gw
