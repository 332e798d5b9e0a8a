"""Fused numba kernels for the O(R * N^2) pairwise slice sums.

All loops accumulate in a fixed order with fastmath disabled, so results are
deterministic. For one slice with projections a_i, projected scores s_i,
alignment c = r'g and t = 1/sigma^2, the pair kernel is

    h_ij = s_i s_j k + c s_j ka + c s_i kb + c^2 kab

with k = exp(-(a_i - a_j)^2 t / 2) and ka, kb, kab its first and mixed second
derivatives in the two arguments. The pack kernel also accumulates the three
reductions needed for analytic gradients in the test direction g, the slicing
direction r, and the projected scores (used by model-parameter gradients):

    A1[i]  = sum_j dh_ij / da_i        (dV/dg = (2 A1'X + Csum r) / N^2)
    M[i]   = sum_j (s_j k + c kb)      (dV/ds_i = 2 M_i / N^2; dV/dr uses M)
    Csum   = sum_ij dh_ij / dc
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def pair_median_columns(A):
    """Lower median of |A[i, r] - A[j, r]| over pairs i < j, per column r."""
    N, R = A.shape
    m = N * (N - 1) // 2
    k = (m - 1) // 2
    out = np.empty(R)
    buf = np.empty(m)
    for r in range(R):
        t = 0
        for i in range(N):
            ai = A[i, r]
            for j in range(i):
                buf[t] = abs(ai - A[j, r])
                t += 1
        out[r] = np.partition(buf, k)[k]
    return out


@njit(cache=True)
def slice_pack(A, S, c, sig):
    """Pairwise sums for every slice.

    Args:
        A: (N, R) projections x_i' g_r.
        S: (N, R) projected scores r' s_p(x_i).
        c: (R,) alignments r' g.
        sig: (R,) kernel sigmas.

    Returns:
        total (R,), diag (R,), A1 (R, N), M (R, N), Csum (R,): raw sums of
        h_ij over all pairs, its diagonal part, and the gradient reductions.
    """
    N, R = A.shape
    total = np.zeros(R)
    diag = np.zeros(R)
    A1 = np.zeros((R, N))
    M = np.zeros((R, N))
    Csum = np.zeros(R)
    for r in range(R):
        t = 1.0 / (sig[r] * sig[r])
        cr = c[r]
        v = 0.0
        dg = 0.0
        cs = 0.0
        for i in range(N):
            ai = A[i, r]
            si = S[i, r]
            dg += si * si + cr * cr * t
            cs += 2.0 * cr * t
            M[r, i] += si
            for j in range(i):
                sj = S[j, r]
                d = ai - A[j, r]
                k = np.exp(-0.5 * d * d * t)
                ka = -d * t * k
                kaa = (d * d * t * t - t) * k
                kab = -kaa
                kaab = (d * d * d * t * t * t - 3.0 * d * t * t) * k
                h = si * sj * k + cr * (sj - si) * ka + cr * cr * kab
                v += 2.0 * h
                A1[r, i] += si * sj * ka + cr * sj * kaa + cr * si * kab + cr * cr * kaab
                A1[r, j] += -si * sj * ka + cr * si * kaa + cr * sj * kab - cr * cr * kaab
                cs += 2.0 * ((sj - si) * ka + 2.0 * cr * kab)
                M[r, i] += sj * k - cr * ka
                M[r, j] += si * k + cr * ka
        total[r] = v + dg
        diag[r] = dg
        Csum[r] = cs
    return total, diag, A1, M, Csum


@njit(cache=True)
def slice_hmatrix(A, S, c, sig):
    """Slice-summed Stein matrix H_ij = sum_r h_ij^(r), plus per-slice sums.

    Returns (H (N, N), total (R,), diag (R,)).
    """
    N, R = A.shape
    H = np.zeros((N, N))
    total = np.zeros(R)
    diag = np.zeros(R)
    for r in range(R):
        t = 1.0 / (sig[r] * sig[r])
        cr = c[r]
        v = 0.0
        dg = 0.0
        for i in range(N):
            ai = A[i, r]
            si = S[i, r]
            hii = si * si + cr * cr * t
            H[i, i] += hii
            dg += hii
            for j in range(i):
                sj = S[j, r]
                d = ai - A[j, r]
                k = np.exp(-0.5 * d * d * t)
                ka = -d * t * k
                kab = (t - d * d * t * t) * k
                h = si * sj * k + cr * (sj - si) * ka + cr * cr * kab
                H[i, j] += h
                H[j, i] += h
                v += 2.0 * h
        total[r] = v + dg
        diag[r] = dg
    return H, total, diag


@njit(cache=True)
def ssvgd_phi(A, S, gdiag, sig, repulsive_coef):
    """Per-coordinate S-SVGD update directions.

    phi[i, d] = (1/N) sum_j [ S[j, d] k(a_jd, a_id)
                              + coef * gdiag[d] * (a_id - a_jd) t_d k ]

    Args:
        A: (N, D) projections x_i' g_d per coordinate d.
        S: (N, D) score components s_p(x_j)_d.
        gdiag: (D,) diagonal elements g_{d,d}.
        sig: (D,) per-coordinate kernel sigmas.
        repulsive_coef: multiplier on the repulsive (kernel-derivative) term.
    """
    N, D = A.shape
    phi = np.zeros((N, D))
    for d in range(D):
        t = 1.0 / (sig[d] * sig[d])
        gd = gdiag[d] * repulsive_coef
        for i in range(N):
            ai = A[i, d]
            acc = 0.0
            for j in range(N):
                diff = ai - A[j, d]
                k = np.exp(-0.5 * diff * diff * t)
                acc += S[j, d] * k + gd * diff * t * k
            phi[i, d] = acc / N
    return phi
