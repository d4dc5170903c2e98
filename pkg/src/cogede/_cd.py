"""Compiled cyclic coordinate descent kernel for the elastic-net G update."""

import numba
import numpy as np


@numba.njit(cache=True)
def enet_cd_gram(A, B, lam1, lam2, W0, tol, max_sweeps):
    """Column-wise elastic net in Gram form.

    Minimizes, independently for every column k,
    ``w^T A w - 2 B[:, k]^T w + lam2 ||w||^2 + lam1 ||w||_1``
    which equals ``||y_k - D w||^2 + ...`` up to a constant when
    ``A = D^T D`` and ``B = D^T Y``.

    Returns the coefficients, the number of sweeps and whether some
    coordinate had zero curvature (coefficient pinned to 0).
    """
    W = W0.copy()
    P, K = W.shape
    Q = A @ W
    thr = 0.5 * lam1
    degenerate = False
    for j in range(P):
        if A[j, j] + lam2 <= 0.0:
            degenerate = True
    for sweep in range(max_sweeps):
        biggest = 0.0
        for j in range(P):
            ajj = A[j, j]
            den = ajj + lam2
            for k in range(K):
                w = W[j, k]
                if den <= 0.0:
                    wn = 0.0
                else:
                    c = B[j, k] - Q[j, k] + ajj * w
                    if c > thr:
                        wn = (c - thr) / den
                    elif c < -thr:
                        wn = (c + thr) / den
                    else:
                        wn = 0.0
                delta = wn - w
                if delta != 0.0:
                    for i in range(P):
                        Q[i, k] += A[i, j] * delta
                    W[j, k] = wn
                    if abs(delta) > biggest:
                        biggest = abs(delta)
        if biggest < tol:
            return W, sweep + 1, degenerate
    return W, max_sweeps, degenerate


def warmup():
    """Trigger compilation with a trivial problem."""
    A = np.eye(1)
    enet_cd_gram(A, A.copy(), 0.0, 0.0, np.zeros((1, 1)), 1e-10, 1)
