"""Pure numpy implementations of the hot kernels.

Signatures and results match ``lsqgap._native`` exactly for the integer
kernels and to rounding for the floating-point ones.
"""
import numpy as np


def floyd_supports(uniforms, d):
    """Uniform ``k``-subsets of ``range(d)`` by Floyd's algorithm.

    ``uniforms`` is an ``(m, k)`` array of draws in ``[0, 1)``; row ``i``
    consumes ``uniforms[i]`` left to right.  Step ``t`` considers
    ``j = d - k + t``, proposes ``floor(u * (j + 1))`` and takes ``j``
    instead when the proposal is already chosen.
    """
    u = np.asarray(uniforms, dtype=float)
    m, k = u.shape
    if k > d:
        raise ValueError(f"cannot draw {k} distinct items from {d}")
    out = np.empty((m, k), dtype=np.int64)
    for t in range(k):
        j = d - k + t
        cand = np.minimum((u[:, t] * (j + 1)).astype(np.int64), j)
        taken = np.any(out[:, :t] == cand[:, None], axis=1) if t else np.zeros(m, bool)
        out[:, t] = np.where(taken, j, cand)
    return out


def support_cooccurrence(supports, d):
    """``C[a, b]`` = number of rows of ``supports`` containing both ``a`` and ``b``."""
    s = np.asarray(supports, dtype=np.int64)
    if s.size == 0:
        return np.zeros((d, d), dtype=np.int64)
    pairs = (s[:, :, None] * d + s[:, None, :]).ravel()
    return np.bincount(pairs, minlength=d * d).reshape(d, d).astype(np.int64)


def vaw_online_predictions(X, y, lam):
    """Sequential VAW forecasts: round ``t`` sees ``X[t]`` and rows ``< t``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    P = np.eye(d) / lam
    b = np.zeros(d)
    preds = np.empty(n)
    for t in range(n):
        x = X[t]
        u = P @ x
        a = x @ u
        preds[t] = (u @ b) / (1.0 + a)
        P -= np.outer(u, u) / (1.0 + a)
        b += y[t] * x
    return preds


def vaw_prefix_average(X, y, lam, Q):
    """Average over ``j = 0..n-1`` of the VAW forecast at each row of ``Q``
    when trained on the first ``j`` rows of ``(X, y)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n, d = X.shape
    P = np.eye(d) / lam
    b = np.zeros(d)
    acc = np.zeros(Q.shape[0])
    for j in range(n):
        QP = Q @ P
        acc += (QP @ b) / (1.0 + np.einsum("ij,ij->i", QP, Q))
        x = X[j]
        u = P @ x
        P -= np.outer(u, u) / (1.0 + x @ u)
        b += y[j] * x
    return acc / n if n else acc
