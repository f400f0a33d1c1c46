"""Dense symmetric linear algebra shared by every estimator.

Everything goes through one symmetric eigendecomposition: shifted solves,
Moore-Penrose pseudoinverses and the singularity test all read off the same
spectrum.  Matrices are plain ``numpy`` arrays; symmetric ones are mirrored
on construction so ``M[i, j] == M[j, i]`` holds exactly.
"""
import numpy as np

from .errors import DegenerateDowndate, SingularSystem

#: relative eigenvalue cutoff for pseudoinverses
PINV_RCOND = 1e-10
#: relative eigenvalue floor below which a shift-free system is singular
SINGULAR_RCOND = 1e-12
#: a downdate needs ``x' inv x`` at least this far below one
DOWNDATE_MARGIN = 1e-10


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise ValueError("matrix dimension must be at least 1")
    return 0.5 * (m + m.T)


class SpdSolveContext:
    """Eigendecomposition of ``base + shift * I`` reused across solves.

    Parameters
    ----------
    base : (d, d) array_like
        Symmetric positive semi-definite matrix.
    shift : float, optional
        Non-negative ridge added to the diagonal.
    """

    def __init__(self, base, shift=0.0):
        shift = float(shift)
        if shift < 0:
            raise ValueError(f"shift must be non-negative, got {shift}")
        self.base = symmetrize(base)
        self.shift = shift
        evals, self.vectors = np.linalg.eigh(self.base)
        self.eigenvalues = evals + shift
        top = max(float(np.max(np.abs(self.eigenvalues))), 0.0)
        self._top = top
        self._keep = self.eigenvalues > PINV_RCOND * top if top > 0 else np.zeros(len(evals), bool)

    @property
    def dim(self):
        return self.base.shape[0]

    @property
    def matrix(self):
        return self.base + self.shift * np.eye(self.dim)

    @property
    def rank(self):
        return int(np.count_nonzero(self._keep))

    @property
    def singular(self):
        lo = float(self.eigenvalues[0])
        return self._top == 0 or lo < SINGULAR_RCOND * self._top

    def _apply_inverse(self, rhs, inv_evals):
        v = self.vectors
        return v @ (inv_evals[:, None] * (v.T @ rhs)) if rhs.ndim == 2 else v @ (inv_evals * (v.T @ rhs))

    def solve(self, rhs):
        """Solve ``(base + shift I) w = rhs``; one refinement step is applied."""
        if self.singular:
            raise SingularSystem(
                f"smallest eigenvalue {self.eigenvalues[0]:.3e} is below "
                f"{SINGULAR_RCOND:g} x largest {self._top:.3e}"
            )
        rhs = np.asarray(rhs, dtype=float)
        inv = 1.0 / self.eigenvalues
        w = self._apply_inverse(rhs, inv)
        w = w + self._apply_inverse(rhs - self.matrix @ w, inv)
        return w

    def pinv_diag(self):
        out = np.zeros_like(self.eigenvalues)
        out[self._keep] = 1.0 / self.eigenvalues[self._keep]
        return out

    def pinv(self):
        v = self.vectors
        return symmetrize((v * self.pinv_diag()) @ v.T)

    def pinv_solve(self, rhs):
        return self._apply_inverse(np.asarray(rhs, dtype=float), self.pinv_diag())

    def range_basis(self):
        return self.vectors[:, self._keep]

    def inverse(self):
        if self.singular:
            raise SingularSystem("matrix is numerically singular")
        v = self.vectors
        return symmetrize((v / self.eigenvalues) @ v.T)


def spd_solve(ctx, rhs):
    """Solve the shifted system held by ``ctx`` for one or many right-hand sides."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != ctx.dim:
        raise ValueError(f"rhs has length {rhs.shape[0]}, expected {ctx.dim}")
    return ctx.solve(rhs)


def min_norm_from_gram(gram, moment):
    """Minimum-norm minimiser of ``w' G w - 2 <w, g>`` via ``G^+ g``."""
    return SpdSolveContext(gram).pinv_solve(moment)


def min_norm_solve(X, y):
    """Minimum Euclidean norm least-squares solution of ``X w ~ y``.

    Uses the singular values of ``X`` itself (cutoff ``PINV_RCOND`` relative
    to the largest); going through ``X'X`` would square the condition number.
    The result lies in the row space of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(X.shape[1])
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    keep = s > PINV_RCOND * s[0] if s[0] > 0 else np.zeros(len(s), bool)
    return vt[keep].T @ ((u[:, keep].T @ y) / s[keep])


def sherman_morrison_downdate(inv, x):
    """Return ``(M - x x')^{-1}`` given ``inv = M^{-1}``."""
    inv = np.asarray(inv, dtype=float)
    x = np.asarray(x, dtype=float)
    u = inv @ x
    h = float(x @ u)
    if h >= 1.0 - DOWNDATE_MARGIN:
        raise DegenerateDowndate(f"x' M^-1 x = {h:.12g} is not below 1")
    return symmetrize(inv + np.outer(u, u) / (1.0 - h))


def sherman_morrison_update(inv, x):
    """Return ``(M + x x')^{-1}`` given ``inv = M^{-1}``."""
    inv = np.asarray(inv, dtype=float)
    x = np.asarray(x, dtype=float)
    u = inv @ x
    return symmetrize(inv - np.outer(u, u) / (1.0 + float(x @ u)))


def leverage_scores(X, shift=0.0):
    """Leverage ``X_j' (shift I + X'X)^{-1} X_j`` of every row.

    With ``shift == 0`` the pseudoinverse is used, so the scores are the
    diagonal of the orthogonal projection onto the column space of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ctx = SpdSolveContext(X.T @ X, shift)
    if shift > 0:
        inv = ctx.inverse()
    else:
        inv = ctx.pinv()
    h = np.einsum("ij,jk,ik->i", X, inv, X)
    return np.clip(h, 0.0, 1.0)


def pointwise_leverage(Xtrain, x):
    """Leverage of ``x`` against the rows of ``Xtrain`` and ``x`` itself.

    ``h = x' (X'X + x x')^+ x``; equals one when ``x`` leaves the span of the
    training rows and zero when ``x == 0``.
    """
    x = np.asarray(x, dtype=float)
    Xtrain = np.asarray(Xtrain, dtype=float).reshape(-1, x.shape[0])
    if not np.any(x):
        return 0.0
    ctx = SpdSolveContext(Xtrain.T @ Xtrain + np.outer(x, x))
    return float(np.clip(x @ ctx.pinv_solve(x), 0.0, 1.0))


def trust_region_solve(hess, grad, radius, rtol=1e-10, max_iter=200):
    """Minimise ``w' H w - 2 <w, g>`` over the ball ``||w|| <= radius``.

    ``H`` is positive semi-definite and ``g`` lies in its range, as for any
    least-squares objective ``H = X'X, g = X'y``, so the hard case cannot
    occur.  Returns ``(w, multiplier)``; the multiplier is zero when the
    minimum-norm unconstrained minimiser is feasible.  Otherwise the unique
    ``lam > 0`` with ``||(H + lam I)^{-1} g|| = radius`` is bracketed by
    doubling and refined by bisection.
    """
    radius = float(radius)
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    grad = np.asarray(grad, dtype=float)
    if radius == 0 or not np.any(grad):
        return np.zeros_like(grad), 0.0
    ctx = SpdSolveContext(hess)
    # g lies in range(H); drop rounding residue in the numerical null space
    coef = np.where(ctx._keep, ctx.vectors.T @ grad, 0.0)
    w0 = ctx.vectors @ (ctx.pinv_diag() * coef)
    if np.linalg.norm(w0) <= radius:
        return w0, 0.0

    evals = np.maximum(ctx.eigenvalues, 0.0)

    def norm_at(lam):
        return float(np.linalg.norm(coef / (evals + lam)))

    hi = max(float(np.linalg.norm(grad)) / radius, 1e-300)
    while norm_at(hi) >= radius:
        hi *= 2.0
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * 1e-2 * hi:
            break
    lam = 0.5 * (lo + hi)
    return ctx.vectors @ (coef / (evals + lam)), lam
