"""Linear and non-linear predictors for bounded random-design regression.

Fitting functions accept a :class:`~lsqgap.distributions.Dataset`, a
:class:`~lsqgap.distributions.GramStats` or a compact sample (anything with
``stats()``) wherever only ``(X'X, X'y)`` is needed.  The prefix-averaged
VAW predictor needs the rows in order and therefore a dataset.
"""
from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import kernels
from .distributions import Dataset, GramStats
from .errors import DegenerateDowndate, NonZeroResponses, WeakRegularization
from .linalg import DOWNDATE_MARGIN, PINV_RCOND, SpdSolveContext, trust_region_solve


def _stats(data):
    if isinstance(data, GramStats):
        return data
    return data.stats()


def _dataset(data):
    if isinstance(data, GramStats):
        raise TypeError("this operation needs the individual rows, not only Gram statistics")
    return data.to_dataset()


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    weights: np.ndarray
    constraint_active: bool = False
    multiplier: float = 0.0
    kind: str = "linear"

    def predict(self, Q):
        return np.asarray(Q, dtype=float) @ self.weights

    def __call__(self, x):
        return float(np.asarray(x, dtype=float) @ self.weights)

    @property
    def linear_anchor(self):
        return self.weights

    def to_dict(self):
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "constraint_active": self.constraint_active,
            "multiplier": self.multiplier,
        }


def fit_constrained_ls(data, b):
    """Least squares over the ball ``||w|| <= b`` (exact trust-region solve).

    Returns the minimum-norm minimiser when it is feasible; otherwise the
    boundary point with ``(X'X + lam I) w = X'y``, ``lam > 0``.
    """
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    s = _stats(data)
    radius = 1e300 if math.isinf(b) else float(b)
    w, lam = trust_region_solve(s.xtx, s.xty, radius)
    return LinearPredictor(w, lam > 0, float(lam), "constrained_ls")


def fit_min_norm(data):
    s = _stats(data)
    return LinearPredictor(SpdSolveContext(s.xtx).pinv_solve(s.xty), kind="min_norm")


def adversarial_erm_select(data, b):
    """A zero-loss ERM that points at an unobserved coordinate when one exists.

    For responses identically zero, ``b * e_j`` interpolates whenever column
    ``j`` of the design is zero; the smallest such ``j`` is used.  Without an
    unobserved coordinate this falls back to :func:`fit_constrained_ls`.
    """
    s = _stats(data)
    if s.yty != 0 or np.any(s.xty != 0):
        raise NonZeroResponses("adversarial selection needs all responses equal to zero")
    if isinstance(data, Dataset) and np.any(data.responses != 0):
        raise NonZeroResponses("adversarial selection needs all responses equal to zero")
    unseen = np.flatnonzero(np.diag(s.xtx) == 0)
    if len(unseen) == 0:
        fit = fit_constrained_ls(s, b)
        return LinearPredictor(fit.weights, fit.constraint_active, fit.multiplier, "adversarial_erm")
    w = np.zeros(s.d)
    w[unseen[0]] = b
    return LinearPredictor(w, True, 0.0, "adversarial_erm")


def fit_ridge(data, lam):
    """``(lam I + X'X)^{-1} X'y``.

    Warns with :class:`~lsqgap.errors.WeakRegularization` when ``lam < r**2``
    for a finite declared ``r``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    s = _stats(data)
    if math.isfinite(s.r) and lam < s.r**2:
        warnings.warn(f"lambda={lam:g} is below r^2={s.r**2:g}", WeakRegularization, stacklevel=2)
    w = SpdSolveContext(s.xtx, lam).solve(s.xty)
    return LinearPredictor(w, kind="ridge")


def lambda_star(d, m, b):
    """VAW regularisation ``d m^2 / b``."""
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    return d * m**2 / b


class VAWPredictor:
    """VAW forecaster with penalty ``lam`` trained on ``train``.

    The prediction at ``x`` is ``<w_x, x>`` where ``w_x`` minimises the
    penalised training loss plus ``<w, x>^2``; with ``P = (lam I + X'X)^{-1}``
    this is ``x' P X'y / (1 + x' P x)``.
    """

    kind = "vaw"

    def __init__(self, train, lam):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        s = _stats(train)
        self.lam = float(lam)
        self.d = s.d
        self._inv = SpdSolveContext(s.xtx, lam).inverse()
        self._ridge = self._inv @ s.xty

    @property
    def linear_anchor(self):
        return self._ridge

    def predict(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        QP = Q @ self._inv
        return (Q @ self._ridge) / (1.0 + np.einsum("ij,ij->i", QP, Q))

    def __call__(self, x):
        return float(self.predict(x)[0])

    def to_dict(self):
        return {"kind": self.kind, "lambda": self.lam, "ridge_weights": self._ridge.tolist()}


def vaw_predict(train, lam, x):
    x = np.asarray(x, dtype=float)
    if isinstance(train, Dataset) and train.n == 0:
        return 0.0
    return VAWPredictor(train, lam)(x)


class VawBatchPredictor:
    """Online-to-batch VAW: the mean of the prefix forecasters ``j = 0..n-1``.

    Prefix ``j`` is trained on the first ``j`` rows, so the empty prefix
    (predicting zero) is part of the average.
    """

    kind = "vaw_batch"

    def __init__(self, data, lam, backend=None):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        self.data = _dataset(data)
        self.lam = float(lam)
        self.backend = backend
        self._anchor = None

    @property
    def d(self):
        return self.data.d

    @property
    def linear_anchor(self):
        if self._anchor is None:
            self._anchor = fit_ridge_quiet(self.data, self.lam).weights
        return self._anchor

    def predict(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        return kernels.vaw_prefix_average(self.data.covariates, self.data.responses, self.lam, Q, self.backend)

    def __call__(self, x):
        return float(self.predict(x)[0])

    def to_dict(self):
        return {"kind": self.kind, "lambda": self.lam, "n": self.data.n}


def vaw_batch(data, lam, backend=None):
    return VawBatchPredictor(data, lam, backend)


def fit_ridge_quiet(data, lam):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakRegularization)
        return fit_ridge(data, lam)


class ForsterWarmuthPredictor:
    """Leverage-discounted VAW with no penalty.

    With ``G = X'X`` and ``w = G^+ X'y`` (the minimum-norm least squares
    fit), a query ``x`` in the range of ``G`` has ``a = x' G^+ x``,
    leverage ``h = a / (1 + a)`` and prediction
    ``(1 - h) * <w, x> / (1 + a) = <w, x> / (1 + a)^2``.  A query with a
    component outside the range has leverage one and is predicted as zero.
    """

    kind = "forster_warmuth"

    def __init__(self, train):
        s = _stats(train)
        self.d = s.d
        self._ctx = SpdSolveContext(s.xtx)
        self._pinv = self._ctx.pinv()
        self._basis = self._ctx.range_basis()
        self._top = self._ctx._top
        self.weights = self._pinv @ s.xty

    @property
    def linear_anchor(self):
        return self.weights

    def leverage(self, Q):
        """Leverage of each query against the training Gram plus itself."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        a = np.einsum("ij,jk,ik->i", Q, self._pinv, Q)
        h = a / (1.0 + a)
        h[self._outside(Q)] = 1.0
        h[~np.any(Q, axis=1)] = 0.0
        return h

    def _outside(self, Q):
        sq = np.einsum("ij,ij->i", Q, Q)
        inside = (Q @ self._basis) if self._basis.shape[1] else np.zeros((len(Q), 0))
        perp = sq - np.einsum("ij,ij->i", inside, inside)
        return perp > PINV_RCOND * np.maximum(self._top, sq)

    def predict(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        a = np.einsum("ij,jk,ik->i", Q, self._pinv, Q)
        out = (Q @ self.weights) / (1.0 + a) ** 2
        out[self._outside(Q)] = 0.0
        return out

    def __call__(self, x):
        return float(self.predict(x)[0])

    def to_dict(self):
        return {"kind": self.kind, "min_norm_weights": self.weights.tolist()}


def fw_predict(train, x):
    return ForsterWarmuthPredictor(train)(x)


def ridge_loo_residual(data, lam, i):
    """Leave-one-out residual of ridge at row ``i``, two ways.

    ``direct`` refits without row ``i``; ``shortcut`` rescales the full-fit
    residual by ``1 / (1 - h_i)`` with ``h_i`` the ridge leverage of row ``i``.
    """
    ds = _dataset(data)
    x, y = ds.covariates[i], ds.responses[i]
    rest = ds.without(i)
    direct = y - x @ fit_ridge_quiet(rest, lam).weights if rest.n else y
    ctx = SpdSolveContext(ds.covariates.T @ ds.covariates, lam)
    h = float(x @ ctx.solve(x))
    if h >= 1.0 - DOWNDATE_MARGIN:
        raise DegenerateDowndate(f"leverage {h:.12g} of row {i} is not below 1")
    full = ctx.solve(ds.covariates.T @ ds.responses)
    return float(direct), float((y - x @ full) / (1.0 - h))


@dataclass(frozen=True)
class RegretReport:
    regret: float
    bound: float
    logdet_bound: float
    online_loss: float
    comparator_loss: float

    @property
    def holds(self):
        return self.regret <= self.logdet_bound * (1 + 1e-12) + 1e-12 and self.logdet_bound <= self.bound * (1 + 1e-12)


def vaw_regret(data, lam, m=None, r=None, backend=None):
    """Cumulative VAW square loss against the best penalised linear fit.

    ``bound = d m^2 ln(1 + n r^2 / (lam d))`` dominates
    ``logdet_bound = m^2 ln det(I + X'X / lam)``, which dominates the regret.
    ``m`` and ``r`` default to the observed maxima.
    """
    ds = _dataset(data)
    X, y = ds.covariates, ds.responses
    n, d = X.shape
    m = float(np.max(np.abs(y), initial=0.0)) if m is None else m
    r = float(np.max(np.linalg.norm(X, axis=1), initial=0.0)) if r is None else r
    preds = kernels.vaw_online_predictions(X, y, lam, backend)
    online = math.fsum((preds - y) ** 2)
    G = X.T @ X
    best = float(y @ y - X.T @ y @ SpdSolveContext(G, lam).solve(X.T @ y))
    logdet = float(np.sum(np.log1p(np.clip(np.linalg.eigvalsh(G), 0, None) / lam)))
    return RegretReport(online - best, d * m**2 * math.log1p(n * r**2 / (lam * d)), m**2 * logdet, online, best)
