"""Generative models with closed-form population moments.

Every distribution exposes its exact second-moment matrix, cross moment and
``E Y^2``, so the risk ``R(w) = E (Y - <w, X>)^2`` of any linear predictor
is evaluated exactly instead of on a held-out sample.

Sampling is block-wise: draws ``[B * i, B * (i + 1))`` come from a Philox
stream keyed by ``(seed, i)``, and every block is generated at full size
before truncation.  Samples are therefore reproducible, prefix
consistent (the first ``n`` draws of a size ``n' > n`` sample coincide) and
can be generated block-parallel.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from . import kernels
from ._rng import stream
from .errors import InvalidSpec
from .linalg import symmetrize, trust_region_solve

BLOCK = 8192
_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PopulationMoments:
    second_moment: np.ndarray
    cross: np.ndarray
    y_second: float
    #: ``(a, b)`` with ``second_moment == a * 11' + b * I`` when available
    structured_form: tuple = None


@dataclass(frozen=True, eq=False)
class GramStats:
    """Sufficient statistics ``(X'X, X'y, y'y)`` of a sample."""

    n: int
    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    r: float = math.inf
    m: float = math.inf

    @property
    def d(self):
        return self.xtx.shape[0]

    def empirical_loss(self, w):
        return float(self.yty - 2 * w @ self.xty + w @ self.xtx @ w)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x d`` design with responses and declared bounds ``r``, ``m``."""

    covariates: np.ndarray
    responses: np.ndarray
    r: float = math.inf
    m: float = math.inf

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.responses, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError(f"covariates must be 2-d, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} responses")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "responses", y)
        if len(y):
            if math.isfinite(self.r) and np.max(np.linalg.norm(X, axis=1)) > self.r + _TOL:
                raise ValueError("a covariate row exceeds the declared bound r")
            if math.isfinite(self.m) and np.max(np.abs(y)) > self.m + _TOL:
                raise ValueError("a response exceeds the declared bound m")

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def d(self):
        return self.covariates.shape[1]

    def stats(self):
        X, y = self.covariates, self.responses
        return GramStats(self.n, symmetrize(X.T @ X) if self.d else X.T @ X, X.T @ y, float(y @ y), self.r, self.m)

    def to_dataset(self):
        return self

    def without(self, i):
        keep = np.arange(self.n) != i
        return Dataset(self.covariates[keep], self.responses[keep], self.r, self.m)

    def prefix(self, j):
        return Dataset(self.covariates[:j], self.responses[:j], self.r, self.m)

    @classmethod
    def empty(cls, d, r=math.inf, m=math.inf):
        return cls(np.zeros((0, d)), np.zeros(0), r, m)


def _blocks(n):
    for b in range(-(-n // BLOCK)):
        yield b, min(BLOCK, n - b * BLOCK)


class DistributionSpec:
    """Base class; subclasses set ``d``, ``r``, ``m`` and the hooks below."""

    kind = None
    d: int
    r: float
    m: float

    def moments(self):
        raise NotImplementedError

    def draw(self, n, seed):
        """Sample ``n`` pairs; the result has ``to_dataset()`` and ``stats()``."""
        raise NotImplementedError

    def atoms(self, limit=None):
        """``(X, y, p)`` of a finite support, or ``None`` if too large/continuous."""
        return None

    def to_dict(self):
        raise NotImplementedError


# --- sparse / dense mixture -------------------------------------------------


@dataclass(frozen=True, eq=False)
class SparseDenseDraw:
    """Compact sample: positions of sparse draws and their supports."""

    spec: "SparseDenseMixture"
    n: int
    sparse_rows: np.ndarray
    supports: np.ndarray

    @property
    def sparse_count(self):
        return len(self.sparse_rows)

    def cooccurrence(self):
        return kernels.support_cooccurrence(self.supports, self.spec.d)

    def sparse_gram(self):
        """``A = sum_{i in I} X_i X_i'``."""
        return self.spec.sparse_value ** 2 * self.cooccurrence().astype(float)

    def stats(self):
        s = self.spec
        dense = self.n - self.sparse_count
        one = np.ones(s.d)
        xtx = dense / s.d**2 * np.outer(one, one) + self.sparse_gram()
        return GramStats(self.n, xtx, dense / s.d * one, float(dense), s.r, s.m)

    def to_dataset(self):
        s = self.spec
        X = np.full((self.n, s.d), 1.0 / s.d)
        y = np.ones(self.n)
        X[self.sparse_rows] = 0.0
        y[self.sparse_rows] = 0.0
        if self.sparse_count:
            X[self.sparse_rows[:, None], self.supports] = s.sparse_value
        return Dataset(X, y, s.r, s.m)


@dataclass(frozen=True, eq=False)
class SparseDenseMixture(DistributionSpec):
    """Dense point ``(1/d, 1)`` mixed with sparse high-leverage points ``(c 1_S, 0)``.

    The sparse branch has probability ``d**-alpha`` and a uniformly random
    support ``S`` of size ``k = d**alpha``; its value ``c = k**-0.5`` keeps
    ``||X|| = 1``.  ``alpha = 1/2`` is the canonical construction; other
    ``alpha`` in ``[0, 1/2]`` give the interpolating family.
    """

    d: int
    alpha: float = 0.5
    kind = "sparse_dense"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidSpec(f"d must be a positive integer, got {self.d}")
        if not 0 <= self.alpha <= 0.5:
            raise InvalidSpec(f"alpha must lie in [0, 1/2], got {self.alpha}")
        k = self.d**self.alpha
        if abs(k - round(k)) > 1e-9:
            raise InvalidSpec(f"d**alpha = {k:.6g} must be an integer (d={self.d}, alpha={self.alpha})")
        object.__setattr__(self, "d", int(self.d))

    r = property(lambda self: 1.0)
    m = property(lambda self: 1.0)

    @property
    def support_size(self):
        return int(round(self.d**self.alpha))

    @property
    def sparse_prob(self):
        return self.d ** (-self.alpha)

    @property
    def sparse_value(self):
        return self.support_size**-0.5

    def moments(self):
        d, k, p = self.d, self.support_size, self.sparse_prob
        c2 = self.sparse_value**2
        pair = k * (k - 1) / (d * (d - 1)) if d > 1 else 0.0
        a = (1 - p) / d**2 + p * c2 * pair
        b = p * c2 * (k / d - pair)
        sigma = a * np.ones((d, d)) + b * np.eye(d)
        cross = (1 - p) / d * np.ones(d)
        return PopulationMoments(symmetrize(sigma), cross, 1 - p, (a, b))

    def draw(self, n, seed):
        d, k, p = self.d, self.support_size, self.sparse_prob
        rows, supports = [], []
        for b, size in _blocks(n):
            g = stream(seed, b)
            sparse = np.flatnonzero(g.random(BLOCK) < p)
            u = g.random((len(sparse), k))
            keep = sparse < size
            rows.append(sparse[keep] + b * BLOCK)
            supports.append(kernels.floyd_supports(u[keep], d))
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        supports = np.concatenate(supports) if supports else np.zeros((0, k), np.int64)
        return SparseDenseDraw(self, n, rows.astype(np.int64), supports)

    def sparse_points(self, count, seed):
        """``count`` i.i.d. sparse covariates, for Monte-Carlo risk integrals."""
        g = stream(seed, 0)
        s = kernels.floyd_supports(g.random((count, self.support_size)), self.d)
        Q = np.zeros((count, self.d))
        Q[np.arange(count)[:, None], s] = self.sparse_value
        return Q

    def sparse_second_moment(self):
        """``E[X X' | sparse branch]``."""
        d, k = self.d, self.support_size
        pair = k * (k - 1) / (d * (d - 1)) if d > 1 else 0.0
        c2 = self.sparse_value**2
        return c2 * (pair * np.ones((d, d)) + (k / d - pair) * np.eye(d))

    def atoms(self, limit=None):
        d, k, p = self.d, self.support_size, self.sparse_prob
        count = math.comb(d, k)
        if limit is not None and count + 1 > limit:
            return None
        X = np.zeros((count + 1, d))
        X[0] = 1.0 / d
        for i, S in enumerate(itertools.combinations(range(d), k), start=1):
            X[i, list(S)] = self.sparse_value
        y = np.zeros(count + 1)
        y[0] = 1.0
        probs = np.full(count + 1, p / count)
        probs[0] = 1 - p
        return X, y, probs

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "alpha": self.alpha}


# --- coupon collector --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CouponDraw:
    spec: "CouponCollector"
    n: int
    indices: np.ndarray

    def counts(self):
        return np.bincount(self.indices, minlength=self.spec.d)

    def stats(self):
        s = self.spec
        xtx = np.diag(s.r**2 * self.counts().astype(float))
        return GramStats(self.n, xtx, np.zeros(s.d), 0.0, s.r, s.m)

    def to_dataset(self):
        s = self.spec
        X = np.zeros((self.n, s.d))
        X[np.arange(self.n), self.indices] = s.r
        return Dataset(X, np.zeros(self.n), s.r, s.m)


@dataclass(frozen=True, eq=False)
class CouponCollector(DistributionSpec):
    """``X`` uniform on ``r e_1, ..., r e_k`` in ``R^d`` and ``Y = 0``."""

    d: int
    k: int
    r: float = 1.0
    kind = "coupon_collector"

    def __post_init__(self):
        if not (1 <= self.k <= self.d):
            raise InvalidSpec(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.r < 0:
            raise InvalidSpec("r must be non-negative")

    m = property(lambda self: 0.0)

    def moments(self):
        diag = np.zeros(self.d)
        diag[: self.k] = self.r**2 / self.k
        return PopulationMoments(np.diag(diag), np.zeros(self.d), 0.0)

    def draw(self, n, seed):
        idx = [stream(seed, b).integers(0, self.k, BLOCK)[:size] for b, size in _blocks(n)]
        return CouponDraw(self, n, np.concatenate(idx) if idx else np.zeros(0, np.int64))

    def atoms(self, limit=None):
        X = self.r * np.eye(self.d)[: self.k]
        return X, np.zeros(self.k), np.full(self.k, 1.0 / self.k)

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "k": self.k, "r": self.r}


# --- well-specified Gaussian ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class WellSpecifiedGaussian(DistributionSpec):
    """``X ~ N(0, cov)``, ``Y = <w_true, X> + noise_sd * N(0, 1)``; unbounded."""

    d: int
    cov: np.ndarray = None
    w_true: np.ndarray = None
    noise_sd: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        cov = np.eye(self.d) if self.cov is None else symmetrize(self.cov)
        w = np.zeros(self.d) if self.w_true is None else np.asarray(self.w_true, dtype=float)
        if cov.shape != (self.d, self.d) or w.shape != (self.d,):
            raise InvalidSpec("cov must be d x d and w_true of length d")
        if np.linalg.eigvalsh(cov)[0] < -1e-12:
            raise InvalidSpec("cov must be positive semi-definite")
        if self.noise_sd < 0:
            raise InvalidSpec("noise_sd must be non-negative")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "w_true", w)
        evals, vecs = np.linalg.eigh(cov)
        object.__setattr__(self, "_root", vecs * np.sqrt(np.clip(evals, 0, None)))

    r = property(lambda self: math.inf)
    m = property(lambda self: math.inf)

    def moments(self):
        cross = self.cov @ self.w_true
        return PopulationMoments(self.cov, cross, float(self.w_true @ cross + self.noise_sd**2))

    def draw(self, n, seed):
        Xs, ys = [], []
        for b, size in _blocks(n):
            g = stream(seed, b)
            X = g.standard_normal((BLOCK, self.d))[:size] @ self._root.T
            Xs.append(X)
            ys.append(X @ self.w_true + self.noise_sd * g.standard_normal(BLOCK)[:size])
        X = np.concatenate(Xs) if Xs else np.zeros((0, self.d))
        y = np.concatenate(ys) if ys else np.zeros(0)
        return Dataset(X, y)

    def to_dict(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "cov": self.cov.tolist(),
            "w_true": self.w_true.tolist(),
            "noise_sd": self.noise_sd,
        }


# --- finite discrete -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteDiscrete(DistributionSpec):
    """Arbitrary finite support ``{(x_i, y_i)}`` with probabilities ``p_i``."""

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    r: float = None
    m: float = None
    kind = "finite_discrete"

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if not (len(xs) == len(ys) == len(p)) or len(p) == 0:
            raise InvalidSpec("xs, ys and probs must be non-empty and of equal length")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise InvalidSpec(f"probabilities must be non-negative and sum to 1, got {p.sum()!r}")
        norms = np.linalg.norm(xs, axis=1)
        r = float(norms.max()) if self.r is None else float(self.r)
        m = float(np.abs(ys).max()) if self.m is None else float(self.m)
        if norms.max() > r + _TOL or np.abs(ys).max() > m + _TOL:
            raise InvalidSpec("an atom violates the declared bounds r, m")
        for name, val in (("xs", xs), ("ys", ys), ("probs", p), ("r", r), ("m", m)):
            object.__setattr__(self, name, val)

    @property
    def d(self):
        return self.xs.shape[1]

    def moments(self):
        X, y, p = self.xs, self.ys, self.probs
        return PopulationMoments(symmetrize((X * p[:, None]).T @ X), X.T @ (p * y), float(p @ y**2))

    def draw(self, n, seed):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = [np.searchsorted(cdf, stream(seed, b).random(BLOCK)[:size], side="right") for b, size in _blocks(n)]
        idx = np.concatenate(idx) if idx else np.zeros(0, np.int64)
        return Dataset(self.xs[idx], self.ys[idx], self.r, self.m)

    def atoms(self, limit=None):
        return self.xs, self.ys, self.probs

    def to_dict(self):
        return {
            "kind": self.kind,
            "atoms": [{"x": x.tolist(), "y": float(y), "p": float(p)} for x, y, p in zip(self.xs, self.ys, self.probs)],
            "r": self.r,
            "m": self.m,
        }


# --- module-level operations ----------------------------------------------------


def spec_from_dict(data):
    """Inverse of ``spec.to_dict()``."""
    data = dict(data)
    kind = data.pop("kind", None)
    try:
        if kind == SparseDenseMixture.kind:
            return SparseDenseMixture(**data)
        if kind == CouponCollector.kind:
            return CouponCollector(**data)
        if kind == WellSpecifiedGaussian.kind:
            for key in ("cov", "w_true"):
                if data.get(key) is not None:
                    data[key] = np.asarray(data[key], dtype=float)
            return WellSpecifiedGaussian(**data)
        if kind == FiniteDiscrete.kind:
            atoms = data.pop("atoms")
            return FiniteDiscrete(
                [a["x"] for a in atoms], [a["y"] for a in atoms], [a["p"] for a in atoms], **data
            )
    except TypeError as exc:
        raise InvalidSpec(f"bad parameters for {kind!r}: {exc}") from None
    raise InvalidSpec(f"unknown distribution kind {kind!r}")


def sample(spec, n, seed):
    """``n`` i.i.d. pairs from ``spec``, deterministic in ``(spec, n, seed)``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return spec.draw(int(n), seed).to_dataset()


def population_moments(spec):
    return spec.moments()


def exact_risk(spec, w, moments=None):
    """``R(w) = E Y^2 - 2 <w, E XY> + w' Sigma w``."""
    mom = moments or spec.moments()
    w = np.asarray(w, dtype=float)
    return float(mom.y_second - 2 * w @ mom.cross + w @ mom.second_moment @ w)


def optimal_weights(spec, b=math.inf, moments=None):
    """Risk minimiser over the ball of radius ``b`` and its risk."""
    mom = moments or spec.moments()
    if math.isinf(b):
        b = 1e300
    w, _ = trust_region_solve(mom.second_moment, mom.cross, b)
    return w, exact_risk(spec, w, mom)


def coupon_k(n):
    """``max(38, smallest k with n <= k ln(k) / 2)``."""
    if n < 1:
        raise ValueError("n must be at least 1")

    def enough(k):
        return 0.5 * k * math.log(k) >= n

    lo, hi = 1, 2
    while not enough(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if enough(mid):
            hi = mid
        else:
            lo = mid
    return max(38, hi)
