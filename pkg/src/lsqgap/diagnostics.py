"""Monte-Carlo excess risk and the theory-side quantities around it.

Risk is always evaluated against exact population moments.  Linear
predictors use the closed form; non-linear ones use exact enumeration of
small finite supports, otherwise a control-variate Monte-Carlo integral
anchored on the predictor's own linear surrogate (whose risk is known in
closed form).
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import math
import re
import typing
import warnings

import numpy as np

from ._rng import derive_seed
from .distributions import (
    SparseDenseDraw,
    SparseDenseMixture,
    exact_risk,
    optimal_weights,
)
from .errors import WeakRegularization
from .estimators import (
    ForsterWarmuthPredictor,
    LinearPredictor,
    VawBatchPredictor,
    adversarial_erm_select,
    fit_constrained_ls,
    fit_min_norm,
    fit_ridge_quiet,
)
from .linalg import SpdSolveContext

#: supports up to this many atoms are integrated exactly
ATOM_LIMIT = 4096
#: default Monte-Carlo size for non-linear risk integrals
RISK_SAMPLES = 20000

_KEY_RISK = 1
_KEY_PILOT = 2


# --- estimator descriptors ---------------------------------------------------

_NEEDS = {
    "constrained_ls": "b",
    "adversarial_erm": "b",
    "ridge": "lam",
    "vaw_batch": "lam",
    "min_norm": None,
    "forster_warmuth": None,
}
ESTIMATORS = tuple(_NEEDS)


@dataclass(frozen=True)
class Estimator:
    """A fitting rule plus its tuning parameter (radius ``b`` or penalty ``lam``)."""

    name: str
    b: float = None
    lam: float = None

    def __post_init__(self):
        if self.name not in _NEEDS:
            raise ValueError(f"unknown estimator {self.name!r}; expected one of {', '.join(ESTIMATORS)}")
        need = _NEEDS[self.name]
        if need and getattr(self, need) is None:
            raise ValueError(f"estimator {self.name!r} needs parameter {need!r}")

    @classmethod
    def parse(cls, text):
        """``"min_norm"``, ``"ridge(2)"``, ``"constrained_ls(b=4)"``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*(?:(\w+)\s*=\s*)?([^)]*?)\s*\))?\s*", text)
        if not m:
            raise ValueError(f"cannot parse estimator {text!r}")
        name, key, value = m.groups()
        if value is None:
            return cls(name)
        key = {"lambda": "lam"}.get(key, key) or _NEEDS.get(name)
        if key not in ("b", "lam"):
            raise ValueError(f"estimator {name!r} takes no parameter")
        return cls(name, **{key: float(value)})

    def with_params(self, b=None, lam=None):
        """Fill in whichever parameter this estimator uses."""
        need = _NEEDS[self.name]
        if need == "b" and b is not None:
            return Estimator(self.name, b=b)
        if need == "lam" and lam is not None:
            return Estimator(self.name, lam=lam)
        return self

    @property
    def tag(self):
        return self.name

    def fit(self, sample):
        if self.name == "constrained_ls":
            return fit_constrained_ls(sample, self.b)
        if self.name == "adversarial_erm":
            return adversarial_erm_select(sample, self.b)
        if self.name == "ridge":
            return fit_ridge_quiet(sample, self.lam)
        if self.name == "min_norm":
            return fit_min_norm(sample)
        if self.name == "vaw_batch":
            return VawBatchPredictor(sample.to_dataset(), self.lam)
        return ForsterWarmuthPredictor(sample)


def as_estimator(obj):
    if isinstance(obj, Estimator):
        return obj
    if isinstance(obj, str):
        return Estimator.parse(obj)
    if isinstance(obj, dict):
        return Estimator(**obj)
    raise TypeError(f"cannot interpret {obj!r} as an estimator")


# --- aggregation -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExcessRiskEstimate:
    mean: float
    stderr: float
    replicates: int
    per_replicate: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_values(cls, values):
        """Fold in index order with compensated summation."""
        v = np.asarray(values, dtype=float)
        k = len(v)
        mean = math.fsum(v) / k
        var = math.fsum((v - mean) ** 2) / (k - 1) if k > 1 else math.nan
        return cls(mean, math.sqrt(var / k), k, v)


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# --- risk of arbitrary predictors --------------------------------------------


def _cv_mean(values, control, control_mean):
    """Mean of ``values`` with ``control`` (known mean) as control variate."""
    c = control - control.mean()
    var = float(c @ c)
    beta = float(c @ (values - values.mean())) / var if var > 0 else 0.0
    return float(values.mean() - beta * (control.mean() - control_mean))


def predictor_risk(spec, predictor, moments=None, samples=RISK_SAMPLES, seed=0):
    """Population risk ``E (Y - f(X))^2`` of ``predictor``.

    Exact for linear predictors and for supports with at most
    :data:`ATOM_LIMIT` atoms.  For the sparse/dense mixture the dense atom
    is exact and only the sparse branch is integrated by Monte Carlo.
    """
    mom = moments or spec.moments()
    if isinstance(predictor, LinearPredictor):
        return exact_risk(spec, predictor.weights, mom)
    atoms = spec.atoms(limit=ATOM_LIMIT)
    if atoms is not None:
        X, y, p = atoms
        return float(math.fsum(p * (y - predictor.predict(X)) ** 2))
    w = predictor.linear_anchor
    if isinstance(spec, SparseDenseMixture):
        dense = np.full(spec.d, 1.0 / spec.d)
        dense_part = (1.0 - predictor(dense)) ** 2
        Q = spec.sparse_points(samples, seed)
        f2 = predictor.predict(Q) ** 2
        z = (Q @ w) ** 2
        sparse_part = _cv_mean(f2, z, float(w @ spec.sparse_second_moment() @ w))
        return float((1 - spec.sparse_prob) * dense_part + spec.sparse_prob * sparse_part)
    test = spec.draw(samples, seed).to_dataset()
    X, y = test.covariates, test.responses
    loss = (y - predictor.predict(X)) ** 2
    return _cv_mean(loss, (y - X @ w) ** 2, exact_risk(spec, w, mom))


# --- excess risk ---------------------------------------------------------------


def _comparator_radius(est, b):
    if b is not None:
        return b
    return est.b if est.b is not None else math.inf


def _excess_one(job):
    spec, est, n, seed, rep, baseline, mom, samples = job
    rseed = derive_seed(seed, rep)
    fit = est.fit(spec.draw(n, rseed))
    return predictor_risk(spec, fit, mom, samples, derive_seed(seed, rep, _KEY_RISK)) - baseline


def excess_risk_mc(spec, estimator, n, replicates, seed, b=None, workers=None, risk_samples=RISK_SAMPLES):
    """``E R(fit) - R(w*_b)`` over ``replicates`` independent samples of size ``n``.

    Replicate ``i`` draws its sample from ``derive_seed(seed, i)``, so
    different estimators called with the same seed see the same data.  The
    comparator radius ``b`` defaults to the estimator's own radius, else
    infinity.
    """
    est = as_estimator(estimator)
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if est.lam is not None and math.isfinite(spec.r) and est.lam < spec.r**2:
        warnings.warn(f"lambda={est.lam:g} is below r^2={spec.r**2:g}", WeakRegularization, stacklevel=2)
    mom = spec.moments()
    _, baseline = optimal_weights(spec, _comparator_radius(est, b), mom)
    jobs = [(spec, est, int(n), seed, i, baseline, mom, risk_samples) for i in range(replicates)]
    return ExcessRiskEstimate.from_values(_map(_excess_one, jobs, workers))


# --- multiplier term -----------------------------------------------------------


def _shift(spec, lam):
    return lam * spec.r**2 if math.isfinite(spec.r) else lam


def _noise_leverage(sample, w_star, shift):
    """Per-row ``(xi_i^2, h_i)`` with ``h_i = X_i' (shift I + X'X)^{-1} X_i``.

    Compact sparse/dense samples are handled without materialising rows.
    """
    s = sample.stats()
    inv = SpdSolveContext(s.xtx, shift).inverse() if shift > 0 else SpdSolveContext(s.xtx).pinv()
    if isinstance(sample, SparseDenseDraw):
        spec = sample.spec
        c = spec.sparse_value
        S = sample.supports
        dense = np.full(spec.d, 1.0 / spec.d)
        h = np.full(sample.n, dense @ inv @ dense)
        xi = np.full(sample.n, 1.0 - dense @ w_star)
        if len(S):
            h[sample.sparse_rows] = c**2 * inv[S[:, :, None], S[:, None, :]].sum(axis=(1, 2))
            xi[sample.sparse_rows] = -c * w_star[S].sum(axis=1)
        return xi**2, h
    ds = sample.to_dataset()
    X = ds.covariates
    h = np.einsum("ij,jk,ik->i", X, inv, X)
    return (ds.responses - X @ w_star) ** 2, h


def _multiplier_one(job):
    spec, n, shift, w_star, seed, rep, index = job
    xi2, h = _noise_leverage(spec.draw(n, derive_seed(seed, rep)), w_star, shift)
    terms = xi2 * h
    # X' Sigma_hat^{-1} X = n h with Sigma_hat = (shift I + X'X) / n
    return n * terms[index] if index is not None else math.fsum(terms)


def multiplier_term(spec, n, lam, replicates, seed, b=math.inf, index=None, workers=None):
    """Monte-Carlo estimate of ``E xi^2 X' Sigma_hat^{-1} X``.

    ``xi = Y - <w*_b, X>`` and ``Sigma_hat = (lam r^2 I + sum_k X_k X_k') / n``
    includes the query point.  By exchangeability each replicate averages
    over all rows (``index=None``) or uses the single row ``index``.  For
    unbounded covariates (``r`` infinite) the shift is ``lam`` itself.
    """
    mom = spec.moments()
    if mom.y_second == 0:
        # Y = 0 a.s. forces w* = 0, so xi = 0 identically
        return ExcessRiskEstimate.from_values(np.zeros(replicates))
    w_star, _ = optimal_weights(spec, b, mom)
    shift = _shift(spec, lam)
    jobs = [(spec, int(n), shift, w_star, seed, i, index) for i in range(replicates)]
    return ExcessRiskEstimate.from_values(_map(_multiplier_one, jobs, workers))


def trace_factor(spec, n, lam, replicates, seed):
    """Monte-Carlo ``E Tr(Sigma_hat_lam^{-1} Sigma_hat_0)``, the sum of leverages."""
    shift = _shift(spec, lam)
    vals = []
    for i in range(replicates):
        s = spec.draw(n, derive_seed(seed, i)).stats()
        ev = np.clip(np.linalg.eigvalsh(s.xtx), 0, None)
        vals.append(float(np.sum(ev / (ev + shift))))
    return ExcessRiskEstimate.from_values(vals)


def effective_dimension(sigma, lam, n):
    """``Tr((Sigma + lam I / n)^{-1} Sigma)``; eigenvalues at or below zero count as zero."""
    ev = np.linalg.eigvalsh(np.asarray(sigma, dtype=float))
    ev = np.where(ev > 1e-14 * max(ev.max(initial=0.0), 0.0), ev, 0.0)
    t = lam / n
    if t == 0:
        return float(np.count_nonzero(ev))
    return float(math.fsum(ev / (ev + t)))


# --- moment equivalence ------------------------------------------------------------


class MomentRatios(typing.NamedTuple):
    noise_ratio: float
    design_ratio: float
    #: the probe direction attaining ``design_ratio``
    direction: np.ndarray = None


def _probe_set(spec, seed):
    d = spec.d
    probes = [np.eye(d), np.full((1, d), d**-0.5)]
    if isinstance(spec, SparseDenseMixture):
        pilot = spec.draw(max(1000, 50 * d), derive_seed(seed, _KEY_PILOT))
        counts = np.bincount(pilot.supports.ravel(), minlength=d).astype(float)
        zeta = counts - pilot.sparse_count * spec.support_size / d
        if np.any(zeta):
            probes.append((zeta / np.linalg.norm(zeta))[None, :])
    g = np.random.default_rng(derive_seed(seed, _KEY_PILOT, 1))
    rand = g.standard_normal((100, d))
    probes.append(rand / np.linalg.norm(rand, axis=1, keepdims=True))
    return np.vstack(probes)


def moment_equivalence_constants(spec, sample_size, seed, b=math.inf):
    """Empirical L4-L2 constants of the noise and of one-dimensional marginals.

    ``noise_ratio = (E xi^4)^{1/4} / (E xi^2)^{1/2}`` (``nan`` when ``xi = 0``
    a.s.).  ``design_ratio`` is the largest ``(E <w, X>^4)^{1/2} / E <w, X>^2``
    over a finite probe set (coordinate axes, the normalised all-ones vector,
    the normalised count-deviation direction of a pilot sample for the
    sparse/dense mixture, and 100 random unit vectors), hence a lower bound
    on the supremum over all directions.
    """
    w_star, _ = optimal_weights(spec, b)
    data = spec.draw(int(sample_size), seed).to_dataset()
    X, y = data.covariates, data.responses
    xi = y - X @ w_star
    e2, e4 = np.mean(xi**2), np.mean(xi**4)
    noise = e4**0.25 / math.sqrt(e2) if e2 > 0 else math.nan
    P = _probe_set(spec, seed)
    proj = X @ P.T
    m2 = np.mean(proj**2, axis=0)
    m4 = np.mean(proj**4, axis=0)
    ok = m2 > 0
    ratios = np.where(ok, np.sqrt(m4) / np.where(ok, m2, 1.0), 0.0)
    best = int(np.argmax(ratios))
    return MomentRatios(float(noise), float(ratios[best]), P[best])


# --- construction statistics ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstructionStats:
    sparse_count: int
    zeta: np.ndarray
    counts: np.ndarray
    a_invertible: bool
    q_form_1A1: float
    q_form_1A21: float
    q_form_zAz: float
    lambda_min_A: float
    A: np.ndarray = field(default=None, repr=False)


def construction_stats(data, support_size=None):
    """Statistics of the sparse rows of a sparse/dense mixture sample.

    ``I`` indexes rows different from the dense point ``1/d``; ``A`` is their
    Gram matrix, ``counts = A 1`` the number of sparse rows touching each
    coordinate and ``zeta = counts - |I| (k / d) 1`` (``k / d = d^{-1/2}``
    by default).  Quadratic forms in ``A^{-1}`` are ``nan`` unless
    ``lambda_min(A) > 1e-12``.
    """
    if isinstance(data, SparseDenseDraw):
        d = data.spec.d
        k = data.spec.support_size
        A = data.sparse_gram()
        count = data.sparse_count
        counts = np.bincount(data.supports.ravel(), minlength=d).astype(float)
    else:
        ds = data.to_dataset()
        d = ds.d
        k = support_size or round(math.sqrt(d))
        sparse = np.any(ds.covariates != 1.0 / d, axis=1)
        Xs = ds.covariates[sparse]
        A = Xs.T @ Xs
        count = int(np.count_nonzero(sparse))
        counts = A @ np.ones(d)
    zeta = counts - count * (k / d) * np.ones(d)
    ctx = SpdSolveContext(A) if count else None
    lam_min = float(np.linalg.eigvalsh(A)[0]) if count else 0.0
    one = np.ones(d)
    if ctx is not None and lam_min > 1e-12:
        u = ctx.solve(one)
        q1, q2, qz = float(one @ u), float(u @ u), float(zeta @ ctx.solve(zeta))
        ok = True
    else:
        q1 = q2 = qz = math.nan
        ok = False
    return ConstructionStats(count, zeta, counts, ok, q1, q2, qz, lam_min, A)


def min_norm_closed_form(stats, n, d):
    """Minimum-norm fit on a sparse/dense sample from its sparse statistics.

    ``w = d^{3/2} |I|^{-1} (1 - A^{-1} zeta) / ((n - |I|)^{-1} d^2 + 1' A^{-1} 1)``;
    requires ``A`` invertible and at least one dense row.
    """
    ctx = SpdSolveContext(stats.A)
    one = np.ones(d)
    scale = d**1.5 / stats.sparse_count / (d**2 / (n - stats.sparse_count) + one @ ctx.solve(one))
    return scale * (one - ctx.solve(stats.zeta))


# --- reference bounds ---------------------------------------------------------------


def bound_overlay(d, n, m, r, b):
    """Reference rates, with no constants inserted."""
    fast = d * m**2 / n
    bias = r**2 * b**2 / n
    return {
        "shamir_fast": fast + bias,
        "slow_rate": min(m**2, min(fast, r * b * m / math.sqrt(n)) + bias),
        "localized_upper": fast + d * bias,
        "d32_curve": d**1.5 * m**2 / n,
    }


def vaw_rate(d, n, m, r, b):
    """``(d m^2 / n) ln(1 + r^2 b^2 n / (d^2 m^2))``."""
    return d * m**2 / n * math.log1p(r**2 * b**2 * n / (d**2 * m**2))


@dataclass(frozen=True, eq=False)
class RidgeBoundReport:
    observed: ExcessRiskEstimate
    multiplier: ExcessRiskEstimate
    bound: float
    c_hat: float


def ridge_multiplier_bound_check(spec, n, lam, b, replicates, seed, workers=None):
    """Observed ridge excess risk against ``multiplier / n + lam b^2 / n``.

    The ridge penalty is ``lam`` and the multiplier term uses the same
    shift.  ``c_hat`` is the observed ratio; nothing is asserted.
    """
    if math.isfinite(spec.r) and lam < spec.r**2:
        warnings.warn(f"lambda={lam:g} is below r^2={spec.r**2:g}", WeakRegularization, stacklevel=2)
    observed = excess_risk_mc(spec, Estimator("ridge", lam=lam), n, replicates, seed, b=b, workers=workers)
    mom = spec.moments()
    w_star, _ = optimal_weights(spec, b, mom)
    jobs = [(spec, int(n), float(lam), w_star, seed, i, None) for i in range(replicates)]
    mult = ExcessRiskEstimate.from_values(_map(_multiplier_one, jobs, workers))
    bound = mult.mean / n + lam * b**2 / n
    c_hat = observed.mean / bound if bound > 0 else (0.0 if observed.mean <= 0 else math.inf)
    return RidgeBoundReport(observed, mult, bound, c_hat)


# --- report ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsReport:
    multiplier_term: float
    multiplier_stderr: float
    effective_dimension: float
    noise_l4_l2: float
    design_l4_l2: float
    leverage_max: float
    bound_overlay: dict

    def to_dict(self):
        return asdict(self)


def diagnose(spec, n, lam, b, replicates, seed, moment_samples=100000, workers=None):
    """Collect every diagnostic for one ``(spec, n, lam, b)`` point.

    ``multiplier_term`` is reported per sample, i.e. divided by ``n``.
    """
    mult = multiplier_term(spec, n, lam, replicates, seed, b=b, workers=workers)
    shift = _shift(spec, lam)
    _, h = _noise_leverage(spec.draw(n, derive_seed(seed, 0)), optimal_weights(spec, b)[0], shift)
    ratios = moment_equivalence_constants(spec, moment_samples, seed, b=b)
    m = spec.m if math.isfinite(spec.m) else math.nan
    r = spec.r if math.isfinite(spec.r) else math.nan
    return DiagnosticsReport(
        multiplier_term=mult.mean / n,
        multiplier_stderr=mult.stderr / n,
        effective_dimension=effective_dimension(spec.moments().second_moment, shift, n),
        noise_l4_l2=ratios.noise_ratio,
        design_l4_l2=ratios.design_ratio,
        leverage_max=float(np.max(h)),
        bound_overlay=bound_overlay(spec.d, n, m, r, b),
    )
