"""Config-driven sweeps, the identity suite, exponent fits and result emission."""
from dataclasses import astuple, dataclass, field, fields
import csv
import io
import json
import math
import os
import sys
import time
import warnings

import numpy as np
import yaml

from ._rng import stream
from .diagnostics import (
    Estimator,
    ESTIMATORS,
    bound_overlay,
    construction_stats,
    diagnose,
    excess_risk_mc,
    min_norm_closed_form,
    multiplier_term,
)
from .distributions import (
    Dataset,
    SparseDenseMixture,
    coupon_k,
    optimal_weights,
    spec_from_dict,
)
from .errors import ConfigError, InsufficientData, InvalidSpec, NonPositiveExcess
from .estimators import (
    ForsterWarmuthPredictor,
    fit_constrained_ls,
    fit_min_norm,
    fw_predict,
    lambda_star,
    ridge_loo_residual,
    vaw_regret,
)
from .linalg import SpdSolveContext, sherman_morrison_downdate, sherman_morrison_update

SEED_ENV = "LSQGAP_SEED"


# --- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    kind: str
    value: float = None

    def to_config(self):
        return self.kind if self.value is None else {self.kind: self.value}


def _parse_rule(raw, path, allowed):
    if isinstance(raw, str):
        kind, value = raw, None
    elif isinstance(raw, dict) and len(raw) == 1:
        (kind, value), = raw.items()
    else:
        raise ConfigError(path, f"expected one of {sorted(allowed)} as a string or single-key mapping")
    if kind not in allowed:
        raise ConfigError(path, f"unknown rule {kind!r}; expected one of {sorted(allowed)}")
    if allowed[kind]:
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
            raise ConfigError(f"{path}.{kind}", f"needs a positive number, got {value!r}")
        value = float(value)
    elif value is not None:
        raise ConfigError(f"{path}.{kind}", "takes no value")
    return Rule(kind, value)


_B_RULES = {"fixed": True, "sqrt_d_times": True}
_LAMBDA_RULES = {"fixed": True, "r_squared_times": True, "lambda_star": False}


def d3_log_d(d):
    """``ceil(d^3 ln d)``."""
    return math.ceil(d**3 * math.log(d))


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: a distribution family over a ``(d, n)`` grid.

    ``distribution`` is a template without ``d``; the harness instantiates it
    at each grid point.  A coupon-collector template may set ``k: d`` (the
    default) and a grid entry may set ``d: coupon_k`` to use ``coupon_k(n)``.
    """

    distribution: dict
    grid: tuple
    estimators: tuple
    replicates: int
    seed: int
    b_rule: Rule = Rule("sqrt_d_times", 1.0)
    lambda_rule: Rule = Rule("fixed", 1.0)
    workers: int = 1
    multiplier: bool = True
    record_wall_time: bool = False
    risk_samples: int = 20000

    def spec_for(self, d, n):
        template = dict(self.distribution)
        kind = template.get("kind")
        if kind == "finite_discrete":
            return spec_from_dict(template)
        template["d"] = d
        if kind == "coupon_collector":
            k = template.get("k", "d")
            template["k"] = d if k == "d" else coupon_k(n) if k == "coupon_k" else k
        return spec_from_dict(template)

    def b_for(self, d):
        return self.b_rule.value if self.b_rule.kind == "fixed" else self.b_rule.value * math.sqrt(d)

    def lambda_for(self, spec, b):
        rule = self.lambda_rule
        if rule.kind == "fixed":
            return rule.value
        if rule.kind == "r_squared_times":
            return rule.value * spec.r**2
        return lambda_star(spec.d, spec.m, b)

    def points(self):
        """``(d, n, spec, b, lam)`` for each grid entry, in grid order."""
        out = []
        for d, n in self.grid:
            spec = self.spec_for(d, n)
            b = self.b_for(spec.d)
            out.append((spec.d, n, spec, b, self.lambda_for(spec, b)))
        return out

    @property
    def tag(self):
        return self.distribution.get("kind", "custom")


def _expand_grid(raw, path):
    def resolve_d(d, n, where):
        if d == "coupon_k":
            return coupon_k(n)
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise ConfigError(where, f"d must be a positive integer or 'coupon_k', got {d!r}")
        return d

    def check_n(n, where):
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ConfigError(where, f"n must be a positive integer, got {n!r}")
        return n

    if isinstance(raw, list):
        out = []
        for i, entry in enumerate(raw):
            where = f"{path}[{i}]"
            if isinstance(entry, dict):
                d, n = entry.get("d"), entry.get("n")
            elif isinstance(entry, list) and len(entry) == 2:
                d, n = entry
            else:
                raise ConfigError(where, "expected [d, n] or {d: ..., n: ...}")
            if n == "d3_log_d":
                n = d3_log_d(resolve_d(d, 1, f"{where}.d"))
            n = check_n(n, f"{where}.n")
            out.append((resolve_d(d, n, f"{where}.d"), n))
        return tuple(out)
    if isinstance(raw, dict):
        ds, ns = raw.get("d"), raw.get("n")
        n_rule, d_rule = raw.get("n_rule"), raw.get("d_rule")
        if n_rule is not None:
            if n_rule != "d3_log_d":
                raise ConfigError(f"{path}.n_rule", f"unknown rule {n_rule!r}; expected 'd3_log_d'")
            if not isinstance(ds, list):
                raise ConfigError(f"{path}.d", "n_rule needs a list of d values")
            return tuple((resolve_d(d, 1, f"{path}.d[{i}]"), d3_log_d(d)) for i, d in enumerate(ds))
        if d_rule is not None:
            if d_rule != "coupon_k":
                raise ConfigError(f"{path}.d_rule", f"unknown rule {d_rule!r}; expected 'coupon_k'")
            if not isinstance(ns, list):
                raise ConfigError(f"{path}.n", "d_rule needs a list of n values")
            return tuple((coupon_k(check_n(n, f"{path}.n[{i}]")), n) for i, n in enumerate(ns))
        if not isinstance(ds, list) or not isinstance(ns, list):
            raise ConfigError(path, "expected lists 'd' and 'n', or one of them with a rule")
        return tuple(
            (resolve_d(d, 1, f"{path}.d[{i}]"), check_n(n, f"{path}.n[{j}]"))
            for i, d in enumerate(ds)
            for j, n in enumerate(ns)
        )
    raise ConfigError(path, "expected a list of grid points or a mapping")


def config_from_dict(raw, env=None):
    """Validate a parsed config mapping; every error names its field path."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    for key in ("distribution", "grid", "estimators", "replicates", "seed"):
        if key not in raw:
            raise ConfigError(key, "missing required field")

    dist = raw["distribution"]
    if isinstance(dist, str):
        dist = {"kind": dist}
    if not isinstance(dist, dict) or "kind" not in dist:
        raise ConfigError("distribution", "expected a mapping with a 'kind'")
    if "d" in dist and dist["kind"] != "finite_discrete":
        raise ConfigError("distribution.d", "d comes from the grid, not the distribution template")

    grid = _expand_grid(raw["grid"], "grid")
    if not grid:
        raise ConfigError("grid", "grid is empty")

    ests = raw["estimators"]
    if not isinstance(ests, list) or not ests:
        raise ConfigError("estimators", "expected a non-empty list")
    for i, e in enumerate(ests):
        if e not in ESTIMATORS:
            raise ConfigError(f"estimators[{i}]", f"unknown estimator {e!r}; expected one of {', '.join(ESTIMATORS)}")

    reps = raw["replicates"]
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 2:
        raise ConfigError("replicates", f"need an integer >= 2, got {reps!r}")

    seed = raw["seed"]
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, f"not an integer: {env[SEED_ENV]!r}") from None
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"need a non-negative integer, got {seed!r}")

    kwargs = {}
    if "b_rule" in raw:
        kwargs["b_rule"] = _parse_rule(raw["b_rule"], "b_rule", _B_RULES)
    if "lambda_rule" in raw:
        kwargs["lambda_rule"] = _parse_rule(raw["lambda_rule"], "lambda_rule", _LAMBDA_RULES)
    for key, kind in (("workers", int), ("risk_samples", int), ("multiplier", bool), ("record_wall_time", bool)):
        if key in raw:
            val = raw[key]
            if not isinstance(val, kind) or (kind is int and (isinstance(val, bool) or val < 1)):
                raise ConfigError(key, f"expected {'a positive integer' if kind is int else 'true or false'}, got {val!r}")
            kwargs[key] = val

    cfg = ExperimentConfig(dict(dist), grid, tuple(ests), reps, seed, **kwargs)

    for i, (d, n) in enumerate(cfg.grid):
        try:
            spec = cfg.spec_for(d, n)
        except InvalidSpec as exc:
            raise ConfigError(f"grid[{i}].d", str(exc)) from None
        except (TypeError, KeyError) as exc:
            raise ConfigError("distribution", str(exc)) from None
        if spec.d != d:
            raise ConfigError(f"grid[{i}].d", f"distribution has dimension {spec.d}, grid asks for {d}")
        if cfg.lambda_rule.kind == "lambda_star" and not math.isfinite(spec.m):
            raise ConfigError("lambda_rule", f"lambda_star needs a finite response bound m; {spec.kind} has m = inf")
        if cfg.lambda_rule.kind == "r_squared_times" and not math.isfinite(spec.r):
            raise ConfigError("lambda_rule", f"r_squared_times needs a finite covariate bound r; {spec.kind} has r = inf")
        lam = cfg.lambda_for(spec, cfg.b_for(spec.d))
        if not lam > 0:
            raise ConfigError("lambda_rule", f"rule gives lambda = {lam!r} at grid[{i}]; lambda must be positive")
        if "adversarial_erm" in cfg.estimators and spec.kind != "coupon_collector":
            raise ConfigError("estimators", "adversarial_erm needs all responses zero (coupon_collector)")
    return cfg


def load_config(path, env=None):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(raw, env)


# --- sweeps ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    distribution_tag: str
    d: int
    n: int
    b: float
    lambda_: float
    estimator: str
    replicates: int
    seed: int
    excess_mean: float
    excess_stderr: float
    multiplier_term: float
    shamir_fast: float
    localized_upper: float
    d32_curve: float
    wall_ms: float

    def to_dict(self):
        return dict(zip(FIELDS, astuple(self)))

    @classmethod
    def from_dict(cls, data):
        vals = []
        for name, kind in zip(FIELDS, _TYPES):
            v = data[name]
            vals.append(kind(v))
        return cls(*vals)


#: CSV / JSON column names, in order
FIELDS = tuple("lambda" if f.name == "lambda_" else f.name for f in fields(ResultRow))
_TYPES = tuple(f.type for f in fields(ResultRow))


def run_experiment(config):
    """One row per grid point and estimator, in grid order.

    ``multiplier_term`` in a row is the per-sample value
    ``E xi^2 X' Sigma_hat^{-1} X / n`` at the row's ``lambda``.
    """
    rows = []
    for d, n, spec, b, lam in config.points():
        if config.multiplier:
            mult = multiplier_term(spec, n, lam, config.replicates, config.seed, b=b, workers=config.workers).mean / n
        else:
            mult = math.nan
        m = spec.m if math.isfinite(spec.m) else math.nan
        r = spec.r if math.isfinite(spec.r) else math.nan
        bounds = bound_overlay(d, n, m, r, b)
        for name in config.estimators:
            est = Estimator(name, **({"b": b} if name in ("constrained_ls", "adversarial_erm") else {}),
                            **({"lam": lam} if name in ("ridge", "vaw_batch") else {}))
            start = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = excess_risk_mc(
                    spec, est, n, config.replicates, config.seed, b=b,
                    workers=config.workers, risk_samples=config.risk_samples,
                )
            wall = (time.perf_counter() - start) * 1e3 if config.record_wall_time else 0.0
            rows.append(ResultRow(
                config.tag, d, n, float(b), float(lam), name, config.replicates, config.seed,
                res.mean, res.stderr, mult, bounds["shamir_fast"], bounds["localized_upper"],
                bounds["d32_curve"], wall,
            ))
    return rows


def diagnose_config(config, moment_samples=100000):
    """A :class:`~lsqgap.diagnostics.DiagnosticsReport` per grid point."""
    out = []
    for d, n, spec, b, lam in config.points():
        rep = diagnose(spec, n, lam, b, config.replicates, config.seed, moment_samples, config.workers)
        out.append({"d": d, "n": n, "b": b, "lambda": lam, **rep.to_dict()})
    return out


# --- exponent fit --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.residual))


def _get(row, key):
    if isinstance(row, dict):
        return row[key]
    return getattr(row, "lambda_" if key == "lambda" else key)


def fit_scaling_exponent(rows, estimator):
    """Least-squares line through ``(log d, log(excess_mean * n))``.

    Rows with non-positive mean are dropped with a
    :class:`~lsqgap.errors.NonPositiveExcess` warning; fewer than three
    remaining rows raise :class:`~lsqgap.errors.InsufficientData`.
    ``residual`` is the root-mean-square residual of the fit.
    """
    pts = []
    for row in rows:
        if _get(row, "estimator") != estimator:
            continue
        mean = float(_get(row, "excess_mean"))
        if not mean > 0:
            warnings.warn(
                f"{estimator} at d={_get(row, 'd')}, n={_get(row, 'n')} has excess_mean {mean:.6g}; dropped",
                NonPositiveExcess, stacklevel=2,
            )
            continue
        pts.append((math.log(float(_get(row, "d"))), math.log(mean * float(_get(row, "n")))))
    if len({x for x, _ in pts}) < 3:
        raise InsufficientData(f"{estimator}: {len(pts)} usable rows, need at least 3 distinct d")
    x, y = np.array(pts).T
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([slope, intercept])
    return ScalingFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


# --- identity suite ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityResult:
    name: str
    max_error: float
    tolerance: float
    cases: int

    @property
    def passed(self):
        return bool(self.max_error <= self.tolerance)


@dataclass(frozen=True)
class IdentityReport:
    results: tuple
    seconds: float

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def lines(self):
        out = [
            f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} max_error={r.max_error:.3e}  tol={r.tolerance:.0e}  cases={r.cases}"
            for r in self.results
        ]
        out.append(f"{'PASS' if self.passed else 'FAIL'}  all identities ({self.seconds:.2f} s)")
        return out


def _random_dataset(g, n_max=12, d_max=6):
    n = int(g.integers(2, n_max + 1))
    d = int(g.integers(1, d_max + 1))
    X = g.uniform(-1, 1, (n, d)) / math.sqrt(d)
    return Dataset(X, g.uniform(-1, 1, n), 1.0, 1.0)


def _check_omega_star(seed, perturb):
    err = 0.0
    for d in (4, 16, 36):
        spec = SparseDenseMixture(d)
        w, _ = optimal_weights(spec, math.sqrt(d))
        rd = math.sqrt(d)
        err = max(err, float(np.max(np.abs(w - (rd - 1) / (2 * rd - 1)))))
    return IdentityResult("omega_star_closed_form", err, 1e-8, 3)


def _check_w_inf(seed, perturb):
    err, cases, attempt = 0.0, 0, 0
    while cases < 20:
        d, n = ((4, 60), (9, 300))[cases % 2]
        sample = SparseDenseMixture(d).draw(n, stream(seed, 2, attempt).integers(2**63))
        attempt += 1
        st = construction_stats(sample)
        if not st.a_invertible or st.sparse_count == n:
            continue
        w = fit_min_norm(sample).weights
        if perturb:
            w = w + 1e-3
        closed = min_norm_closed_form(st, n, d)
        err = max(err, float(np.linalg.norm(w - closed) / np.linalg.norm(closed)))
        cases += 1
    return IdentityResult("w_inf_closed_form", err, 1e-6, cases)


def _check_ridge_loo(seed, perturb):
    err, cases = 0.0, 0
    for t in range(50):
        g = stream(seed, 3, t)
        ds = _random_dataset(g)
        lam = float(g.uniform(0.1, 10))
        for i in range(ds.n):
            direct, shortcut = ridge_loo_residual(ds, lam, i)
            err = max(err, abs(direct - shortcut) / max(1.0, abs(direct)))
        cases += 1
    return IdentityResult("ridge_loo_equality", err, 1e-8, cases)


def _check_fw_loo(seed, perturb):
    err, cases = 0.0, 0
    for t in range(50):
        g = stream(seed, 4, t)
        ds = _random_dataset(g)
        X, y = ds.covariates, ds.responses
        fw = ForsterWarmuthPredictor(ds)
        pinv = SpdSolveContext(X.T @ X).pinv()
        h = np.einsum("ij,jk,ik->i", X, pinv, X)
        for j in range(ds.n):
            lhs = fw_predict(ds.without(j), X[j])
            rhs = (1 - h[j]) * (X[j] @ fw.weights - h[j] * y[j])
            err = max(err, abs(lhs - rhs))
        cases += 1
    return IdentityResult("forster_warmuth_loo", err, 1e-8, cases)


def _check_sherman_morrison(seed, perturb):
    err, cases = 0.0, 0
    for t in range(50):
        g = stream(seed, 5, t)
        d = int(g.integers(1, 9))
        B = g.standard_normal((d, d))
        M = B @ B.T + np.eye(d)
        inv = np.linalg.inv(M)
        x = g.standard_normal(d)
        x *= math.sqrt(float(g.uniform(0.05, 0.9)) / float(x @ inv @ x))
        down = sherman_morrison_downdate(inv, x)
        up = sherman_morrison_update(inv, x)
        err = max(
            err,
            float(np.max(np.abs(down - np.linalg.inv(M - np.outer(x, x))))),
            float(np.max(np.abs(up - np.linalg.inv(M + np.outer(x, x))))),
            float(np.max(np.abs(sherman_morrison_update(down, x) - inv))),
        )
        cases += 1
    return IdentityResult("sherman_morrison", err, 1e-8, cases)


def _check_kkt(seed, perturb):
    err, cases = 0.0, 0
    for t in range(50):
        g = stream(seed, 6, t)
        n, d = int(g.integers(2, 30)), int(g.integers(1, 8))
        X = g.standard_normal((n, d))
        y = g.standard_normal(n) * 3
        s = Dataset(X, y).stats()
        w0 = fit_min_norm(s).weights
        b = float(g.uniform(0.05, 1.5)) * max(np.linalg.norm(w0), 1e-3)
        fit = fit_constrained_ls(s, b)
        lam = fit.multiplier
        scale = max(np.linalg.norm(s.xty), 1e-300)
        resid = np.linalg.norm(s.xtx @ fit.weights + lam * fit.weights - s.xty) / scale
        slack = abs(np.linalg.norm(fit.weights) - b) / b if fit.constraint_active else max(0.0, np.linalg.norm(fit.weights) / b - 1)
        err = max(err, float(resid), float(slack))
        cases += 1
    return IdentityResult("constrained_ls_kkt", err, 1e-8, cases)


def _check_vaw_regret(seed, perturb):
    worst, cases = 0.0, 0
    for t in range(20):
        g = stream(seed, 7, t)
        X = g.uniform(-1, 1, (60, 3)) / math.sqrt(3)
        y = g.uniform(-1, 1, 60)
        rep = vaw_regret(Dataset(X, y, 1.0, 1.0), 1.0, m=1.0, r=1.0)
        worst = max(worst, rep.regret - rep.logdet_bound, rep.logdet_bound - rep.bound)
        cases += 1
    return IdentityResult("vaw_regret_bound", max(worst, 0.0), 1e-10, cases)


_CHECKS = (
    _check_omega_star,
    _check_w_inf,
    _check_ridge_loo,
    _check_fw_loo,
    _check_sherman_morrison,
    _check_kkt,
    _check_vaw_regret,
)


def verify_identities(seed=0, perturb=False):
    """Run the exact-identity suite; ``perturb`` shifts the least-squares fit
    by ``1e-3`` before the closed-form comparison (a negative control)."""
    start = time.perf_counter()
    results = tuple(check(seed, perturb) for check in _CHECKS)
    return IdentityReport(results, time.perf_counter() - start)


# --- emission --------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def emit(rows, fmt, path):
    """Write rows as CSV (header = :data:`FIELDS`) or a JSON array; ``path='-'`` is stdout."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for row in rows:
            w.writerow([_fmt(v) for v in astuple(row)])
    else:
        json.dump([row.to_dict() for row in rows], buf, indent=1)
        buf.write("\n")
    if path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())


def read_rows(path):
    """Inverse of :func:`emit` for either format (chosen by the file's first byte)."""
    with open(path, newline="") as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        return [ResultRow.from_dict(d) for d in json.loads(text)]
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != FIELDS:
        raise ValueError(f"{path}: header does not match the result schema")
    return [ResultRow.from_dict(r) for r in reader]
