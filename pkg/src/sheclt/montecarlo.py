"""Replicated experiments and the statistics confronting the limit theorems.

An experiment solves the field once per (scale N, replica) and evaluates
every requested (test function, observable) pair on that realization, so
joint statistics across test functions are measured on coupled samples.
Replicas are independent tasks keyed by counter-based streams; chunking and
process count never change the output bits, and per-N seed domains keep the
ladder runs independent.

Statistics: one-sample Kolmogorov-Smirnov distance against a reference
normal, empirical characteristic-function gaps with a permutation null
(replica pairing shuffled) calibrating the independence threshold, the
quadrature evaluation of the asymptotic-independence bound, Brownian
finite-dimensional covariance comparisons, and Wilson-interval tail checks
against the analytic tail bound.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import ConfigError, DegenerateVariance
from .noise import Grid, spectral_weights
from .occupation import (
    BaselineValue,
    PreparedTestFunction,
    exact_baseline,
    estimate_baseline,
    occupation_values,
)
from .solver import SigmaFunction, solve_batch
from .spectral import CovarianceMeasure, DalangProfile, moment_constants, tail_bound

HALO_FACTOR = 8.0
BASELINE_DOMAIN_OFFSET = 10_000
DEFAULT_CHUNK = 64


@dataclass
class ExperimentConfig:
    """Full description of a replicated occupation-field experiment."""

    covariance: CovarianceMeasure
    sigma: SigmaFunction
    g_list: list
    psi_list: list
    t: float
    n_ladder: list
    dx: float
    replicas: int
    seed: int
    baseline_replicas: int = 400
    workers: int = 1

    def __post_init__(self):
        if not self.n_ladder or any(
            b <= a for a, b in zip(self.n_ladder, self.n_ladder[1:])
        ):
            raise ConfigError("config.n_ladder: must be a strictly increasing list")
        if self.replicas < 1:
            raise ConfigError("config.replicas: must be positive")
        if self.t < 0.0 or self.dx <= 0.0:
            raise ConfigError("config: t must be nonnegative and dx positive")
        if not self.psi_list or not self.g_list:
            raise ConfigError("config: psi_list and g_list must be nonempty")
        for N in self.n_ladder:
            self.grid_for(N)  # support pre-check before any replica runs

    def grid_for(self, N: float) -> Grid:
        """Grid sized for every scaled support at this N plus the halo."""
        d = self.covariance.dimension
        max_width = 0.0
        union_lo = np.full(d, np.inf)
        union_hi = np.full(d, -np.inf)
        for psi in self.psi_list:
            scaled = psi.scaled(N)
            lo, hi = scaled.support_bbox()
            union_lo = np.minimum(union_lo, lo)
            union_hi = np.maximum(union_hi, hi)
            max_width = max(max_width, max(scaled.support_widths()))
        extent = max(max_width, float(np.max(union_hi - union_lo)) / 2.0)
        return Grid.for_support(extent=extent, t=self.t, dx=self.dx, d=d)


@dataclass
class SampleEnsemble:
    """Replica-paired values of the normalized samples for one (N, psi, g)."""

    values: np.ndarray
    N: float
    psi_label: str
    g_label: str
    baseline: BaselineValue


@dataclass
class ExperimentResult:
    ensembles: dict
    config: ExperimentConfig
    grids: dict

    def get(self, N, psi, g) -> SampleEnsemble:
        psi_label = psi if isinstance(psi, str) else psi.label
        g_label = g if isinstance(g, str) else g.label
        return self.ensembles[(N, psi_label, g_label)]

    def joint(self, N, pairs) -> np.ndarray:
        """Column-stacked paired samples for (psi, g) pairs at one N."""
        cols = [self.get(N, p, g).values for p, g in pairs]
        return np.stack(cols, axis=1)


def _resolve_baselines(config: ExperimentConfig, grid: Grid, domain: int) -> dict:
    out = {}
    for g in config.g_list:
        base = exact_baseline(g, config.sigma)
        if base is None:
            base = estimate_baseline(
                grid, config.sigma, config.covariance, config.t, g,
                config.baseline_replicas, config.seed, domain,
            )
        out[g.label] = base
    return out


def _chunk_task(args):
    (config, N, grid, baselines, replicas) = args
    weights = spectral_weights(grid, config.covariance)
    halo = HALO_FACTOR * math.sqrt(max(config.t, 0.0))
    prepared = {
        psi.label: PreparedTestFunction(grid, psi.scaled(N), halo=halo)
        for psi in config.psi_list
    }
    domain = config.n_ladder.index(N)
    out = {}
    fields, _ = solve_batch(
        grid, config.sigma, config.covariance, config.t,
        config.seed, replicas, domain=domain, weights=weights,
    )
    for g in config.g_list:
        gu = np.asarray(g(fields))
        for psi in config.psi_list:
            out[(psi.label, g.label)] = occupation_values(
                prepared[psi.label], gu, baselines[g.label].value, N
            )
    return replicas[0], out


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Solve all replicas over the N ladder and collect paired ensembles.

    Output is a pure function of (config, seed): chunking and the worker
    count only change the execution schedule.
    """
    ensembles = {}
    grids = {}
    for N in config.n_ladder:
        grid = config.grid_for(N)
        grids[N] = grid
        domain = config.n_ladder.index(N)
        baselines = _resolve_baselines(config, grid, BASELINE_DOMAIN_OFFSET + domain)
        chunks = [
            list(range(start, min(start + DEFAULT_CHUNK, config.replicas)))
            for start in range(0, config.replicas, DEFAULT_CHUNK)
        ]
        tasks = [(config, N, grid, baselines, chunk) for chunk in chunks]
        results = {}
        if config.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for start, chunk_out in pool.map(_chunk_task, tasks):
                    results[start] = chunk_out
        else:
            for task in tasks:
                start, chunk_out = _chunk_task(task)
                results[start] = chunk_out
        for g in config.g_list:
            for psi in config.psi_list:
                parts = [results[c[0]][(psi.label, g.label)] for c in chunks]
                ensembles[(N, psi.label, g.label)] = SampleEnsemble(
                    values=np.concatenate(parts),
                    N=N,
                    psi_label=psi.label,
                    g_label=g.label,
                    baseline=baselines[g.label],
                )
    return ExperimentResult(ensembles=ensembles, config=config, grids=grids)


def _moment_task(args):
    (covariance, sigma, t, grid, seed, replicas) = args
    fields, _ = solve_batch(grid, sigma, covariance, t, seed, replicas)
    axes = tuple(range(1, fields.ndim))
    return replicas[0], fields.mean(axis=axes), (fields**2).mean(axis=axes)


@dataclass
class MarginalVarianceResult:
    variance: float
    se: float
    mean: float
    mean_se: float
    n_replicas: int


def marginal_variance_run(
    covariance, sigma, t, dx, length, replicas, seed, workers=1
) -> MarginalVarianceResult:
    """Pooled per-cell variance of the field over replicas and cells."""
    d = covariance.dimension
    n = int(round(length / dx))
    grid = Grid(d=d, length=n * dx, n=n, dt=dx * dx / (2.0 * d))
    chunks = [
        list(range(start, min(start + DEFAULT_CHUNK, replicas)))
        for start in range(0, replicas, DEFAULT_CHUNK)
    ]
    tasks = [(covariance, sigma, t, grid, seed, chunk) for chunk in chunks]
    s1 = np.empty(replicas)
    s2 = np.empty(replicas)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_moment_task, tasks))
    else:
        outs = [_moment_task(task) for task in tasks]
    for start, m1, m2 in outs:
        s1[start : start + len(m1)] = m1
        s2[start : start + len(m2)] = m2
    mu = float(np.mean(s1))
    per_rep_var = s2 - 2.0 * mu * s1 + mu * mu
    return MarginalVarianceResult(
        variance=float(np.mean(per_rep_var)),
        se=float(np.std(per_rep_var)) / math.sqrt(replicas),
        mean=mu,
        mean_se=float(np.std(s1)) / math.sqrt(replicas),
        n_replicas=replicas,
    )


def field_run(covariance, sigma, t, grid, replicas, seed, domain=0) -> np.ndarray:
    """Stacked replica fields for covariance estimation at moderate R."""
    fields, _ = solve_batch(grid, sigma, covariance, t, seed, range(replicas), domain=domain)
    return fields


# -- statistics --


def ks_normal(samples, mu: float, sigma2: float) -> float:
    """One-sample Kolmogorov-Smirnov distance to Normal(mu, sigma2)."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if sigma2 <= 0.0:
        raise DegenerateVariance("ks_normal: reference variance must be positive")
    if n < 50:
        raise ConfigError("ks_normal: need at least 50 samples")
    cdf = ndtr((samples - mu) / math.sqrt(sigma2))
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_critical(n: int, level: float = 0.01) -> float:
    """Asymptotic two-sided critical value c(level)/sqrt(n); 1.63 at 1%."""
    coeff = {0.01: 1.63, 0.05: 1.36, 0.10: 1.22}.get(level)
    if coeff is None:
        raise ConfigError("ks_critical: level must be one of 0.01, 0.05, 0.10")
    return coeff / math.sqrt(n)


def ecf_gap(columns: np.ndarray, z) -> float:
    """|E exp(i sum z_j X_j) - prod_j E exp(i z_j X_j)| from paired samples."""
    columns = np.asarray(columns, dtype=float)
    z = np.asarray(z, dtype=float)
    if columns.ndim != 2 or columns.shape[1] != z.size or columns.shape[1] < 2:
        raise ConfigError("ecf_gap: need paired columns matching z, at least 2")
    joint = np.mean(np.exp(1j * columns @ z))
    marg = np.prod([np.mean(np.exp(1j * z[j] * columns[:, j])) for j in range(z.size)])
    return float(abs(joint - marg))


def max_ecf_gap(columns: np.ndarray, z_list) -> float:
    return max(ecf_gap(columns, z) for z in z_list)


def ecf_permutation_null(columns: np.ndarray, z_list, n_perm: int, seed: int) -> np.ndarray:
    """Null distribution of the max ECF gap under shuffled replica pairing."""
    columns = np.asarray(columns, dtype=float)
    rng = np.random.default_rng(seed)
    out = np.empty(n_perm)
    shuffled = columns.copy()
    for p in range(n_perm):
        for j in range(1, columns.shape[1]):
            shuffled[:, j] = columns[rng.permutation(columns.shape[0]), j]
        out[p] = max_ecf_gap(shuffled, z_list)
    return out


@dataclass
class IndependenceReport:
    observed: float
    null_q99: float
    null_se: float
    gaps: dict
    passed: bool


def independence_report(columns, z_list, n_perm=200, seed=0) -> IndependenceReport:
    observed = max_ecf_gap(columns, z_list)
    null = ecf_permutation_null(columns, z_list, n_perm, seed)
    q99 = float(np.quantile(null, 0.99))
    return IndependenceReport(
        observed=observed,
        null_q99=q99,
        null_se=float(np.std(null)),
        gaps={tuple(z): ecf_gap(columns, z) for z in z_list},
        passed=observed < q99,
    )


def default_z_tuples(m: int) -> list:
    """All z vectors with entries in {-2, -1, 1, 2} for m coupled samples."""
    from itertools import product

    return [np.array(z, dtype=float) for z in product((-2.0, -1.0, 1.0, 2.0), repeat=m)]


def _abs_disjoint_terms(psi: TestFunction):
    # |psi| for essentially-disjoint box combinations is sum |a_i| 1_box
    for a1, b1 in psi.terms:
        for a2, b2 in psi.terms:
            if b1 is not b2 and b1.overlap_volume(b2) > 1e-12:
                raise ConfigError(
                    "independence_rhs: boxes within each test function must be disjoint"
                )
    return [(abs(a), b) for a, b in psi.terms]


def independence_rhs(
    f: CovarianceMeasure, t: float, psi: TestFunction, phi: TestFunction, N: float
) -> float:
    """int_0^t ds int (p_{2s} * f)(eta) (|phi| cross |psi|)(eta / N) d eta.

    The box cross-correlation is closed-form piecewise linear per axis; the
    smoothed covariance factors per axis in closed form; the eta integral
    factorizes accordingly, leaving a single adaptive quadrature in time
    (substituted to stay smooth at s = 0).
    """
    if t <= 0.0:
        return 0.0
    terms_psi = _abs_disjoint_terms(psi)
    terms_phi = _abs_disjoint_terms(phi)
    d = f.dimension

    def inner(s: float) -> float:
        total = 0.0
        for a_phi, box_phi in terms_phi:
            for a_psi, box_psi in terms_psi:
                prod = a_phi * a_psi
                for ax in range(d):
                    p, q = box_phi.lo[ax], box_phi.hi[ax]
                    r, w = box_psi.lo[ax], box_psi.hi[ax]
                    lo, hi = N * (p - w), N * (q - r)
                    if hi <= lo:
                        prod = 0.0
                        break
                    knots = sorted({lo, N * (p - r), N * (q - w), hi})

                    def integrand(eta):
                        ov = max(
                            0.0,
                            min(q, w + eta / N) - max(p, r + eta / N),
                        )
                        return float(f.smoothed_axis(2.0 * s, np.array([eta]))[0]) * ov

                    val = 0.0
                    for a0, b0 in zip(knots[:-1], knots[1:]):
                        piece, _ = integrate.quad(integrand, a0, b0, limit=100)
                        val += piece
                    prod *= val
                total += prod
        return f.mass * total

    val, _ = integrate.quad(
        lambda wv: 2.0 * wv * inner(wv * wv), 0.0, math.sqrt(t), limit=100
    )
    return val


@dataclass
class CltReport:
    mean: float
    variance: float
    predicted_variance: float
    ks_distance: float
    ks_critical: float
    cov_matrix: np.ndarray | None
    cov_predicted: np.ndarray | None
    ecf_gaps: dict | None
    n_samples: int

    @property
    def gaussian(self) -> bool:
        return self.ks_distance < self.ks_critical


def clt_report(
    values: np.ndarray,
    psi_norm_sq: float,
    b_t: float,
    joint: dict | None = None,
    gram: dict | None = None,
) -> CltReport:
    """Normality and covariance summary for one ensemble.

    ``joint`` maps labels to paired sample columns and ``gram`` maps label
    pairs to L2 inner products for the covariance-matrix comparison.
    """
    values = np.asarray(values, dtype=float)
    var = float(np.var(values))
    if var <= 0.0:
        raise DegenerateVariance("clt_report: sample variance must be positive")
    cov = cov_pred = None
    gaps = None
    if joint:
        labels = sorted(joint)
        cols = np.stack([joint[k] for k in labels], axis=1)
        cov = np.cov(cols.T)
        cov_pred = np.array(
            [[gram[(a, b)] * b_t for b in labels] for a in labels]
        )
        gaps = {
            (labels[i], labels[j]): ecf_gap(cols[:, [i, j]], np.array([1.0, -1.0]))
            for i in range(len(labels))
            for j in range(i + 1, len(labels))
        }
    return CltReport(
        mean=float(np.mean(values)),
        variance=var,
        predicted_variance=psi_norm_sq * b_t,
        ks_distance=ks_normal(values, 0.0, var),
        ks_critical=ks_critical(values.size),
        cov_matrix=cov,
        cov_predicted=cov_pred,
        ecf_gaps=gaps,
        n_samples=values.size,
    )


# -- Brownian finite-dimensional check --


@dataclass
class FddReport:
    r_grid: list
    cov_emp: np.ndarray
    cov_pred: np.ndarray
    max_rel_dev: float
    increments: IndependenceReport


def fdd_brownian_check(
    samples_by_r: dict,
    increment_columns: np.ndarray,
    b_t: float,
    base_volume: float,
    z_list=None,
    n_perm: int = 200,
    seed: int = 0,
) -> FddReport:
    """Compare Cov[X(r), X(r')] with b_t min(r, r') vol and test increments.

    ``samples_by_r`` maps r to replica-paired sample vectors;
    ``increment_columns`` holds paired samples of disjoint increments.
    """
    rs = sorted(samples_by_r)
    cols = np.stack([samples_by_r[r] for r in rs], axis=1)
    cov_emp = np.cov(cols.T)
    cov_pred = np.array([[b_t * min(a, b) * base_volume for b in rs] for a in rs])
    rel = np.abs(cov_emp - cov_pred) / np.abs(cov_pred)
    if z_list is None:
        z_list = default_z_tuples(increment_columns.shape[1])
    inc = independence_report(increment_columns, z_list, n_perm=n_perm, seed=seed)
    return FddReport(
        r_grid=rs, cov_emp=cov_emp, cov_pred=cov_pred,
        max_rel_dev=float(np.max(rel)), increments=inc,
    )


# -- tail checks --


def wilson_interval(k: int, n: int, z: float = 2.576) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (99% by default)."""
    if n <= 0:
        raise ConfigError("wilson_interval: n must be positive")
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass
class TailCheckRow:
    ell: float
    empirical: float
    ci_low: float
    ci_high: float
    bound: float
    violated: bool


def tail_check(
    values: np.ndarray,
    ell_grid,
    profile: DalangProfile,
    eps: float,
    delta: float,
    T: float,
    lip_g: float,
    psi_norm: float,
    sigma_scale: float = 1.0,
) -> list[TailCheckRow]:
    """Empirical tails with Wilson intervals against the analytic bound.

    A violation is flagged only when the interval's lower end exceeds a
    non-vacuous bound.
    """
    values = np.abs(np.asarray(values, dtype=float))
    n = values.size
    big, _ = moment_constants(eps, sigma_scale, sigma_scale, profile.measure)
    B = big * lip_g * psi_norm * math.sqrt(T)
    rows = []
    for ell in ell_grid:
        k = int(np.sum(values > ell))
        lo, hi = wilson_interval(k, n)
        bound = tail_bound(ell, eps, delta, T, B, profile, sigma_scale=sigma_scale)
        rows.append(
            TailCheckRow(
                ell=float(ell), empirical=k / n, ci_low=lo, ci_high=hi,
                bound=bound, violated=bool(lo > bound and bound < 1.0),
            )
        )
    return rows


def default_workers() -> int:
    env = os.environ.get("SHECLT_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError("SHECLT_WORKERS: must be an integer") from exc
    return max(1, min(4, os.cpu_count() or 1))
