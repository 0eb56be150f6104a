"""Covering and packing numbers, chaining bounds, and function-class entropy.

Covering numbers use open balls centered at points of the space; packing
numbers use strict separation.  The two quantities sandwich each other,

    N(2r) <= P(r) <= N(r/2),

which holds exactly and is brute-force checkable on small spaces.  The
greedy evaluators (farthest-point covering, index-scan packing) are cheap
certified bounds: greedy covering >= true minimum, greedy packing is a
valid packing.  Brute force takes over below ``EXACT_LIMIT`` points.

The chaining machinery bounds the expected maximal increment of a process
X over pairs at distance <= delta by

    32 * int_0^{delta/4} tau(N(r)^2) dr,

with tau(lambda) = int_0^inf (lambda Psi(u) ^ 1) du built from the tail
function Psi of the normalized increments.  The one-sided version built
from an explicit chain of nested nets carries the constant 8 and the
plain covering number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import ConfigError, CovarianceNotPSD, ResolutionTooCoarse

EXACT_LIMIT = 12


@dataclass
class FiniteMetricSpace:
    """Point labels plus a validated distance matrix."""

    dist: np.ndarray
    labels: list | None = None

    def __post_init__(self):
        m = np.asarray(self.dist, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("metric space: distance matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ConfigError("metric space: distance matrix must be symmetric")
        if np.any(np.diag(m) != 0.0):
            raise ConfigError("metric space: diagonal must vanish")
        if np.any(m < 0.0):
            raise ConfigError("metric space: distances must be nonnegative")
        n = m.shape[0]
        # triangle inequality, vectorized over the middle point
        for k in range(n):
            if np.any(m > m[:, [k]] + m[[k], :] + 1e-9 * (1.0 + m)):
                raise ConfigError("metric space: triangle inequality violated")
        self.dist = m
        if self.labels is None:
            self.labels = list(range(n))

    @property
    def n_points(self) -> int:
        return self.dist.shape[0]

    def dist_row(self, i: int) -> np.ndarray:
        return self.dist[i]

    def diameter(self) -> float:
        return float(np.max(self.dist))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "FiniteMetricSpace":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        diff = points[:, None, :] - points[None, :, :]
        return cls(dist=np.sqrt(np.sum(diff * diff, axis=-1)))


def covering_number(space, r: float) -> int:
    """Greedy farthest-point covering count with open balls of radius r.

    An upper bound on the true minimum; exact when r exceeds the diameter or
    sits below the smallest positive distance.  The next center is always
    the uncovered point farthest from the chosen centers, lowest index on
    ties (the empty center set leaves every point at infinite distance, so
    the first center is point 0).
    """
    if r <= 0.0:
        raise ConfigError("covering_number: r must be positive")
    n = space.n_points
    min_dist = np.full(n, np.inf)
    count = 0
    while True:
        uncovered = min_dist >= r
        if not np.any(uncovered):
            return count
        masked = np.where(uncovered, min_dist, -np.inf)
        center = int(np.argmax(masked))  # argmax takes the lowest index on ties
        count += 1
        min_dist = np.minimum(min_dist, space.dist_row(center))


def packing_number(space, r: float) -> int:
    """Greedy index-scan packing count: pairwise distances strictly above r.

    A valid (inclusion-maximal) packing, hence a lower bound on the maximum.
    """
    if r <= 0.0:
        raise ConfigError("packing_number: r must be positive")
    n = space.n_points
    chosen: list[int] = []
    sep = np.full(n, np.inf)
    for i in range(n):
        if sep[i] > r:
            chosen.append(i)
            sep = np.minimum(sep, space.dist_row(i))
    return len(chosen)


def covering_number_exact(space: FiniteMetricSpace, r: float) -> int:
    """Minimum open-ball covering by exhaustive subset search (small spaces)."""
    n = space.n_points
    if n > EXACT_LIMIT:
        raise ConfigError(f"covering_number_exact: limited to {EXACT_LIMIT} points")
    balls = [int(sum(1 << j for j in range(n) if space.dist[i, j] < r)) for i in range(n)]
    full = (1 << n) - 1
    for k in range(1, n + 1):
        for centers in combinations(range(n), k):
            mask = 0
            for c in centers:
                mask |= balls[c]
            if mask == full:
                return k
    return n


def packing_number_exact(space: FiniteMetricSpace, r: float) -> int:
    """Maximum strictly-r-separated subset by exhaustive search (small spaces)."""
    n = space.n_points
    if n > EXACT_LIMIT:
        raise ConfigError(f"packing_number_exact: limited to {EXACT_LIMIT} points")
    adj = [int(sum(1 << j for j in range(n) if j != i and space.dist[i, j] > r)) for i in range(n)]
    best = 1
    for mask in range(1, 1 << n):
        bits = [i for i in range(n) if mask >> i & 1]
        if len(bits) <= best:
            continue
        if all(all(adj[i] >> j & 1 for j in bits if j != i) for i in bits):
            best = len(bits)
    return best


@dataclass
class SandwichResult:
    n_2r: int
    p_r: int
    n_half_r: int
    holds: bool
    exact: bool


def sandwich_check(space: FiniteMetricSpace, r: float) -> SandwichResult:
    """Evaluate N(2r) <= P(r) <= N(r/2); exact values on small spaces.

    On larger spaces the greedy values are reported and flagged as bounds
    (greedy covering overestimates, greedy packing underestimates, so a
    greedy 'holds' is not a certificate there).
    """
    exact = space.n_points <= EXACT_LIMIT
    if exact:
        n2, p, nh = (
            covering_number_exact(space, 2 * r),
            packing_number_exact(space, r),
            covering_number_exact(space, r / 2),
        )
    else:
        n2, p, nh = covering_number(space, 2 * r), packing_number(space, r), covering_number(space, r / 2)
    return SandwichResult(n_2r=n2, p_r=p, n_half_r=nh, holds=n2 <= p <= nh, exact=exact)


# -- tail functionals --


class TailFunctional:
    """Tail function Psi with its truncation integral tau.

    tau(lambda) = int_0^inf (lambda Psi(u) ^ 1) du; Psi must be
    non-increasing with Psi(0) <= 1.  The Gaussian instance
    Psi(u) = 2(1 - Phi(u)) has the closed form tau(lambda) = 2 lambda
    phi(u*) with u* = Phi^{-1}(1 - 1/(2 lambda)) above lambda = 1 and
    tau(lambda) = lambda sqrt(2/pi) below.
    """

    def __init__(self, psi=None, gaussian=False):
        if gaussian == (psi is not None):
            raise ConfigError("tail functional: pass exactly one of psi or gaussian")
        self.gaussian = gaussian
        self.psi = psi

    @classmethod
    def gaussian_increments(cls) -> "TailFunctional":
        return cls(gaussian=True)

    def tau(self, lam: float) -> float:
        if lam < 0.0:
            raise ConfigError("tau: lambda must be nonnegative")
        if lam == 0.0:
            return 0.0
        if self.gaussian:
            if lam <= 1.0:
                return lam * math.sqrt(2.0 / math.pi)
            u_star = ndtri(1.0 - 1.0 / (2.0 * lam))
            return 2.0 * lam * math.exp(-0.5 * u_star * u_star) / math.sqrt(2.0 * math.pi)
        # generic: split at the kink lambda Psi(u) = 1
        if lam * self.psi(0.0) <= 1.0:
            u_star = 0.0
        else:
            u_star = brentq(lambda u: lam * self.psi(u) - 1.0, 0.0, 1e3)
        tail, _ = integrate.quad(self.psi, u_star, np.inf, limit=200)
        return u_star + lam * tail


def _covering_breakpoints(space, upper: float) -> np.ndarray:
    if isinstance(space, FiniteMetricSpace):
        dists = np.unique(space.dist)
    else:
        dists = np.unique(np.concatenate([space.dist_row(i) for i in range(space.n_points)]))
    dists = dists[(dists > 0.0) & (dists < upper)]
    return np.concatenate([[0.0], dists, [upper]])


def chaining_bound(space, tail: TailFunctional, delta: float) -> float:
    """32 * int_0^{delta/4} tau(N(r)^2) dr by step integration.

    N is piecewise constant between sorted pairwise distances, so the
    integral is an exact finite sum given the covering evaluator (exact N on
    small spaces, greedy above, which only enlarges the bound).
    """
    diam = space.diameter() if hasattr(space, "diameter") else None
    if diam is not None and not (0.0 < delta <= diam):
        raise ConfigError("chaining_bound: need 0 < delta <= diameter")
    upper = delta / 4.0
    edges = _covering_breakpoints(space, upper)
    exact = isinstance(space, FiniteMetricSpace) and space.n_points <= EXACT_LIMIT
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        nb = covering_number_exact(space, b) if exact else covering_number(space, b)
        total += (b - a) * tail.tau(float(nb) ** 2)
    return 32.0 * total


@dataclass
class Chain:
    """Nested nets, nearest-point projections, and the one-sided bound."""

    nets: list[list[int]]
    projections: list[np.ndarray]
    eps: list[float]
    bound: float

    def chain_of(self, t: int) -> list[int]:
        """Indices t_0, ..., t_M = t walking the projections down to the root."""
        path = [t]
        for level in range(len(self.nets) - 1, 0, -1):
            path.append(int(self.projections[level - 1][path[-1]]))
        return list(reversed(path))


def chain_construct(space: FiniteMetricSpace) -> Chain:
    """Nets at scales 2^{-n} diameter with separation, covering, and
    eventual-equality properties, plus the bound 8 int_0^{diam/4} tau(N(r)) dr
    evaluated for Gaussian increments.

    Each net is an inclusion-maximal greedy packing, so its covering radius
    is at most its separation scale; once the scale drops below the smallest
    positive distance the net is the whole space and the chain stabilizes.
    """
    n = space.n_points
    diam = space.diameter()
    if diam == 0.0 or n == 1:
        return Chain(nets=[[0]], projections=[], eps=[0.0], bound=0.0)
    nets = []
    eps_list = []
    level = 0
    while True:
        eps = 2.0**-level * diam
        chosen: list[int] = []
        sep = np.full(n, np.inf)
        for i in range(n):
            if sep[i] > eps:
                chosen.append(i)
                sep = np.minimum(sep, space.dist_row(i))
        nets.append(chosen)
        eps_list.append(eps)
        if len(chosen) == n:
            break
        level += 1
        if level > 200:
            raise ConfigError("chain_construct: scale ladder failed to exhaust the space")
    projections = []
    for net in nets:
        sub = space.dist[:, net]
        projections.append(np.asarray(net)[np.argmin(sub, axis=1)])  # lowest index wins ties
    tail = TailFunctional.gaussian_increments()
    upper = diam / 4.0
    edges = _covering_breakpoints(space, upper)
    exact = space.n_points <= EXACT_LIMIT
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        nb = covering_number_exact(space, b) if exact else covering_number(space, b)
        total += (b - a) * tail.tau(float(nb))
    return Chain(nets=nets, projections=projections, eps=eps_list, bound=8.0 * total)


# -- function classes with parameter-space samplers --


class PointCloud:
    """Sampled class with closed-form row distances (no dense matrix)."""

    def __init__(self, dist_row_fn, n_points, resolution, diam):
        self._row = dist_row_fn
        self.n_points = n_points
        self.resolution = resolution
        self._diam = diam

    def dist_row(self, i: int) -> np.ndarray:
        return self._row(i)

    def diameter(self) -> float:
        return self._diam


class BoxClass:
    """Indicators 1_{[0, y]} for y in [0, m]^d under the L2 metric.

    Distances are square roots of symmetric-difference volumes; the covering
    number grows like r^{-2d}.
    """

    expected_exponent = -2.0  # per dimension count: -2d with the default d=1

    def __init__(self, m: float, d: int = 1):
        if m <= 0.0 or d < 1:
            raise ConfigError("box class: m must be positive, d at least 1")
        self.m, self.d = float(m), int(d)
        self.expected_exponent = -2.0 * d

    def sample(self, metric_resolution: float) -> PointCloud:
        # metric step between adjacent corners ~ sqrt(d m^{d-1} delta)
        delta = metric_resolution**2 / (self.d * max(self.m, 1.0) ** (self.d - 1))
        axis = np.arange(0.0, self.m + delta / 2.0, delta)
        grids = np.meshgrid(*([axis] * self.d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vol = np.prod(pts, axis=1)

        def row(i):
            mins = np.minimum(pts, pts[i])
            return np.sqrt(np.maximum(vol + vol[i] - 2.0 * np.prod(mins, axis=1), 0.0))

        diam = math.sqrt(self.m**self.d)
        return PointCloud(row, pts.shape[0], metric_resolution, diam)


class ShiftClass:
    """Shifts u -> sin(u - a) for a in [-n, n] under the Lipschitz norm.

    |g_a - g_b|_Lip = |sin a - sin b| + 2 |sin((a-b)/2)| in closed form;
    covering numbers grow like 1/r.
    """

    expected_exponent = -1.0

    def __init__(self, n: float = 1.0):
        if n <= 0.0:
            raise ConfigError("shift class: n must be positive")
        self.n = float(n)

    def sample(self, metric_resolution: float) -> PointCloud:
        delta = metric_resolution / 4.0  # metric <= 2 |a - b|
        a = np.arange(-self.n, self.n + delta / 2.0, delta)

        def row(i):
            return np.abs(np.sin(a) - np.sin(a[i])) + 2.0 * np.abs(np.sin(0.5 * (a - a[i])))

        diam = float(np.max(row(0))) if a.size else 0.0
        # true diameter needs the max over all pairs; shifts are 1-parameter
        # with an increasing metric in |a - b| up to the period, so endpoint
        # rows realize it for n <= pi/2
        cloud = PointCloud(row, a.size, metric_resolution, diam)
        cloud._diam = max(float(np.max(row(0))), float(np.max(row(a.size - 1))))
        return cloud


class ScaleClass:
    """Dilations u -> b g(u/a), g = sqrt(1+u^2), a in [1/m, m], b in [b_lo, n].

    The Lipschitz metric |b g(./a) - B g(./A)|_Lip = |b - B| +
    sup_u |(b/a) g'(u/a) - (B/A) g'(u/A)| is evaluated on a saturating
    logarithmic u-grid (g' tends to +-1, so the sup is attained at finite u
    or in the limit, included as an extra column).  Sampling is uniform in
    (1/a, b), where the metric has bounded anisotropy.  The exponent window
    keeps b away from 0, where every member collapses to the zero function
    and the pinched geometry contaminates finite-radius counts.
    """

    expected_exponent = -2.0

    def __init__(self, m: float = 2.0, n: float = 3.0, b_lo: float | None = None, n_u: int = 10):
        if m <= 1.0 or n <= 0.0:
            raise ConfigError("scale class: need m > 1 and n > 0")
        self.m, self.n = float(m), float(n)
        self.b_lo = self.n / 3.0 if b_lo is None else float(b_lo)
        self.n_u = int(n_u)

    def sample(self, metric_resolution: float) -> PointCloud:
        # metric is <= 1.2 n Lipschitz in q = 1/a and <= (1 + m) in b
        lip = max(1.2 * self.n, 1.0 + self.m)
        delta = metric_resolution / lip
        q = np.arange(1.0 / self.m, self.m + delta / 2.0, delta)
        b = np.arange(self.b_lo, self.n + delta / 2.0, delta)
        Q, B = np.meshgrid(q, b, indexing="ij")
        Q, B = Q.ravel(), B.ravel()
        u = np.geomspace(0.08, 8.0 * self.m, self.n_u)
        u = np.concatenate([-u[::-1], u])
        v = u[None, :] * Q[:, None]
        slopes = (B * Q)[:, None] * (v / np.sqrt(1.0 + v * v))
        table = np.concatenate([slopes, (B * Q)[:, None]], axis=1)

        def row(i):
            return np.abs(B - B[i]) + np.max(np.abs(table - table[i]), axis=1)

        probes = [0, len(Q) - 1, len(Q) // 2]
        diam = max(float(np.max(row(p))) for p in probes)
        return PointCloud(row, Q.size, metric_resolution, diam)


class ConvolutionClass:
    """Pairwise convolutions C * D of two sampled L2 classes.

    Functions live on a shared grid; distances are numeric L2 norms.  Young's
    inequality bounds each distance by |C|_2 |D - d|_2 + |d|_2 |C - c|_2.
    """

    def __init__(self, funcs_c, funcs_d, x_grid):
        self.x = np.asarray(x_grid, dtype=float)
        self.dx = float(self.x[1] - self.x[0])
        self.c = [np.asarray(f, dtype=float) for f in funcs_c]
        self.d = [np.asarray(f, dtype=float) for f in funcs_d]

    @classmethod
    def boxes(cls, widths_c, widths_d, span=4.0, n_grid=512):
        x = np.linspace(-span, span, n_grid)
        mk = lambda w: ((x >= 0.0) & (x <= w)).astype(float)
        return cls([mk(w) for w in widths_c], [mk(w) for w in widths_d], x)

    def sample(self, metric_resolution: float = 0.0) -> tuple[FiniteMetricSpace, list]:
        convs = []
        pairs = []
        for i, c in enumerate(self.c):
            for j, d in enumerate(self.d):
                convs.append(np.convolve(c, d, mode="same") * self.dx)
                pairs.append((i, j))
        convs = np.stack(convs)
        diff = convs[:, None, :] - convs[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1) * self.dx)
        return FiniteMetricSpace(dist=dist), pairs

    def young_bound_holds(self) -> bool:
        space, pairs = self.sample()
        norm = lambda v: math.sqrt(float(np.sum(v * v)) * self.dx)
        for p, (i, j) in enumerate(pairs):
            for q, (k, l) in enumerate(pairs):
                lhs = space.dist[p, q]
                rhs = norm(self.c[i]) * norm(self.d[j] - self.d[l]) + norm(self.d[l]) * norm(
                    self.c[i] - self.c[k]
                )
                if lhs > rhs + 1e-9:
                    return False
        return True


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    radii: np.ndarray
    counts: np.ndarray


def covering_exponent(cls, r_grid, metric_resolution=None) -> ExponentFit:
    """Log-log least-squares slope of greedy covering numbers over r_grid."""
    r_grid = np.sort(np.asarray(r_grid, dtype=float))
    if np.any(r_grid <= 0.0):
        raise ConfigError("covering_exponent: radii must be positive")
    if metric_resolution is None:
        metric_resolution = float(r_grid[0]) / 4.0
    if metric_resolution > r_grid[0] / 4.0:
        raise ResolutionTooCoarse(
            f"sampler resolution {metric_resolution:g} exceeds min(r)/4 = {r_grid[0] / 4.0:g}"
        )
    cloud = cls.sample(metric_resolution)
    counts = np.array([covering_number(cloud, r) for r in r_grid], dtype=float)
    slope, intercept = np.polyfit(np.log(r_grid), np.log(counts), 1)
    return ExponentFit(slope=float(slope), intercept=float(intercept), radii=r_grid, counts=counts)


# -- empirical check of the chaining bound --


@dataclass
class ChainingCheckResult:
    empirical: float
    bound: float
    violated: bool
    psd_corrected: bool
    n_replicas: int


def chaining_empirical_check(
    space: FiniteMetricSpace, delta: float, n_replicas: int, seed: int = 0
) -> ChainingCheckResult:
    """Simulate the Gaussian process with |X_s - X_t|_2 = d(s,t) and compare
    the empirical expected maximal increment at scale delta with the bound.

    The covariance comes from the basepoint (Gromov) form; metrics that do
    not embed in L2 get their spectrum clipped at zero and are flagged.
    """
    if n_replicas < 2:
        raise ConfigError("chaining_empirical_check: need at least 2 replicas")
    n = space.n_points
    d0 = space.dist[0]
    cov = 0.5 * (d0[:, None] ** 2 + d0[None, :] ** 2 - space.dist**2)
    vals, vecs = np.linalg.eigh(cov)
    psd_corrected = bool(vals.min() < -1e-10 * max(vals.max(), 1.0))
    if psd_corrected:
        import warnings

        warnings.warn("metric does not embed in L2; clipping spectrum", CovarianceNotPSD, stacklevel=2)
    vals = np.clip(vals, 0.0, None)
    transform = vecs * np.sqrt(vals)[np.newaxis, :]
    pairs = np.argwhere((space.dist <= delta) & (space.dist > 0.0))
    rng = np.random.default_rng(seed)
    if pairs.size == 0:
        empirical = 0.0
    else:
        z = rng.standard_normal((n_replicas, n))
        x = z @ transform.T
        empirical = float(np.mean(np.max(np.abs(x[:, pairs[:, 0]] - x[:, pairs[:, 1]]), axis=1)))
    bound = chaining_bound(space, TailFunctional.gaussian_increments(), delta)
    return ChainingCheckResult(
        empirical=empirical, bound=bound, violated=empirical > bound,
        psd_corrected=psd_corrected, n_replicas=n_replicas,
    )
