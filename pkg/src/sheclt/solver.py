"""Time stepping for the mild-form stochastic heat equation on the torus.

The field starts flat at 1 and evolves under

    du = (1/2) Lap u dt + sigma(u) dW

with the discrete Laplacian (periodic, 2d+1 points, dx^-2 scaling) and the
noise increments of :mod:`sheclt.noise`.  The multiplicative factor is
evaluated at the pre-step value (Ito reading, predictable integrand).  A
Picard fixed-point scheme driven by the exact heat kernel on the same noise
realization cross-validates the Euler path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonConvergence, SolverBlowup
from .noise import Grid, RngStream, sample_noise_batch, spectral_weights
from .spectral import CovarianceMeasure

BLOWUP_GUARD = 1e12


class SigmaFunction:
    """Lipschitz diffusion coefficient with its structural constants.

    Kinds: constant c, linear c*u, affine a + b*u, and tabulated
    piecewise-linear (end-segment slopes extended, so the function is
    globally Lipschitz).  sigma(1) != 0 is required unless
    ``allow_degenerate`` is set; the identically-zero coefficient makes the
    equation deterministic and is admitted only for flat-state checks.
    """

    def __init__(self, kind, params, allow_degenerate=False):
        self.kind = kind
        self.params = params
        if kind == "constant":
            (c,) = params
            self.sigma0, self.lip, self.sigma1 = abs(c), 0.0, c
        elif kind == "linear":
            (c,) = params
            self.sigma0, self.lip, self.sigma1 = 0.0, abs(c), c
        elif kind == "affine":
            a, b = params
            self.sigma0, self.lip, self.sigma1 = abs(a), abs(b), a + b
        elif kind == "tabulated":
            xs, ys = params
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            if xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ConfigError("sigma.tabulated: knots must be strictly increasing")
            slopes = np.diff(ys) / np.diff(xs)
            self._xs, self._ys, self._slopes = xs, ys, slopes
            self.lip = float(np.max(np.abs(slopes)))
            self.sigma0 = abs(float(self._eval_tab(np.array(0.0))))
            self.sigma1 = float(self._eval_tab(np.array(1.0)))
        else:
            raise ConfigError(f"sigma.kind: unknown kind {kind!r}")
        if not allow_degenerate and self.sigma1 == 0.0:
            raise ConfigError("sigma: sigma(1) must be nonzero (pass allow_degenerate to override)")

    @classmethod
    def constant(cls, c, allow_degenerate=False):
        return cls("constant", (float(c),), allow_degenerate)

    @classmethod
    def linear(cls, c):
        return cls("linear", (float(c),))

    @classmethod
    def affine(cls, a, b):
        return cls("affine", (float(a), float(b)))

    @classmethod
    def tabulated(cls, xs, ys, allow_degenerate=False):
        return cls("tabulated", (xs, ys), allow_degenerate)

    def _eval_tab(self, u):
        xs, ys, slopes = self._xs, self._ys, self._slopes
        idx = np.clip(np.searchsorted(xs, u) - 1, 0, xs.size - 2)
        return ys[idx] + slopes[idx] * (u - xs[idx])

    def __call__(self, u):
        u = np.asarray(u)
        if self.kind == "constant":
            return np.full_like(u, self.params[0], dtype=float)
        if self.kind == "linear":
            return self.params[0] * u
        if self.kind == "affine":
            return self.params[0] + self.params[1] * u
        return self._eval_tab(u)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (self.kind == "affine" and self.params[1] == 0.0)

    def nondegeneracy_condition(self):
        """(condition index, constant) for the positivity conditions, or None.

        Condition 1: sigma bounded away from 0 on (0, inf) with one sign;
        condition 2: sigma(0) = 0 and |sigma(w)| >= c1 w there.
        """
        if self.kind == "constant":
            c = self.params[0]
            return (1, abs(c)) if c != 0.0 else None
        if self.kind == "linear":
            c = self.params[0]
            return (2, abs(c)) if c != 0.0 else None
        if self.kind == "affine":
            a, b = self.params
            if a > 0.0 and b >= 0.0:
                return (1, a)
            if a < 0.0 and b <= 0.0:
                return (1, -a)
            if a == 0.0 and b != 0.0:
                return (2, abs(b))
        return None

    def describe(self) -> str:
        if self.kind in ("constant", "linear"):
            return f"{self.kind}({self.params[0]:g})"
        if self.kind == "affine":
            return f"affine({self.params[0]:g},{self.params[1]:g})"
        return f"tabulated({len(self._xs)} knots)"


@dataclass
class SolutionField:
    """One realization of the field at a fixed time, with solver metadata."""

    grid: Grid
    time: float
    values: np.ndarray
    scheme: str
    seed: int
    replica: int
    domain: int = 0


def discrete_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Periodic 2d+1-point Laplacian over the trailing grid axes."""
    lead = values.ndim - grid.d
    out = -2.0 * grid.d * values
    for ax in range(lead, values.ndim):
        out += np.roll(values, 1, axis=ax) + np.roll(values, -1, axis=ax)
    return out / (grid.dx * grid.dx)


def step_euler(values: np.ndarray, grid: Grid, sigma: SigmaFunction, slice_values: np.ndarray) -> np.ndarray:
    """One explicit Euler step; raises SolverBlowup past the 1e12 guard."""
    out = values + (grid.dt / 2.0) * discrete_laplacian(values, grid) + sigma(values) * slice_values
    if not np.all(np.abs(out) <= BLOWUP_GUARD):
        raise SolverBlowup("field magnitude exceeded 1e12")
    return out


def _steps_for(grid: Grid, t_final: float) -> int:
    if t_final < 0.0:
        raise ConfigError("solve: t_final must be nonnegative")
    if t_final == 0.0:
        return 0
    steps = round(t_final / grid.dt)
    if abs(steps * grid.dt - t_final) > 1e-9 * max(t_final, grid.dt):
        raise ConfigError("solve: t_final must be a multiple of dt")
    return steps


def solve_batch(
    grid: Grid,
    sigma: SigmaFunction,
    f: CovarianceMeasure,
    t_final: float,
    seed: int,
    replicas,
    domain: int = 0,
    snapshot_times=(),
    weights=None,
):
    """Euler fields for a batch of replica indices, shape (B, *grid.shape).

    Returns (final_fields, snapshots) where snapshots maps each requested
    time to the batch of fields there.  Output bits depend only on
    (seed, domain, replica, step), never on the batch composition.
    """
    if weights is None:
        weights = spectral_weights(grid, f)
    replicas = list(replicas)
    streams = [RngStream(seed=seed, domain=domain, replica=r) for r in replicas]
    n_steps = _steps_for(grid, t_final)
    snap_steps = {}
    for t_snap in snapshot_times:
        snap_steps[_steps_for(grid, t_snap)] = t_snap

    u = np.ones((len(replicas),) + grid.shape)
    snapshots = {}
    if 0 in snap_steps:
        snapshots[snap_steps[0]] = u.copy()
    for step in range(n_steps):
        dW = sample_noise_batch(grid, weights, grid.dt, streams, step)
        try:
            u = step_euler(u, grid, sigma, dW)
        except SolverBlowup as exc:
            raise SolverBlowup(
                f"blow-up at step {step + 1} of {n_steps}", step=step + 1
            ) from exc
        if step + 1 in snap_steps:
            snapshots[snap_steps[step + 1]] = u.copy()
    return u, snapshots


def solve(
    grid: Grid,
    sigma: SigmaFunction,
    f: CovarianceMeasure,
    t_final: float,
    seed: int,
    replica: int,
    domain: int = 0,
) -> SolutionField:
    """One replica's Euler field at t_final from the flat initial state."""
    try:
        values, _ = solve_batch(grid, sigma, f, t_final, seed, [replica], domain=domain)
    except SolverBlowup as exc:
        exc.replica = replica
        raise
    return SolutionField(
        grid=grid, time=t_final, values=values[0], scheme="euler",
        seed=seed, replica=replica, domain=domain,
    )


def _heat_kernel_grid(grid: Grid, t: float) -> np.ndarray:
    """Continuum heat kernel periodized on the grid, unit discrete mass."""
    x = grid.axis_coordinates()
    k_max = int(math.ceil(8.0 * math.sqrt(t) / grid.length)) + 1
    axis = np.zeros(grid.n)
    for k in range(-k_max, k_max + 1):
        y = x + k * grid.length
        axis += np.exp(-y * y / (2.0 * t))
    axis /= math.sqrt(2.0 * math.pi * t)
    kern = axis
    for _ in range(grid.d - 1):
        kern = np.multiply.outer(kern, axis)
    return kern / (np.sum(kern) * grid.cell_volume)


def picard_solve(
    grid: Grid,
    sigma: SigmaFunction,
    f: CovarianceMeasure,
    t_final: float,
    seed: int,
    replica: int,
    n_iter: int,
    domain: int = 0,
) -> SolutionField:
    """Fixed-point iteration of the mild equation on a frozen noise path.

    Every iterate convolves sigma(previous iterate) times the noise
    increments with the exact heat kernel (sampled on the grid and
    renormalized to unit discrete mass), using the same (replica, step)
    noise keys as the Euler scheme.  The kernel lag follows the right
    endpoint of each step, so the newest increment enters unsmoothed,
    matching the propagation structure of the explicit scheme.  Raises
    NonConvergence when the sup distance between iterates fails to decrease
    over three iterations.
    """
    if n_iter < 1:
        raise ConfigError("picard_solve: n_iter must be at least 1")
    weights = spectral_weights(grid, f)
    stream = RngStream(seed=seed, domain=domain, replica=replica)
    n_steps = _steps_for(grid, t_final)

    slices = np.empty((n_steps,) + grid.shape)
    for step in range(n_steps):
        slices[step] = sample_noise_batch(grid, weights, grid.dt, [stream], step)[0]
    kern_hat = np.empty((max(n_steps - 1, 0),) + grid.shape, dtype=complex)
    for lag in range(1, n_steps):
        kern_hat[lag - 1] = np.fft.fftn(_heat_kernel_grid(grid, lag * grid.dt))

    u = np.ones((n_steps + 1,) + grid.shape)
    slices_hat = np.empty((n_steps,) + grid.shape, dtype=complex)
    history = []
    for _ in range(n_iter):
        q_new = np.empty_like(slices)
        for step in range(n_steps):
            q_new[step] = sigma(u[step]) * slices[step]
            slices_hat[step] = np.fft.fftn(q_new[step])
        u_next = np.ones_like(u)
        acc = np.zeros(grid.shape, dtype=complex)
        for k in range(1, n_steps + 1):
            acc[...] = 0.0
            for j in range(k - 1):
                acc += kern_hat[k - 2 - j] * slices_hat[j]
            u_next[k] = 1.0 + q_new[k - 1] + grid.cell_volume * np.fft.ifftn(acc).real
        diff = float(np.max(np.abs(u_next - u)))
        history.append(diff)
        u = u_next
        if diff <= 1e-13 * max(1.0, float(np.max(np.abs(u)))):
            break
        if len(history) >= 3 and history[-1] >= history[-2] >= history[-3]:
            raise NonConvergence(
                f"picard iterates stopped contracting: last diffs {history[-3:]}"
            )
    return SolutionField(
        grid=grid, time=t_final, values=u[n_steps], scheme=f"picard({n_iter})",
        seed=seed, replica=replica, domain=domain,
    )


@dataclass
class MarginalStats:
    mean: float
    variance: float
    lag_cov: np.ndarray  # axis-0 lags 0..max_lag
    n_replicas: int
    n_cells: int


def marginal_stats(fields: np.ndarray, grid: Grid, g, max_lag: int = 0) -> MarginalStats:
    """Pooled mean/variance/lag-covariance of g(field) over replicas and cells.

    ``fields`` is a batch (R, *grid.shape); pooling over cells is justified
    by spatial stationarity.  The lag covariance runs along axis 0 of the
    grid out to ``max_lag`` cells.
    """
    if fields.ndim != grid.d + 1 or fields.shape[0] < 2:
        raise ConfigError("marginal_stats: need a batch of at least 2 replica fields")
    gu = np.asarray(g(fields), dtype=float)
    mean = float(np.mean(gu))
    centered = gu - mean
    variance = float(np.mean(centered**2))
    lags = np.arange(max_lag + 1)
    lag_cov = np.empty(max_lag + 1)
    for lag in lags:
        lag_cov[lag] = float(np.mean(centered * np.roll(centered, -int(lag), axis=1)))
    return MarginalStats(
        mean=mean, variance=variance, lag_cov=lag_cov,
        n_replicas=fields.shape[0], n_cells=fields[0].size,
    )
