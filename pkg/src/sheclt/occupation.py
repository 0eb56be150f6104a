"""Occupation-field samples and the limiting covariance form.

A test function is a signed combination of axis-aligned boxes; its L1/L2
norms and all pairings are closed-form box algebra.  The normalized sample

    N^{d/2} [ sum_j g(u(t, x_j)) w_j  -  baseline * int psi ]

uses exact box-cell overlap weights w_j for the rescaled function
psi_N(x) = N^{-d} psi(x/N), which keeps the Riemann sum free of the O(dx)
edge bias a nearest-cell indicator would introduce and makes bilinearity in
psi and in g hold identically, not just approximately.

The module also estimates the integrated spatial covariance of g(u(t)),
the quantity whose product with <psi, Psi> is the limiting covariance of
the normalized samples, and checks the structural non-degeneracy bound for
diffusion coefficients of one sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iter_product

import numpy as np

from .errors import (
    ConditionNotApplicable,
    ConfigError,
    CutoffTooSmall,
    SupportOverflow,
)
from .noise import Grid
from .solver import SigmaFunction, SolutionField
from .spectral import CovarianceMeasure

HALO_FACTOR = 8.0


# -- test functions --


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ConfigError("box: lo and hi must have equal length")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ConfigError("box: needs lo <= hi componentwise")

    @property
    def d(self):
        return len(self.lo)

    def volume(self) -> float:
        return float(np.prod([h - l for l, h in zip(self.lo, self.hi)]))

    def overlap_volume(self, other: "Box") -> float:
        out = 1.0
        for (a, b), (c, e) in zip(zip(self.lo, self.hi), zip(other.lo, other.hi)):
            out *= max(0.0, min(b, e) - max(a, c))
        return out


class TestFunction:
    """Signed combination sum_i a_i 1_{[lo_i, hi_i]} of axis-aligned boxes."""

    __test__ = False  # not a pytest class

    def __init__(self, terms, label=None):
        terms = [(float(a), Box(tuple(map(float, lo)), tuple(map(float, hi)))) for a, lo, hi in terms]
        if not terms:
            raise ConfigError("test function: needs at least one box")
        d = terms[0][1].d
        if any(b.d != d for _, b in terms):
            raise ConfigError("test function: boxes must share one dimension")
        self.terms = terms
        self.d = d
        self.label = label or self._default_label()

    @classmethod
    def box(cls, lo, hi, amp=1.0, label=None):
        lo = (lo,) if np.isscalar(lo) else tuple(lo)
        hi = (hi,) if np.isscalar(hi) else tuple(hi)
        return cls([(amp, lo, hi)], label=label)

    def _default_label(self):
        bits = []
        for a, b in self.terms:
            lo = ",".join(f"{v:g}" for v in b.lo)
            hi = ",".join(f"{v:g}" for v in b.hi)
            bits.append(f"{a:g}*[{lo};{hi}]")
        return "+".join(bits)

    def integral(self) -> float:
        return sum(a * b.volume() for a, b in self.terms)

    def l2_inner(self, other: "TestFunction") -> float:
        out = 0.0
        for a1, b1 in self.terms:
            for a2, b2 in other.terms:
                out += a1 * a2 * b1.overlap_volume(b2)
        return out

    def l2_norm(self) -> float:
        return math.sqrt(max(self.l2_inner(self), 0.0))

    def l1_norm(self) -> float:
        """Exact L1 norm via the arrangement of box edges (any overlaps)."""
        edges = []
        for ax in range(self.d):
            vals = sorted({b.lo[ax] for _, b in self.terms} | {b.hi[ax] for _, b in self.terms})
            edges.append(vals)
        total = 0.0
        for cell in iter_product(*(range(len(e) - 1) for e in edges)):
            mid = [0.5 * (edges[ax][i] + edges[ax][i + 1]) for ax, i in enumerate(cell)]
            vol = math.prod(edges[ax][i + 1] - edges[ax][i] for ax, i in enumerate(cell))
            val = sum(
                a for a, b in self.terms
                if all(b.lo[ax] <= mid[ax] <= b.hi[ax] for ax in range(self.d))
            )
            total += abs(val) * vol
        return total

    def support_bbox(self):
        lo = [min(b.lo[ax] for _, b in self.terms) for ax in range(self.d)]
        hi = [max(b.hi[ax] for _, b in self.terms) for ax in range(self.d)]
        return tuple(lo), tuple(hi)

    def support_widths(self):
        lo, hi = self.support_bbox()
        return tuple(h - l for l, h in zip(lo, hi))

    def scaled(self, N: float) -> "TestFunction":
        """psi_N(x) = N^{-d} psi(x/N): boxes stretched, amplitudes shrunk."""
        if N <= 0.0:
            raise ConfigError("scale: N must be positive")
        return TestFunction(
            [
                (a / N**self.d, tuple(N * v for v in b.lo), tuple(N * v for v in b.hi))
                for a, b in self.terms
            ],
            label=f"{self.label}@N={N:g}",
        )

    def combine(self, other: "TestFunction", a: float, b: float) -> "TestFunction":
        terms = [(a * amp, bx.lo, bx.hi) for amp, bx in self.terms]
        terms += [(b * amp, bx.lo, bx.hi) for amp, bx in other.terms]
        return TestFunction(terms, label=f"{a:g}*({self.label})+{b:g}*({other.label})")

    def to_config(self) -> dict:
        return {
            "label": self.label,
            "boxes": [{"amp": a, "lo": list(b.lo), "hi": list(b.hi)} for a, b in self.terms],
        }

    @classmethod
    def from_config(cls, record: dict) -> "TestFunction":
        try:
            terms = [(t["amp"], t["lo"], t["hi"]) for t in record["boxes"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"test function: malformed record ({exc})") from exc
        return cls(terms, label=record.get("label"))


def scale_psi(psi: TestFunction, N: float) -> TestFunction:
    return psi.scaled(N)


# -- Lipschitz observables --


class LipFunction:
    """Real Lipschitz observable with its norm data |g(0)| + Lip(g)."""

    def __init__(self, kind, params=(), label=None):
        self.kind = kind
        self.params = params
        if kind == "identity":
            self.lip, self.g0 = 1.0, 0.0
        elif kind == "sin":
            self.lip, self.g0 = 1.0, 0.0
        elif kind == "shifted":
            base, a = params
            self.lip, self.g0 = base.lip, float(base(np.array(-a)))
        elif kind == "scaled":
            base, a, b = params
            if a <= 0.0:
                raise ConfigError("lip.scaled: scale a must be positive")
            self.lip, self.g0 = abs(b) * base.lip / a, b * float(base(np.array(0.0)))
        elif kind == "tabulated":
            xs, ys = params
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            if xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ConfigError("lip.tabulated: knots must be strictly increasing")
            self._xs, self._ys = xs, ys
            self._slopes = np.diff(ys) / np.diff(xs)
            self.lip = float(np.max(np.abs(self._slopes)))
            self.g0 = float(self(np.array(0.0)))
        else:
            raise ConfigError(f"lip.kind: unknown kind {kind!r}")
        self.norm = abs(self.g0) + self.lip
        self.label = label or kind

    identity = classmethod(lambda cls: cls("identity"))
    sin = classmethod(lambda cls: cls("sin"))

    @classmethod
    def shifted(cls, base: "LipFunction", a: float):
        return cls("shifted", (base, float(a)), label=f"{base.label}(u-{a:g})")

    @classmethod
    def scaled(cls, base: "LipFunction", a: float, b: float):
        return cls("scaled", (base, float(a), float(b)), label=f"{b:g}*{base.label}(u/{a:g})")

    @classmethod
    def tabulated(cls, xs, ys, label=None):
        return cls("tabulated", (xs, ys), label=label or "tabulated")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return u
        if self.kind == "sin":
            return np.sin(u)
        if self.kind == "shifted":
            base, a = self.params
            return base(u - a)
        if self.kind == "scaled":
            base, a, b = self.params
            return b * base(u / a)
        xs, ys, slopes = self._xs, self._ys, self._slopes
        idx = np.clip(np.searchsorted(xs, u) - 1, 0, xs.size - 2)
        return ys[idx] + slopes[idx] * (u - xs[idx])

    def to_config(self) -> dict:
        rec = {"kind": self.kind, "label": self.label}
        if self.kind == "shifted":
            rec["base"] = self.params[0].to_config()
            rec["a"] = self.params[1]
        elif self.kind == "scaled":
            rec["base"] = self.params[0].to_config()
            rec["a"], rec["b"] = self.params[1], self.params[2]
        elif self.kind == "tabulated":
            rec["xs"] = list(map(float, self.params[0]))
            rec["ys"] = list(map(float, self.params[1]))
        return rec

    @classmethod
    def from_config(cls, record: dict) -> "LipFunction":
        kind = record.get("kind")
        if kind in ("identity", "sin"):
            return cls(kind, label=record.get("label"))
        if kind == "shifted":
            return cls.shifted(cls.from_config(record["base"]), record["a"])
        if kind == "scaled":
            return cls.scaled(cls.from_config(record["base"]), record["a"], record["b"])
        if kind == "tabulated":
            return cls.tabulated(record["xs"], record["ys"], label=record.get("label"))
        raise ConfigError(f"lip function: malformed record (kind {kind!r})")


# -- exact box-cell overlap weights on the torus --


def _axis_segments(grid: Grid, lo: float, hi: float):
    """(index slice, weight array) pieces covering [lo, hi] modulo L."""
    L, dx, n = grid.length, grid.dx, grid.n
    width = hi - lo
    if width > L + 1e-12 * L:
        raise SupportOverflow("box width exceeds the domain length")
    a = lo % L
    spans = [(a, min(a + width, L))]
    if a + width > L:
        spans.append((0.0, a + width - L))
    out = []
    for s0, s1 in spans:
        if s1 <= s0:
            continue
        i0 = int(math.floor(s0 / dx))
        i1 = min(int(math.ceil(s1 / dx)), n)
        idx = np.arange(i0, i1)
        left = np.maximum(s0, idx * dx)
        right = np.minimum(s1, (idx + 1) * dx)
        out.append((slice(i0, i1), np.maximum(right - left, 0.0)))
    return out


class PreparedTestFunction:
    """Cell overlap weights for one scaled test function on one grid.

    Precompute once and evaluate against many replica fields; evaluation is
    a small dense contraction over the support cells only.
    """

    def __init__(self, grid: Grid, psi_scaled: TestFunction, halo: float = 0.0):
        if psi_scaled.d != grid.d:
            raise ConfigError("prepared psi: dimension mismatch with grid")
        for width in psi_scaled.support_widths():
            if width + halo > grid.length:
                raise SupportOverflow(
                    f"support width {width:g} plus halo {halo:g} exceeds domain {grid.length:g}"
                )
        self.grid = grid
        self.psi = psi_scaled
        self.integral = psi_scaled.integral()
        self.pieces = []
        for amp, box in psi_scaled.terms:
            axis_opts = [_axis_segments(grid, box.lo[ax], box.hi[ax]) for ax in range(grid.d)]
            for combo in iter_product(*axis_opts):
                slices = tuple(c[0] for c in combo)
                weight = combo[0][1]
                for c in combo[1:]:
                    weight = np.multiply.outer(weight, c[1])
                self.pieces.append((amp, slices, weight))

    def integrate(self, fields: np.ndarray) -> np.ndarray:
        """sum_j fields[..., j] * w_j for a batch with trailing grid axes."""
        lead = fields.shape[: fields.ndim - self.grid.d]
        out = np.zeros(lead)
        for amp, slices, weight in self.pieces:
            view = fields[(Ellipsis,) + slices]
            out += amp * np.tensordot(view, weight, axes=self.grid.d)
        return out


@dataclass
class BaselineValue:
    value: float
    provenance: str
    n_replicas: int | None = None


def exact_baseline(g: LipFunction, sigma: SigmaFunction) -> BaselineValue | None:
    """Closed-form E[g(u(t,0))] where available.

    The stochastic integral has mean zero, so E u = 1 for every diffusion
    coefficient; the identity observable always has baseline 1.  Degenerate
    sigma freezes the field at 1, making any g exact.
    """
    if g.kind == "identity":
        return BaselineValue(value=1.0, provenance="exact-mean-one")
    if sigma.sigma1 == 0.0 and sigma.kind == "constant":
        return BaselineValue(value=float(g(np.array(1.0))), provenance="exact-flat-field")
    return None


def estimate_baseline(grid, sigma, f, t, g, n_replicas, seed, domain):
    """Frozen Monte Carlo baseline from a dedicated, disjoint replica set."""
    from .solver import solve_batch

    fields, _ = solve_batch(grid, sigma, f, t, seed, range(n_replicas), domain=domain)
    return BaselineValue(
        value=float(np.mean(np.asarray(g(fields)))), provenance="mc", n_replicas=n_replicas
    )


@dataclass
class OccupationSample:
    value: float
    N: float
    t: float
    psi_label: str
    g_label: str
    baseline: BaselineValue


def occupation_values(
    prepared: PreparedTestFunction, gu_batch: np.ndarray, baseline: float, N: float
) -> np.ndarray:
    """Normalized samples for a batch of already-transformed fields g(u)."""
    d = prepared.grid.d
    raw = prepared.integrate(gu_batch) - baseline * prepared.integral
    return N ** (d / 2.0) * raw


def occupation_sample(
    field: SolutionField, psi: TestFunction, g: LipFunction, N: float, baseline: BaselineValue
) -> OccupationSample:
    """One occupation sample of one realization.

    The scaled support plus the diffusive halo must fit the grid domain.
    """
    grid = field.grid
    prepared = PreparedTestFunction(
        grid, psi.scaled(N), halo=HALO_FACTOR * math.sqrt(max(field.time, 0.0))
    )
    gu = np.asarray(g(field.values))[np.newaxis]
    value = float(occupation_values(prepared, gu, baseline.value, N)[0])
    return OccupationSample(
        value=value, N=N, t=field.time, psi_label=psi.label, g_label=g.label, baseline=baseline
    )


def brownian_sheet_field(
    field: SolutionField, g: LipFunction, N: float, y_grid, baseline: BaselineValue
) -> np.ndarray:
    """Normalized box averages over [0, y] for each corner y in y_grid."""
    grid = field.grid
    ys = np.atleast_2d(np.asarray(y_grid, dtype=float))
    if ys.shape[1] != grid.d:
        raise ConfigError("brownian_sheet_field: y entries must have length d")
    gu = np.asarray(g(field.values))[np.newaxis]
    out = np.empty(ys.shape[0])
    halo = HALO_FACTOR * math.sqrt(max(field.time, 0.0))
    for i, y in enumerate(ys):
        if np.any(y < 0.0):
            raise ConfigError("brownian_sheet_field: corners must be nonnegative")
        if np.all(y > 0.0):
            psi = TestFunction.box(tuple(0.0 for _ in y), tuple(y))
            prepared = PreparedTestFunction(grid, psi.scaled(N), halo=halo)
            out[i] = float(occupation_values(prepared, gu, baseline.value, N)[0])
        else:
            out[i] = 0.0  # empty box
    return out


# -- limiting covariance form --


def exact_Bt_constant_sigma(c0: float, t: float, f: CovarianceMeasure) -> float:
    """Integrated covariance for sigma == c0 and the identity observable."""
    return c0 * c0 * t * f.mass


@dataclass
class BtEstimate:
    value: float
    se: float
    cutoff: float
    cutoff_cells: int
    boundary_cov: float
    n_replicas: int


class BtAccumulator:
    """Streaming estimator of the integrated spatial covariance of g(u(t)).

    Accumulates circular cross-correlations over replica batches; the lag
    sum is truncated at a physical cutoff and the absolute boundary term is
    kept as a truncation diagnostic.  g and G may differ (covariance of two
    observables of the same field); fields at two times can be fed by
    passing pre-transformed pairs to :meth:`update_pair`.
    """

    def __init__(self, grid: Grid, g: LipFunction, G: LipFunction, cutoff: float):
        if cutoff > grid.length / 4.0:
            raise ConfigError("estimate_Bt: cutoff must not exceed L/4")
        self.grid = grid
        self.g, self.G = g, G
        self.cutoff = cutoff
        self.cutoff_cells = max(int(round(cutoff / grid.dx)), 1)
        self._sum_cross = np.zeros(grid.shape)
        self._sum_g = 0.0
        self._sum_G = 0.0
        self._per_rep: list[float] = []
        self.n = 0

    def update(self, fields: np.ndarray) -> None:
        self.update_pair(np.asarray(self.g(fields)), np.asarray(self.G(fields)))

    def update_pair(self, gu: np.ndarray, GU: np.ndarray) -> None:
        axes = tuple(range(1, gu.ndim))
        cross = np.fft.ifftn(
            np.fft.fftn(gu, axes=axes) * np.conj(np.fft.fftn(GU, axes=axes)), axes=axes
        ).real / gu[0].size
        self._sum_cross += cross.sum(axis=0)
        self._sum_g += float(gu.mean(axis=axes).sum())
        self._sum_G += float(GU.mean(axis=axes).sum())
        lag_sum = self._lag_window_sum(cross)
        self._per_rep.extend(
            (lag_sum - self._lag_window_cells() * gu.mean(axes) * GU.mean(axes))
            * self.grid.cell_volume
        )
        self.n += gu.shape[0]

    def _lag_window(self):
        c = self.cutoff_cells
        idx = np.zeros(self.grid.shape, dtype=bool)
        ax_sel = np.zeros(self.grid.n, dtype=bool)
        ax_sel[: c + 1] = True
        ax_sel[self.grid.n - c :] = True
        sel = ax_sel
        for _ in range(self.grid.d - 1):
            sel = np.multiply.outer(sel, ax_sel)
        idx |= sel
        return idx

    def _lag_window_cells(self) -> int:
        return int(np.sum(self._lag_window()))

    def _lag_window_sum(self, cross: np.ndarray) -> np.ndarray:
        sel = self._lag_window()
        return cross[:, sel].sum(axis=1) if cross.ndim > self.grid.d else cross[sel].sum()

    def finalize(self) -> BtEstimate:
        if self.n < 2:
            raise ConfigError("estimate_Bt: need at least 2 replicas")
        mean_g = self._sum_g / self.n
        mean_G = self._sum_G / self.n
        cov = self._sum_cross / self.n - mean_g * mean_G
        sel = self._lag_window()
        value = float(np.sum(cov[sel])) * self.grid.cell_volume
        per = np.asarray(self._per_rep)
        se = float(np.std(per)) / math.sqrt(self.n)
        c = self.cutoff_cells
        boundary = 0.0
        for lag in (c, self.grid.n - c):
            boundary += abs(float(cov[(lag,) + (0,) * (self.grid.d - 1)]))
        boundary *= self.grid.cell_volume
        if boundary > 0.05 * abs(value) + 3.0 * se:
            raise CutoffTooSmall(
                f"boundary covariance {boundary:.3e} exceeds 5% of estimate {value:.3e}"
            )
        return BtEstimate(
            value=value, se=se, cutoff=self.cutoff, cutoff_cells=c,
            boundary_cov=boundary, n_replicas=self.n,
        )


def default_bt_cutoff(t: float, f: CovarianceMeasure) -> float:
    """Truncation radius: diffusive scale plus the reach of the covariance."""
    reach = {"dirac": 0.0, "uniform": f.param, "gaussian": 4.0 * f.param, "exponential": 6.0 / f.param}
    return 6.0 * math.sqrt(2.0 * max(t, 0.0)) + reach[f.kind]


def estimate_Bt(
    fields: np.ndarray,
    grid: Grid,
    g: LipFunction,
    G: LipFunction | None = None,
    cutoff: float | None = None,
    t: float | None = None,
    f: CovarianceMeasure | None = None,
    fields_T: np.ndarray | None = None,
    min_replicas: int = 100,
) -> BtEstimate:
    """Integrated spatial covariance of g(u(t,.)) against G(u(T,.)).

    ``fields`` is a replica batch at time t; ``fields_T`` (same replicas,
    one trajectory each) switches on the two-time form.
    """
    G = G or g
    if fields.shape[0] < min_replicas:
        raise ConfigError(f"estimate_Bt: need at least {min_replicas} replicas")
    if cutoff is None:
        if t is None or f is None:
            raise ConfigError("estimate_Bt: pass cutoff or (t, f) for the default")
        cutoff = min(default_bt_cutoff(t, f), grid.length / 4.0)
    acc = BtAccumulator(grid, g, G, cutoff)
    acc.update_pair(
        np.asarray(g(fields)), np.asarray(G(fields_T if fields_T is not None else fields))
    )
    return acc.finalize()


@dataclass
class NondegeneracyResult:
    b_hat: float
    lower_bound: float
    tolerance: float
    passed: bool
    condition: int
    skipped: bool = False


def nondegeneracy_check(
    fields: np.ndarray,
    grid: Grid,
    f: CovarianceMeasure,
    sigma: SigmaFunction,
    t: float,
    cutoff: float | None = None,
) -> NondegeneracyResult:
    """Verify the positivity bound B_t >= c^2 t f(R^d) for one-signed sigma.

    The structural conditions are checked on the coefficient kind; outside
    them the check is not applicable.  The identity observable realizes the
    bound.  Tolerance combines 3 standard errors with a 5% discretization
    allowance; at t = 0 the field is flat and the check is skipped.
    """
    cond = sigma.nondegeneracy_condition()
    if cond is None:
        raise ConditionNotApplicable(
            f"sigma {sigma.describe()} fits neither one-signed condition"
        )
    idx, const = cond
    if t == 0.0:
        return NondegeneracyResult(
            b_hat=0.0, lower_bound=0.0, tolerance=0.0, passed=True, condition=idx, skipped=True
        )
    est = estimate_Bt(fields, grid, LipFunction.identity(), cutoff=cutoff, t=t, f=f)
    bound = const * const * t * f.mass
    tol = 3.0 * est.se + 0.05 * bound
    return NondegeneracyResult(
        b_hat=est.value, lower_bound=bound, tolerance=tol,
        passed=est.value >= bound - tol, condition=idx,
    )
