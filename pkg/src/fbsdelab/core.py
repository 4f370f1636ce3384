"""Problem specification and core numerics for coupled FBSDEs with scalar forward state.

The system under study is

    X_t = X_0 + int_0^t b(s, X_s, Y_s, Z_s) ds + int_0^t sigma(s, X_s, Y_s)* dW_s
    Y_t = g(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s dW_s

with a scalar forward state X, an n-dimensional backward state Y, an
n x d matrix process Z and a d-dimensional Brownian motion W.  All
coefficients are deterministic functions of their arguments (Markovian
setting); this is what makes grid-based conditional expectations valid.

This module holds the problem container types, the piecewise-linear grid
functions used to represent decoupling fields, Monte Carlo path bundles,
and the two squared norms the well-posedness estimates are phrased in:
the size of the problem data and the size of a solution triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class FbsdeError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatchError(FbsdeError):
    """A coefficient or derivative block has the wrong shape."""


class NonFiniteError(FbsdeError):
    """A coefficient or intermediate quantity produced NaN or infinity."""


class NoContractionError(FbsdeError):
    """The per-step fixed-point iteration failed to contract."""


class PathEscapeError(FbsdeError):
    """Too many simulated forward paths left the spatial domain."""


@dataclass(frozen=True)
class Dimensions:
    """Dimensions of the system: Y, f, g live in R^n; W, sigma in R^d; Z in R^{n x d}.

    The forward state X is always scalar.
    """

    n: int
    d: int

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ValueError(f"dimensions must be >= 1, got n={self.n}, d={self.d}")


@dataclass(frozen=True)
class CoefficientSet:
    """The four coefficient maps of the system.

    b(t, x, y, z) -> scalar drift of X
    sigma(t, x, y) -> d-vector diffusion of X (no z argument by construction)
    f(t, x, y, z) -> n-vector driver of Y
    g(x) -> n-vector terminal condition (depends on x only)
    """

    b: Callable
    sigma: Callable
    f: Callable
    g: Callable


@dataclass(frozen=True)
class DerivativePoint:
    """The five first-derivative blocks entering the coupling coefficients at one point.

    dz_b : (n, d) gradient of the scalar drift in z
    dy_b : (n,) gradient of the scalar drift in y
    dx_sigma : (d,) derivative of the diffusion in x
    dy_sigma : (d, n) Jacobian of the diffusion in y
    dz_f : list of n arrays (n, d), gradient of each driver component in z
    """

    dz_b: np.ndarray
    dy_b: np.ndarray
    dx_sigma: np.ndarray
    dy_sigma: np.ndarray
    dz_f: tuple

    def __post_init__(self) -> None:
        dz_b = np.asarray(self.dz_b, dtype=float)
        if dz_b.ndim != 2:
            raise DimensionMismatchError("dz_b must be an (n, d) matrix")
        n, d = dz_b.shape
        dy_b = np.asarray(self.dy_b, dtype=float).reshape(-1)
        dx_sigma = np.asarray(self.dx_sigma, dtype=float).reshape(-1)
        dy_sigma = np.asarray(self.dy_sigma, dtype=float)
        dz_f = tuple(np.asarray(m, dtype=float) for m in self.dz_f)
        if dy_b.shape != (n,):
            raise DimensionMismatchError(f"dy_b must have shape ({n},)")
        if dx_sigma.shape != (d,):
            raise DimensionMismatchError(f"dx_sigma must have shape ({d},)")
        if dy_sigma.shape != (d, n):
            raise DimensionMismatchError(f"dy_sigma must have shape ({d}, {n})")
        if len(dz_f) != n:
            raise DimensionMismatchError(f"dz_f must have exactly {n} blocks")
        for m in dz_f:
            if m.shape != (n, d):
                raise DimensionMismatchError(f"each dz_f block must have shape ({n}, {d})")
        blocks = [dz_b, dy_b, dx_sigma, dy_sigma, *dz_f]
        if not all(np.all(np.isfinite(blk)) for blk in blocks):
            raise NonFiniteError("derivative blocks must be finite")
        object.__setattr__(self, "dz_b", dz_b)
        object.__setattr__(self, "dy_b", dy_b)
        object.__setattr__(self, "dx_sigma", dx_sigma)
        object.__setattr__(self, "dy_sigma", dy_sigma)
        object.__setattr__(self, "dz_f", dz_f)

    @property
    def n(self) -> int:
        return self.dz_b.shape[0]

    @property
    def d(self) -> int:
        return self.dz_b.shape[1]

    @classmethod
    def zero(cls, n: int, d: int) -> "DerivativePoint":
        return cls(
            dz_b=np.zeros((n, d)),
            dy_b=np.zeros(n),
            dx_sigma=np.zeros(d),
            dy_sigma=np.zeros((d, n)),
            dz_f=tuple(np.zeros((n, d)) for _ in range(n)),
        )


@dataclass(frozen=True)
class DerivativeSet:
    """How derivative blocks are obtained: an analytic map or finite differences.

    analytic : optional callable (t, x, y, z) -> DerivativePoint
    fd_step : relative step scale for central differences when analytic is absent
    constant : set True when the analytic blocks do not depend on (t, x, y, z);
        condition checks then evaluate a single state point.
    """

    analytic: Callable | None = None
    fd_step: float = 1e-5
    constant: bool = False

    def __post_init__(self) -> None:
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")


@dataclass(frozen=True)
class InitialState:
    """Seedable descriptor of the law of X_0.

    kind is one of "point", "uniform", "gaussian".  Point mass uses `value`;
    uniform uses (lo, hi); gaussian uses (mean, std).
    """

    kind: str = "point"
    value: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("point", "uniform", "gaussian"):
            raise ValueError(f"unknown initial state kind {self.kind!r}")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ValueError("uniform initial state needs lo < hi")
        if self.kind == "gaussian" and self.std < 0:
            raise ValueError("gaussian initial state needs std >= 0")

    @property
    def deterministic(self) -> bool:
        return self.kind == "point"

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "point":
            return float(self.value)
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        return float(rng.normal(self.mean, self.std))

    def support_hint(self) -> tuple[float, float]:
        """Interval that should be inside the spatial grid (6 sigma for gaussian)."""
        if self.kind == "point":
            return (self.value, self.value)
        if self.kind == "uniform":
            return (self.lo, self.hi)
        return (self.mean - 6.0 * self.std, self.mean + 6.0 * self.std)


@dataclass(frozen=True)
class ProblemSpec:
    """A fully specified FBSDE problem.

    coeff_lipschitz is the declared uniform Lipschitz constant of b, sigma, f
    in (x, y, z); terminal_lipschitz the one of g.  They are inputs, not
    measured quantities; `validate_problem` reports empirical estimates.
    """

    dims: Dimensions
    coeffs: CoefficientSet
    derivs: DerivativeSet
    horizon: float
    x0: InitialState
    coeff_lipschitz: float
    terminal_lipschitz: float

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.coeff_lipschitz <= 0:
            raise ValueError("coeff_lipschitz must be positive")
        if self.terminal_lipschitz < 0:
            raise ValueError("terminal_lipschitz must be nonnegative")


class GridFunction:
    """A vector-valued function of the scalar state, sampled on a uniform grid.

    Evaluation is piecewise linear inside [x_lo, x_hi] and continues linearly
    outside with the one-sided boundary slope.  That extension rule never
    increases the Lipschitz constant measured on the grid, which the
    horizon-splitting construction relies on.
    """

    __slots__ = ("x_lo", "x_hi", "dx", "values")

    #: relative tolerance on (x_hi - x_lo)/dx being an integer
    GRID_TOL = 1e-9

    def __init__(self, x_lo: float, x_hi: float, dx: float, values: np.ndarray):
        if not x_lo < x_hi:
            raise ValueError("need x_lo < x_hi")
        if dx <= 0:
            raise ValueError("dx must be positive")
        ratio = (x_hi - x_lo) / dx
        if abs(ratio - round(ratio)) > self.GRID_TOL * max(1.0, ratio):
            raise ValueError(f"(x_hi - x_lo)/dx = {ratio} is not an integer")
        count = int(round(ratio)) + 1
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != count:
            raise DimensionMismatchError(
                f"grid needs {count} nodes, got {vals.shape[0]} value rows"
            )
        if count < 2:
            raise ValueError("grid must have at least 2 nodes")
        self.x_lo = float(x_lo)
        self.x_hi = float(x_hi)
        self.dx = float(dx)
        self.values = vals

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def nodes(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.num_nodes)

    @classmethod
    def from_callable(
        cls, fn: Callable, x_lo: float, x_hi: float, dx: float
    ) -> "GridFunction":
        count = int(round((x_hi - x_lo) / dx)) + 1
        xs = x_lo + dx * np.arange(count)
        vals = np.array([np.atleast_1d(np.asarray(fn(x), dtype=float)) for x in xs])
        return cls(x_lo, x_hi, dx, vals)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at scalar or array x; returns (n,) or (..., n)."""
        x_arr = np.asarray(x, dtype=float)
        scalar = x_arr.ndim == 0
        pos = (x_arr - self.x_lo) / self.dx
        k = np.clip(np.floor(pos).astype(int), 0, self.num_nodes - 2)
        # theta deliberately not clipped: values outside [0, 1] produce the
        # linear extension with the boundary one-sided slope
        theta = pos - k
        out = (1.0 - theta)[..., None] * self.values[k] + theta[..., None] * self.values[k + 1]
        return out[0] if scalar and out.ndim == 2 else out

    def lipschitz(self) -> float:
        """Largest slope between adjacent nodes (Euclidean norm in R^n)."""
        diffs = np.diff(self.values, axis=0)
        return float(np.max(np.linalg.norm(diffs, axis=1)) / self.dx)

    def shifted(self, delta: np.ndarray) -> "GridFunction":
        """New grid function with `delta` added to every node value."""
        return GridFunction(self.x_lo, self.x_hi, self.dx, self.values + np.asarray(delta, float))

    def to_json(self) -> dict:
        return {
            "x_lo": self.x_lo,
            "x_hi": self.x_hi,
            "dx": self.dx,
            "n": self.n,
            "values": [[float(v) for v in row] for row in self.values],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GridFunction":
        return cls(data["x_lo"], data["x_hi"], data["dx"], np.asarray(data["values"], float))


def lipschitz_estimate(gf: GridFunction) -> float:
    """Discrete Lipschitz constant of a grid function (max adjacent-node slope)."""
    return gf.lipschitz()


@dataclass(frozen=True)
class PathBundle:
    """Monte Carlo sample paths of the triple (X, Y, Z) on a shared time grid.

    x has shape (M, L); y has shape (M, L, n); z has shape (M, L, n, d).
    """

    time_grid: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    seed: int
    escaped_fraction: float = 0.0

    def __post_init__(self) -> None:
        tg = np.asarray(self.time_grid, dtype=float)
        if tg.ndim != 1 or len(tg) < 2 or np.any(np.diff(tg) <= 0):
            raise ValueError("time_grid must be strictly increasing with >= 2 points")
        if self.x.shape[0] < 1:
            raise ValueError("need at least one path")
        L = len(tg)
        if self.x.shape[1] != L or self.y.shape[:2] != self.x.shape or self.z.shape[:2] != self.x.shape:
            raise DimensionMismatchError("paths must share the time grid")
        object.__setattr__(self, "time_grid", tg)

    @property
    def num_paths(self) -> int:
        return self.x.shape[0]


def solution_norm_sq(bundle: PathBundle) -> float:
    """Empirical squared size of a solution triple.

    Mean over paths of  sup_j [|X_j|^2 + |Y_j|^2]  +  sum_j |Z_j|^2 dt_j,
    with a left-endpoint rule for the Z integral (Z is defined per time step
    by the backward scheme, so the final grid value carries no weight).
    """
    if not (np.all(np.isfinite(bundle.x)) and np.all(np.isfinite(bundle.y)) and np.all(np.isfinite(bundle.z))):
        raise NonFiniteError("path bundle contains non-finite values")
    sup_term = np.max(bundle.x**2 + np.sum(bundle.y**2, axis=2), axis=1)
    dts = np.diff(bundle.time_grid)
    z_sq = np.sum(bundle.z**2, axis=(2, 3))  # |Z|^2 = tr(Z Z*)
    z_term = z_sq[:, :-1] @ dts
    return float(np.mean(sup_term + z_term))


def initial_data_norm_sq(
    spec: ProblemSpec, mc_samples: int, time_steps: int, seed: int
) -> float:
    """Squared size of the problem data.

    E|X_0|^2 + |g(0)|^2 + int_0^T [|b(t,0,0,0)|^2 + |sigma(t,0,0)|^2 + |f(t,0,0,0)|^2] dt.
    The expectation over X_0 is Monte Carlo with `mc_samples` draws (exact for
    a point mass); the time integral uses the trapezoid rule on `time_steps`
    intervals, which is appropriate for the smooth deterministic integrand.
    Bit-reproducible for a fixed seed.
    """
    if mc_samples < 1 or time_steps < 1:
        raise ValueError("mc_samples and time_steps must be >= 1")
    n, d = spec.dims.n, spec.dims.d
    if spec.x0.deterministic:
        ex0_sq = float(spec.x0.value) ** 2
    else:
        rng = np.random.default_rng(seed)
        draws = np.array([spec.x0.sample(rng) for _ in range(mc_samples)])
        ex0_sq = float(np.mean(draws**2))
    g0 = np.atleast_1d(np.asarray(spec.coeffs.g(0.0), dtype=float))
    y0 = np.zeros(n)
    z0 = np.zeros((n, d))
    times = np.linspace(0.0, spec.horizon, time_steps + 1)
    integrand = np.empty(len(times))
    for j, t in enumerate(times):
        bv = float(spec.coeffs.b(t, 0.0, y0, z0))
        sv = np.asarray(spec.coeffs.sigma(t, 0.0, y0), dtype=float)
        fv = np.asarray(spec.coeffs.f(t, 0.0, y0, z0), dtype=float)
        integrand[j] = bv**2 + float(sv @ sv) + float(fv @ fv)
    total = ex0_sq + float(g0 @ g0) + float(np.trapezoid(integrand, times))
    if not np.isfinite(total):
        raise NonFiniteError("problem data norm is not finite")
    return total


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of probing a problem specification at random points."""

    passed: bool
    lipschitz: dict
    failure: dict | None
    probes: int

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "lipschitz": {k: float(v) for k, v in self.lipschitz.items()},
            "failure": self.failure,
            "probes": self.probes,
        }


def _check_output(name: str, out, expected_shape: tuple | None) -> np.ndarray | None:
    """Return the failure record for a coefficient output, or None if it is fine."""
    arr = np.asarray(out, dtype=float)
    if expected_shape is None:  # scalar expected
        if arr.ndim != 0:
            return {"kind": "dimension-mismatch", "coefficient": name,
                    "detail": f"expected scalar, got shape {arr.shape}"}
    elif arr.shape != expected_shape:
        return {"kind": "dimension-mismatch", "coefficient": name,
                "detail": f"expected shape {expected_shape}, got {arr.shape}"}
    if not np.all(np.isfinite(arr)):
        return {"kind": "non-finite-output", "coefficient": name,
                "detail": "output contains NaN or infinity"}
    return None


def validate_problem(spec: ProblemSpec, probe_count: int, seed: int) -> ValidationReport:
    """Evaluate all coefficients at pseudo-random points and check shapes.

    Returns a passing report with per-coefficient local Lipschitz estimates
    (max coordinate-wise divided difference over the probes), or a failing
    report describing the first dimension mismatch or non-finite output.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    n, d = spec.dims.n, spec.dims.d
    rng = np.random.default_rng(seed)
    lip = {"b": 0.0, "sigma": 0.0, "f": 0.0, "g": 0.0}

    def fail(record: dict, k: int) -> ValidationReport:
        record = dict(record, probe_index=k)
        return ValidationReport(passed=False, lipschitz=lip, failure=record, probes=k + 1)

    for k in range(probe_count):
        t = float(rng.uniform(0.0, spec.horizon))
        x = float(rng.normal())
        y = rng.normal(size=n)
        z = rng.normal(size=(n, d))

        evals = [
            ("b", lambda: spec.coeffs.b(t, x, y, z), None),
            ("sigma", lambda: spec.coeffs.sigma(t, x, y), (d,)),
            ("f", lambda: spec.coeffs.f(t, x, y, z), (n,)),
            ("g", lambda: spec.coeffs.g(x), (n,)),
        ]
        for name, call, shape in evals:
            try:
                out = call()
            except Exception as exc:  # propagate as a structured failure
                return fail({"kind": "evaluation-error", "coefficient": name,
                             "detail": repr(exc)}, k)
            record = _check_output(name, out, shape)
            if record is not None:
                return fail(record, k)

        # coordinate-wise divided differences for local Lipschitz estimates
        def norm_of(v) -> float:
            return float(np.linalg.norm(np.atleast_1d(np.asarray(v, dtype=float))))

        base_b = spec.coeffs.b(t, x, y, z)
        base_s = spec.coeffs.sigma(t, x, y)
        base_f = spec.coeffs.f(t, x, y, z)
        base_g = spec.coeffs.g(x)

        def bump(val: float) -> float:
            return 1e-3 * max(1.0, abs(val))

        hx = bump(x)
        lip["b"] = max(lip["b"], norm_of(spec.coeffs.b(t, x + hx, y, z) - base_b) / hx)
        lip["sigma"] = max(lip["sigma"], norm_of(np.asarray(spec.coeffs.sigma(t, x + hx, y)) - base_s) / hx)
        lip["f"] = max(lip["f"], norm_of(np.asarray(spec.coeffs.f(t, x + hx, y, z)) - base_f) / hx)
        lip["g"] = max(lip["g"], norm_of(np.asarray(spec.coeffs.g(x + hx)) - base_g) / hx)
        for i in range(n):
            hy = bump(y[i])
            yp = y.copy()
            yp[i] += hy
            lip["b"] = max(lip["b"], norm_of(spec.coeffs.b(t, x, yp, z) - base_b) / hy)
            lip["sigma"] = max(lip["sigma"], norm_of(np.asarray(spec.coeffs.sigma(t, x, yp)) - base_s) / hy)
            lip["f"] = max(lip["f"], norm_of(np.asarray(spec.coeffs.f(t, x, yp, z)) - base_f) / hy)
        for i in range(n):
            for j in range(d):
                hz = bump(z[i, j])
                zp = z.copy()
                zp[i, j] += hz
                lip["b"] = max(lip["b"], norm_of(spec.coeffs.b(t, x, y, zp) - base_b) / hz)
                lip["f"] = max(lip["f"], norm_of(np.asarray(spec.coeffs.f(t, x, y, zp)) - base_f) / hz)

    return ValidationReport(passed=True, lipschitz=lip, failure=None, probes=probe_count)
