"""Arbitrary-horizon solves by partitioning the time interval.

The horizon [0, T] is split into m equal subintervals [T_{i-1}, T_i].
Sweeping backward, each subinterval is solved with the terminal function
produced by the previous sweep: g_m is the problem's terminal condition
sampled on the grid, and g_{i-1} is the Y field of subinterval i at its
left endpoint.  Each g_i lives on the same spatial grid, so the recursion
is a pure grid-to-grid map; the Lipschitz constant of every g_i is
measured and compared against the propagated schedule.

The forward pass then assembles Monte Carlo paths with Euler steps, reading
Y and Z from the computed fields, and the well-posedness certificate
reports the ratio of the solution norm to the problem-data norm.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    FbsdeError,
    GridFunction,
    PathBundle,
    PathEscapeError,
    ProblemSpec,
    initial_data_norm_sq,
    lipschitz_estimate,
    solution_norm_sq,
)
from .segment import DiscretizationParams, SegmentSolution, backward_sweep, estimate_delta0

logger = logging.getLogger(__name__)


class LipschitzExplosionError(FbsdeError):
    """A measured intermediate Lipschitz constant exceeded the hard cap."""


#: default hard cap on measured Lipschitz constants of intermediate terminals
LIPSCHITZ_CAP = 1e6


@dataclass(frozen=True)
class GlobalSolution:
    """Solution of the full-horizon problem.

    partition: times T_i = i*T/m for i = 0..m
    segments: m subinterval solutions; segments[k] covers [T_k, T_{k+1}]
    g_funcs: m+1 grid functions; g_funcs[m] is the sampled terminal
        condition, g_funcs[i] the Y field at T_i (terminal data for
        subinterval i, produced by subinterval i+1's sweep)
    measured_lipschitz: discrete Lipschitz constant of each g_funcs[i]
    fitted_c_k: growth rate fitted to log(Lip(g_i)^2 + 1) against T - T_i
        (ordinary least squares slope, clamped at zero: the propagation
        bound uses a nonnegative rate)
    """

    partition: np.ndarray
    segments: tuple
    g_funcs: tuple
    measured_lipschitz: tuple
    fitted_c_k: float

    @property
    def m(self) -> int:
        return len(self.segments)

    @property
    def horizon(self) -> float:
        return float(self.partition[-1])

    def time_grid(self) -> np.ndarray:
        """Concatenated time nodes of all segments."""
        J = self.segments[0].steps
        total = self.m * J
        return np.linspace(0.0, self.horizon, total + 1)

    def field_at(self, step_index: int) -> tuple[GridFunction, GridFunction | None]:
        """(Y field, Z field) at a global time-grid node; Z is None at the horizon."""
        J = self.segments[0].steps
        total = self.m * J
        if step_index == total:
            return self.segments[-1].u[J], None
        si, lj = divmod(step_index, J)
        return self.segments[si].u[lj], self.segments[si].v[lj]

    def to_json(self, segment_refs: list[str] | None = None) -> dict:
        return {
            "partition": [float(t) for t in self.partition],
            "segments": segment_refs
            if segment_refs is not None
            else [f"segment_{k:03d}" for k in range(self.m)],
            "lipschitz_table": [float(v) for v in self.measured_lipschitz],
            "fitted_c_k": float(self.fitted_c_k),
        }


def fit_growth_rate(horizon: float, partition: np.ndarray, lipschitz: np.ndarray) -> float:
    """Least-squares growth rate of log(L_i^2 + 1) against T - T_i.

    Only nodes with L_i > 0 enter the fit; the slope is clamped at zero
    because the propagation bound is stated with a nonnegative rate.
    Returns 0.0 when fewer than two usable nodes remain.
    """
    xs, ys = [], []
    for t_i, lip in zip(partition, lipschitz):
        if lip > 0.0:
            xs.append(horizon - t_i)
            ys.append(math.log(lip * lip + 1.0))
    if len(xs) < 2:
        return 0.0
    xs_a = np.asarray(xs)
    ys_a = np.asarray(ys)
    xc = xs_a - xs_a.mean()
    denom = float(xc @ xc)
    if denom <= 0.0:
        return 0.0
    slope = float(xc @ (ys_a - ys_a.mean())) / denom
    return max(0.0, slope)


def solve(
    spec: ProblemSpec,
    m: int | str,
    params: DiscretizationParams,
    threads: int = 1,
    lipschitz_cap: float = LIPSCHITZ_CAP,
) -> GlobalSolution:
    """Solve the problem on [0, horizon] with m equal subintervals.

    Pass m = "auto" to size the partition from the empirical safe step:
    m = ceil(horizon / delta0).  The spatial grid must cover the support of
    X_0 with margin; a warning is logged when it does not.
    """
    if isinstance(m, str):
        if m != "auto":
            raise ValueError("m must be a positive integer or 'auto'")
        delta = estimate_delta0(spec, spec.terminal_lipschitz, params)
        m = max(1, math.ceil(spec.horizon / delta))
        logger.info("auto partition: delta0 ~= %.4g, using m = %d", delta, m)
    if m < 1:
        raise ValueError("m must be >= 1")

    lo, hi = spec.x0.support_hint()
    if lo < params.x_lo or hi > params.x_hi:
        logger.warning(
            "initial state support [%g, %g] is not inside the grid [%g, %g]",
            lo, hi, params.x_lo, params.x_hi,
        )

    T = spec.horizon
    partition = np.linspace(0.0, T, m + 1)
    g_terminal = GridFunction.from_callable(spec.coeffs.g, params.x_lo, params.x_hi, params.dx)
    if g_terminal.n != spec.dims.n:
        raise FbsdeError(f"terminal condition returns {g_terminal.n} components, expected {spec.dims.n}")

    g_funcs: list[GridFunction | None] = [None] * (m + 1)
    g_funcs[m] = g_terminal
    segments: list[SegmentSolution | None] = [None] * m
    for i in range(m, 0, -1):
        seg = backward_sweep(
            g_funcs[i], float(partition[i - 1]), float(partition[i]), spec, params, threads=threads
        )
        segments[i - 1] = seg
        g_funcs[i - 1] = seg.u[0]
        lip = lipschitz_estimate(seg.u[0])
        if lip > lipschitz_cap:
            raise LipschitzExplosionError(
                f"Lipschitz constant {lip:.3e} at node {i - 1} exceeds cap {lipschitz_cap:.1e}"
            )

    measured = tuple(lipschitz_estimate(gf) for gf in g_funcs)
    fitted = fit_growth_rate(T, partition, np.asarray(measured))
    return GlobalSolution(
        partition=partition,
        segments=tuple(segments),
        g_funcs=tuple(g_funcs),
        measured_lipschitz=measured,
        fitted_c_k=fitted,
    )


def initial_value_map(sol: GlobalSolution, x: float) -> np.ndarray:
    """Initial value Y_0 as a function of the starting point x.

    This is the time-zero field g_0 evaluated at x; its Lipschitz constant
    is bounded by the propagated Lipschitz bound for the full horizon.
    """
    return sol.g_funcs[0](float(x))


def _simulate_path(
    path_index: int,
    seed: int,
    spec: ProblemSpec,
    sol: GlobalSolution,
    time_grid: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Euler path; the RNG stream depends only on (seed, path_index)."""
    n, d = spec.dims.n, spec.dims.d
    L = len(time_grid)
    rng = np.random.default_rng([seed, path_index])
    x0 = spec.x0.sample(rng)
    dts = np.diff(time_grid)
    dw = rng.standard_normal((L - 1, d)) * np.sqrt(dts)[:, None]
    xs = np.empty(L)
    ys = np.empty((L, n))
    zs = np.empty((L, n, d))
    xs[0] = x0
    for j in range(L - 1):
        u_field, v_field = sol.field_at(j)
        ys[j] = u_field(xs[j])
        zs[j] = v_field(xs[j]).reshape(n, d)
        drift = float(spec.coeffs.b(time_grid[j], xs[j], ys[j], zs[j]))
        vol = np.asarray(spec.coeffs.sigma(time_grid[j], xs[j], ys[j]), float).reshape(d)
        xs[j + 1] = xs[j] + drift * dts[j] + float(vol @ dw[j])
    u_field, _ = sol.field_at(L - 1)
    ys[L - 1] = u_field(xs[L - 1])
    _, v_last = sol.field_at(L - 2)
    zs[L - 1] = v_last(xs[L - 1]).reshape(n, d)
    return xs, ys, zs


def forward_assemble(
    sol: GlobalSolution,
    spec: ProblemSpec,
    num_paths: int,
    seed: int,
    threads: int = 1,
    escape_multiple: float = 0.5,
    escape_limit: float = 0.01,
) -> PathBundle:
    """Simulate Euler forward paths reading Y and Z from the solved fields.

    Each path draws X_0 and its Brownian increments from a stream derived
    from (seed, path index), so the bundle is bit-reproducible and
    independent of the thread count.  Paths leaving the grid by more than
    escape_multiple times the domain width are counted; the run fails when
    more than escape_limit of the paths escape.
    """
    if num_paths < 1:
        raise ValueError("need at least one path")
    time_grid = sol.time_grid()
    seg0 = sol.segments[0]
    grid_lo = seg0.u[0].x_lo
    grid_hi = seg0.u[0].x_hi
    width = grid_hi - grid_lo
    lo_bound = grid_lo - escape_multiple * width
    hi_bound = grid_hi + escape_multiple * width

    L = len(time_grid)
    n, d = spec.dims.n, spec.dims.d
    xs = np.empty((num_paths, L))
    ys = np.empty((num_paths, L, n))
    zs = np.empty((num_paths, L, n, d))

    def work(i: int) -> None:
        xs[i], ys[i], zs[i] = _simulate_path(i, seed, spec, sol, time_grid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(num_paths)))
    else:
        for i in range(num_paths):
            work(i)

    escaped = np.any((xs < lo_bound) | (xs > hi_bound), axis=1)
    fraction = float(np.mean(escaped))
    if fraction > escape_limit:
        raise PathEscapeError(
            f"{fraction:.1%} of paths left the extended domain "
            f"[{lo_bound:g}, {hi_bound:g}] (limit {escape_limit:.1%})"
        )
    return PathBundle(time_grid=time_grid, x=xs, y=ys, z=zs, seed=seed, escaped_fraction=fraction)


def wellposedness_certificate(
    spec: ProblemSpec, sol: GlobalSolution, mc: int, seed: int, threads: int = 1
) -> dict:
    """Empirical constant in the well-posedness estimate.

    Reports the solution norm, the problem-data norm and their ratio; the
    theory guarantees the ratio is bounded by a constant depending on the
    margin and Lipschitz constants but gives no explicit value, so this is a
    measurement, not a pass/fail check.  The ratio is reported as None when
    the data norm is below 1e-14.
    """
    bundle = forward_assemble(sol, spec, mc, seed, threads=threads)
    theta_sq = solution_norm_sq(bundle)
    time_steps = len(sol.time_grid()) - 1
    i0_sq = initial_data_norm_sq(spec, mc_samples=mc, time_steps=time_steps, seed=seed)
    ratio = theta_sq / i0_sq if i0_sq >= 1e-14 else None
    return {
        "solution_norm_sq": theta_sq,
        "data_norm_sq": i0_sq,
        "ratio": ratio,
        "paths": mc,
        "seed": seed,
        "escaped_fraction": bundle.escaped_fraction,
    }
