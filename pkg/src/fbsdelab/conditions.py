"""Well-posedness condition checking and Lipschitz-propagation constants.

The central inequality tested here controls the drift of |Y/X|^2 for the
coupled system: writing `cubic(y)` and `quartic(y)` for the direction
coefficients attached to the third and fourth powers of that ratio, the
system is well posed on arbitrary horizons when

    quartic(y) <= -c * |cubic(y)|        for every unit direction y in R^n

with some margin constant c > 0, optionally relaxed by an additive slack
epsilon.  Three easier-to-check sufficient conditions (a spectral gap, a
decoupling structure, and a scalar sign condition for n = 1) are provided
alongside the direct sampled check.

The module also computes the propagated Lipschitz bound

    Kbar0^2 = (K0^2 + 1) * exp(C_K * T) - 1

and its per-subinterval schedule, which bound how fast the Lipschitz
constants of the intermediate terminal functions may grow during the
backward horizon-splitting construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DerivativePoint, DimensionMismatchError, ProblemSpec

_UNIT_TOL = 1e-12


def _require_unit(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if abs(np.linalg.norm(y) - 1.0) > _UNIT_TOL:
        raise ValueError("direction must be a unit vector")
    return y


def cubic_drift(dp: DerivativePoint, y) -> float:
    """Direction coefficient multiplying the cubic power of the Y/X ratio.

    sum_i y_i [ tr(dz_f^i dz_b*) - y* dz_b (dz_f^i)* y + y* (dy_sigma)* (dz_f^i)* y ]
      + (dx_sigma)* (dz_b)* y + <dy_b, y>
    """
    y = _require_unit(y)
    if y.shape != (dp.n,):
        raise DimensionMismatchError(f"direction must live in R^{dp.n}")
    dzb, dys = dp.dz_b, dp.dy_sigma
    total = 0.0
    for i in range(dp.n):
        dzf = dp.dz_f[i]
        term = (
            float(np.trace(dzf @ dzb.T))
            - float(y @ dzb @ dzf.T @ y)
            + float(y @ dys.T @ dzf.T @ y)
        )
        total += y[i] * term
    total += float(dp.dx_sigma @ dzb.T @ y)
    total += float(dp.dy_b @ y)
    return float(total)


def quartic_drift(dp: DerivativePoint, y) -> float:
    """Direction coefficient multiplying the quartic power of the Y/X ratio.

    |dz_b|^2 - |(dz_b)* y|^2 + 2 y* dz_b dy_sigma y   (Frobenius norm first).
    """
    y = _require_unit(y)
    if y.shape != (dp.n,):
        raise DimensionMismatchError(f"direction must live in R^{dp.n}")
    dzb = dp.dz_b
    return (
        float(np.sum(dzb**2))
        - float(np.sum((dzb.T @ y) ** 2))
        + 2.0 * float(y @ dzb @ dp.dy_sigma @ y)
    )


def sufficient_spectral(dp: DerivativePoint, c: float) -> bool:
    """Spectral-gap sufficient condition.

    True iff the smallest eigenvalue of

        S = dz_b dz_b* - (dy_sigma)* (dz_b)* - dz_b dy_sigma

    is at least |dz_b|^2 + c.  S is symmetric in exact arithmetic; it is
    symmetrized before the eigensolve to remove rounding asymmetry.
    Requires n <= d to be satisfiable at all (the Gram block has rank <= d).
    """
    dzb, dys = dp.dz_b, dp.dy_sigma
    S = dzb @ dzb.T - dys.T @ dzb.T - dzb @ dys
    S = 0.5 * (S + S.T)
    lam_min = float(np.linalg.eigvalsh(S)[0])
    return lam_min >= float(np.sum(dzb**2)) + c


def sufficient_decoupled(dp: DerivativePoint, tol: float = 1e-10) -> bool:
    """Decoupling sufficient condition.

    True iff dy_b = 0, dz_b = 0 and (dy_sigma)* (dz_f^i)* = 0 for every i,
    all up to `tol` (exact-zero conditions need a tolerance under floating
    point).  Covers the fully decoupled system (dy_sigma = 0) and the system
    whose driver does not see z (dz_f = 0).
    """
    if float(np.linalg.norm(dp.dy_b)) > tol:
        return False
    if float(np.linalg.norm(dp.dz_b)) > tol:
        return False
    for dzf in dp.dz_f:
        if float(np.linalg.norm(dp.dy_sigma.T @ dzf.T)) > tol:
            return False
    return True


def sufficient_scalar(dp: DerivativePoint, c: float) -> bool:
    """Scalar sign sufficient condition, only for n = 1.

    True iff  -<dz_b, dy_sigma> >= c * |dy_b + <dz_f, dy_sigma> + <dz_b, dx_sigma>|.
    """
    if dp.n != 1:
        raise DimensionMismatchError("scalar condition requires n = 1")
    dzb = dp.dz_b[0]          # (d,)
    dys = dp.dy_sigma[:, 0]   # (d,)
    lhs = -float(dzb @ dys)
    inner = float(dp.dy_b[0]) + float(dp.dz_f[0][0] @ dys) + float(dzb @ dp.dx_sigma)
    return lhs >= c * abs(inner)


def derivative_point(
    spec: ProblemSpec, t: float, x: float, y: np.ndarray, z: np.ndarray
) -> DerivativePoint:
    """Derivative blocks of the coefficients at one state point.

    Uses the analytic map when the spec provides one, otherwise central finite
    differences with per-coordinate step fd_step * max(1, |coordinate|).
    """
    if spec.derivs.analytic is not None:
        dp = spec.derivs.analytic(t, x, y, z)
        if not isinstance(dp, DerivativePoint):
            dp = DerivativePoint(*dp)
        return dp
    n, d = spec.dims.n, spec.dims.d
    y = np.asarray(y, dtype=float).reshape(n)
    z = np.asarray(z, dtype=float).reshape(n, d)
    h0 = spec.derivs.fd_step
    b, sigma, f = spec.coeffs.b, spec.coeffs.sigma, spec.coeffs.f

    def step(v: float) -> float:
        return h0 * max(1.0, abs(v))

    dz_b = np.zeros((n, d))
    dz_f_all = np.zeros((n, d, n))  # [k, l, i] = d f_i / d z_kl
    for k in range(n):
        for l in range(d):
            h = step(z[k, l])
            zp, zm = z.copy(), z.copy()
            zp[k, l] += h
            zm[k, l] -= h
            dz_b[k, l] = (float(b(t, x, y, zp)) - float(b(t, x, y, zm))) / (2 * h)
            df = np.asarray(f(t, x, y, zp), float) - np.asarray(f(t, x, y, zm), float)
            dz_f_all[k, l] = df / (2 * h)
    dy_b = np.zeros(n)
    dy_sigma = np.zeros((d, n))
    for i in range(n):
        h = step(y[i])
        yp, ym = y.copy(), y.copy()
        yp[i] += h
        ym[i] -= h
        dy_b[i] = (float(b(t, x, yp, z)) - float(b(t, x, ym, z))) / (2 * h)
        ds = np.asarray(sigma(t, x, yp), float) - np.asarray(sigma(t, x, ym), float)
        dy_sigma[:, i] = ds / (2 * h)
    hx = step(x)
    dx_sigma = (
        np.asarray(sigma(t, x + hx, y), float) - np.asarray(sigma(t, x - hx, y), float)
    ) / (2 * hx)
    dz_f = tuple(dz_f_all[:, :, i] for i in range(n))
    return DerivativePoint(dz_b=dz_b, dy_b=dy_b, dx_sigma=dx_sigma, dy_sigma=dy_sigma, dz_f=dz_f)


@dataclass(frozen=True)
class SamplePlan:
    """Where and how densely the key condition is sampled.

    state_points: sequence of (t, x, y, z) at which derivative blocks are
    evaluated.  sphere_samples unit directions per state point (must be at
    least 2n; the +-coordinate directions are always included), followed by
    refine_iters rounds of perturb-and-renormalize hill climbing around the
    worst direction.  Everything is deterministic given the seed.
    """

    state_points: tuple
    sphere_samples: int = 16
    refine_iters: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_points", tuple(self.state_points))
        if not self.state_points:
            raise ValueError("need at least one state point")

    @classmethod
    def auto(
        cls,
        spec: ProblemSpec,
        count: int = 25,
        x_range: tuple[float, float] = (-2.0, 2.0),
        sphere_samples: int = 16,
        refine_iters: int = 3,
        seed: int = 0,
    ) -> "SamplePlan":
        """Origin plus `count - 1` random state points inside the given x range."""
        n, d = spec.dims.n, spec.dims.d
        rng = np.random.default_rng(seed)
        pts = [(0.0, 0.0, np.zeros(n), np.zeros((n, d)))]
        for _ in range(max(0, count - 1)):
            pts.append(
                (
                    float(rng.uniform(0.0, spec.horizon)),
                    float(rng.uniform(*x_range)),
                    rng.normal(size=n),
                    rng.normal(size=(n, d)),
                )
            )
        return cls(tuple(pts), sphere_samples=sphere_samples, refine_iters=refine_iters, seed=seed)


@dataclass(frozen=True)
class ConditionReport:
    """Result of the sampled (or, for n = 1, exact) key-condition check.

    worst_margin is min over samples of  -quartic(y) - c*|cubic(y)| + epsilon;
    the condition holds on the sampled set iff worst_margin >= 0.  mode is
    "exact" when n = 1 (the unit sphere is the two-point set {-1, +1}) and
    "sampled" otherwise, in which case a PASS is sampled evidence while a
    FAIL carries a concrete counterexample point.
    """

    passed: bool
    c: float
    epsilon: float
    worst_margin: float
    worst_point: dict
    samples_evaluated: int
    mode: str

    def to_json(self) -> dict:
        wp = self.worst_point
        return {
            "passed": self.passed,
            "c": self.c,
            "epsilon": self.epsilon,
            "worst_margin": self.worst_margin,
            "worst_point": {
                "t": wp["t"],
                "x": wp["x"],
                "y_state": list(map(float, np.atleast_1d(wp["y_state"]))),
                "z": [list(map(float, row)) for row in np.atleast_2d(wp["z"])],
                "direction": list(map(float, np.atleast_1d(wp["direction"]))),
            },
            "samples_evaluated": self.samples_evaluated,
            "mode": self.mode,
        }


def margin_at(dp: DerivativePoint, y, c: float, epsilon: float = 0.0) -> float:
    """Signed margin of the key condition at one derivative point and direction."""
    return -quartic_drift(dp, y) - c * abs(cubic_drift(dp, y)) + epsilon


def worst_direction_margin(
    dp: DerivativePoint,
    c: float,
    epsilon: float = 0.0,
    sphere_samples: int = 16,
    refine_iters: int = 3,
    seed: int = 0,
) -> tuple[float, np.ndarray, int]:
    """Minimum margin over unit directions for one derivative point.

    n = 1 is exact (both directions enumerated); otherwise uniform sphere
    samples plus the +-coordinate directions, refined by hill climbing.
    Returns (worst margin, worst direction, evaluations).
    """
    n = dp.n
    if n == 1:
        m_pos = margin_at(dp, np.array([1.0]), c, epsilon)
        m_neg = margin_at(dp, np.array([-1.0]), c, epsilon)
        if m_pos <= m_neg:
            return m_pos, np.array([1.0]), 2
        return m_neg, np.array([-1.0]), 2
    if sphere_samples < 2 * n:
        raise ValueError(f"sphere_samples must be >= 2n = {2 * n}")
    rng = np.random.default_rng(seed)
    dirs = []
    eye = np.eye(n)
    for i in range(n):
        dirs.append(eye[i])
        dirs.append(-eye[i])
    while len(dirs) < sphere_samples:
        v = rng.normal(size=n)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            dirs.append(v / norm)
    evaluations = 0
    best_margin = math.inf
    best_dir = dirs[0]
    for v in dirs:
        m = margin_at(dp, v, c, epsilon)
        evaluations += 1
        if m < best_margin:
            best_margin, best_dir = m, v
    for r in range(refine_iters):
        scale = 0.5 ** (r + 1)
        for _ in range(8):
            v = best_dir + scale * rng.normal(size=n)
            norm = np.linalg.norm(v)
            if norm <= 1e-12:
                continue
            v = v / norm
            m = margin_at(dp, v, c, epsilon)
            evaluations += 1
            if m < best_margin:
                best_margin, best_dir = m, v
    return best_margin, np.asarray(best_dir), evaluations


def check_key_condition(
    spec: ProblemSpec, c: float, plan: SamplePlan, epsilon: float = 0.0
) -> ConditionReport:
    """Sampled check of the key inequality over the plan's state points.

    For constant derivative blocks (spec.derivs.constant) only the first
    state point is evaluated: the verdict is then independent of the plan.
    """
    if c <= 0:
        raise ValueError("margin constant c must be positive")
    if epsilon < 0:
        raise ValueError("slack epsilon must be nonnegative")
    points = plan.state_points[:1] if spec.derivs.constant else plan.state_points
    worst = math.inf
    worst_point: dict = {}
    total_evals = 0
    for idx, (t, x, y_state, z) in enumerate(points):
        dp = derivative_point(spec, t, x, y_state, z)
        m, direction, evals = worst_direction_margin(
            dp,
            c,
            epsilon,
            sphere_samples=plan.sphere_samples,
            refine_iters=plan.refine_iters,
            seed=plan.seed + idx,
        )
        total_evals += evals
        if m < worst:
            worst = m
            worst_point = {
                "t": float(t),
                "x": float(x),
                "y_state": np.asarray(y_state, float),
                "z": np.asarray(z, float),
                "direction": direction,
            }
    return ConditionReport(
        passed=bool(worst >= 0.0),
        c=float(c),
        epsilon=float(epsilon),
        worst_margin=float(worst),
        worst_point=worst_point,
        samples_evaluated=total_evals,
        mode="exact" if spec.dims.n == 1 else "sampled",
    )


def propagated_lipschitz(k0: float, c_k: float, horizon: float) -> float:
    """Lipschitz bound propagated over a horizon: sqrt((k0^2 + 1) e^{c_k T} - 1)."""
    return math.sqrt((k0 * k0 + 1.0) * math.exp(c_k * horizon) - 1.0)


def lipschitz_schedule(k0: float, c_k: float, horizon: float, m: int) -> list[float]:
    """Squared Lipschitz bounds for the intermediate terminal functions.

    With partition nodes T_i = i*T/m, the function produced at node T_i has
    squared Lipschitz bound (k0^2 + 1) e^{c_k (T - T_i)} - 1.  The list is
    ordered from the terminal node inward: entry 0 is the bound at T_m
    (equal to k0^2), entry m the bound at T_0 (equal to the squared
    propagated bound for the whole horizon).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    out = []
    for p in range(m + 1):
        elapsed = horizon * p / m  # = T - T_i with i = m - p
        out.append((k0 * k0 + 1.0) * math.exp(c_k * elapsed) - 1.0)
    return out


def schedule_by_node(k0: float, c_k: float, horizon: float, m: int) -> list[float]:
    """Same bounds as lipschitz_schedule but indexed by partition node i = 0..m."""
    return lipschitz_schedule(k0, c_k, horizon, m)[::-1]
