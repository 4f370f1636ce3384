"""Registry of benchmark problems with known solutions or brute-force references.

Each entry bundles a problem specification, optional closed-form decoupling
fields, sensible default discretization choices, and the expected verdicts
of the well-posedness condition checks.  The entries span the condition
regimes: problems that satisfy the key inequality, problems that satisfy
one of the sufficient conditions, and one classical problem that violates
the key inequality yet is well posed through a different route (it serves
as the checker's negative ground truth).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    CoefficientSet,
    DerivativePoint,
    DerivativeSet,
    Dimensions,
    FbsdeError,
    GridFunction,
    InitialState,
    ProblemSpec,
)
from .segment import DiscretizationParams


class UnknownProblemError(FbsdeError):
    """Requested registry entry does not exist."""


class NoAnalyticFormError(FbsdeError):
    """The entry has no closed-form decoupling fields."""


@dataclass(frozen=True)
class OracleEntry:
    """A concrete benchmark instance.

    analytic_u / analytic_v are the closed-form decoupling fields (t, x) ->
    value when known; analytic_path is the deterministic solution path
    t -> (X_t, Y_t) for problems without noise.  condition_profile stores
    the expected verdicts of the condition checks, re-derived at test time.
    defaults holds discretization choices that work well at desk scale.
    """

    name: str
    spec: ProblemSpec
    params: dict
    condition_profile: dict
    analytic_u: Callable | None = None
    analytic_v: Callable | None = None
    analytic_path: Callable | None = None
    defaults: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def has_analytic(self) -> bool:
        return self.analytic_u is not None

    def default_params(self) -> DiscretizationParams:
        d = self.defaults
        return DiscretizationParams(
            steps=d["steps"],
            x_lo=d["grid"][0],
            x_hi=d["grid"][1],
            dx=d["grid"][2],
            quad_order=d.get("quad_order", 8),
        )

    def listing(self) -> dict:
        return {
            "name": self.name,
            "parameters": {k: v for k, v in self.params.items()},
            "condition_profile": self.condition_profile,
            "has_analytic": self.has_analytic,
        }


def _const_derivs(n: int, d: int, **blocks) -> DerivativeSet:
    """Derivative set returning the same blocks at every state point."""
    base = DerivativePoint.zero(n, d)
    dp = DerivativePoint(
        dz_b=blocks.get("dz_b", base.dz_b),
        dy_b=blocks.get("dy_b", base.dy_b),
        dx_sigma=blocks.get("dx_sigma", base.dx_sigma),
        dy_sigma=blocks.get("dy_sigma", base.dy_sigma),
        dz_f=blocks.get("dz_f", base.dz_f),
    )
    return DerivativeSet(analytic=lambda t, x, y, z: dp, constant=True)


def _build_example24(T: float = 1.0, **_ignored) -> OracleEntry:
    """Linear terminal-feedback benchmark: dX = -Y dt, Y_T = X_T, no noise.

    The solution is deterministic: Y is constant along the path and equals
    X_T, forcing X_T = 1/(1 + T) from X_0 = 1.  The Y field is
    u(t, x) = x / (1 + T - t) and the Z field vanishes.  The key inequality
    fails for every positive margin (the cubic coefficient is -y, the
    quartic one zero), which makes this the checker's negative ground
    truth; the problem is nonetheless well posed by monotonicity arguments
    from the wider literature.
    """
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: -float(y[0]),
        sigma=lambda t, x, y: np.zeros(1),
        f=lambda t, x, y, z: np.zeros(1),
        g=lambda x: np.array([float(x)]),
    )
    derivs = _const_derivs(1, 1, dy_b=np.array([-1.0]))
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=1.0),
        coeff_lipschitz=1.0, terminal_lipschitz=1.0,
    )
    return OracleEntry(
        name="example24",
        spec=spec,
        params={"T": T},
        condition_profile={
            "key": {"c": 1.0, "holds": False},
            "spectral": {"c": 1.0, "holds": False},
            "decoupled": {"holds": False},
            "scalar": {"c": 1.0, "holds": False},
        },
        analytic_u=lambda t, x: np.array([x / (1.0 + T - t)]),
        analytic_v=lambda t, x: np.zeros((1, 1)),
        analytic_path=lambda t: (1.0 - t / (1.0 + T), np.array([1.0 / (1.0 + T)])),
        defaults={"m": 4, "steps": 16, "grid": (-1.0, 3.0, 0.01), "quad_order": 4},
        notes="deterministic; violates the key inequality yet is well posed",
    )


def _build_brownian_identity(T: float = 1.0, **_ignored) -> OracleEntry:
    """Decoupled Brownian motion with identity terminal data.

    Y_t = E_t[X_T] = X_t by the martingale property, so u(t, x) = x and
    v = 1 exactly; the scheme reproduces both to quadrature accuracy.
    """
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: 0.0,
        sigma=lambda t, x, y: np.ones(1),
        f=lambda t, x, y, z: np.zeros(1),
        g=lambda x: np.array([float(x)]),
    )
    derivs = _const_derivs(1, 1)
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=0.0),
        coeff_lipschitz=1.0, terminal_lipschitz=1.0,
    )
    return OracleEntry(
        name="brownian_identity",
        spec=spec,
        params={"T": T},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 1.0, "holds": False},
            "decoupled": {"holds": True},
            "scalar": {"c": 1.0, "holds": True},
        },
        analytic_u=lambda t, x: np.array([float(x)]),
        analytic_v=lambda t, x: np.ones((1, 1)),
        defaults={"m": 2, "steps": 8, "grid": (-6.0, 6.0, 0.05), "quad_order": 8},
        notes="fully decoupled; exact for the scheme up to rounding",
    )


def _build_brownian_square(T: float = 0.1, R: float = 4.0, **_ignored) -> OracleEntry:
    """Decoupled Brownian motion with squared terminal data.

    The terminal condition is x^2 inside [-R, R], continued linearly outside
    so it stays globally Lipschitz (constant 2R).  On the interior the Y
    field is u(t, x) = x^2 + (T - t) from the Gaussian second moment, and
    v(t, x) = 2x.  An exactly computable nonlinear benchmark.
    """
    dims = Dimensions(n=1, d=1)

    def g(x: float) -> np.ndarray:
        if x > R:
            return np.array([R * R + 2.0 * R * (x - R)])
        if x < -R:
            return np.array([R * R - 2.0 * R * (x + R)])
        return np.array([x * x])

    coeffs = CoefficientSet(
        b=lambda t, x, y, z: 0.0,
        sigma=lambda t, x, y: np.ones(1),
        f=lambda t, x, y, z: np.zeros(1),
        g=g,
    )
    derivs = _const_derivs(1, 1)
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=0.0),
        coeff_lipschitz=1.0, terminal_lipschitz=2.0 * R,
    )
    return OracleEntry(
        name="brownian_square",
        spec=spec,
        params={"T": T, "R": R},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 1.0, "holds": False},
            "decoupled": {"holds": True},
            "scalar": {"c": 1.0, "holds": True},
        },
        analytic_u=lambda t, x: np.array([x * x + (T - t)]),
        analytic_v=lambda t, x: np.array([[2.0 * x]]),
        defaults={"m": 1, "steps": 16, "grid": (-R, R, 0.01), "quad_order": 8},
        notes="analytic fields valid on the interior of [-R, R] only",
    )


def _build_coupled_s3(T: float = 0.25, sigma_base: float = 2.0, **_ignored) -> OracleEntry:
    """Genuinely coupled scalar benchmark satisfying the scalar sign condition.

    dX = Z dt + (sigma_base - Y) dW with terminal sin(x).  The derivative
    blocks give <dz_b, dy_sigma> = -1, so the scalar sufficient condition
    holds with any margin up to 1 and the key inequality holds with margin
    constant 1 (worst margin 2 over the two unit directions).  No closed
    form; brute-force reference only.  The diffusion offset keeps sigma
    away from zero on the range of Y.
    """
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: float(z[0, 0]),
        sigma=lambda t, x, y: np.array([sigma_base - float(y[0])]),
        f=lambda t, x, y, z: np.zeros(1),
        g=lambda x: np.array([math.sin(x)]),
    )
    derivs = _const_derivs(
        1, 1, dz_b=np.array([[1.0]]), dy_sigma=np.array([[-1.0]])
    )
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=0.0),
        coeff_lipschitz=1.0, terminal_lipschitz=1.0,
    )
    return OracleEntry(
        name="coupled_s3",
        spec=spec,
        params={"T": T, "sigma_base": sigma_base},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 1.0, "holds": True},
            "decoupled": {"holds": False},
            "scalar": {"c": 1.0, "holds": True},
        },
        defaults={"m": 1, "steps": 8, "grid": (-5.0, 5.0, 0.02), "quad_order": 8},
        notes="fully coupled drift through Z; diffusion coupled through Y",
    )


def _build_linear_constant(T: float = 0.5, **_ignored) -> OracleEntry:
    """Linear system with constant coefficient matrices.

    b = 0.1 x + 0.1 y + 0.5 z, sigma = 0.2 x - 0.5 y, f = 0.3 x - 0.2 y + 0.1 z,
    g = 0.8 x + 0.5.  The constant derivative blocks satisfy the key
    inequality with margin constant 1 (quartic -0.5, cubic 0.15 in modulus).
    No closed form; brute-force reference only.
    """
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: 0.1 * x + 0.1 * float(y[0]) + 0.5 * float(z[0, 0]),
        sigma=lambda t, x, y: np.array([0.2 * x - 0.5 * float(y[0])]),
        f=lambda t, x, y, z: np.array([0.3 * x - 0.2 * float(y[0]) + 0.1 * float(z[0, 0])]),
        g=lambda x: np.array([0.8 * x + 0.5]),
    )
    derivs = _const_derivs(
        1, 1,
        dz_b=np.array([[0.5]]),
        dy_b=np.array([0.1]),
        dx_sigma=np.array([0.2]),
        dy_sigma=np.array([[-0.5]]),
        dz_f=(np.array([[0.1]]),),
    )
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=1.0),
        coeff_lipschitz=1.0, terminal_lipschitz=0.8,
    )
    return OracleEntry(
        name="linear_constant",
        spec=spec,
        params={"T": T},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 0.4, "holds": True},
            "decoupled": {"holds": False},
            "scalar": {"c": 1.0, "holds": True},
        },
        defaults={"m": 2, "steps": 8, "grid": (-2.0, 4.0, 0.02), "quad_order": 8},
        notes="constant coefficient matrices; exercises every coupling block",
    )


def _build_decoupled_f_no_z(T: float = 0.5, **_ignored) -> OracleEntry:
    """Weakly coupled system whose driver does not depend on Z.

    dX = 0.25 cos(X) dt + (1 + 0.25 sin(Y)) dW and a driver
    f = -0.5 Y + 0.2 cos(X).  With dz_b = dy_b = dz_f = 0 the decoupling
    sufficient condition holds even though the diffusion still feeds on Y.
    """
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: 0.25 * math.cos(x),
        sigma=lambda t, x, y: np.array([1.0 + 0.25 * math.sin(float(y[0]))]),
        f=lambda t, x, y, z: np.array([-0.5 * float(y[0]) + 0.2 * math.cos(x)]),
        g=lambda x: np.array([math.cos(x)]),
    )

    def analytic_dp(t, x, y, z) -> DerivativePoint:
        return DerivativePoint(
            dz_b=np.zeros((1, 1)),
            dy_b=np.zeros(1),
            dx_sigma=np.zeros(1),
            dy_sigma=np.array([[0.25 * math.cos(float(np.atleast_1d(y)[0]))]]),
            dz_f=(np.zeros((1, 1)),),
        )

    derivs = DerivativeSet(analytic=analytic_dp, constant=False)
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="gaussian", mean=0.0, std=0.5),
        coeff_lipschitz=1.0, terminal_lipschitz=1.0,
    )
    return OracleEntry(
        name="decoupled_f_no_z",
        spec=spec,
        params={"T": T},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 1.0, "holds": False},
            "decoupled": {"holds": True},
            "scalar": {"c": 1.0, "holds": True},
        },
        defaults={"m": 2, "steps": 8, "grid": (-4.0, 4.0, 0.02), "quad_order": 8},
        notes="driver ignores Z; diffusion still sees Y",
    )


def _build_zero(T: float = 1.0, **_ignored) -> OracleEntry:
    """All-zero coefficients; every field stays identically zero."""
    dims = Dimensions(n=1, d=1)
    coeffs = CoefficientSet(
        b=lambda t, x, y, z: 0.0,
        sigma=lambda t, x, y: np.zeros(1),
        f=lambda t, x, y, z: np.zeros(1),
        g=lambda x: np.zeros(1),
    )
    derivs = _const_derivs(1, 1)
    spec = ProblemSpec(
        dims=dims, coeffs=coeffs, derivs=derivs, horizon=T,
        x0=InitialState(kind="point", value=0.0),
        coeff_lipschitz=1.0, terminal_lipschitz=0.0,
    )
    return OracleEntry(
        name="zero",
        spec=spec,
        params={"T": T},
        condition_profile={
            "key": {"c": 1.0, "holds": True},
            "spectral": {"c": 1.0, "holds": False},
            "decoupled": {"holds": True},
            "scalar": {"c": 1.0, "holds": True},
        },
        analytic_u=lambda t, x: np.zeros(1),
        analytic_v=lambda t, x: np.zeros((1, 1)),
        analytic_path=lambda t: (0.0, np.zeros(1)),
        defaults={"m": 1, "steps": 4, "grid": (-1.0, 1.0, 0.1), "quad_order": 2},
        notes="degenerate smoke-test problem",
    )


_REGISTRY: dict[str, Callable] = {
    "example24": _build_example24,
    "brownian_identity": _build_brownian_identity,
    "brownian_square": _build_brownian_square,
    "coupled_s3": _build_coupled_s3,
    "linear_constant": _build_linear_constant,
    "decoupled_f_no_z": _build_decoupled_f_no_z,
    "zero": _build_zero,
}


def get_problem(name: str, **params) -> OracleEntry:
    """Look up a benchmark by name; keyword params override entry defaults."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise UnknownProblemError(f"unknown problem {name!r}; known: {known}") from None
    return builder(**params)


def problem_names() -> list[str]:
    return sorted(_REGISTRY)


def list_problems() -> list[dict]:
    """Registry listing with default parameters, for JSON export."""
    return [get_problem(name).listing() for name in problem_names()]


def analytic_eval(entry: OracleEntry, t: float, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form decoupling fields (u, v) of an entry at (t, x)."""
    if entry.analytic_u is None or entry.analytic_v is None:
        raise NoAnalyticFormError(f"problem {entry.name!r} has no closed form")
    u = np.atleast_1d(np.asarray(entry.analytic_u(t, x), dtype=float))
    v = np.atleast_2d(np.asarray(entry.analytic_v(t, x), dtype=float))
    return u, v


def brute_force_reference(
    spec: ProblemSpec, fine_params: DiscretizationParams, m: int = 1, threads: int = 1
) -> GridFunction:
    """Independent reference field at time zero from a finer run.

    Runs the same backward construction at the finer resolution (the caller
    passes parameters at least 4x finer in dt and dx than the configuration
    under test, and twice its partition count).  Serves as ground truth for
    problems without closed forms.
    """
    from .horizon import solve  # local import to avoid a cycle

    sol = solve(spec, m, fine_params, threads=threads)
    return sol.g_funcs[0]
