"""Randomized derivative-point constructions for the sufficiency implication suite.

Each maker draws a random derivative point that satisfies one sufficient
condition *by construction*, in a regime where the implication to the key
inequality with the same margin constant is a theorem:

- spectral: the gap construction forces quartic(y) <= -c for every unit y;
  the blocks feeding the cubic coefficient are rescaled so |cubic(y)| <= 0.9,
  hence -c <= -c * |cubic(y)| holds with a 0.1*c margin.
- decoupled: all relevant products vanish exactly (a coordinate axis carries
  the diffusion feedback while the driver gradients have an exact zero in
  that slot), so cubic = quartic = 0 identically and the key inequality
  holds with margin zero for every c.
- scalar (n = 1): the drift-diffusion product is -a < 0 and the cubic
  magnitude is capped at 0.9*a/c, so quartic = -2a <= -c * |cubic| with an
  extra factor ~2 of headroom.
"""

from __future__ import annotations

import numpy as np

from fbsdelab import DerivativePoint


def make_spectral_dp(rng: np.random.Generator) -> tuple[DerivativePoint, float]:
    """Random point satisfying the spectral-gap condition with margin c."""
    n = int(rng.integers(1, 4))
    d = int(rng.integers(n, 5))  # the gap needs n <= d
    c = float(rng.uniform(0.2, 1.5))
    # well-conditioned drift gradient: identity block plus mild noise
    base = np.zeros((n, d))
    base[:, :n] = np.eye(n)
    dzb = rng.uniform(0.5, 1.5) * base + 0.1 * rng.normal(size=(n, d))
    gram = dzb @ dzb.T
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    if lam_min < 1e-3:  # ridge so the gap formula below stays stable
        dzb[:, :n] += np.eye(n)
        gram = dzb @ dzb.T
        lam_min = float(np.linalg.eigvalsh(gram)[0])
    # diffusion feedback aligned against the drift gradient opens the gap:
    # with dy_sigma = -beta dzb^T the matrix becomes (1 + 2 beta) dzb dzb^T
    trace = float(np.trace(gram))
    beta = 1.1 * max(0.0, (trace + c - lam_min)) / (2.0 * lam_min) + 0.05
    dys = -beta * dzb.T

    # blocks feeding the cubic coefficient, rescaled so |cubic| <= 0.9
    dyb = rng.normal(size=n)
    dxs = rng.normal(size=d)
    dzf = [rng.normal(size=(n, d)) for _ in range(n)]
    dzb_norm = float(np.linalg.norm(dzb))
    dys_norm = float(np.linalg.norm(dys))
    bound = (
        sum(float(np.linalg.norm(m)) for m in dzf) * (2.0 * dzb_norm + dys_norm)
        + float(np.linalg.norm(dxs)) * dzb_norm
        + float(np.linalg.norm(dyb))
    )
    if bound > 0.9:
        scale = 0.9 / bound
        dyb = dyb * scale
        dxs = dxs * scale
        dzf = [m * scale for m in dzf]
    return (
        DerivativePoint(dz_b=dzb, dy_b=dyb, dx_sigma=dxs, dy_sigma=dys, dz_f=tuple(dzf)),
        c,
    )


def make_decoupled_dp(rng: np.random.Generator) -> DerivativePoint:
    """Random point satisfying the decoupling condition exactly."""
    n = int(rng.integers(1, 4))
    d = int(rng.integers(1, 5))
    variant = int(rng.integers(0, 3))
    dys = np.zeros((d, n))
    dzf = [np.zeros((n, d)) for _ in range(n)]
    if variant == 0:  # no diffusion feedback, arbitrary driver gradients
        dzf = [rng.normal(size=(n, d)) for _ in range(n)]
    elif variant == 1:  # driver blind to z, arbitrary diffusion feedback
        dys = rng.normal(size=(d, n))
    else:  # both present but supported on exactly complementary axes
        axis = int(rng.integers(0, d))
        dys[axis, :] = rng.normal(size=n)
        for m in dzf:
            m[:, :] = rng.normal(size=(n, d))
            m[:, axis] = 0.0
    return DerivativePoint(
        dz_b=np.zeros((n, d)),
        dy_b=np.zeros(n),
        dx_sigma=rng.normal(size=d),
        dy_sigma=dys,
        dz_f=tuple(dzf),
    )


def make_scalar_dp(rng: np.random.Generator) -> tuple[DerivativePoint, float]:
    """Random n = 1 point satisfying the scalar sign condition with margin c."""
    d = int(rng.integers(1, 5))
    c = float(rng.uniform(0.2, 2.0))
    dzb = rng.normal(size=(1, d))
    while float(np.linalg.norm(dzb)) < 0.1:
        dzb = rng.normal(size=(1, d))
    beta = float(rng.uniform(0.2, 2.0))
    ortho = rng.normal(size=d)
    ortho -= (ortho @ dzb[0]) / float(dzb[0] @ dzb[0]) * dzb[0]
    dys = (-beta * dzb[0] + 0.3 * ortho).reshape(d, 1)
    a = -float(dzb[0] @ dys[:, 0])
    assert a > 0.0
    # pick the cubic magnitude inside the allowed band, then solve for dy_b
    target = float(rng.uniform(-0.9, 0.9)) * a / c
    dzf = rng.normal(size=(1, d))
    dxs = rng.normal(size=d)
    dyb = target - float(dzf[0] @ dys[:, 0]) - float(dzb[0] @ dxs)
    return (
        DerivativePoint(
            dz_b=dzb,
            dy_b=np.array([dyb]),
            dx_sigma=dxs,
            dy_sigma=dys,
            dz_f=(dzf,),
        ),
        c,
    )
