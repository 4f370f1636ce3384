"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Tolerances are pinned here and nowhere else.  Reference values marked
"frozen" were computed by independent oracles (shooting on the terminal
feedback ODE, Gaussian moment identities, direct arithmetic of the bound
formulas) before the solver existed.
"""

import json

import numpy as np
import pytest

import fbsdelab as fl
from fbsdelab.cli import EXIT_OK, main
from fbsdelab.experiments import ORDER_FLOOR
from tests.dp_constructions import make_decoupled_dp, make_scalar_dp, make_spectral_dp


def _report(number: int, name: str, checks: list[tuple[str, bool]]) -> None:
    failed = [label for label, ok in checks if not ok]
    verdict = "PASS" if not failed else f"FAIL ({', '.join(failed)})"
    print(f"CRITERION {number} ({name}): {verdict}")
    assert not failed, f"criterion {number} failed: {failed}"


def test_criterion_1_closed_form_end_to_end():
    entry = fl.get_problem("example24", T=1.0)
    params = fl.DiscretizationParams(steps=16, x_lo=-1.0, x_hi=3.0, dx=0.01, quad_order=4)
    sol = fl.solve(entry.spec, 4, params)
    y0 = fl.initial_value_map(sol, 1.0)[0]
    bundle = fl.forward_assemble(sol, entry.spec, 1, seed=0)
    t = bundle.time_grid
    x_err = float(np.max(np.abs(bundle.x[0] - (1.0 - t / 2.0))))
    _report(1, "closed-form end-to-end", [
        (f"|Y0 - 0.5| = {abs(y0 - 0.5):.2e} <= 1e-3", abs(y0 - 0.5) <= 1e-3),
        (f"sup|X_t - (1 - t/2)| = {x_err:.2e} <= 1e-3", x_err <= 1e-3),
    ])


def test_criterion_2_checker_ground_truth():
    checks = []
    # negative ground truth: terminal feedback problem
    fb = fl.get_problem("example24", T=1.0)
    dp = fl.derivative_point(fb.spec, 0.0, 1.0, np.zeros(1), np.zeros((1, 1)))
    checks.append(("cubic(1) == -1 exactly", fl.cubic_drift(dp, [1.0]) == -1.0))
    checks.append(("quartic(1) == 0 exactly", fl.quartic_drift(dp, [1.0]) == 0.0))
    plan = fl.SamplePlan.auto(fb.spec, count=5, seed=0)
    for c in (0.01, 0.1, 1.0, 10.0, 100.0):
        rep = fl.check_key_condition(fb.spec, c, plan)
        checks.append((f"fails at c={c}", not rep.passed))

    # positive ground truth: coupled scalar benchmark, exact two-point sphere
    s3 = fl.get_problem("coupled_s3")
    dp3 = fl.derivative_point(s3.spec, 0.0, 0.0, np.zeros(1), np.zeros((1, 1)))
    checks.append(("scalar condition holds at c=1", fl.sufficient_scalar(dp3, 1.0)))
    rep3 = fl.check_key_condition(s3.spec, 1.0, fl.SamplePlan.auto(s3.spec, count=5, seed=0))
    checks.append(("key condition holds at c=1", rep3.passed))
    checks.append((f"worst_margin == 2 (got {rep3.worst_margin})", rep3.worst_margin == 2.0))
    checks.append(("exact mode for n=1", rep3.mode == "exact"))
    _report(2, "condition-checker ground truth", checks)


def test_criterion_3_sufficiency_implications():
    rng = np.random.default_rng(20240817)
    violations = {"spectral": 0, "decoupled": 0, "scalar": 0}
    premise_failures = 0
    for _ in range(1000):
        dp, c = make_spectral_dp(rng)
        if not fl.sufficient_spectral(dp, c):
            premise_failures += 1
            continue
        margin, _, _ = fl.worst_direction_margin(dp, c, sphere_samples=max(16, 2 * dp.n), seed=3)
        if margin < 0.0:
            violations["spectral"] += 1
    for _ in range(1000):
        dp = make_decoupled_dp(rng)
        if not fl.sufficient_decoupled(dp):
            premise_failures += 1
            continue
        margin, _, _ = fl.worst_direction_margin(dp, 1.0, sphere_samples=max(16, 2 * dp.n), seed=3)
        if margin < 0.0:
            violations["decoupled"] += 1
    for _ in range(1000):
        dp, c = make_scalar_dp(rng)
        if not fl.sufficient_scalar(dp, c):
            premise_failures += 1
            continue
        margin, _, _ = fl.worst_direction_margin(dp, c, seed=3)
        if margin < 0.0:
            violations["scalar"] += 1
    _report(3, "sufficiency implication suite", [
        ("all constructed points satisfy their premise", premise_failures == 0),
        (f"zero spectral violations (got {violations['spectral']})", violations["spectral"] == 0),
        (f"zero decoupled violations (got {violations['decoupled']})", violations["decoupled"] == 0),
        (f"zero scalar violations (got {violations['scalar']})", violations["scalar"] == 0),
    ])


def test_criterion_4_decoupled_oracles():
    checks = []
    ident = fl.get_problem("brownian_identity", T=1.0)
    params = fl.DiscretizationParams(steps=8, x_lo=-6.0, x_hi=6.0, dx=0.05, quad_order=8)
    sol = fl.solve(ident.spec, 2, params)
    xs = sol.g_funcs[0].nodes()
    u_err = float(np.max(np.abs(sol.g_funcs[0].values[:, 0] - xs)))
    v_err = max(
        float(np.max(np.abs(v.values - 1.0))) for seg in sol.segments for v in seg.v
    )
    checks.append((f"identity field error {u_err:.2e} <= 1e-8", u_err <= 1e-8))
    checks.append((f"identity z-field error {v_err:.2e} <= 1e-8", v_err <= 1e-8))

    square = fl.get_problem("brownian_square", T=0.1)
    sparams = fl.DiscretizationParams(steps=16, x_lo=-4.0, x_hi=4.0, dx=0.01, quad_order=8)
    ssol = fl.solve(square.spec, 1, sparams)  # dt = 1/160
    sxs = ssol.g_funcs[0].nodes()
    interior = np.abs(sxs) <= 2.4
    sq_err = float(np.max(np.abs(ssol.g_funcs[0].values[interior, 0] - (sxs[interior] ** 2 + 0.1))))
    checks.append((f"square interior error {sq_err:.2e} <= 1e-3", sq_err <= 1e-3))
    _report(4, "decoupled oracles", checks)


def test_criterion_5_lipschitz_propagation():
    checks = []
    for name, T, m, steps in [("brownian_identity", 1.0, 4, 4), ("coupled_s3", 0.25, 2, 8)]:
        entry = fl.get_problem(name, T=T)
        sol = fl.solve(entry.spec, m, entry.default_params().with_updates(steps=steps))
        k0 = entry.spec.terminal_lipschitz
        bounds = fl.schedule_by_node(k0, sol.fitted_c_k, T, m)
        conforms = all(
            lip**2 <= bound + 1e-9
            for lip, bound in zip(sol.measured_lipschitz, bounds)
        )
        checks.append((f"{name}: measured Lip(g_i)^2 within fitted schedule", conforms))

    sched = fl.lipschitz_schedule(1.3, 0.7, 2.0, 6)
    kbar_sq = fl.propagated_lipschitz(1.3, 0.7, 2.0) ** 2
    checks.append(
        (f"schedule last entry == propagated bound^2 (diff {abs(sched[-1] - kbar_sq):.1e})",
         abs(sched[-1] - kbar_sq) <= 1e-12)
    )
    _report(5, "Lipschitz propagation", checks)


def test_criterion_6_initial_value_map_probe():
    probe_entry = fl.get_problem("coupled_s3")
    delta0 = fl.estimate_delta0(probe_entry.spec, 1.0, probe_entry.default_params())
    T = min(0.25, delta0)
    entry = fl.get_problem("coupled_s3", T=T)
    sol = fl.solve(entry.spec, 1, entry.default_params())
    g0 = sol.g_funcs[0]
    bound = fl.propagated_lipschitz(1.0, sol.fitted_c_k, T) + 0.05
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(300):
        xa, xb = rng.uniform(g0.x_lo, g0.x_hi, size=2)
        if abs(xa - xb) < 1e-8:
            continue
        worst = max(worst, float(np.linalg.norm(g0(xa) - g0(xb))) / abs(xa - xb))
    _report(6, "initial-value-map Lipschitz probe", [
        (f"T = {T} <= empirical delta0 = {delta0}", T <= delta0),
        (f"worst sampled slope {worst:.4f} <= bound {bound:.4f}", worst <= bound),
    ])


def test_criterion_7_stability_harness():
    checks = []
    eps_sweep = [0.1, 0.01, 0.001]

    ident = fl.get_problem("brownian_identity", T=1.0)
    rows, in_hyp = fl.stability_sweep(
        ident, eps_sweep, ident.default_params(), 2, num_paths=128, seed=5,
        g_shape="constant",
    )
    checks.append(("identity sweep within hypothesis", in_hyp))
    for row in rows:
        checks.append(
            (f"identity ratio at eps={row['eps']} is 1 +- 1% (got {row['ratio']:.6f})",
             abs(row["ratio"] - 1.0) <= 0.01)
        )

    s3 = fl.get_problem("coupled_s3", T=0.25)
    rows3, in_hyp3 = fl.stability_sweep(
        s3, eps_sweep, s3.default_params(), 1, num_paths=128, seed=5,
        g_shape="constant",
    )
    checks.append(("coupled sweep within hypothesis", in_hyp3))
    ratios = [r["ratio"] for r in rows3]
    spread = max(ratios) / min(ratios)
    checks.append((f"coupled ratio spread {spread:.3f} < 10", spread < 10.0))
    lhss = [r["lhs"] for r in rows3]
    checks.append(
        ("coupled lhs decreases to zero with eps",
         lhss[0] > lhss[1] > lhss[2] > 0.0 and lhss[2] < 1e-2 * lhss[0]),
    )
    _report(7, "stability harness", checks)


def test_criterion_8_scheme_self_consistency():
    checks = []
    entry = fl.get_problem("example24", T=1.0)

    # partition insensitivity: same fine dt, m vs 2m
    inner_tol = 1e-10
    base = entry.default_params().with_updates(inner_tol=inner_tol)
    sol_m = fl.solve(entry.spec, 2, base.with_updates(steps=32))
    sol_2m = fl.solve(entry.spec, 4, base.with_updates(steps=16))
    diff = float(np.max(np.abs(sol_m.g_funcs[0].values - sol_2m.g_funcs[0].values)))
    checks.append(
        (f"partition insensitivity: sup diff {diff:.2e} <= 2x inner tol", diff <= 2 * inner_tol)
    )

    # refinement convergence; the closed-form benchmark has affine fields that
    # the per-step implicit solve reproduces exactly, so its errors sit at the
    # rounding floor where no order is measurable (same mechanism the linear
    # Brownian benchmark exhibits); the floor rule covers that outcome, and
    # the squared-terminal benchmark demonstrates a genuine measured order
    rows = fl.convergence_study(
        entry, base.with_updates(steps=4, dx=0.04), 4, levels=3
    )
    finest = rows[-1]
    at_floor = (
        finest["err_field_sup"] <= ORDER_FLOOR
        and rows[-2]["err_field_sup"] <= ORDER_FLOOR
    )
    order_ok = finest["observed_order"] is not None and finest["observed_order"] >= 0.8
    checks.append(
        (f"closed-form refinement: order >= 0.8 or errors at floor "
         f"(err {finest['err_field_sup']:.1e}, order {finest['observed_order']})",
         order_ok or at_floor)
    )

    square = fl.get_problem("brownian_square", T=0.1)
    sq_rows = fl.convergence_study(
        square, square.default_params().with_updates(steps=8, dx=0.04), 1,
        levels=3, interior_margin=1.6,
    )
    sq_order = sq_rows[-1]["observed_order"]
    checks.append(
        (f"squared-terminal refinement order {sq_order and round(sq_order, 3)} >= 0.8",
         sq_order is not None and sq_order >= 0.8)
    )
    errs = [r["err_field_sup"] for r in sq_rows]
    checks.append(
        ("squared-terminal errors shrink by >= 1.5x per level",
         all(a / b >= 1.5 for a, b in zip(errs, errs[1:]))),
    )
    _report(8, "scheme self-consistency", checks)


def test_criterion_9_determinism(tmp_path):
    cfg = {
        "problem": {"name": "example24", "params": {"T": 1.0}},
        "discretization": {"steps": 4, "dx": 0.05},
        "partition": {"m": 2},
        "mc": {"paths": 16, "seed": 41},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = []
    for label, threads in [("a", 1), ("b", 1), ("c", 3)]:
        out = tmp_path / label
        code = main(["solve", "--config", str(cfg_path), "--out", str(out),
                     "--threads", str(threads)])
        assert code == EXIT_OK
        outs.append(out)
    names = sorted(f.name for f in outs[0].iterdir())
    checks = []
    for other, what in [(outs[1], "re-run"), (outs[2], "threads=3")]:
        identical = all(
            (outs[0] / n).read_bytes() == (other / n).read_bytes() for n in names
        )
        checks.append((f"byte-identical outputs vs {what}", identical))
    checks.append((f"all artifacts present ({len(names)} files)", len(names) >= 5))
    _report(9, "determinism", checks)
