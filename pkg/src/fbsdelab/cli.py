"""Command-line front end.

Subcommands: check | solve | converge | stability | lipschitz.  Every
command reads a JSON config file (schema below), writes CSV/JSON artifacts
into the output directory, and uses stable exit codes: 0 success, 1
expectation mismatch, 2 computational failure.  Outputs are byte-identical
for identical configs and seeds, independent of the thread count.

Config schema (all sections optional except "problem"; defaults shown):

{
  "problem":        {"name": "example24", "params": {"T": 1.0}},
  "discretization": {"steps": ..., "x_lo": ..., "x_hi": ..., "dx": ...,
                     "quad_order": 8, "inner_tol": 1e-10, "inner_max": 60,
                     "damping": 1.0},                 # defaults from registry
  "partition":      {"m": 4},                          # int or "auto"
  "check":          {"c": 1.0, "epsilon": 0.0, "c_k": 1.0,
                     "plan": {"points": 25, "x_range": [-2.0, 2.0],
                              "sphere_samples": 16, "refine_iters": 3,
                              "seed": 0}},
  "mc":             {"paths": 1000, "seed": 0},
  "convergence":    {"levels": 3, "interior_margin": 0.0},
  "stability":      {"perturbations": [0.1, 0.01, 0.001],
                     "g_shape": "constant", "f_shape": "none"}
}
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditions import (
    SamplePlan,
    check_key_condition,
    derivative_point,
    sufficient_decoupled,
    sufficient_scalar,
    sufficient_spectral,
)
from .core import FbsdeError, PathBundle, initial_data_norm_sq, solution_norm_sq
from .experiments import convergence_study, lipschitz_report, stability_sweep
from .horizon import forward_assemble, initial_value_map, solve
from .problems import get_problem
from .segment import DiscretizationParams

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_FAILURE = 2


class ConfigError(FbsdeError):
    """The config file is missing fields or holds out-of-range values."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully defaulted experiment configuration."""

    problem_name: str
    problem_params: dict
    discretization: DiscretizationParams
    m: int | str
    check: dict
    mc: dict
    convergence: dict
    stability: dict
    raw: dict

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    """Read and validate a config file; `seed` overrides the mc seed."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "problem" not in data or "name" not in data["problem"]:
        raise ConfigError("config must name a problem")
    name = data["problem"]["name"]
    params = dict(data["problem"].get("params", {}))
    entry = get_problem(name, **params)

    disc_in = dict(data.get("discretization", {}))
    grid = entry.defaults["grid"]
    disc = DiscretizationParams(
        steps=int(disc_in.get("steps", entry.defaults["steps"])),
        x_lo=float(disc_in.get("x_lo", grid[0])),
        x_hi=float(disc_in.get("x_hi", grid[1])),
        dx=float(disc_in.get("dx", grid[2])),
        quad_order=int(disc_in.get("quad_order", entry.defaults.get("quad_order", 8))),
        inner_tol=float(disc_in.get("inner_tol", 1e-10)),
        inner_max=int(disc_in.get("inner_max", 60)),
        damping=float(disc_in.get("damping", 1.0)),
    )
    m = data.get("partition", {}).get("m", entry.defaults["m"])
    if not (m == "auto" or (isinstance(m, int) and m >= 1)):
        raise ConfigError(f"partition m must be a positive integer or 'auto', got {m!r}")

    check = {
        "c": 1.0,
        "epsilon": 0.0,
        "c_k": 1.0,
        "plan": {"points": 25, "x_range": [-2.0, 2.0], "sphere_samples": 16,
                 "refine_iters": 3, "seed": 0},
    }
    user_check = dict(data.get("check", {}))
    plan_over = dict(user_check.pop("plan", {}))
    check.update(user_check)
    check["plan"].update(plan_over)
    if check["c"] <= 0:
        raise ConfigError("check.c must be positive")
    if check["epsilon"] < 0:
        raise ConfigError("check.epsilon must be nonnegative")

    mc = {"paths": 1000, "seed": 0}
    mc.update(data.get("mc", {}))
    if seed is not None:
        mc["seed"] = int(seed)
    if mc["paths"] < 1:
        raise ConfigError("mc.paths must be >= 1")

    convergence = {"levels": 3, "interior_margin": 0.0}
    convergence.update(data.get("convergence", {}))
    if convergence["levels"] < 2:
        raise ConfigError("convergence.levels must be >= 2")

    stability = {"perturbations": [0.1, 0.01, 0.001], "g_shape": "constant",
                 "f_shape": "none"}
    stability.update(data.get("stability", {}))

    raw = {
        "problem": {"name": name, "params": params},
        "discretization": {
            "steps": disc.steps, "x_lo": disc.x_lo, "x_hi": disc.x_hi,
            "dx": disc.dx, "quad_order": disc.quad_order,
            "inner_tol": disc.inner_tol, "inner_max": disc.inner_max,
            "damping": disc.damping,
        },
        "partition": {"m": m},
        "check": check,
        "mc": mc,
        "convergence": convergence,
        "stability": stability,
    }
    return ExperimentConfig(
        problem_name=name,
        problem_params=params,
        discretization=disc,
        m=m,
        check=check,
        mc=mc,
        convergence=convergence,
        stability=stability,
        raw=raw,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, config_hash: str, header: list[str], rows: list[dict],
               extra_comments: list[str] | None = None) -> None:
    """CSV with a metadata comment line, a header row and repr-format floats."""
    lines = [f"# config_hash={config_hash}"]
    for comment in extra_comments or []:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        cells = []
        for key in header:
            val = row[key]
            cells.append("" if val is None else str(val))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _bundle_to_csv(path: Path, config_hash: str, bundle: PathBundle, n: int, d: int) -> None:
    header = ["t", "path_id", "X"]
    header += [f"Y_{i + 1}" for i in range(n)]
    header += [f"Z_{i + 1}{j + 1}" for i in range(n) for j in range(d)]
    lines = [f"# config_hash={config_hash}", ",".join(header)]
    for p in range(bundle.num_paths):
        for j, t in enumerate(bundle.time_grid):
            cells = [str(float(t)), str(p), str(float(bundle.x[p, j]))]
            cells += [str(float(v)) for v in bundle.y[p, j]]
            cells += [str(float(v)) for v in bundle.z[p, j].reshape(-1)]
            lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def cmd_check(cfg: ExperimentConfig, out: Path) -> int:
    """Run the key-condition check and the applicable sufficient conditions.

    Verdicts are compared against the registry's stored expectation for the
    problem: exit 0 on agreement, 1 on any mismatch.
    """
    entry = get_problem(cfg.problem_name, **cfg.problem_params)
    spec = entry.spec
    plan_cfg = cfg.check["plan"]
    plan = SamplePlan.auto(
        spec,
        count=plan_cfg["points"],
        x_range=tuple(plan_cfg["x_range"]),
        sphere_samples=plan_cfg["sphere_samples"],
        refine_iters=plan_cfg["refine_iters"],
        seed=plan_cfg["seed"],
    )
    profile = entry.condition_profile
    mismatches = []

    key_c = profile.get("key", {}).get("c", cfg.check["c"])
    report = check_key_condition(spec, key_c, plan, cfg.check["epsilon"])
    _write_json(out / "key_condition.json", report.to_json())
    if "key" in profile and report.passed != profile["key"]["holds"]:
        mismatches.append("key")

    # sufficient conditions on the sampled derivative points
    points = plan.state_points[:1] if spec.derivs.constant else plan.state_points
    dps = [derivative_point(spec, *pt) for pt in points]

    spectral_c = profile.get("spectral", {}).get("c", cfg.check["c"])
    spectral = all(sufficient_spectral(dp, spectral_c) for dp in dps)
    _write_json(out / "sufficient_spectral.json",
                {"holds": spectral, "c": spectral_c, "points": len(dps)})
    if "spectral" in profile and spectral != profile["spectral"]["holds"]:
        mismatches.append("spectral")

    decoupled = all(sufficient_decoupled(dp) for dp in dps)
    _write_json(out / "sufficient_decoupled.json",
                {"holds": decoupled, "points": len(dps)})
    if "decoupled" in profile and decoupled != profile["decoupled"]["holds"]:
        mismatches.append("decoupled")

    if spec.dims.n == 1:
        scalar_c = profile.get("scalar", {}).get("c", cfg.check["c"])
        scalar = all(sufficient_scalar(dp, scalar_c) for dp in dps)
        _write_json(out / "sufficient_scalar.json",
                    {"holds": scalar, "c": scalar_c, "points": len(dps)})
        if "scalar" in profile and profile["scalar"] is not None:
            if scalar != profile["scalar"]["holds"]:
                mismatches.append("scalar")

    _write_json(out / "check_summary.json", {
        "problem": cfg.problem_name,
        "config_hash": cfg.hash(),
        "expected": profile,
        "mismatches": mismatches,
    })
    return EXIT_OK if not mismatches else EXIT_MISMATCH


def cmd_solve(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    """Solve, simulate forward paths, and write all solution artifacts."""
    entry = get_problem(cfg.problem_name, **cfg.problem_params)
    spec = entry.spec
    sol = solve(spec, cfg.m, cfg.discretization, threads=threads)
    bundle = forward_assemble(sol, spec, cfg.mc["paths"], cfg.mc["seed"], threads=threads)
    theta_sq = solution_norm_sq(bundle)
    i0_sq = initial_data_norm_sq(
        spec, mc_samples=cfg.mc["paths"], time_steps=len(bundle.time_grid) - 1,
        seed=cfg.mc["seed"],
    )
    ratio = theta_sq / i0_sq if i0_sq >= 1e-14 else None

    config_hash = cfg.hash()
    seg_refs = []
    for k, seg in enumerate(sol.segments):
        ref = f"segment_{k:03d}.json"
        _write_json(out / ref, seg.to_json())
        seg_refs.append(ref)
    solution_payload = sol.to_json(segment_refs=seg_refs)
    solution_payload["config_hash"] = config_hash
    _write_json(out / "solution.json", solution_payload)
    _bundle_to_csv(out / "paths.csv", config_hash, bundle, spec.dims.n, spec.dims.d)

    x_rep = spec.x0.value if spec.x0.deterministic else spec.x0.support_hint()[0]
    y0 = initial_value_map(sol, float(x_rep))
    _write_json(out / "summary.json", {
        "problem": cfg.problem_name,
        "config_hash": config_hash,
        "y0": [float(v) for v in y0],
        "solution_norm_sq": theta_sq,
        "data_norm_sq": i0_sq,
        "ratio": ratio,
        "fitted_c_k": sol.fitted_c_k,
        "lipschitz_table": [float(v) for v in sol.measured_lipschitz],
        "escaped_fraction": bundle.escaped_fraction,
    })
    return EXIT_OK


def cmd_converge(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    """Refinement study; writes convergence.csv."""
    entry = get_problem(cfg.problem_name, **cfg.problem_params)
    m = cfg.m if isinstance(cfg.m, int) else entry.defaults["m"]
    rows = convergence_study(
        entry,
        cfg.discretization,
        m,
        levels=cfg.convergence["levels"],
        interior_margin=cfg.convergence["interior_margin"],
        threads=threads,
    )
    _write_csv(
        out / "convergence.csv", cfg.hash(),
        ["level", "dt", "dx", "err_y0", "err_field_sup", "observed_order"],
        rows,
    )
    return EXIT_OK


def cmd_stability(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    """Perturbation sweep; writes stability.csv."""
    entry = get_problem(cfg.problem_name, **cfg.problem_params)
    m = cfg.m if isinstance(cfg.m, int) else entry.defaults["m"]
    rows, in_hypothesis = stability_sweep(
        entry,
        cfg.stability["perturbations"],
        cfg.discretization,
        m,
        num_paths=cfg.mc["paths"],
        seed=cfg.mc["seed"],
        g_shape=cfg.stability["g_shape"],
        f_shape=cfg.stability["f_shape"],
        threads=threads,
    )
    comments = [] if in_hypothesis else ["label=out-of-hypothesis"]
    _write_csv(out / "stability.csv", cfg.hash(),
               ["eps", "lhs", "rhs", "ratio"], rows, extra_comments=comments)
    return EXIT_OK


def cmd_lipschitz(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    """Solve and report measured Lipschitz constants against the schedule."""
    entry = get_problem(cfg.problem_name, **cfg.problem_params)
    spec = entry.spec
    sol = solve(spec, cfg.m, cfg.discretization, threads=threads)
    rows, probe = lipschitz_report(
        sol, spec, configured_c_k=cfg.check["c_k"], seed=cfg.mc["seed"]
    )
    _write_csv(out / "lipschitz.csv", cfg.hash(),
               ["i", "t_i", "measured_lip_sq", "bound_config_ck", "bound_fitted_ck"],
               rows)
    probe_payload = dict(probe, config_hash=cfg.hash())
    _write_json(out / "ivmap_probe.json", probe_payload)
    return EXIT_OK


_COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "converge": cmd_converge,
    "stability": cmd_stability,
    "lipschitz": cmd_lipschitz,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbsdelab",
        description="Condition audits, solves and experiment harnesses for "
                    "coupled FBSDEs with scalar forward state.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override mc.seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "check":
            return cmd_check(cfg, out)
        return _COMMANDS[args.command](cfg, out, threads=max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except FbsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
