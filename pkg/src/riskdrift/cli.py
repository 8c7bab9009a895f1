"""Command-line entry points, experiment orchestration, and report emission.

Reports are canonical JSON: sorted keys, native float repr, no wall-clock
content, so identical configs and seeds give byte-identical bytes. Timing
lives in a separate sidecar file that is never hashed. CSV field dumps use
columns t,x,value (policies add a control column).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .dp import PiecewiseConstantPolicy, ValueField, dp_solve
from .errors import NumericalError, ValidationError
from .forward import (
    constant_rule,
    doleans_exponential,
    gamma_bound_check,
    rules_in_interval,
)
from .hjb import build_hjb_grid, solve_hjb
from .model import (
    DriverSpec,
    ProblemDefinition,
    driver_axiom_check,
    driver_from_config,
    driver_subgradient_interval,
    load_config,
    problem_from_config,
    validate_problem,
)
from .mollify import Mollifier, mollify_convolve, perturbed_dp_solve, seminorm_estimate
from .risk import (
    CostFunctional,
    build_lattice,
    dual_lower_bound_check,
    g_evaluate_lattice,
    g_evaluate_mc,
    risk_axiom_suite,
)

DEFAULT_CONFIG = {
    "problem": {
        "drift": {"family": "affine", "control": 1.0},
        "diffusion": {"family": "constant", "value": 1.0},
        "running_cost": {"family": "constant", "value": 0.0},
        "terminal_cost": {"family": "quadratic", "xx": 1.0},
        "horizon": 1.0,
        "control_set": {"values": [-1.0, 1.0]},
        "lipschitz_K": 2.0,
        "bound_K": 150.0,
    },
    "driver": {"kind": "scaled_abs", "kappa": 0.5},
    "experiment": {
        "h_schedule": [0.6, 0.45, 0.35, 0.27],
        "eps_rule": "cbrt",
        "inner_dt": 1e-4,
        "radius": 6.0,
        "x0": 0.0,
        "reference_dx": 0.0025,
        "adequacy_factor": 2.0,
    },
}


def _plain(obj):
    """Recursively strip numpy types so json sees native scalars/lists."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, ensure_ascii=True,
                      separators=(",", ":")) + "\n"


def config_sha256(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode("ascii")).hexdigest()


def field_to_csv(field: ValueField, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("t,x,value\n")
        for i, t in enumerate(field.times):
            for j, x in enumerate(field.space):
                fh.write(f"{float(t)!r},{float(x)!r},"
                         f"{float(field.values[i, j])!r}\n")


def policy_to_csv(policy: PiecewiseConstantPolicy, path: str) -> None:
    vals = np.asarray(policy.control_values, dtype=np.float64)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("t,x,control\n")
        for i, t in enumerate(policy.interval_starts):
            row = vals[policy.control_index[i]]
            for j, x in enumerate(policy.space):
                fh.write(f"{float(t)!r},{float(x)!r},{float(row[j])!r}\n")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Resolved study inputs: problem, driver, schedules, seeds, outputs."""

    problem: ProblemDefinition
    driver: DriverSpec
    doc: dict
    h_schedule: tuple
    eps_rule: str = "cbrt"
    inner_dt: float = 1e-4
    radius: float = 6.0
    x0: float = 0.0
    reference_dx: float = 0.0025
    adequacy_factor: float = 2.0
    seed: int = 0
    out_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        hs = tuple(float(h) for h in self.h_schedule)
        if len(hs) < 1:
            raise ValidationError("h schedule must be nonempty")
        if any(not (0.0 < h <= 1.0) for h in hs):
            raise ValidationError("every h must lie in (0, 1]")
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ValidationError("h schedule must be strictly decreasing")
        object.__setattr__(self, "h_schedule", hs)

    def eps_for(self, h: float) -> float:
        if self.eps_rule == "cbrt":
            return float(h) ** (1.0 / 3.0)
        try:
            return float(self.eps_rule)
        except ValueError as exc:
            raise ValidationError(
                f"unknown eps rule {self.eps_rule!r}") from exc

    def seeds(self) -> dict:
        base = int(self.seed)
        return {"master": base, "validate": base + 1, "axioms": base + 2,
                "mc": base + 3, "dual": base + 4, "doleans": base + 5}


def experiment_config(doc: dict, seed: int = 0, out_dir: str | None = None,
                      threads: int = 1) -> ExperimentConfig:
    exp = doc.get("experiment", {})
    if not isinstance(exp, dict):
        raise ValidationError("'experiment' section must be an object")
    return ExperimentConfig(
        problem=problem_from_config(doc),
        driver=driver_from_config(doc),
        doc=doc,
        h_schedule=tuple(exp.get("h_schedule",
                                 DEFAULT_CONFIG["experiment"]["h_schedule"])),
        eps_rule=str(exp.get("eps_rule", "cbrt")),
        inner_dt=float(exp.get("inner_dt", 1e-4)),
        radius=float(exp.get("radius", 6.0)),
        x0=float(exp.get("x0", 0.0)),
        reference_dx=float(exp.get("reference_dx", 0.0025)),
        adequacy_factor=float(exp.get("adequacy_factor", 2.0)),
        seed=seed, out_dir=out_dir, threads=threads)


def fit_rate(pairs, notes: list | None = None):
    """OLS slope and intercept of log err against log h.

    Zero errors are dropped (noted when a list is passed); fewer than two
    surviving pairs is an error. Returns (slope, logC).
    """
    kept = [(float(h), float(e)) for h, e in pairs if e > 0.0]
    dropped = [(float(h), float(e)) for h, e in pairs if e <= 0.0]
    if notes is not None:
        for h, e in dropped:
            notes.append(f"excluded h={h:g} from the rate fit (error {e:g})")
    if len(kept) < 2:
        raise ValidationError("rate fit needs at least 2 positive errors")
    lx = np.log([h for h, _ in kept])
    ly = np.log([e for _, e in kept])
    A = np.column_stack((lx, np.ones_like(lx)))
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), float(coef[1])


@dataclasses.dataclass(frozen=True)
class ExperimentReport:
    """Per-h values and errors against the fine reference, plus the fit."""

    entries: tuple                 # per h: dict(h, eps, inner_dt, value, error)
    reference: dict
    slope: float
    log_constant: float
    bound_constant: float          # max error / h^{1/3}
    eval_point: tuple
    seeds: dict
    config_sha256: str
    notes: tuple
    wall_clock: dict               # excluded from the canonical payload

    def to_dict(self, include_wall_clock: bool = False) -> dict:
        d = {"entries": list(self.entries), "reference": self.reference,
             "slope": self.slope, "log_constant": self.log_constant,
             "bound_constant": self.bound_constant,
             "eval_point": list(self.eval_point), "seeds": self.seeds,
             "config_sha256": self.config_sha256, "notes": list(self.notes)}
        if include_wall_clock:
            d["wall_clock"] = self.wall_clock
        return d


def _snap_divisor(target: float, h: float) -> float:
    n = max(1, int(round(h * h / target)))
    return h * h / n


def run_convergence(cfg: ExperimentConfig) -> ExperimentReport:
    """Reference solve, one DP solve per h, error table, and the rate fit."""
    problem, driver = cfg.problem, cfg.driver
    wall = {}

    t0 = time.perf_counter()
    grid_ref = build_hjb_grid(problem, driver, dx=cfg.reference_dx,
                              radius=cfg.radius, x0=cfg.x0)
    ref_field = solve_hjb(problem, driver, grid_ref,
                          store_every=grid_ref.n_steps)
    v_ref = ref_field.value_at(0.0, cfg.x0)
    wall["reference"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dx2 = cfg.reference_dx * cfg.adequacy_factor
    grid_adq = build_hjb_grid(problem, driver, dx=dx2, radius=cfg.radius,
                              x0=cfg.x0)
    v_adq = solve_hjb(problem, driver, grid_adq,
                      store_every=grid_adq.n_steps).value_at(0.0, cfg.x0)
    wall["adequacy"] = time.perf_counter() - t0

    def one(h: float):
        start = time.perf_counter()
        inner = _snap_divisor(cfg.inner_dt, h)
        try:
            field, _ = dp_solve(problem, driver, h=h, inner_dt=inner,
                                radius=cfg.radius, x0=cfg.x0)
        except Exception as exc:
            raise type(exc)(f"h={h:g}: {exc}") from exc
        v = field.value_at(0.0, cfg.x0)
        return {"h": h, "eps": cfg.eps_for(h), "inner_dt": inner,
                "dx": float(field.meta["dx"]), "value": v,
                "error": abs(v - v_ref)}, time.perf_counter() - start

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, cfg.h_schedule))
    else:
        results = [one(h) for h in cfg.h_schedule]
    entries = []
    for (entry, secs), h in zip(results, cfg.h_schedule):
        entries.append(entry)
        wall[f"h={h:g}"] = secs

    coarsest_dx = min(e["dx"] for e in entries)
    finest_inner = min(e["inner_dt"] for e in entries)
    if not (grid_ref.dx < coarsest_dx and grid_ref.dt < finest_inner):
        raise ValidationError("reference grid must be strictly finer than "
                              "every DP run")

    notes = []
    slope, logc = fit_rate([(e["h"], e["error"]) for e in entries], notes)
    bound_c = max(e["error"] / e["h"] ** (1.0 / 3.0) for e in entries)
    min_err = min(e["error"] for e in entries)
    adequacy_gap = abs(v_ref - v_adq)
    reference = {"dx": grid_ref.dx, "dt": grid_ref.dt, "value": v_ref,
                 "adequacy_dx": grid_adq.dx, "adequacy_value": v_adq,
                 "adequacy_gap": adequacy_gap,
                 "adequacy_ok": bool(adequacy_gap < 0.1 * min_err)}
    return ExperimentReport(
        entries=tuple(entries), reference=reference, slope=slope,
        log_constant=logc, bound_constant=bound_c,
        eval_point=(0.0, cfg.x0), seeds=cfg.seeds(),
        config_sha256=config_sha256(cfg.doc), notes=tuple(notes),
        wall_clock=wall)


def run_axioms(cfg: ExperimentConfig, instances: int = 100,
               paths: int = 30_000) -> dict:
    """Aggregate the driver, coherence, dual-bound, and exponential checks."""
    problem, driver = cfg.problem, cfg.driver
    seeds = cfg.seeds()
    failures = []

    drep = driver_axiom_check(driver, seed=seeds["axioms"])
    if not drep.normalization_ok:
        failures.append("driver_axioms: normalization")
    if not drep.convexity_ok:
        failures.append("driver_axioms: convexity")
    if not drep.homogeneity_ok:
        failures.append("driver_axioms: positive homogeneity")

    srep = risk_axiom_suite(driver, instances=instances,
                            seed=seeds["axioms"] + 1)
    for f in srep.failures:
        failures.append(f"risk_axioms: {f}")

    lo, hi = driver_subgradient_interval(driver)
    rules = rules_in_interval(lo, hi, 0.0, problem.horizon)
    cost = CostFunctional(problem=problem)
    dual = dual_lower_bound_check(driver, cost, rules, paths=paths,
                                  seed=seeds["dual"], radius=cfg.radius)
    for r in dual.results:
        if not r.passed:
            failures.append(f"dual_bound: rule {r.rule_name}")

    u = driver.subgradient_bound_u
    ens = doleans_exponential(constant_rule(u), 0.0, problem.horizon,
                              paths=paths, steps=64, seed=seeds["doleans"])
    bound = gamma_bound_check(ens, u, 0.0, problem.horizon)
    if not bound.passed:
        failures.append("doleans: second-moment bound")
    if not ens.positive_ok():
        failures.append("doleans: positivity")
    if not ens.martingale_ok():
        failures.append("doleans: unit mean")

    return {
        "passed": not failures,
        "failures": failures,
        "driver_axioms": {"normalization_ok": drep.normalization_ok,
                          "convexity_ok": drep.convexity_ok,
                          "homogeneity_ok": drep.homogeneity_ok,
                          "samples": drep.samples,
                          "failures": list(drep.failures)},
        "risk_axioms": {"instances": srep.instances, "checks": srep.checks,
                        "worst": srep.worst,
                        "failures": list(srep.failures)},
        "dual_bound": {"rho": dual.rho,
                       "results": [dataclasses.asdict(r) for r in dual.results]},
        "doleans": {"statistic": bound.statistic, "bound": bound.bound,
                    "stderr": bound.stderr, "passed": bound.passed},
        "seeds": seeds,
        "config_sha256": config_sha256(cfg.doc),
    }


def _emit(payload: dict, out_dir: str | None, name: str,
          timings: dict | None = None) -> None:
    text = canonical_json(payload)
    sys.stdout.write(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{name}.json"), "w",
                  encoding="ascii", newline="\n") as fh:
            fh.write(text)
        if timings:
            with open(os.path.join(out_dir, f"{name}.timing.json"), "w",
                      encoding="ascii", newline="\n") as fh:
                fh.write(json.dumps(_plain(timings), sort_keys=True) + "\n")


def _load_doc(args) -> dict:
    if args.config:
        return load_config(args.config)
    return DEFAULT_CONFIG


def _cmd_validate(args) -> int:
    doc = _load_doc(args)
    problem = problem_from_config(doc)
    seeds = {"master": args.seed, "validate": args.seed + 1}
    rep = validate_problem(problem, samples=args.samples,
                           seed=seeds["validate"])
    payload = {"passed": rep.passed, "samples": rep.samples,
               "lipschitz_ratio": rep.lipschitz_ratio,
               "time_holder_ratio": rep.time_holder_ratio,
               "magnitude": rep.magnitude, "failures": list(rep.failures),
               "seeds": seeds, "config_sha256": config_sha256(doc)}
    _emit(payload, args.out, "validate")
    return 0 if rep.passed else 1


def _cmd_axioms(args) -> int:
    doc = _load_doc(args)
    cfg = experiment_config(doc, seed=args.seed, out_dir=args.out,
                            threads=args.threads)
    t0 = time.perf_counter()
    payload = run_axioms(cfg, instances=args.instances, paths=args.paths)
    _emit(payload, args.out, "axioms",
          timings={"total": time.perf_counter() - t0})
    if not payload["passed"]:
        sys.stderr.write("failed: " + "; ".join(payload["failures"]) + "\n")
        return 1
    return 0


def _cmd_evaluate_risk(args) -> int:
    doc = _load_doc(args)
    problem = problem_from_config(doc)
    driver = driver_from_config(doc)
    control = problem.controls()[0]
    cost = CostFunctional(problem=problem, control=control)
    seeds = {"master": args.seed, "mc": args.seed + 3}
    if args.method == "lattice":
        lat = build_lattice(problem, 0.0, args.x0, args.dt,
                            radius=args.radius)
        rv = g_evaluate_lattice(lat, driver, cost, control)
        diagnostics = {"nodes": int(lat.space.size),
                       "steps": int(lat.n_steps), "dx": lat.dx,
                       "z_at_start": float(rv.z_profile[0])}
        dt_used = lat.dt
    else:
        rv = g_evaluate_mc(problem, driver, cost, control,
                           paths=args.paths, steps=args.steps,
                           basis_degree=args.basis_degree,
                           seed=seeds["mc"], x0=args.x0)
        diagnostics = {"paths": args.paths, "steps": args.steps,
                       "stderr": rv.meta["stderr"],
                       "basis_degree": args.basis_degree}
        dt_used = problem.horizon / args.steps
    payload = {"value": rv.value, "dt": dt_used, "method": args.method,
               "diagnostics": diagnostics, "seeds": seeds,
               "config_sha256": config_sha256(doc)}
    _emit(payload, args.out, "evaluate-risk")
    return 0


def _cmd_solve_hjb(args) -> int:
    doc = _load_doc(args)
    problem = problem_from_config(doc)
    driver = driver_from_config(doc)
    t0 = time.perf_counter()
    grid = build_hjb_grid(problem, driver, dx=args.dx, dt=args.dt,
                          radius=args.radius)
    field = solve_hjb(problem, driver, grid)
    secs = time.perf_counter() - t0
    payload = {"value": field.value_at(0.0, grid.x0),
               "dx": grid.dx, "dt": grid.dt, "n_steps": grid.n_steps,
               "cfl": grid.cfl, "radius": grid.radius,
               "seeds": {"master": args.seed},
               "config_sha256": config_sha256(doc)}
    _emit(payload, args.out, "solve-hjb", timings={"total": secs})
    if args.out:
        field_to_csv(field, os.path.join(args.out, "hjb_field.csv"))
    return 0


def _cmd_solve_dp(args) -> int:
    doc = _load_doc(args)
    problem = problem_from_config(doc)
    driver = driver_from_config(doc)
    inner = args.inner_dt if args.inner_dt else _snap_divisor(1e-3, args.h)
    t0 = time.perf_counter()
    field, policy = dp_solve(problem, driver, h=args.h, inner_dt=inner,
                             radius=args.radius)
    secs = time.perf_counter() - t0
    payload = {"value": field.value_at(0.0, 0.0), "h": args.h,
               "inner_dt": inner, "radius": args.radius,
               "intervals": int(len(policy.interval_starts)),
               "seeds": {"master": args.seed},
               "config_sha256": config_sha256(doc)}
    _emit(payload, args.out, "solve-dp", timings={"total": secs})
    if args.out:
        field_to_csv(field, os.path.join(args.out, "dp_field.csv"))
        policy_to_csv(policy, os.path.join(args.out, "dp_policy.csv"))
    return 0


def _cmd_mollify(args) -> int:
    doc = _load_doc(args)
    problem = problem_from_config(doc)
    driver = driver_from_config(doc)
    eps = args.epsilon
    h = args.h if args.h else min(eps, math.sqrt(problem.horizon) * 0.5)
    inner = args.inner_dt if args.inner_dt else _snap_divisor(h * h / 8.0, h)
    tilde = perturbed_dp_solve(problem, driver, h=h, eps=eps,
                               inner_dt=inner, radius=args.radius)
    hat = mollify_convolve(tilde, Mollifier(eps=eps,
                                            quad_points=args.quad_points))
    rep = seminorm_estimate(hat)
    payload = {
        "epsilon": eps, "h": h, "inner_dt": inner,
        "quad_points": args.quad_points,
        "field": {"times": hat.times, "space": hat.space,
                  "values": hat.values, "producer": hat.producer},
        "seminorm": {"sup_value": rep.sup_value, "sup_dx": rep.sup_dx,
                     "sup_dxx": rep.sup_dxx, "sup_dt": rep.sup_dt,
                     "holder_dt": rep.holder_dt,
                     "holder_dxx": rep.holder_dxx, "eps": rep.eps},
        "seeds": {"master": args.seed},
        "config_sha256": config_sha256(doc),
    }
    _emit(payload, args.out, "mollify")
    return 0


def _cmd_converge(args) -> int:
    doc = _load_doc(args)
    cfg = experiment_config(doc, seed=args.seed, out_dir=args.out,
                            threads=args.threads)
    if args.reference_dx:
        cfg = dataclasses.replace(cfg, reference_dx=args.reference_dx)
    report = run_convergence(cfg)
    _emit(report.to_dict(), args.out, "converge", timings=report.wall_clock)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskdrift",
        description="risk-averse control: evaluation, solvers, experiments")
    parser.add_argument("--config", default=None, help="JSON config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="sample the standing assumptions")
    sp.add_argument("--samples", type=int, default=2000)
    sp.set_defaults(fn=_cmd_validate)

    sp = sub.add_parser("axioms", help="run every property suite")
    sp.add_argument("--instances", type=int, default=100)
    sp.add_argument("--paths", type=int, default=30_000)
    sp.set_defaults(fn=_cmd_axioms)

    sp = sub.add_parser("evaluate-risk", help="one risk evaluation")
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--method", choices=("lattice", "mc"), default="lattice")
    sp.add_argument("--paths", type=int, default=20_000)
    sp.add_argument("--steps", type=int, default=64)
    sp.add_argument("--basis-degree", type=int, default=3)
    sp.add_argument("--x0", type=float, default=0.0)
    sp.set_defaults(fn=_cmd_evaluate_risk)

    sp = sub.add_parser("solve-hjb", help="finite-difference solve")
    sp.add_argument("--dx", type=float, default=0.01)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--radius", type=float, default=None)
    sp.set_defaults(fn=_cmd_solve_hjb)

    sp = sub.add_parser("solve-dp", help="piecewise-constant control DP")
    sp.add_argument("--h", type=float, default=0.35)
    sp.add_argument("--inner-dt", type=float, default=None, dest="inner_dt")
    sp.add_argument("--radius", type=float, default=6.0)
    sp.set_defaults(fn=_cmd_solve_dp)

    sp = sub.add_parser("mollify", help="perturb, smooth, and measure")
    sp.add_argument("--epsilon", type=float, default=0.2)
    sp.add_argument("--quad-points", type=int, default=16,
                    dest="quad_points")
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--inner-dt", type=float, default=None, dest="inner_dt")
    sp.add_argument("--radius", type=float, default=None)
    sp.set_defaults(fn=_cmd_mollify)

    sp = sub.add_parser("converge", help="rate study against the reference")
    sp.add_argument("--reference-dx", type=float, default=None,
                    dest="reference_dx")
    sp.set_defaults(fn=_cmd_converge)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    env_threads = os.environ.get("RISKDRIFT_THREADS")
    if env_threads:
        try:
            args.threads = int(env_threads)
        except ValueError:
            sys.stderr.write("RISKDRIFT_THREADS must be an integer\n")
            return 1
    try:
        return args.fn(args)
    except ValidationError as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return 1
    except NumericalError as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
