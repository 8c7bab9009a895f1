"""Problem and driver definitions, assumption validation, config ingestion.

A control problem bundles the coefficient evaluators b, sigma, c, the terminal
cost, the horizon and a compact control set, together with the declared
Lipschitz and magnitude constants that the sampling validator checks. A driver
is the generator g(t, z) of the backward recursion; admissible drivers are
deterministic, independent of y, convex and positively homogeneous in z, and
vanish at z = 0, which makes the induced evaluation a coherent dynamic risk
measure.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError

Coefficient = Callable[[float, object, float], object]
Terminal = Callable[[object], object]


@dataclasses.dataclass(frozen=True)
class ControlValue:
    """One element of the compact control set."""

    value: float

    def __float__(self) -> float:
        return float(self.value)


@dataclasses.dataclass(frozen=True)
class ControlBox:
    """Interval control set discretized uniformly into `count` values."""

    lo: float
    hi: float
    count: int

    def materialize(self) -> tuple:
        if self.count < 1 or self.hi < self.lo:
            raise ValidationError("control box needs count >= 1 and hi >= lo")
        if self.count == 1:
            return (ControlValue(0.5 * (self.lo + self.hi)),)
        pts = np.linspace(self.lo, self.hi, self.count)
        return tuple(ControlValue(float(v)) for v in pts)


@dataclasses.dataclass(frozen=True)
class ProblemDefinition:
    """Controlled diffusion with running and terminal costs.

    Evaluators take (t, x, control) with x scalar or ndarray; terminal_cost
    takes x alone. Coefficients are frozen below t = 0: callers get the t = 0
    values for negative times, matching the convention used by the perturbed
    recursion.
    """

    drift: Coefficient
    diffusion: Coefficient
    running_cost: Coefficient
    terminal_cost: Terminal
    horizon: float
    control_set: object  # sequence of ControlValue (or floats) or ControlBox
    state_dim: int = 1
    noise_dim: int = 1
    lipschitz_K: float = 10.0
    bound_K: float = 100.0

    def __post_init__(self):
        if not (self.horizon > 0.0):
            raise ValidationError("horizon must be positive")
        if not self.controls():
            raise ValidationError("control set must be nonempty")

    def controls(self) -> tuple:
        if isinstance(self.control_set, ControlBox):
            return self.control_set.materialize()
        vals = tuple(
            c if isinstance(c, ControlValue) else ControlValue(float(c))
            for c in self.control_set
        )
        return vals

    # t-clamped evaluators; modules use these rather than the raw fields
    def drift_at(self, t, x, a):
        return self.drift(max(float(t), 0.0), x, a)

    def diffusion_at(self, t, x, a):
        return self.diffusion(max(float(t), 0.0), x, a)

    def cost_at(self, t, x, a):
        return self.running_cost(max(float(t), 0.0), x, a)


def eval_on_grid(fn: Coefficient, t: float, x: np.ndarray, a: float) -> np.ndarray:
    """Evaluate a coefficient on a node array, tolerating scalar-only callables."""
    x = np.asarray(x, dtype=np.float64)
    try:
        out = np.asarray(fn(t, x, a), dtype=np.float64)
    except (TypeError, ValueError):
        flat = np.array([fn(t, float(xi), a) for xi in x.ravel()], dtype=np.float64)
        return flat.reshape(x.shape)
    if out.shape != x.shape:
        out = np.broadcast_to(out, x.shape)
    return np.ascontiguousarray(out, dtype=np.float64)


def eval_terminal(fn: Terminal, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    try:
        out = np.asarray(fn(x), dtype=np.float64)
    except (TypeError, ValueError):
        flat = np.array([fn(float(xi)) for xi in x.ravel()], dtype=np.float64)
        return flat.reshape(x.shape)
    if out.shape != x.shape:
        out = np.broadcast_to(out, x.shape)
    return np.ascontiguousarray(out, dtype=np.float64)


@dataclasses.dataclass(frozen=True)
class DriverSpec:
    """Generator g(t, z) for the backward recursion.

    kind is one of zero, linear, scaled_abs, positive_part, custom. For the
    built-in kinds the Lipschitz constant and the subgradient bound at z = 0
    are derived from the parameter; custom drivers must declare both, and may
    declare the subgradient interval of g(t, .) at 0 (defaults to the ball of
    radius subgradient_bound_u).
    """

    kind: str
    gamma: float = 0.0
    kappa: float = 0.0
    evaluator: Optional[Callable[[float, object], object]] = None
    lipschitz_K: float = 0.0
    subgradient_bound_u: float = 0.0
    custom_interval: Optional[tuple] = None

    @staticmethod
    def zero() -> "DriverSpec":
        return DriverSpec(kind="zero")

    @staticmethod
    def linear(gamma: float) -> "DriverSpec":
        g = float(gamma)
        return DriverSpec(kind="linear", gamma=g, lipschitz_K=abs(g),
                          subgradient_bound_u=abs(g))

    @staticmethod
    def scaled_abs(kappa: float) -> "DriverSpec":
        k = float(kappa)
        if k <= 0.0:
            raise ValidationError("scaled_abs needs kappa > 0")
        return DriverSpec(kind="scaled_abs", kappa=k, lipschitz_K=k,
                          subgradient_bound_u=k)

    @staticmethod
    def positive_part(kappa: float) -> "DriverSpec":
        k = float(kappa)
        if k <= 0.0:
            raise ValidationError("positive_part needs kappa > 0")
        return DriverSpec(kind="positive_part", kappa=k, lipschitz_K=k,
                          subgradient_bound_u=k)

    @staticmethod
    def custom(evaluator, lipschitz_K: float, subgradient_bound_u: float,
               interval: Optional[tuple] = None) -> "DriverSpec":
        return DriverSpec(kind="custom", evaluator=evaluator,
                          lipschitz_K=float(lipschitz_K),
                          subgradient_bound_u=float(subgradient_bound_u),
                          custom_interval=interval)


def driver_eval(driver: DriverSpec, t: float, z):
    """g(max(t, 0), z); z may be scalar or ndarray."""
    t = max(float(t), 0.0)
    if driver.kind == "zero":
        return np.zeros_like(np.asarray(z, dtype=np.float64)) if np.ndim(z) else 0.0
    if driver.kind == "linear":
        return driver.gamma * np.asarray(z, dtype=np.float64) if np.ndim(z) \
            else driver.gamma * float(z)
    if driver.kind == "scaled_abs":
        return driver.kappa * np.abs(z) if np.ndim(z) else driver.kappa * abs(float(z))
    if driver.kind == "positive_part":
        if np.ndim(z):
            return driver.kappa * np.maximum(np.asarray(z, dtype=np.float64), 0.0)
        return driver.kappa * max(float(z), 0.0)
    if driver.kind == "custom":
        return driver.evaluator(t, z)
    raise ValidationError(f"unknown driver kind {driver.kind!r}")


def driver_subgradient_interval(driver: DriverSpec) -> tuple:
    """Endpoints (lo, hi) of the subdifferential of g(t, .) at z = 0 (d = 1)."""
    if driver.kind == "zero":
        return (0.0, 0.0)
    if driver.kind == "linear":
        return (driver.gamma, driver.gamma)
    if driver.kind == "scaled_abs":
        return (-driver.kappa, driver.kappa)
    if driver.kind == "positive_part":
        return (0.0, driver.kappa)
    if driver.kind == "custom":
        if driver.custom_interval is not None:
            lo, hi = driver.custom_interval
            return (float(lo), float(hi))
        u = driver.subgradient_bound_u
        return (-u, u)
    raise ValidationError(f"unknown driver kind {driver.kind!r}")


def driver_tilts(driver: DriverSpec, t: float) -> tuple:
    """Slopes (glo, ghi) with g(t, z) = max(glo*z, ghi*z).

    Every convex, positively homogeneous scalar g with g(t, 0) = 0 has this
    two-slope form with ghi = g(t, 1) and glo = -g(t, -1); the backward
    kernels consume the driver in it.
    """
    ghi = float(driver_eval(driver, t, 1.0))
    glo = -float(driver_eval(driver, t, -1.0))
    if glo > ghi + 1e-12:
        raise ValidationError(
            "driver is not convex at 0: -g(t,-1) > g(t,1)")
    return (glo, ghi)


@dataclasses.dataclass(frozen=True)
class AssumptionReport:
    """Sampled check of the standing boundedness/Lipschitz assumptions."""

    lipschitz_ratio: dict
    time_holder_ratio: dict
    magnitude: dict
    samples: int
    passed: bool
    failures: tuple


def validate_problem(problem: ProblemDefinition, samples: int = 10_000,
                     seed: int = 0, state_box: float = 10.0) -> AssumptionReport:
    """Sample Lipschitz ratios, Hoelder-1/2 time ratios, and magnitudes.

    Ratios use |mu(t,x1,a1) - mu(t,x2,a2)| / (|x1-x2| + |a1-a2|) on random
    pairs at a shared time, and |mu(t,x,a) - mu(s,x,a)| / sqrt(|t-s|) across
    times; the pass flag requires every ratio <= lipschitz_K and every sampled
    magnitude <= bound_K. Deterministic for a given seed.
    """
    if samples < 2:
        raise ValidationError("validate_problem needs samples >= 2")
    T = problem.horizon
    controls = problem.controls()
    rng = np.random.Generator(np.random.Philox(seed))

    t = rng.uniform(0.0, T, size=samples)
    x1 = rng.uniform(-state_box, state_box, size=samples)
    x2 = rng.uniform(-state_box, state_box, size=samples)
    s = rng.uniform(0.0, T, size=samples)
    ai = rng.integers(0, len(controls), size=samples)
    aj = rng.integers(0, len(controls), size=samples)

    coeffs = {
        "drift": problem.drift,
        "diffusion": problem.diffusion,
        "running_cost": problem.running_cost,
    }
    lip = {}
    tho = {}
    mag = {}
    for name, fn in coeffs.items():
        worst_lip = 0.0
        worst_tho = 0.0
        worst_mag = 0.0
        for k in range(samples):
            a1 = float(controls[ai[k]])
            a2 = float(controls[aj[k]])
            v11 = float(fn(t[k], x1[k], a1))
            v22 = float(fn(t[k], x2[k], a2))
            den = abs(x1[k] - x2[k]) + abs(a1 - a2)
            if den > 1e-12:
                worst_lip = max(worst_lip, abs(v11 - v22) / den)
            vs = float(fn(s[k], x1[k], a1))
            dts = abs(t[k] - s[k])
            if dts > 1e-12:
                worst_tho = max(worst_tho, abs(v11 - vs) / math.sqrt(dts))
            worst_mag = max(worst_mag, abs(v11), abs(v22))
        lip[name] = worst_lip
        tho[name] = worst_tho
        mag[name] = worst_mag

    worst_psi = 0.0
    for k in range(samples):
        worst_psi = max(worst_psi, abs(float(problem.terminal_cost(x1[k]))))
    mag["terminal_cost"] = worst_psi

    failures = []
    for name in coeffs:
        if lip[name] > problem.lipschitz_K:
            failures.append(f"{name}: Lipschitz ratio {lip[name]:.6g} exceeds "
                            f"{problem.lipschitz_K:.6g}")
        if tho[name] > problem.lipschitz_K:
            failures.append(f"{name}: time ratio {tho[name]:.6g} exceeds "
                            f"{problem.lipschitz_K:.6g}")
    for name, m in mag.items():
        if m > problem.bound_K:
            failures.append(f"{name}: magnitude {m:.6g} exceeds "
                            f"{problem.bound_K:.6g}")
    return AssumptionReport(lipschitz_ratio=lip, time_holder_ratio=tho,
                            magnitude=mag, samples=samples,
                            passed=not failures, failures=tuple(failures))


@dataclasses.dataclass(frozen=True)
class DriverAxiomReport:
    normalization_ok: bool
    convexity_ok: bool
    homogeneity_ok: bool
    samples: int
    failures: tuple

    @property
    def passed(self) -> bool:
        return self.normalization_ok and self.convexity_ok and self.homogeneity_ok


def driver_axiom_check(driver: DriverSpec, samples: int = 200,
                       seed: int = 0, horizon: float = 1.0) -> DriverAxiomReport:
    """Sampled convexity, positive homogeneity, and normalization, tol 1e-12."""
    if samples < 1:
        raise ValidationError("driver_axiom_check needs samples >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    tol = 1e-12
    failures = []
    norm_ok = True
    conv_ok = True
    hom_ok = True
    for _ in range(samples):
        t = float(rng.uniform(0.0, horizon))
        z1 = float(rng.uniform(-3.0, 3.0))
        z2 = float(rng.uniform(-3.0, 3.0))
        lam = float(rng.uniform(0.0, 1.0))
        beta = float(rng.uniform(0.0, 4.0))
        g0 = float(driver_eval(driver, t, 0.0))
        if abs(g0) > tol:
            norm_ok = False
            if len(failures) < 8:
                failures.append(f"normalization: g({t:.3g}, 0) = {g0:.3e}")
        g1 = float(driver_eval(driver, t, z1))
        g2 = float(driver_eval(driver, t, z2))
        gm = float(driver_eval(driver, t, lam * z1 + (1.0 - lam) * z2))
        if gm > lam * g1 + (1.0 - lam) * g2 + tol:
            conv_ok = False
            if len(failures) < 8:
                failures.append(
                    f"convexity: g(mix) - mix(g) = "
                    f"{gm - lam * g1 - (1.0 - lam) * g2:.3e} at z=({z1:.3g},{z2:.3g})")
        gb = float(driver_eval(driver, t, beta * z1))
        if abs(gb - beta * g1) > tol * max(1.0, abs(beta * g1)):
            hom_ok = False
            if len(failures) < 8:
                failures.append(
                    f"positive homogeneity: g({beta:.3g}z) - {beta:.3g}g(z) = "
                    f"{gb - beta * g1:.3e} at z={z1:.3g}")
    return DriverAxiomReport(normalization_ok=norm_ok, convexity_ok=conv_ok,
                             homogeneity_ok=hom_ok, samples=samples,
                             failures=tuple(failures))


# ---------------------------------------------------------------------------
# config ingestion

def _coefficient_from_config(doc: dict) -> Coefficient:
    fam = doc.get("family")
    if fam == "constant":
        v = float(doc["value"])

        def const(t, x, a):
            if np.ndim(x):
                return np.full(np.shape(x), v, dtype=np.float64)
            return v

        return const
    if fam == "affine":
        c0 = float(doc.get("const", 0.0))
        cx = float(doc.get("x", 0.0))
        ca = float(doc.get("control", 0.0))
        ct = float(doc.get("t", 0.0))
        return lambda t, x, a: c0 + cx * np.asarray(x, dtype=np.float64) \
            + ca * a + ct * t
    if fam == "quadratic":
        c0 = float(doc.get("const", 0.0))
        cx = float(doc.get("x", 0.0))
        cxx = float(doc.get("xx", 0.0))
        ca = float(doc.get("control", 0.0))
        caa = float(doc.get("control2", 0.0))

        def quad(t, x, a):
            xv = np.asarray(x, dtype=np.float64)
            return c0 + cx * xv + cxx * xv * xv + ca * a + caa * a * a

        return quad
    if fam == "tabulated":
        grid = np.asarray(doc["grid"], dtype=np.float64)
        vals = np.asarray(doc["values"], dtype=np.float64)
        if grid.shape != vals.shape or grid.ndim != 1 or grid.size < 2:
            raise ValidationError("tabulated coefficient needs matching 1-D "
                                  "grid/values with >= 2 entries")
        return lambda t, x, a: np.interp(np.asarray(x, dtype=np.float64),
                                         grid, vals)
    raise ValidationError(f"unknown coefficient family {fam!r}")


def _terminal_from_config(doc: dict) -> Terminal:
    fam = doc.get("family")
    if fam == "constant":
        v = float(doc["value"])

        def const(x):
            if np.ndim(x):
                return np.full(np.shape(x), v, dtype=np.float64)
            return v

        return const
    if fam == "linear":
        c0 = float(doc.get("const", 0.0))
        cx = float(doc.get("x", 1.0))
        return lambda x: c0 + cx * np.asarray(x, dtype=np.float64)
    if fam == "quadratic":
        c0 = float(doc.get("const", 0.0))
        cx = float(doc.get("x", 0.0))
        cxx = float(doc.get("xx", 1.0))

        def quad(x):
            xv = np.asarray(x, dtype=np.float64)
            return c0 + cx * xv + cxx * xv * xv

        return quad
    if fam == "abs":
        s = float(doc.get("scale", 1.0))
        sh = float(doc.get("shift", 0.0))
        return lambda x: s * np.abs(np.asarray(x, dtype=np.float64) - sh)
    if fam == "tabulated":
        grid = np.asarray(doc["grid"], dtype=np.float64)
        vals = np.asarray(doc["values"], dtype=np.float64)
        if grid.shape != vals.shape or grid.ndim != 1 or grid.size < 2:
            raise ValidationError("tabulated terminal needs matching 1-D "
                                  "grid/values with >= 2 entries")
        return lambda x: np.interp(np.asarray(x, dtype=np.float64), grid, vals)
    raise ValidationError(f"unknown terminal family {fam!r}")


def _control_set_from_config(doc: dict):
    if "values" in doc:
        vals = [float(v) for v in doc["values"]]
        if not vals:
            raise ValidationError("control set values must be nonempty")
        return tuple(ControlValue(v) for v in vals)
    if {"lo", "hi", "count"} <= set(doc):
        return ControlBox(float(doc["lo"]), float(doc["hi"]), int(doc["count"]))
    raise ValidationError("control_set needs either 'values' or lo/hi/count")


def problem_from_config(doc: dict) -> ProblemDefinition:
    """Build a ProblemDefinition from the 'problem' section of a config tree."""
    p = doc.get("problem")
    if not isinstance(p, dict):
        raise ValidationError("config is missing the 'problem' section")
    try:
        return ProblemDefinition(
            drift=_coefficient_from_config(p["drift"]),
            diffusion=_coefficient_from_config(p["diffusion"]),
            running_cost=_coefficient_from_config(p["running_cost"]),
            terminal_cost=_terminal_from_config(p["terminal_cost"]),
            horizon=float(p["horizon"]),
            control_set=_control_set_from_config(p["control_set"]),
            state_dim=int(p.get("state_dim", 1)),
            noise_dim=int(p.get("noise_dim", 1)),
            lipschitz_K=float(p.get("lipschitz_K", 10.0)),
            bound_K=float(p.get("bound_K", 100.0)),
        )
    except KeyError as exc:
        raise ValidationError(f"problem config is missing field {exc}") from exc


def driver_from_config(doc: dict) -> DriverSpec:
    d = doc.get("driver")
    if not isinstance(d, dict):
        raise ValidationError("config is missing the 'driver' section")
    kind = d.get("kind")
    if kind == "zero":
        return DriverSpec.zero()
    if kind == "linear":
        return DriverSpec.linear(float(d["gamma"]))
    if kind == "scaled_abs":
        return DriverSpec.scaled_abs(float(d["kappa"]))
    if kind == "positive_part":
        return DriverSpec.positive_part(float(d["kappa"]))
    if kind == "custom":
        raise ValidationError("custom drivers cannot be built from config")
    raise ValidationError(f"unknown driver kind {kind!r}")


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValidationError("config root must be a JSON object")
    return doc


def singleton_problem(drift, diffusion, running_cost, terminal_cost,
                      horizon, **kw) -> ProblemDefinition:
    """Uncontrolled problem: one dummy control value."""
    return ProblemDefinition(
        drift=drift, diffusion=diffusion, running_cost=running_cost,
        terminal_cost=terminal_cost, horizon=horizon,
        control_set=(ControlValue(0.0),), **kw)
