"""Risk evaluation by trinomial backward recursion and regression Monte Carlo.

The lattice walks a uniform space grid backward in time, matching the first
two moments of the diffusion per step; the driver enters through an explicit
per-layer term dt * g(t, Z) with Z the centered discrete martingale
integrand. The same object is estimated by least-squares Monte Carlo as a
cross-check, and the axiom suite exercises the coherence properties of the
evaluation on randomized instances.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

from . import _backend as backend
from .errors import (
    ContractionError,
    NegativeProbabilityError,
    SingularRegressionError,
    ValidationError,
)
from .forward import GammaRule, doleans_exponential, simulate_paths
from .model import (
    ControlValue,
    DriverSpec,
    ProblemDefinition,
    driver_eval,
    driver_subgradient_interval,
    driver_tilts,
    eval_on_grid,
    eval_terminal,
)


def sample_sigma_max(problem: ProblemDefinition, t0: float, t1: float,
                     x_lo: float, x_hi: float, n: int = 129) -> float:
    """Max |sigma| over a sampling grid of (t, x, control)."""
    ts = np.linspace(max(t0, 0.0), t1, 9)
    xs = np.linspace(x_lo, x_hi, n)
    worst = 0.0
    for a in problem.controls():
        for t in ts:
            vals = eval_on_grid(problem.diffusion, float(t), xs, float(a))
            worst = max(worst, float(np.max(np.abs(vals))))
    return worst


@dataclasses.dataclass(frozen=True)
class Lattice:
    """Uniform time/space grid with a trinomial transition stencil.

    space is centered on x0 with spacing dx = lam * sigma_max * sqrt(dt) and
    extends to at least the requested radius; the boundary stencil reflects.
    """

    problem: ProblemDefinition
    t0: float
    x0: float
    dt: float
    dx: float
    times: np.ndarray
    space: np.ndarray
    center: int
    lam: float
    radius: float

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def probabilities_at(self, t: float, a: float):
        """(p_down, p_stay, p_up) arrays over the space grid."""
        b = eval_on_grid(self.problem.drift_at, t, self.space, a)
        sig = eval_on_grid(self.problem.diffusion_at, t, self.space, a)
        q = sig * sig * self.dt / (self.dx * self.dx)
        r = b * self.dt / self.dx
        return 0.5 * (q - r), 1.0 - q, 0.5 * (q + r)


def build_lattice(problem: ProblemDefinition, t0: float, x0: float,
                  dt: float, radius: Optional[float] = None,
                  lam: float = 1.0) -> Lattice:
    """Trinomial lattice on [t0, horizon] x [x0 - R, x0 + R].

    dt is snapped to the nearest exact divisor of the span. Transition
    probabilities are validated on a subsample of layers for every control;
    any negative probability is rejected.
    """
    if problem.state_dim != 1 or problem.noise_dim != 1:
        raise ValidationError("the lattice engine is 1-D in state and noise")
    T = problem.horizon
    span = T - t0
    if not (0.0 < dt <= span + 1e-15):
        raise ValidationError("need 0 < dt <= horizon - t0")
    if lam < 1.0:
        raise ValidationError("lam must be >= 1 to keep p_stay nonnegative")
    n = max(1, int(round(span / dt)))
    dt_eff = span / n

    probe_r = radius if radius is not None else 10.0
    sig_max = sample_sigma_max(problem, t0, T, x0 - probe_r, x0 + probe_r)
    if sig_max <= 0.0:
        # deterministic dynamics still need a (degenerate) grid step
        dx = lam * math.sqrt(dt_eff)
    else:
        dx = lam * sig_max * math.sqrt(dt_eff)
    if radius is None:
        radius = max(6.0 * sig_max * math.sqrt(span), dx)
    m = max(1, int(math.ceil(radius / dx - 1e-12)))
    space = x0 + dx * np.arange(-m, m + 1)
    times = t0 + dt_eff * np.arange(n + 1)
    lat = Lattice(problem=problem, t0=t0, x0=x0, dt=dt_eff, dx=dx,
                  times=times, space=space, center=m, lam=lam, radius=radius)

    check_ks = sorted({0, n - 1, n // 2, *np.linspace(0, n - 1, 64).astype(int)})
    for a in problem.controls():
        for k in check_ks:
            pd, ps, pu = lat.probabilities_at(float(times[k]), float(a))
            bad = min(float(pd.min()), float(ps.min()), float(pu.min()))
            if bad < -1e-12:
                raise NegativeProbabilityError(
                    f"negative transition probability {bad:.3e} at layer {k}, "
                    f"control {float(a):g}; shrink dt or increase lam")
    return lat


@dataclasses.dataclass(frozen=True)
class CostFunctional:
    """Running + terminal cost bound to a problem and a control description.

    Either evaluator can be overridden; the terminal may also be supplied to
    the recursion directly as nodal values.
    """

    problem: ProblemDefinition
    control: Optional[object] = None
    running: Optional[Callable] = None
    terminal: Optional[Callable] = None

    def running_at(self, t: float, x: np.ndarray, a: float) -> np.ndarray:
        fn = self.running if self.running is not None else self.problem.running_cost
        return eval_on_grid(lambda tt, xx, aa: fn(max(tt, 0.0), xx, aa), t, x, a)

    def terminal_values(self, space: np.ndarray) -> np.ndarray:
        fn = self.terminal if self.terminal is not None else self.problem.terminal_cost
        return eval_terminal(fn, space)

    def on_paths(self, ens, control) -> np.ndarray:
        """Per-path accumulated cost: left-rectangle integral plus terminal."""
        times = ens.time_grid
        states = ens.states[:, :, 0]
        out = np.zeros(states.shape[0])
        for k in range(len(times) - 1):
            dt = float(times[k + 1] - times[k])
            a = control.control_at(times[k], states[:, k]) \
                if hasattr(control, "control_at") else float(control)
            if np.ndim(a) == 0:
                c = eval_on_grid(self.running if self.running is not None
                                 else self.problem.running_cost,
                                 float(times[k]), states[:, k], float(a))
            else:
                fn = self.running if self.running is not None \
                    else self.problem.running_cost
                c = np.empty(states.shape[0])
                for av in np.unique(a):
                    sel = a == av
                    c[sel] = eval_on_grid(fn, float(times[k]),
                                          states[sel, k], float(av))
            out += c * dt
        out += self.terminal_values(states[:, -1])
        return out


@dataclasses.dataclass(frozen=True)
class RiskValue:
    value: float
    z_profile: np.ndarray
    meta: dict = dataclasses.field(default_factory=dict)


def _layer_coefficients(lat: Lattice, cost: CostFunctional, t: float, control):
    """(b, sigma, c) arrays on the space grid for one layer."""
    p = lat.problem
    if hasattr(control, "control_at"):
        a = np.asarray(control.control_at(t, lat.space))
        if np.ndim(a) == 0:
            a = np.full(lat.space.shape, float(a))
        b = np.empty_like(lat.space)
        s = np.empty_like(lat.space)
        c = np.empty_like(lat.space)
        for av in np.unique(a):
            sel = a == av
            b[sel] = eval_on_grid(p.drift_at, t, lat.space[sel], float(av))
            s[sel] = eval_on_grid(p.diffusion_at, t, lat.space[sel], float(av))
            c[sel] = cost.running_at(t, lat.space[sel], float(av))
        return b, s, c
    a = float(control)
    b = eval_on_grid(p.drift_at, t, lat.space, a)
    s = eval_on_grid(p.diffusion_at, t, lat.space, a)
    c = cost.running_at(t, lat.space, a)
    return b, s, c


def lattice_backward(lat: Lattice, driver: DriverSpec, cost: CostFunctional,
                     control, start_k: Optional[int] = None, stop_k: int = 0,
                     terminal_values: Optional[np.ndarray] = None,
                     z_out: Optional[list] = None) -> np.ndarray:
    """Nodal backward recursion from layer start_k down to stop_k.

    Returns the nodal values at layer stop_k. Splitting a run at any
    intermediate layer and restarting from the returned values reproduces the
    single pass bit for bit, because the per-layer call sequence is identical.
    """
    n = lat.n_steps
    if start_k is None:
        start_k = n
    if not (0 <= stop_k < start_k <= n):
        raise ValidationError("need 0 <= stop_k < start_k <= n_steps")
    if driver.lipschitz_K * lat.dt >= 1.0:
        raise ContractionError(
            f"driver Lipschitz constant {driver.lipschitz_K:g} times dt "
            f"{lat.dt:g} reaches 1; refine dt")
    if terminal_values is None:
        y = cost.terminal_values(lat.space)
    else:
        y = np.asarray(terminal_values, dtype=np.float64)
        if y.shape != lat.space.shape:
            raise ValidationError("terminal_values shape mismatch")
    y = np.ascontiguousarray(y, dtype=np.float64)
    for k in range(start_k - 1, stop_k - 1, -1):
        t = float(lat.times[k])
        b, s, c = _layer_coefficients(lat, cost, t, control)
        glo, ghi = driver_tilts(driver, t)
        if z_out is not None:
            z = backend.lattice_zprofile(y, b, s, lat.dt, lat.dx)
            z_out.append(float(z[lat.center]))
        y = backend.lattice_layer(y, b, s, c, glo, ghi, lat.dt, lat.dx)
    return y


def g_evaluate_lattice(lat: Lattice, driver: DriverSpec, cost: CostFunctional,
                       control=None, want_z: bool = True) -> RiskValue:
    """Risk evaluation at (t0, x0): the backward value at the center node."""
    if control is None:
        control = cost.control
    if control is None:
        control = ControlValue(0.0)
    z_acc: Optional[list] = [] if want_z else None
    y = lattice_backward(lat, driver, cost, control, z_out=z_acc)
    z_prof = np.array(list(reversed(z_acc)), dtype=np.float64) if want_z \
        else np.empty(0)
    return RiskValue(value=float(y[lat.center]), z_profile=z_prof,
                     meta={"dt": lat.dt, "dx": lat.dx, "method": "lattice",
                           "nodes": int(lat.space.size)})


def _poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """Standardized monomial design matrix; constant-only if x is degenerate."""
    sd = float(x.std())
    if sd < 1e-12:
        return np.ones((x.size, 1))
    xs = (x - float(x.mean())) / sd
    cols = [np.ones_like(xs)]
    p = xs.copy()
    for _ in range(degree):
        cols.append(p.copy())
        p *= xs
    return np.stack(cols, axis=1)


def _regress(feat: np.ndarray, target: np.ndarray, step: int) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(feat, target, rcond=None)
    if rank < feat.shape[1]:
        raise SingularRegressionError(step)
    return feat @ coef


def g_evaluate_mc(problem: ProblemDefinition, driver: DriverSpec,
                  cost: CostFunctional, control, paths: int, steps: int,
                  basis_degree: int = 3, seed: int = 0, t0: float = 0.0,
                  x0: float = 0.0) -> RiskValue:
    """Least-squares Monte Carlo estimate of the same backward value.

    Conditional expectations of Y and of Y * dW / dt are fitted per step on
    polynomial features of the state; degenerate steps (constant state across
    paths) collapse to the sample mean rather than failing.
    """
    if basis_degree < 1:
        raise ValidationError("basis_degree must be >= 1")
    ens = simulate_paths(problem, control, t0, x0, steps, paths, seed)
    times = ens.time_grid
    dt = float(times[1] - times[0])
    xs = ens.states[:, :, 0]
    dws = ens.increments[:, :, 0]
    y = cost.terminal_values(xs[:, -1])
    z_prof = np.empty(steps)
    pre_std = 0.0
    for k in range(steps - 1, -1, -1):
        if k == 0 and paths > 1:
            # the k=0 design is constant, so spread must be read off now
            pre_std = float(y.std(ddof=1))
        t = float(times[k])
        a = control.control_at(t, xs[:, k]) \
            if hasattr(control, "control_at") else float(control)
        feat = _poly_features(xs[:, k], basis_degree)
        ey = _regress(feat, y, k)
        z = _regress(feat, y * dws[:, k] / dt, k)
        if np.ndim(a) == 0:
            c = eval_on_grid(problem.cost_at if cost.running is None
                             else cost.running, t, xs[:, k], float(a))
        else:
            c = np.empty(paths)
            fn = problem.cost_at if cost.running is None else cost.running
            for av in np.unique(a):
                sel = a == av
                c[sel] = eval_on_grid(fn, t, xs[sel, k], float(av))
        g = driver_eval(driver, t, z)
        y = ey + dt * (c + g)
        z_prof[k] = float(z.mean())
    value = float(y.mean())
    stderr = pre_std / math.sqrt(paths)
    return RiskValue(value=value, z_profile=z_prof,
                     meta={"method": "mc", "paths": paths, "steps": steps,
                           "stderr": stderr, "seed": seed})


# ---------------------------------------------------------------------------
# axiom suite

@dataclasses.dataclass(frozen=True)
class AxiomSuiteReport:
    instances: int
    checks: int
    worst: dict
    failures: tuple

    @property
    def passed(self) -> bool:
        return not self.failures


def _random_payoff(rng, space: np.ndarray) -> np.ndarray:
    a0, a1, a2, a3 = rng.uniform(-1.0, 1.0, size=4)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    kink = rng.uniform(space[0], space[-1])
    return (a0 + a1 * space + a2 * np.sin(3.0 * space + phase)
            + a3 * np.abs(space - kink))


def risk_axiom_suite(driver: DriverSpec, instances: int = 100,
                     seed: int = 0, tol: float = 1e-9) -> AxiomSuiteReport:
    """Coherence axioms of the lattice evaluation on randomized instances.

    Per instance: a fresh constant-sigma problem and lattice, random nodal
    payoffs, and one check of each property. Time consistency is required to
    hold bitwise; the other properties use the given tolerance.
    """
    if instances < 1:
        raise ValidationError("instances must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    worst = {k: 0.0 for k in (
        "normalization", "translation", "positive_homogeneity", "convexity",
        "monotonicity", "time_consistency", "driver_comparison")}
    failures = []
    checks = 0

    def note(prop, amount, idx):
        nonlocal checks
        checks += 1
        worst[prop] = max(worst[prop], amount)
        limit = 0.0 if prop == "time_consistency" else tol
        if amount > limit:
            failures.append(f"{prop}: violation {amount:.3e} on instance {idx}")

    for idx in range(instances):
        sig0 = float(rng.uniform(0.5, 1.5))
        b0 = float(rng.uniform(-0.5, 0.5))
        b1 = float(rng.uniform(-0.3, 0.3))
        problem = ProblemDefinition(
            drift=lambda t, x, a, b0=b0, b1=b1: b0 + b1 * np.tanh(x),
            diffusion=lambda t, x, a, s=sig0: np.full(np.shape(x), s)
            if np.ndim(x) else s,
            running_cost=lambda t, x, a: 0.0,
            terminal_cost=lambda x: 0.0,
            horizon=0.5, control_set=(ControlValue(0.0),),
            lipschitz_K=5.0, bound_K=50.0)
        lat = build_lattice(problem, 0.0, 0.0, dt=0.01,
                            radius=4.0 * sig0 * math.sqrt(0.5))
        cost = CostFunctional(problem)
        ctrl = ControlValue(0.0)

        def rho(payoff, drv=driver):
            y = lattice_backward(lat, drv, cost, ctrl,
                                 terminal_values=payoff)
            return float(y[lat.center])

        xi1 = _random_payoff(rng, lat.space)
        xi2 = _random_payoff(rng, lat.space)
        r1 = rho(xi1)
        r2 = rho(xi2)

        note("normalization", abs(rho(np.zeros_like(lat.space))), idx)

        shift = float(rng.uniform(-5.0, 5.0))
        note("translation", abs(rho(xi1 + shift) - (r1 + shift)), idx)

        beta = float(rng.uniform(0.0, 3.0))
        note("positive_homogeneity", abs(rho(beta * xi1) - beta * r1), idx)

        lam = float(rng.uniform(0.0, 1.0))
        mix = rho(lam * xi1 + (1.0 - lam) * xi2)
        note("convexity", max(0.0, mix - (lam * r1 + (1.0 - lam) * r2)), idx)

        drop = np.abs(_random_payoff(rng, lat.space))
        note("monotonicity", max(0.0, rho(xi1 - drop) - r1), idx)

        mid = lat.n_steps // 2
        y_mid = lattice_backward(lat, driver, cost, ctrl, start_k=lat.n_steps,
                                 stop_k=mid, terminal_values=xi1)
        y_split = lattice_backward(lat, driver, cost, ctrl, start_k=mid,
                                   stop_k=0, terminal_values=y_mid)
        note("time_consistency",
             abs(float(y_split[lat.center]) - r1), idx)

        lo, hi = driver_subgradient_interval(driver)
        gamma0 = float(rng.uniform(lo, hi))
        dominated = DriverSpec.linear(gamma0)
        note("driver_comparison", max(0.0, rho(xi1, dominated) - r1), idx)

    return AxiomSuiteReport(instances=instances, checks=checks,
                            worst=worst, failures=tuple(failures))


# ---------------------------------------------------------------------------
# dual representation lower bounds

@dataclasses.dataclass(frozen=True)
class DualBoundResult:
    rule_name: str
    estimate: float
    rho: float
    stderr: float
    slack: float
    passed: bool


@dataclasses.dataclass(frozen=True)
class DualBoundReport:
    results: tuple
    rho: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def dual_lower_bound_check(driver: DriverSpec, cost: CostFunctional,
                           gamma_rules: list, paths: int, seed: int,
                           t0: float = 0.0, x0: float = 0.0,
                           dt: float = 1e-3, steps: int = 64,
                           radius: Optional[float] = None) -> DualBoundReport:
    """E[Gamma xi] <= rho[xi] + 5 stderr + 5 dt for each selection rule.

    The exponential reuses the Brownian increments of the payoff paths, so
    the product estimate has the dependence the dual representation needs.
    """
    problem = cost.problem
    control = cost.control if cost.control is not None else ControlValue(0.0)
    lat = build_lattice(problem, t0, x0, dt, radius)
    rho = g_evaluate_lattice(lat, driver, cost, control, want_z=False).value

    ens = simulate_paths(problem, control, t0, x0, steps, paths, seed)
    xi = cost.on_paths(ens, control)
    inc = np.ascontiguousarray(ens.increments[:, :, 0].T)
    T = problem.horizon
    results = []
    for rule in gamma_rules:
        gam = doleans_exponential(rule, t0, T, paths, steps, seed,
                                  increments=inc)
        prod = gam.terminal * xi
        est = float(prod.mean())
        se = float(prod.std(ddof=1)) / math.sqrt(paths)
        allowance = rho + 5.0 * se + 5.0 * dt
        results.append(DualBoundResult(
            rule_name=rule.name, estimate=est, rho=rho, stderr=se,
            slack=rho - est, passed=est <= allowance))
    return DualBoundReport(results=tuple(results), rho=rho)
