"""Path simulation and exponential-martingale ensembles.

Euler paths of the controlled diffusion, dyadic-bridge Brownian increments
that stay coupled across grid refinements, and the stochastic exponentials
whose expectations give the dual lower bounds on the risk evaluation.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError
from .model import ControlValue, ProblemDefinition, eval_on_grid


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bridge_increments(span: float, steps: int, paths: int, rng) -> np.ndarray:
    """Brownian increments over `steps` dyadic intervals via midpoint bridge.

    Normal draws are consumed in heap order (terminal value first, then
    midpoints level by level), so for a fixed (seed, paths) the bridge at
    2*steps refines this one: values at shared dyadic times are bit-identical.
    """
    levels = steps.bit_length() - 1
    w = np.zeros((steps + 1, paths))
    draws = rng.standard_normal((steps, paths))
    w[steps] = math.sqrt(span) * draws[0]
    node = 1
    for lev in range(1, levels + 1):
        seg = steps >> (lev - 1)
        half = seg >> 1
        starts = np.arange(0, steps, seg)
        mids = starts + half
        # conditional midpoint variance is a quarter of the segment length
        sd = math.sqrt(span * half / (steps * 2.0))
        w[mids] = 0.5 * (w[starts] + w[starts + seg]) + sd * draws[node:node + starts.size]
        node += starts.size
    return np.diff(w, axis=0)


def brownian_increments(span: float, steps: int, paths: int, seed: int,
                        d: int = 1, bridge: Optional[bool] = None) -> np.ndarray:
    """Increment array of shape (steps, paths, d), Var = span/steps each.

    bridge=None uses the dyadic bridge when steps is a power of two (and
    d == 1), plain sequential draws otherwise. Sequential draws are
    prefix-stable in steps for fixed (paths, d).
    """
    if steps < 1 or paths < 1:
        raise ValidationError("steps and paths must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    if bridge is None:
        bridge = _is_pow2(steps) and d == 1
    if bridge:
        if not _is_pow2(steps) or d != 1:
            raise ValidationError("bridge increments need power-of-two steps, d=1")
        return _bridge_increments(span, steps, paths, rng)[:, :, None]
    dt = span / steps
    out = rng.standard_normal((steps, paths, d))
    out *= math.sqrt(dt)
    return out


@dataclasses.dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths: grid, Brownian increments, and Euler states."""

    time_grid: np.ndarray          # (steps+1,)
    increments: np.ndarray         # (paths, steps, d)
    states: np.ndarray             # (paths, steps+1, n)
    seed: int

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.increments.shape[1]

    def initial_state_ok(self, x0) -> bool:
        x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        return bool(np.all(self.states[:, 0, :] == x0[None, :]))

    def increment_variance_ok(self, n_se: float = 5.0) -> bool:
        """Per-coordinate sample variance within n_se standard errors of dt."""
        dt = np.diff(self.time_grid)
        var = self.increments.var(axis=0, ddof=1)       # (steps, d)
        # Var of the sample variance of N(0,s2) is 2 s2^2/(paths-1)
        se = dt[:, None] * math.sqrt(2.0 / (self.paths - 1))
        return bool(np.all(np.abs(var - dt[:, None]) <= n_se * se))

    def to_csv(self, path: str) -> None:
        """Columns: path, step, t, x1..xn. Debug export."""
        p, k1, n = self.states.shape
        with open(path, "w", encoding="utf-8") as fh:
            cols = ",".join(f"x{i + 1}" for i in range(n))
            fh.write(f"path,step,t,{cols}\n")
            for ip in range(p):
                for k in range(k1):
                    xs = ",".join(repr(float(v)) for v in self.states[ip, k])
                    fh.write(f"{ip},{k},{self.time_grid[k]!r},{xs}\n")


def _policy_coverage_ok(policy, t0: float, horizon: float) -> bool:
    return (policy.t_start <= t0 + 1e-9) and (policy.t_end >= horizon - 1e-9)


def simulate_paths(problem: ProblemDefinition, control, t0: float, x0,
                   steps: int, paths: int, seed: int,
                   bridge: Optional[bool] = None) -> PathEnsemble:
    """Euler states X_{k+1} = X_k + b dt + sigma dW on [t0, horizon].

    control is a constant (ControlValue or float) or a policy object exposing
    t_start, t_end and control_at(t, x); policy values are looked up at the
    left endpoint of each step, which keeps them constant on the policy's own
    intervals.
    """
    T = problem.horizon
    if not (t0 < T):
        raise ValidationError("simulate_paths needs t0 < horizon")
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    n = problem.state_dim
    d = problem.noise_dim
    constant: Optional[float] = None
    if isinstance(control, ControlValue):
        constant = float(control)
    elif isinstance(control, (int, float)):
        constant = float(control)
    elif not _policy_coverage_ok(control, t0, T):
        raise ValidationError("policy time range does not cover [t0, horizon]")

    span = T - t0
    dt = span / steps
    inc = brownian_increments(span, steps, paths, seed, d=d, bridge=bridge)
    times = t0 + dt * np.arange(steps + 1)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    states = np.empty((paths, steps + 1, n))
    states[:, 0, :] = x0[None, :]
    x = np.repeat(x0[None, :], paths, axis=0)       # (paths, n)

    for k in range(steps):
        t = float(times[k])
        dw = inc[k]                                  # (paths, d)
        if constant is not None:
            a = constant
        else:
            a = control.control_at(t, x[:, 0])      # per-path control values
        if n == 1 and d == 1:
            xs = x[:, 0]
            if np.ndim(a) == 0:
                av = float(a)
                b = eval_on_grid(problem.drift, t, xs, av)
                s = eval_on_grid(problem.diffusion, t, xs, av)
            else:
                # per-path policy controls: evaluate grouped by control value
                b = np.empty_like(xs)
                s = np.empty_like(xs)
                for av in np.unique(a):
                    sel = a == av
                    b[sel] = eval_on_grid(problem.drift, t, xs[sel], float(av))
                    s[sel] = eval_on_grid(problem.diffusion, t, xs[sel], float(av))
            x = (xs + b * dt + s * dw[:, 0])[:, None]
        else:
            b = np.broadcast_to(np.asarray(problem.drift(t, x, a),
                                           dtype=np.float64), (paths, n))
            s = np.broadcast_to(np.asarray(problem.diffusion(t, x, a),
                                           dtype=np.float64), (paths, n, d))
            x = x + b * dt + np.einsum("pnd,pd->pn", s, dw)
        states[:, k + 1, :] = x
    return PathEnsemble(time_grid=times, increments=np.ascontiguousarray(
        np.transpose(inc, (1, 0, 2))), states=states, seed=seed)


# ---------------------------------------------------------------------------
# stochastic exponentials

@dataclasses.dataclass(frozen=True)
class GammaRule:
    """Deterministic selection s -> gamma(s) from a subgradient interval."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def values(self, times: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(times, dtype=np.float64)),
                         dtype=np.float64)
        if out.shape != np.shape(times):
            out = np.broadcast_to(out, np.shape(times)).copy()
        return out


def constant_rule(gamma: float, name: Optional[str] = None) -> GammaRule:
    g = float(gamma)
    return GammaRule(name or f"const({g:g})",
                     lambda s: np.full(np.shape(s), g))


def rules_in_interval(lo: float, hi: float, t: float, r: float) -> list:
    """Ten deterministic selections valued in [lo, hi] on [t, r]."""
    if hi < lo:
        raise ValidationError("interval needs hi >= lo")
    mid = 0.5 * (lo + hi)
    span = r - t

    def ramp(s):
        return lo + (hi - lo) * np.clip((s - t) / span, 0.0, 1.0)

    def sinusoid(s):
        return mid + (hi - mid) * np.sin(2.0 * math.pi * (s - t) / span)

    def step(s):
        return np.where(s < t + 0.5 * span, hi, lo)

    def alternating(s):
        k = np.floor((s - t) / span * 16.0).astype(np.int64)
        return np.where(k % 2 == 0, hi, lo)

    return [
        constant_rule(hi, "hi"),
        constant_rule(lo, "lo"),
        constant_rule(mid, "mid"),
        constant_rule(mid + 0.5 * (hi - mid), "hi_half"),
        constant_rule(mid + 0.5 * (lo - mid), "lo_half"),
        GammaRule("alternating", alternating),
        GammaRule("sinusoid", sinusoid),
        GammaRule("step", step),
        GammaRule("ramp", ramp),
        constant_rule(mid + 0.9 * (hi - mid), "hi_09"),
    ]


@dataclasses.dataclass(frozen=True)
class GammaEnsemble:
    """Terminal stochastic exponentials for one selection rule."""

    terminal: np.ndarray           # (paths,)
    rule_name: str
    t: float
    r: float
    seed: int

    def positive_ok(self) -> bool:
        return bool(np.all(self.terminal > 0.0))

    def martingale_ok(self, n_se: float = 5.0) -> bool:
        m = float(self.terminal.mean())
        se = float(self.terminal.std(ddof=1)) / math.sqrt(self.terminal.size)
        return abs(m - 1.0) <= n_se * max(se, 1e-300)


def doleans_exponential(gamma_rule: GammaRule, t: float, r: float,
                        paths: int, steps: int, seed: int,
                        increments: Optional[np.ndarray] = None) -> GammaEnsemble:
    """Terminal exp(sum gamma dW - 0.5 sum gamma^2 dt) over [t, r].

    The per-step update is the exact exponential, accumulated in the
    exponent, so positivity is automatic. Pass `increments` of shape
    (steps, paths) to reuse draws shared with a path simulation.
    """
    if not (t < r):
        raise ValidationError("doleans_exponential needs t < r")
    dt = (r - t) / steps
    if increments is None:
        inc = brownian_increments(r - t, steps, paths, seed, d=1,
                                  bridge=False)[:, :, 0]
    else:
        inc = np.asarray(increments, dtype=np.float64)
        if inc.shape != (steps, paths):
            raise ValidationError("increments must have shape (steps, paths)")
    times = t + dt * np.arange(steps)
    gam = gamma_rule.values(times)                   # (steps,)
    expo = np.zeros(paths)
    for k in range(steps):
        g = gam[k]
        expo += g * inc[k] - 0.5 * g * g * dt
    return GammaEnsemble(terminal=np.exp(expo), rule_name=gamma_rule.name,
                         t=t, r=r, seed=seed)


@dataclasses.dataclass(frozen=True)
class BoundCheck:
    passed: bool
    statistic: float
    bound: float
    stderr: float
    margin: float


def gamma_bound_check(ens: GammaEnsemble, u: float, t: float, r: float,
                      n_se: float = 5.0) -> BoundCheck:
    """Sample E(Gamma - 1)^2 against e^{u^2 (r-t)} - 1 plus n_se stderr."""
    if ens.terminal.size == 0:
        raise ValidationError("empty ensemble")
    sq = (ens.terminal - 1.0) ** 2
    stat = float(sq.mean())
    se = float(sq.std(ddof=1)) / math.sqrt(sq.size)
    bound = math.exp(u * u * (r - t)) - 1.0
    allowed = bound + n_se * se
    return BoundCheck(passed=stat <= allowed, statistic=stat, bound=bound,
                      stderr=se, margin=allowed - stat)
