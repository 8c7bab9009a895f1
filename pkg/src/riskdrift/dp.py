"""Backward dynamic programming over piecewise-constant controls.

Controls are frozen on intervals of length h^2 (the final interval is
whatever remains up to the horizon). One uniform space grid is shared by the
coarse value function and the inner risk evaluations: a single inner sweep
per control per coarse step yields the conditional evaluation started from
every node at once, and continuation values need no interpolation because
the sweep's terminal layer lives on the same nodes.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from . import _backend as backend
from .errors import (
    ContractionError,
    NegativeProbabilityError,
    ValidationError,
)
from .model import DriverSpec, ProblemDefinition, driver_tilts, eval_on_grid, eval_terminal
from .risk import sample_sigma_max


@dataclasses.dataclass(frozen=True)
class ValueField:
    """Values on a time x space grid, tagged by the producing scheme."""

    times: np.ndarray
    space: np.ndarray
    values: np.ndarray            # (len(times), len(space))
    producer: str                 # Vh | V_hjb | V_tilde | V_hat
    meta: dict = dataclasses.field(default_factory=dict)

    def value_at(self, t: float, x: float) -> float:
        """Nearest-node lookup (exact on the grid)."""
        i = int(np.argmin(np.abs(self.times - t)))
        j = int(np.argmin(np.abs(self.space - x)))
        return float(self.values[i, j])


@dataclasses.dataclass(frozen=True)
class PiecewiseConstantPolicy:
    """Control per (interval, node); intervals of length h^2 tiling [t0, T]."""

    h: float
    t_start: float
    t_end: float
    interval_starts: np.ndarray   # (n_intervals,)
    space: np.ndarray
    dx: float
    control_index: np.ndarray     # (n_intervals, nodes) int32
    control_values: tuple

    @property
    def interval(self) -> float:
        return self.h * self.h

    def interval_of(self, t: float) -> int:
        i = int(math.floor((t - self.t_start) / self.interval + 1e-12))
        return min(max(i, 0), len(self.interval_starts) - 1)

    def control_at(self, t: float, x):
        """Control values at (t, x); x may be an array."""
        i = self.interval_of(float(t))
        j = np.rint((np.asarray(x, dtype=np.float64) - self.space[0]) / self.dx)
        j = np.clip(j, 0, self.space.size - 1).astype(np.intp)
        vals = np.asarray(self.control_values, dtype=np.float64)
        out = vals[self.control_index[i, j]]
        return out if np.ndim(x) else float(out)


def _tile_interval(length: float, inner_dt: float):
    """(n_steps, dt) covering `length` with dt <= inner_dt, exact tiling."""
    n = max(1, int(math.ceil(length / inner_dt - 1e-9)))
    return n, length / n


def interval_sweep(problem: ProblemDefinition, driver: DriverSpec,
                   space: np.ndarray, dx: float, t_start: float, dt: float,
                   n_steps: int, terminal: np.ndarray, a_value: float,
                   running=None) -> np.ndarray:
    """Backward risk recursion of `terminal` across one control interval.

    Times may be negative: coefficients and the driver are frozen at their
    t = 0 values there. The running cost is the problem's unless overridden.
    """
    if driver.lipschitz_K * dt >= 1.0:
        raise ContractionError(
            f"driver Lipschitz constant {driver.lipschitz_K:g} times dt "
            f"{dt:g} reaches 1; refine the inner step")
    y = np.ascontiguousarray(terminal, dtype=np.float64)
    cost_fn = running if running is not None else problem.running_cost
    for k in range(n_steps - 1, -1, -1):
        t = t_start + k * dt
        tc = max(t, 0.0)
        b = eval_on_grid(problem.drift, tc, space, a_value)
        s = eval_on_grid(problem.diffusion, tc, space, a_value)
        c = eval_on_grid(cost_fn, tc, space, a_value)
        glo, ghi = driver_tilts(driver, tc)
        y = backend.lattice_layer(y, b, s, c, glo, ghi, dt, dx)
    return y


def _dp_grid(problem: ProblemDefinition, x0: float, inner_dt: float,
             radius: float, lam: float):
    sig_max = sample_sigma_max(problem, 0.0, problem.horizon,
                               x0 - radius - 1.0, x0 + radius + 1.0)
    base = sig_max if sig_max > 0.0 else 1.0
    dx = lam * base * math.sqrt(inner_dt)
    m = max(1, int(math.ceil(radius / dx - 1e-12)))
    space = x0 + dx * np.arange(-m, m + 1)
    return space, dx, m


def _validate_stencil(problem: ProblemDefinition, space: np.ndarray, dx: float,
                      inner_dt: float) -> None:
    ts = np.linspace(0.0, problem.horizon, 9)
    for a in problem.controls():
        for t in ts:
            b = eval_on_grid(problem.drift_at, float(t), space, float(a))
            s = eval_on_grid(problem.diffusion_at, float(t), space, float(a))
            q = s * s * inner_dt / (dx * dx)
            r = b * inner_dt / dx
            worst = min(float((0.5 * (q - np.abs(r))).min()),
                        float((1.0 - q).min()))
            if worst < -1e-12:
                raise NegativeProbabilityError(
                    f"negative transition probability {worst:.3e} at t={t:g}, "
                    f"control {float(a):g}; shrink inner_dt or raise lam")


def _coarse_times(t0: float, T: float, h: float):
    h2 = h * h
    n = max(1, int(math.ceil((T - t0) / h2 - 1e-9)))
    times = t0 + h2 * np.arange(n + 1)
    times[n] = T                      # last interval ends exactly at T
    if n > 1 and times[n] <= times[n - 1]:
        times = np.concatenate((times[:n - 1], [T]))
        n -= 1
    return times, n


def _dp_step(problem, driver, space, dx, inner_dt, t_i, t_ip1, v_next,
             controls, running=None):
    """One coarse step: per-control inner sweeps, nodewise min and argmin."""
    n_steps, dt = _tile_interval(t_ip1 - t_i, inner_dt)
    cand = np.empty((len(controls), space.size))
    for u, a in enumerate(controls):
        cand[u] = interval_sweep(problem, driver, space, dx, t_i, dt,
                                 n_steps, v_next, float(a), running=running)
    idx = np.argmin(cand, axis=0).astype(np.int32)
    vals = cand[idx, np.arange(space.size)]
    return vals, idx


def dp_solve(problem: ProblemDefinition, driver: DriverSpec, h: float,
             inner_dt: float, radius: float, x0: float = 0.0,
             lam: float = 1.0):
    """Value of the best piecewise-constant control, plus that policy.

    Backward over intervals of length h^2: for every control, the inner
    lattice carries running cost plus continuation value across the interval;
    the nodewise minimum is the value, the first minimizer the policy.
    Returns (ValueField, PiecewiseConstantPolicy).
    """
    T = problem.horizon
    if not (0.0 < h <= 1.0):
        raise ValidationError("h must lie in (0, 1]")
    if h * h > T + 1e-15:
        raise ValidationError("h^2 must not exceed the horizon")
    if inner_dt > h * h + 1e-15:
        raise ValidationError("inner_dt must be <= h^2")
    n_reg = h * h / inner_dt
    if abs(n_reg - round(n_reg)) > 1e-9 * max(1.0, n_reg):
        raise ValidationError("inner_dt must divide h^2")

    space, dx, center = _dp_grid(problem, x0, inner_dt, radius, lam)
    _validate_stencil(problem, space, dx, inner_dt)
    times, n_coarse = _coarse_times(0.0, T, h)
    controls = problem.controls()

    values = np.empty((n_coarse + 1, space.size))
    values[n_coarse] = eval_terminal(problem.terminal_cost, space)
    policy_idx = np.empty((n_coarse, space.size), dtype=np.int32)
    for i in range(n_coarse - 1, -1, -1):
        vals, idx = _dp_step(problem, driver, space, dx, inner_dt,
                             float(times[i]), float(times[i + 1]),
                             values[i + 1], controls)
        values[i] = vals
        policy_idx[i] = idx

    meta = {"h": h, "inner_dt": inner_dt, "radius": radius, "lam": lam,
            "x0": x0, "center": center, "dx": dx,
            "problem": problem, "driver": driver}
    field = ValueField(times=times, space=space, values=values,
                       producer="Vh", meta=meta)
    policy = PiecewiseConstantPolicy(
        h=h, t_start=0.0, t_end=T, interval_starts=times[:-1].copy(),
        space=space, dx=dx, control_index=policy_idx,
        control_values=tuple(float(a) for a in controls))
    return field, policy


def dp_compose_check(field: ValueField, i: int) -> float:
    """Max abs deviation when layer i is recomputed from layer i+1.

    The recomputation retraces the solver's own step, so the result is
    exactly zero on an unmodified field.
    """
    n_coarse = len(field.times) - 1
    if not (0 <= i < n_coarse):
        raise ValidationError("layer index out of range")
    problem = field.meta["problem"]
    driver = field.meta["driver"]
    vals, _ = _dp_step(problem, driver, field.space, field.meta["dx"],
                       field.meta["inner_dt"], float(field.times[i]),
                       float(field.times[i + 1]), field.values[i + 1],
                       problem.controls())
    return float(np.max(np.abs(vals - field.values[i])))


def evaluate_policy(problem: ProblemDefinition, driver: DriverSpec,
                    policy: PiecewiseConstantPolicy, t0: float, x0: float,
                    inner_dt: float) -> float:
    """Risk value of a fixed piecewise-constant policy at (t0, x0).

    Each interval evaluates one inner sweep per control present in the
    policy's row, then selects per node the sweep of the node's own control,
    which is the frozen-control semantics: the control chosen at the interval
    start rides along the whole interval. For the argmin policy of dp_solve
    this reproduces the solved value bit for bit.
    """
    T = problem.horizon
    if not (policy.t_start <= t0 + 1e-9 and policy.t_end >= T - 1e-9):
        raise ValidationError("policy does not cover [t0, horizon]")
    space = policy.space
    dx = policy.dx
    starts = policy.interval_starts
    first = int(np.searchsorted(starts, t0 + 1e-12, side="right") - 1)
    first = max(first, 0)
    vals = np.asarray(policy.control_values, dtype=np.float64)

    y = eval_terminal(problem.terminal_cost, space)
    bounds = np.concatenate((starts, [T]))
    for i in range(len(starts) - 1, first - 1, -1):
        lo = max(float(bounds[i]), t0)
        hi = float(bounds[i + 1])
        if hi <= lo + 1e-15:
            continue
        n_steps, dt = _tile_interval(hi - lo, inner_dt)
        row = policy.control_index[i]
        out = np.empty_like(y)
        for u in np.unique(row):
            sweep = interval_sweep(problem, driver, space, dx, lo, dt,
                                   n_steps, y, float(vals[u]))
            sel = row == u
            out[sel] = sweep[sel]
        y = out
    j = int(np.argmin(np.abs(space - x0)))
    return float(y[j])
