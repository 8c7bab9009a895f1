"""Explicit monotone finite differences for the risk-averse control equation.

The marching update is

    v_k = v_{k+1} + dt * min_a { c + 0.5 sig^2 D2 v + max(adv_lo, adv_hi) }

with a central second difference and, for each driver tilt gamma, the
advection (b + gamma*sig) D v upwinded by the sign of its coefficient.
Stability needs the usual explicit bound on dt, enforced at grid build time.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import _backend as backend
from .dp import ValueField
from .errors import CflViolationError, ValidationError
from .model import DriverSpec, ProblemDefinition, driver_tilts, eval_on_grid, eval_terminal
from .risk import sample_sigma_max


def _abs_drift_max(problem: ProblemDefinition, x_lo: float, x_hi: float,
                   n: int = 129) -> float:
    xs = np.linspace(x_lo, x_hi, n)
    worst = 0.0
    for t in np.linspace(0.0, problem.horizon, 9):
        for a in problem.controls():
            b = eval_on_grid(problem.drift_at, float(t), xs, float(a))
            worst = max(worst, float(np.max(np.abs(b))))
    return worst


@dataclasses.dataclass(frozen=True)
class HjbGrid:
    """Uniform reflecting grid; construction rejects unstable steps."""

    dt: float
    dx: float
    radius: float
    x0: float
    n_steps: int
    space: np.ndarray
    sigma_max: float
    b_max: float
    lipschitz_K: float

    @property
    def cfl(self) -> float:
        rate = (self.sigma_max ** 2 / self.dx ** 2
                + (self.b_max + self.lipschitz_K * self.sigma_max) / self.dx)
        return self.dt * rate

    def __post_init__(self):
        if self.cfl > 1.0 + 1e-9:
            raise CflViolationError(
                f"explicit step is unstable: dt * rate = {self.cfl:.6f} > 1; "
                f"shrink dt below {self.dt / self.cfl:.3e}")


def build_hjb_grid(problem: ProblemDefinition, driver: DriverSpec, dx: float,
                   dt: float | None = None, radius: float | None = None,
                   x0: float = 0.0) -> HjbGrid:
    """Grid with the largest stable dt unless one is requested.

    The requested dt is snapped down so the steps tile the horizon exactly.
    """
    if dx <= 0.0:
        raise ValidationError("dx must be positive")
    T = problem.horizon
    probe = radius if radius is not None else 10.0
    sig_max = sample_sigma_max(problem, 0.0, T, x0 - probe, x0 + probe)
    if radius is None:
        radius = max(6.0 * sig_max * math.sqrt(T), dx)
    b_max = _abs_drift_max(problem, x0 - radius, x0 + radius)
    rate = (sig_max ** 2 / dx ** 2
            + (b_max + driver.lipschitz_K * sig_max) / dx)
    dt_max = (1.0 / rate) if rate > 0.0 else T
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1.0 + 1e-12):
        raise CflViolationError(
            f"dt {dt:g} exceeds the stable bound {dt_max:.6e} for dx {dx:g}")
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    m = max(1, int(math.ceil(radius / dx - 1e-12)))
    space = x0 + dx * np.arange(-m, m + 1)
    return HjbGrid(dt=T / n, dx=dx, radius=radius, x0=x0, n_steps=n,
                   space=space, sigma_max=sig_max, b_max=b_max,
                   lipschitz_K=driver.lipschitz_K)


def _control_stacks(problem: ProblemDefinition, t: float, space: np.ndarray):
    controls = problem.controls()
    M = space.size
    b_c = np.empty((len(controls), M))
    sig_c = np.empty((len(controls), M))
    cost_c = np.empty((len(controls), M))
    for u, a in enumerate(controls):
        b_c[u] = eval_on_grid(problem.drift_at, t, space, float(a))
        sig_c[u] = eval_on_grid(problem.diffusion_at, t, space, float(a))
        cost_c[u] = eval_on_grid(problem.cost_at, t, space, float(a))
    return b_c, sig_c, cost_c


def _is_autonomous(problem: ProblemDefinition, space: np.ndarray) -> bool:
    T = problem.horizon
    ref = _control_stacks(problem, 0.0, space)
    for f in (0.137, 1.0 / 3.0, 0.5, 0.777, 1.0):
        probe = _control_stacks(problem, f * T, space)
        if not all(np.array_equal(a, b) for a, b in zip(ref, probe)):
            return False
    return True


def _tilt_arrays(driver: DriverSpec, times: np.ndarray):
    if driver.kind != "custom":
        glo, ghi = driver_tilts(driver, 0.0)
        return np.full(times.size, glo), np.full(times.size, ghi)
    glo = np.empty(times.size)
    ghi = np.empty(times.size)
    for k, t in enumerate(times):
        glo[k], ghi[k] = driver_tilts(driver, float(t))
    return glo, ghi


def solve_hjb(problem: ProblemDefinition, driver: DriverSpec, grid: HjbGrid,
              store_every: int | None = None,
              autonomous: bool | None = None) -> ValueField:
    """March the explicit scheme back from the terminal condition.

    Layers are stored every `store_every` steps (auto: all of them up to 512
    steps, about 128 rows beyond that); layer 0 and the terminal layer are
    always kept. Time-independent coefficients are detected by probing and
    unlock the single-call compiled sweep.
    """
    n, dt, dx = grid.n_steps, grid.dt, grid.dx
    space = grid.space
    if store_every is None:
        store_every = 1 if n <= 512 else int(math.ceil(n / 128))
    ks = np.arange(0, n, store_every, dtype=np.int64)
    ks = np.concatenate((ks, [n]))
    layer_t = dt * np.arange(n)
    glo_arr, ghi_arr = _tilt_arrays(driver, layer_t)

    v_T = eval_terminal(problem.terminal_cost, space)
    out = np.empty((ks.size, space.size))
    if autonomous is None:
        autonomous = _is_autonomous(problem, space)
    if autonomous:
        b_c, sig_c, cost_c = _control_stacks(problem, 0.0, space)
        backend.hjb_sweep(v_T, b_c, sig_c, cost_c, glo_arr, ghi_arr,
                          dt, dx, ks, out)
    else:
        v = v_T.copy()
        ptr = ks.size - 1
        out[ptr] = v
        ptr -= 1
        for k in range(n - 1, -1, -1):
            b_c, sig_c, cost_c = _control_stacks(problem, float(layer_t[k]),
                                                 space)
            v = backend.hjb_layer(v, b_c, sig_c, cost_c, float(glo_arr[k]),
                                  float(ghi_arr[k]), dt, dx)
            if ptr >= 0 and ks[ptr] == k:
                out[ptr] = v
                ptr -= 1

    meta = {"dt": dt, "dx": dx, "radius": grid.radius, "x0": grid.x0,
            "n_steps": n, "store_every": store_every,
            "problem": problem, "driver": driver, "grid": grid}
    return ValueField(times=dt * ks.astype(np.float64), space=space,
                      values=out, producer="V_hjb", meta=meta)


def hamiltonian_residual(field: ValueField, problem: ProblemDefinition,
                         driver: DriverSpec) -> float:
    """Max-norm defect of the marching equation on stored layer pairs.

    For consecutive stored layers the defect is
    (v_i - v_{i+1})/(t_{i+1} - t_i) - min_a H(v_{i+1}; t_i), measured on
    interior nodes (the reflecting edges bias the differences). Exact, up to
    division roundoff, when every layer was stored.
    """
    if len(field.times) < 2:
        raise ValidationError("need at least two stored layers")
    if field.space.size < 3:
        raise ValidationError("need at least three space nodes")
    dx = float(field.space[1] - field.space[0])
    worst = 0.0
    for i in range(len(field.times) - 1):
        t = float(field.times[i])
        span = float(field.times[i + 1] - field.times[i])
        b_c, sig_c, cost_c = _control_stacks(problem, t, field.space)
        glo, ghi = driver_tilts(driver, t)
        cand = backend.hjb_candidates(field.values[i + 1], b_c, sig_c,
                                      cost_c, glo, ghi, dx)
        h_min = cand.min(axis=0)
        r = (field.values[i] - field.values[i + 1]) / span - h_min
        worst = max(worst, float(np.max(np.abs(r[1:-1]))))
    return worst


@dataclasses.dataclass(frozen=True)
class PolicyField:
    """Minimizing control per stored (time, node); lookup snaps to nearest."""

    times: np.ndarray
    space: np.ndarray
    t_start: float
    t_end: float
    control_index: np.ndarray     # (len(times), nodes) int32
    control_values: tuple

    def control_at(self, t: float, x):
        i = int(np.argmin(np.abs(self.times - float(t))))
        dx = float(self.space[1] - self.space[0])
        j = np.rint((np.asarray(x, dtype=np.float64) - self.space[0]) / dx)
        j = np.clip(j, 0, self.space.size - 1).astype(np.intp)
        vals = np.asarray(self.control_values, dtype=np.float64)
        out = vals[self.control_index[i, j]]
        return out if np.ndim(x) else float(out)


def extract_policy(field: ValueField, problem: ProblemDefinition,
                   driver: DriverSpec) -> PolicyField:
    """Per-layer argmin of the discrete Hamiltonian; ties pick the lowest
    control index."""
    dx = float(field.space[1] - field.space[0])
    controls = problem.controls()
    idx = np.empty((len(field.times), field.space.size), dtype=np.int32)
    for i, t in enumerate(field.times):
        b_c, sig_c, cost_c = _control_stacks(problem, float(t), field.space)
        glo, ghi = driver_tilts(driver, float(t))
        cand = backend.hjb_candidates(field.values[i], b_c, sig_c, cost_c,
                                      glo, ghi, dx)
        idx[i] = np.argmin(cand, axis=0).astype(np.int32)
    return PolicyField(times=field.times, space=field.space,
                       t_start=float(field.times[0]),
                       t_end=problem.horizon, control_index=idx,
                       control_values=tuple(float(a) for a in controls))
