"""Perturbed values, smoothing by convolution, and smoothness diagnostics.

The perturbed value treats small shifts of the evaluation window, in time by
eps^2*tau and in space by eps*zeta, as extra controls minimized over at each
coarse step. Convolving the result against a compactly supported bump in the
same (tau, zeta) box yields a two-derivative-smooth surrogate whose distance
from the original, interior smoothness, and one-step optimality defect all
scale with eps in measurable ways; this module computes those quantities.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .dp import (
    ValueField,
    _coarse_times,
    _dp_grid,
    _tile_interval,
    _validate_stencil,
    interval_sweep,
)
from .errors import ValidationError
from .model import DriverSpec, ProblemDefinition, eval_on_grid, eval_terminal


def _bump(s: np.ndarray) -> np.ndarray:
    """exp(-1/(1-s^2)) on |s|<1, zero outside; smooth with compact support."""
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[m] = np.exp(-1.0 / (1.0 - s[m] * s[m]))
    return out


@dataclasses.dataclass(frozen=True)
class Mollifier:
    """Nonnegative product bump on (tau, zeta) in (-1,0)x(-1,1), unit mass.

    The normalizing constant comes from the instance's own tensor quadrature,
    so the discrete mass is 1 to machine precision at that order; the kernel
    is symmetric in zeta, which kills the first space moment exactly.
    """

    eps: float
    quad_points: int = 16

    def __post_init__(self):
        if not (self.eps > 0.0):
            raise ValidationError("mollifier scale must be positive")
        if self.quad_points < 4:
            raise ValidationError("need at least 4 quadrature points per axis")

    def _rule(self):
        return np.polynomial.legendre.leggauss(self.quad_points)

    @property
    def _norm(self) -> float:
        u, w = self._rule()
        itau = float(np.sum(w * _bump(u))) * 0.5     # tau = (u-1)/2 on (-1,0)
        izeta = float(np.sum(w * _bump(u)))
        return itau * izeta

    def phi(self, tau, zeta):
        """Normalized bump value; zero outside the box."""
        return _bump(2.0 * np.asarray(tau) + 1.0) * _bump(zeta) / self._norm

    def mass(self) -> float:
        """Tensor-quadrature integral of phi over the box."""
        u, w = self._rule()
        tau = 0.5 * (u - 1.0)
        grid = self.phi(tau[:, None], u[None, :])
        return float(np.sum((0.5 * w)[:, None] * w[None, :] * grid))

    def rescaled_mass(self) -> float:
        """Integral of eps^-3 phi(tau/eps^2, zeta/eps) over the shrunk box."""
        u, w = self._rule()
        e = self.eps
        tau = 0.5 * e * e * (u - 1.0)                # (-eps^2, 0)
        zeta = e * u                                  # (-eps, eps)
        vals = self.phi(tau[:, None] / (e * e), zeta[None, :] / e) / e ** 3
        jac = (0.5 * e * e * w)[:, None] * (e * w)[None, :]
        return float(np.sum(jac * vals))

    def quadrature(self):
        """(tau nodes, zeta nodes, weight matrix); weights sum to 1."""
        u, w = self._rule()
        tau = 0.5 * (u - 1.0)
        W = (0.5 * w)[:, None] * w[None, :] * self.phi(tau[:, None],
                                                       u[None, :])
        return tau, u.copy(), W / W.sum()


@dataclasses.dataclass(frozen=True)
class Perturbation:
    """One window shift: tau in (-1, 0), zeta in (-1, 1)."""

    tau: float
    zeta: float

    def __post_init__(self):
        if not (-1.0 < self.tau < 0.0 and -1.0 < self.zeta < 1.0):
            raise ValidationError(
                f"perturbation ({self.tau:g}, {self.zeta:g}) outside the box")


def perturbation_box(points_per_axis: int):
    """Interior tensor grid on the box; odd counts include zeta = 0."""
    if points_per_axis < 2:
        raise ValidationError("need at least 2 perturbation points per axis")
    m = points_per_axis
    taus = [-i / (m + 1.0) for i in range(1, m + 1)]
    zetas = [-1.0 + 2.0 * j / (m + 1.0) for j in range(1, m + 1)]
    return [Perturbation(t, z) for t in taus for z in zetas]


def perturbed_dp_solve(problem: ProblemDefinition, driver: DriverSpec,
                       h: float, eps: float, inner_dt: float,
                       perturbation_grid: int = 3,
                       radius: float | None = None, x0: float = 0.0,
                       lam: float = 1.0, perturbations=None) -> ValueField:
    """Backward DP that also minimizes over window shifts at every step.

    For shift (tau, zeta) the inner lattice runs from (t_i + eps^2 tau,
    x + eps zeta); shifting the continuation argument back by eps*zeta makes
    the terminal lookup land on the storage nodes, so the only effect of the
    shift is where coefficients and costs are evaluated (times below zero are
    clamped). An explicit `perturbations` list overrides the tensor grid.
    """
    T = problem.horizon
    if not (0.0 < h <= 1.0):
        raise ValidationError("h must lie in (0, 1]")
    if eps < h - 1e-15:
        raise ValidationError("eps must be at least h")
    if eps * eps + h * h > T + 1e-15:
        raise ValidationError("eps^2 + h^2 must not exceed the horizon")
    n_reg = h * h / inner_dt
    if inner_dt > h * h + 1e-15 or abs(n_reg - round(n_reg)) > 1e-9 * max(1.0, n_reg):
        raise ValidationError("inner_dt must divide h^2")
    if perturbations is None:
        perturbations = perturbation_box(perturbation_grid)
    if not perturbations:
        raise ValidationError("need at least one perturbation")

    if radius is None:
        radius = _default_radius(problem, x0, T)
    space, dx, center = _dp_grid(problem, x0, inner_dt, radius, lam)
    wide_m = int(math.ceil((radius + eps) / dx - 1e-12))
    wide = x0 + dx * np.arange(-wide_m, wide_m + 1)
    _validate_stencil(problem, wide, dx, inner_dt)
    times, n_coarse = _coarse_times(0.0, T, h)
    controls = problem.controls()

    values = np.empty((n_coarse + 1, space.size))
    values[n_coarse] = eval_terminal(problem.terminal_cost, space)
    shifted = {p.zeta: space + eps * p.zeta for p in perturbations}
    for i in range(n_coarse - 1, -1, -1):
        t_i, t_ip1 = float(times[i]), float(times[i + 1])
        n_steps, dt = _tile_interval(t_ip1 - t_i, inner_dt)
        best = None
        for p in perturbations:
            t_sh = t_i + eps * eps * p.tau
            grid_sh = shifted[p.zeta]
            for a in controls:
                cand = interval_sweep(problem, driver, grid_sh, dx, t_sh,
                                      dt, n_steps, values[i + 1], float(a))
                best = cand if best is None else np.minimum(best, cand)
        values[i] = best

    meta = {"h": h, "eps": eps, "inner_dt": inner_dt, "lam": lam, "x0": x0,
            "center": center, "dx": dx,
            "perturbations": tuple(perturbations),
            "problem": problem, "driver": driver}
    return ValueField(times=times, space=space, values=values,
                      producer="V_tilde", meta=meta)


def _default_radius(problem: ProblemDefinition, x0: float, T: float) -> float:
    from .risk import sample_sigma_max
    sig = sample_sigma_max(problem, 0.0, T, x0 - 10.0, x0 + 10.0)
    return max(6.0 * sig * math.sqrt(T), 1.0)


def mollify_convolve(field: ValueField, mollifier: Mollifier) -> ValueField:
    """Convolve a field against the rescaled bump.

    Output times are the field's times up to T - eps^2; time lookups run
    forward into (t, t + eps^2], interpolated linearly, and space lookups
    clamp at the grid edges.
    """
    e = mollifier.eps
    T = float(field.times[-1])
    keep = field.times <= T - e * e + 1e-12
    if not np.any(keep):
        raise ValidationError("eps^2 swallows the whole time range")
    out_times = field.times[keep]
    tau, zeta, W = mollifier.quadrature()
    space = field.space
    out = np.zeros((out_times.size, space.size))
    for i, t in enumerate(out_times):
        for q in range(tau.size):
            tq = float(t) - e * e * float(tau[q])     # tau < 0: forward look
            k = int(np.searchsorted(field.times, tq, side="right") - 1)
            k = min(max(k, 0), len(field.times) - 2)
            span = float(field.times[k + 1] - field.times[k])
            wt = (tq - float(field.times[k])) / span
            wt = min(max(wt, 0.0), 1.0)
            row = (1.0 - wt) * field.values[k] + wt * field.values[k + 1]
            for r in range(zeta.size):
                shifted = np.interp(space - e * float(zeta[r]), space, row)
                out[i] += W[q, r] * shifted
    meta = {"eps": e, "quad_points": mollifier.quad_points,
            "source": field.producer}
    meta.update({k: v for k, v in field.meta.items()
                 if k in ("h", "inner_dt", "problem", "driver", "dx")})
    return ValueField(times=out_times, space=space, values=out,
                      producer="V_hat", meta=meta)


@dataclasses.dataclass(frozen=True)
class SeminormReport:
    """Finite-difference magnitudes of a field, two derivatives deep.

    holder_dt and holder_dxx are quotients against the parabolic distance
    sqrt|t - t'| + |x - x'| over sampled node pairs.
    """

    sup_value: float
    sup_dx: float
    sup_dxx: float
    sup_dt: float
    holder_dt: float
    holder_dxx: float
    eps: float

    def terms(self):
        return (self.sup_value, self.sup_dx, self.sup_dxx, self.sup_dt,
                self.holder_dt, self.holder_dxx)

    def total(self) -> float:
        return float(sum(self.terms()))

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.terms())))


def _holder_quotient(arr: np.ndarray, ts: np.ndarray, xs: np.ndarray,
                     n_random: int, seed: int) -> float:
    """Max parabolic-Holder quotient over adjacent plus random node pairs."""
    nt, nx = arr.shape
    if nt * nx < 2:
        return 0.0
    worst = 0.0
    if nt > 1:
        num = np.abs(np.diff(arr, axis=0))
        den = np.sqrt(np.abs(np.diff(ts)))[:, None]
        worst = max(worst, float(np.max(num / den)))
    if nx > 1:
        num = np.abs(np.diff(arr, axis=1))
        worst = max(worst, float(np.max(num)) / float(xs[1] - xs[0]))
    rng = np.random.Generator(np.random.Philox(seed))
    flat_i = rng.integers(0, nt, size=2 * n_random)
    flat_j = rng.integers(0, nx, size=2 * n_random)
    a = (flat_i[:n_random], flat_j[:n_random])
    b = (flat_i[n_random:], flat_j[n_random:])
    dist = (np.sqrt(np.abs(ts[a[0]] - ts[b[0]]))
            + np.abs(xs[a[1]] - xs[b[1]]))
    ok = dist > 0.0
    if np.any(ok):
        q = np.abs(arr[a][ok] - arr[b][ok]) / dist[ok]
        worst = max(worst, float(np.max(q)))
    return worst


def seminorm_estimate(field: ValueField, n_pairs: int = 2000,
                      seed: int = 0) -> SeminormReport:
    """Six finite-difference magnitude terms on interior nodes."""
    ts, xs, w = field.times, field.space, field.values
    if len(ts) < 5 or xs.size < 5:
        raise ValidationError("need at least 5 nodes per axis")
    dx = float(xs[1] - xs[0])
    dts = np.diff(ts)

    d_x = (w[:, 2:] - w[:, :-2]) / (2.0 * dx)
    d_xx = (w[:, 2:] - 2.0 * w[:, 1:-1] + w[:, :-2]) / (dx * dx)
    d_t = np.diff(w, axis=0) / dts[:, None]
    t_mid = 0.5 * (ts[:-1] + ts[1:])

    sup_value = float(np.max(np.abs(w)))
    sup_dx = float(np.max(np.abs(d_x)))
    sup_dxx = float(np.max(np.abs(d_xx)))
    sup_dt = float(np.max(np.abs(d_t)))
    holder_dt = _holder_quotient(d_t, t_mid, xs, n_pairs, seed)
    holder_dxx = _holder_quotient(d_xx, ts, xs[1:-1], n_pairs, seed + 1)
    eps = float(field.meta.get("eps", float("nan"))) if field.meta else float("nan")
    return SeminormReport(sup_value=sup_value, sup_dx=sup_dx, sup_dxx=sup_dxx,
                          sup_dt=sup_dt, holder_dt=holder_dt,
                          holder_dxx=holder_dxx, eps=eps)


def mollified_dp_gap(problem: ProblemDefinition, driver: DriverSpec,
                     h: float, eps: float, field_hat: ValueField,
                     inner_dt: float | None = None,
                     max_layers: int = 8) -> float:
    """Worst one-step optimality defect of a smoothed field.

    For sampled layers t with t + h^2 within the field and every control,
    compares the field against the one-step risk evaluation of running cost
    plus the field one coarse step later, on interior nodes (inner half of
    the grid). Positive values mean the field sits above its own one-step
    evaluation.
    """
    if eps < h - 1e-15:
        raise ValidationError("eps must be at least h")
    if inner_dt is None:
        inner_dt = h * h / 16.0
    ts, xs = field_hat.times, field_hat.space
    dx = float(xs[1] - xs[0])
    h2 = h * h
    pairs = []
    for i in range(len(ts)):
        target = float(ts[i]) + h2
        j = int(np.searchsorted(ts, target - 1e-9))
        if j < len(ts) and abs(float(ts[j]) - target) <= 1e-9 * max(1.0, h2):
            pairs.append((i, j))
    if not pairs:
        raise ValidationError("no stored layer pair is h^2 apart")
    if len(pairs) > max_layers:
        idx = np.linspace(0, len(pairs) - 1, max_layers).round().astype(int)
        pairs = [pairs[k] for k in np.unique(idx)]

    half = (xs.size - 1) // 4
    mid = (xs.size - 1) // 2
    interior = slice(mid - half, mid + half + 1)
    worst = -math.inf
    for i, j in pairs:
        n_steps, dt = _tile_interval(h2, inner_dt)
        for a in problem.controls():
            sweep = interval_sweep(problem, driver, xs, dx, float(ts[i]), dt,
                                   n_steps, field_hat.values[j], float(a))
            gap = field_hat.values[i][interior] - sweep[interior]
            worst = max(worst, float(np.max(gap)))
    return worst
