"""Window-shift minimization, bump smoothing, and smoothness metrics."""

import numpy as np
import pytest

from riskdrift.dp import ValueField, dp_solve
from riskdrift.errors import ValidationError
from riskdrift.mollify import (
    Mollifier,
    Perturbation,
    mollified_dp_gap,
    mollify_convolve,
    perturbation_box,
    perturbed_dp_solve,
    seminorm_estimate,
)
from riskdrift.model import DriverSpec, singleton_problem


def _abs_toy(horizon=1.0):
    return singleton_problem(
        drift=lambda t, x, a: 0.0 * x,
        diffusion=lambda t, x, a: 1.0 + 0.0 * x,
        running_cost=lambda t, x, a: 0.0 * x,
        terminal_cost=lambda x: np.abs(x),
        horizon=horizon,
    )


def test_mollifier_mass_and_rescaled_mass():
    for eps in (0.1, 0.25, 0.4):
        m = Mollifier(eps=eps)
        assert abs(m.mass() - 1.0) <= 1e-6
        assert abs(m.rescaled_mass() - 1.0) <= 1e-6
    hi = Mollifier(eps=0.2, quad_points=32)
    assert abs(hi.mass() - 1.0) <= 1e-6


def test_mollifier_quadrature_weights():
    tau, zeta, W = Mollifier(eps=0.3).quadrature()
    assert np.all(W >= 0.0)
    assert W.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(tau < 0.0) and np.all(tau > -1.0)
    assert np.all(np.abs(zeta) < 1.0)
    # zeta symmetry kills the first space moment
    assert abs(float((W * zeta[None, :]).sum())) <= 1e-12


def test_perturbation_membership():
    Perturbation(-0.5, 0.3)
    with pytest.raises(ValidationError):
        Perturbation(0.0, 0.3)
    with pytest.raises(ValidationError):
        Perturbation(-0.5, 1.0)
    with pytest.raises(ValidationError):
        perturbation_box(1)
    box = perturbation_box(3)
    assert len(box) == 9
    assert any(p.zeta == 0.0 for p in box)


def test_vanishing_shift_reproduces_dp():
    p = _abs_toy()
    drv = DriverSpec.scaled_abs(0.3)
    h, inner = 0.1, 0.0025
    base, _ = dp_solve(p, drv, h=h, inner_dt=inner, radius=3.0)
    tilde = perturbed_dp_solve(p, drv, h=h, eps=0.2, inner_dt=inner,
                               radius=3.0,
                               perturbations=[Perturbation(-1e-9, 0.0)])
    assert np.max(np.abs(tilde.values - base.values)) <= 1e-6
    assert tilde.producer == "V_tilde"


def test_perturbed_distance_scales_with_eps():
    p = _abs_toy()
    drv = DriverSpec.scaled_abs(0.3)
    h, inner = 0.1, 0.0025
    base, _ = dp_solve(p, drv, h=h, inner_dt=inner, radius=3.0)
    diffs = []
    for eps in (0.1, 0.2, 0.4):
        tilde = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                                   perturbation_grid=3, radius=3.0)
        diffs.append(abs(tilde.value_at(0.0, 0.0) - base.value_at(0.0, 0.0)))
    C = max(d / e for d, e in zip(diffs, (0.1, 0.2, 0.4)))
    assert np.isfinite(C) and C < 10.0
    assert all(d <= C * e + 1e-12 for d, e in zip(diffs, (0.1, 0.2, 0.4)))
    assert diffs[0] <= diffs[2] + 1e-12


def test_shift_minimization_below_any_member():
    p = _abs_toy()
    drv = DriverSpec.zero()
    h, inner, eps = 0.1, 0.0025, 0.3
    full = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                              perturbation_grid=2, radius=3.0)
    for q in perturbation_box(2):
        single = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                                    radius=3.0, perturbations=[q])
        assert np.all(full.values <= single.values + 1e-12)


def test_nested_shift_grids_monotone_toward_dp():
    p = _abs_toy()
    drv = DriverSpec.scaled_abs(0.2)
    h, inner, eps = 0.1, 0.0025, 0.2
    base, _ = dp_solve(p, drv, h=h, inner_dt=inner, radius=3.0)
    tiny = [Perturbation(-1e-9, 0.0)]
    mid = tiny + [Perturbation(-0.25, -0.25), Perturbation(-0.25, 0.25)]
    big = mid + [Perturbation(-0.6, -0.6), Perturbation(-0.6, 0.6)]
    v_big = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                               radius=3.0, perturbations=big)
    v_mid = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                               radius=3.0, perturbations=mid)
    v_tiny = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=inner,
                                radius=3.0, perturbations=tiny)
    assert np.all(v_big.values <= v_mid.values + 1e-12)
    assert np.all(v_mid.values <= v_tiny.values + 1e-12)
    assert np.max(np.abs(v_tiny.values - base.values)) <= 1e-6


def test_perturbed_rejections():
    p = _abs_toy()
    drv = DriverSpec.zero()
    with pytest.raises(ValidationError):
        perturbed_dp_solve(p, drv, h=0.3, eps=0.2, inner_dt=0.0025,
                           radius=2.0)
    with pytest.raises(ValidationError):
        perturbed_dp_solve(p, drv, h=0.3, eps=0.999, inner_dt=0.009,
                           radius=2.0)   # eps^2 + h^2 > 1
    with pytest.raises(ValidationError):
        perturbed_dp_solve(p, drv, h=0.1, eps=0.2, inner_dt=0.003,
                           radius=2.0)   # 0.003 does not divide 0.01


def _grid_field(fn, times, space):
    tt, xx = np.meshgrid(times, space, indexing="ij")
    return ValueField(times=np.asarray(times, dtype=np.float64),
                      space=np.asarray(space, dtype=np.float64),
                      values=fn(tt, xx), producer="Vh", meta={})


def test_convolution_preserves_constants():
    times = np.linspace(0.0, 1.0, 21)
    space = np.linspace(-2.0, 2.0, 41)
    field = _grid_field(lambda t, x: 3.25 + 0.0 * x, times, space)
    out = mollify_convolve(field, Mollifier(eps=0.3))
    assert out.producer == "V_hat"
    assert out.times[-1] <= 1.0 - 0.09 + 1e-12
    assert np.max(np.abs(out.values - 3.25)) <= 1e-12


def test_convolution_fixes_linear_fields_inside():
    times = np.linspace(0.0, 1.0, 21)
    space = np.linspace(-2.0, 2.0, 81)
    a = 1.7
    field = _grid_field(lambda t, x: a * x, times, space)
    eps = 0.25
    out = mollify_convolve(field, Mollifier(eps=eps))
    inside = np.abs(out.space) <= 2.0 - eps - 0.1
    assert np.max(np.abs(out.values[:, inside] - a * out.space[inside])) <= 1e-10


def test_convolution_monotone():
    times = np.linspace(0.0, 1.0, 21)
    space = np.linspace(-2.0, 2.0, 41)
    rng = np.random.Generator(np.random.Philox(7))
    base = rng.normal(size=(21, 41))
    A = ValueField(times=times, space=space, values=base + 0.5,
                   producer="Vh", meta={})
    B = ValueField(times=times, space=space, values=base, producer="Vh",
                   meta={})
    m = Mollifier(eps=0.3)
    out_a = mollify_convolve(A, m)
    out_b = mollify_convolve(B, m)
    assert np.all(out_a.values >= out_b.values - 1e-12)


def test_convolution_distance_scales_with_eps():
    times = np.linspace(0.0, 1.0, 41)
    space = np.linspace(-3.0, 3.0, 121)
    fn = lambda t, x: np.abs(x - 0.3) + 0.5 * np.sin(2.0 * x) + 0.7 * t
    field = _grid_field(fn, times, space)
    L = 2.0    # space slope at most 1 + cos term; time slope 0.7
    for eps in (0.1, 0.2, 0.4):
        out = mollify_convolve(field, Mollifier(eps=eps))
        keep = np.abs(out.space) <= 3.0 - eps - 0.1
        sup = 0.0
        for i, t in enumerate(out.times):
            k = int(np.argmin(np.abs(times - t)))
            sup = max(sup, float(np.max(np.abs(
                out.values[i, keep] - field.values[k, keep]))))
        assert sup <= 1.5 * L * eps


def test_convolution_rejects_oversized_eps():
    times = np.linspace(0.0, 0.5, 11)
    space = np.linspace(-1.0, 1.0, 21)
    field = _grid_field(lambda t, x: x, times, space)
    with pytest.raises(ValidationError):
        mollify_convolve(field, Mollifier(eps=0.8))


def test_seminorm_zero_and_linear():
    times = np.linspace(0.0, 1.0, 11)
    space = np.linspace(-2.0, 2.0, 21)
    zero = _grid_field(lambda t, x: 0.0 * x, times, space)
    rep = seminorm_estimate(zero)
    assert rep.terms() == (0.0,) * 6
    lin = _grid_field(lambda t, x: x + 0.0 * t, times, space)
    rep = seminorm_estimate(lin)
    assert rep.sup_dx == pytest.approx(1.0, abs=1e-12)
    assert rep.sup_dxx == pytest.approx(0.0, abs=1e-9)
    assert rep.sup_dt == pytest.approx(0.0, abs=1e-12)
    assert rep.holder_dt == pytest.approx(0.0, abs=1e-9)
    assert rep.holder_dxx == pytest.approx(0.0, abs=1e-7)
    assert rep.all_finite()


def test_seminorm_requires_enough_nodes():
    times = np.linspace(0.0, 1.0, 3)
    space = np.linspace(-1.0, 1.0, 21)
    field = _grid_field(lambda t, x: x, times, space)
    with pytest.raises(ValidationError):
        seminorm_estimate(field)


def test_gap_exact_martingale_field():
    p = singleton_problem(
        drift=lambda t, x, a: 0.0 * x,
        diffusion=lambda t, x, a: 1.0 + 0.0 * x,
        running_cost=lambda t, x, a: 0.0 * x,
        terminal_cost=lambda x: x * x,
        horizon=1.0,
    )
    h = 0.2
    times = np.arange(0.0, 1.0 + 1e-12, h * h)
    space = np.linspace(-4.0, 4.0, 201)
    # x^2 + (T - t) is reproduced exactly by the expectation step
    field = _grid_field(lambda t, x: x * x + (1.0 - t), times, space)
    gap = mollified_dp_gap(p, DriverSpec.zero(), h=h, eps=0.25,
                           field_hat=field)
    assert abs(gap) <= 1e-6


def test_gap_rejects_eps_below_h():
    p = _abs_toy()
    times = np.arange(0.0, 1.0 + 1e-12, 0.04)
    space = np.linspace(-2.0, 2.0, 41)
    field = _grid_field(lambda t, x: x, times, space)
    with pytest.raises(ValidationError):
        mollified_dp_gap(p, DriverSpec.zero(), h=0.2, eps=0.1,
                         field_hat=field)


def test_gap_on_smoothed_field_small():
    p = _abs_toy()
    drv = DriverSpec.scaled_abs(0.3)
    h, eps = 0.1, 0.2
    tilde = perturbed_dp_solve(p, drv, h=h, eps=eps, inner_dt=0.0025,
                               perturbation_grid=3, radius=3.0)
    hat = mollify_convolve(tilde, Mollifier(eps=eps))
    gap = mollified_dp_gap(p, drv, h=h, eps=eps, field_hat=hat,
                           inner_dt=0.0025)
    assert np.isfinite(gap)
    assert gap <= 0.05    # order h^2 * eps with a generous constant
