"""Pure-numpy backward-recursion kernels.

Reference implementation of the hot loops; riskdrift._kernels is the compiled
twin. Operation order here is chosen to match the C loops exactly (no fused
multiply-adds, left-to-right accumulation), so both backends produce
bit-identical IEEE-754 results on the same inputs.

Conventions shared by both backends:
  * space grid is uniform with step dx; node 0 is the lowest state;
  * boundaries reflect: the out-of-range neighbor value is the edge value;
  * drivers enter through the two tilt coefficients (glo, ghi), the
    subgradient-interval endpoints of g(t, .) at 0, via
    g(z) = max(glo*z, ghi*z);
  * a layer update computes values at time index k from values at k+1 with
    coefficients frozen at the left endpoint t_k.
"""

from __future__ import annotations

import numpy as np

IS_COMPILED = False


def _shift_down(y: np.ndarray) -> np.ndarray:
    """Neighbor value one node below, reflecting at the bottom edge."""
    out = np.empty_like(y)
    out[0] = y[0]
    out[1:] = y[:-1]
    return out


def _shift_up(y: np.ndarray) -> np.ndarray:
    """Neighbor value one node above, reflecting at the top edge."""
    out = np.empty_like(y)
    out[-1] = y[-1]
    out[:-1] = y[1:]
    return out


def lattice_layer(y_next, b, sig, cost, glo, ghi, dt, dx, out=None):
    """One backward trinomial-BSDE layer.

    Y_k = sum_j p_j Y_{k+1,j} + dt*(c + g(Z_k)) with the centered estimator
    Z_k = sum_j p_j Y_{k+1,j} (delta_j - b dt) / (sig dt); Z_k = 0 where
    sig = 0. Transition probabilities are the trinomial stencil
    p_up/p_dn = (sig^2 dt/dx^2 +/- b dt/dx)/2, p_stay = 1 - sig^2 dt/dx^2.
    No probability validation happens here; callers validate the grid.
    """
    y = np.asarray(y_next)
    ym = _shift_down(y)
    yp = _shift_up(y)
    dx2 = dx * dx
    q = sig * sig * dt / dx2
    r = b * dt / dx
    p_up = 0.5 * (q + r)
    p_dn = 0.5 * (q - r)
    p_st = 1.0 - q
    ey = p_dn * ym + p_st * y
    ey = ey + p_up * yp

    bdt = b * dt
    znum = p_dn * ym * (-dx - bdt) + p_st * y * (-bdt)
    znum = znum + p_up * yp * (dx - bdt)
    denom = sig * dt
    safe = np.where(denom != 0.0, denom, 1.0)
    z = np.where(denom != 0.0, znum / safe, 0.0)

    g = np.maximum(glo * z, ghi * z)
    res = ey + dt * (cost + g)
    if out is None:
        return res
    out[:] = res
    return out


def lattice_zprofile(y_next, b, sig, dt, dx):
    """The centered Z estimator for one layer (diagnostic)."""
    y = np.asarray(y_next)
    ym = _shift_down(y)
    yp = _shift_up(y)
    dx2 = dx * dx
    q = sig * sig * dt / dx2
    r = b * dt / dx
    p_up = 0.5 * (q + r)
    p_dn = 0.5 * (q - r)
    p_st = 1.0 - q
    bdt = b * dt
    znum = p_dn * ym * (-dx - bdt) + p_st * y * (-bdt)
    znum = znum + p_up * yp * (dx - bdt)
    denom = sig * dt
    safe = np.where(denom != 0.0, denom, 1.0)
    return np.where(denom != 0.0, znum / safe, 0.0)


def lattice_sweep(y_terminal, b, sig, cost, glo_arr, ghi_arr, dt, dx):
    """n backward layers with layer-independent coefficient arrays.

    glo_arr/ghi_arr hold the driver tilts per layer, index k in [0, n);
    the sweep runs k = n-1, ..., 0 and returns the layer-0 values.
    """
    y = np.array(y_terminal, dtype=np.float64, copy=True)
    n = glo_arr.shape[0]
    for k in range(n - 1, -1, -1):
        y = lattice_layer(y, b, sig, cost, float(glo_arr[k]), float(ghi_arr[k]), dt, dx)
    return y


def hjb_candidates(v, b_c, sig_c, cost_c, glo, ghi, dx):
    """Per-control discrete Hamiltonian candidates on one layer.

    Returns an (n_controls, M) array of
      c + 0.5 sig^2 D2 v + max(adv_lo, adv_hi)
    where adv_g is the upwinded advection with coefficient (b + g*sig):
    forward difference for nonnegative coefficients, backward otherwise.
    """
    v = np.asarray(v)
    vm = _shift_down(v)
    vp = _shift_up(v)
    dx2 = dx * dx
    d2 = (vp - 2.0 * v + vm) / dx2
    dfw = (vp - v) / dx
    dbw = (v - vm) / dx

    alo = b_c + glo * sig_c
    ahi = b_c + ghi * sig_c
    adv_lo = np.where(alo >= 0.0, alo * dfw, alo * dbw)
    adv_hi = np.where(ahi >= 0.0, ahi * dfw, ahi * dbw)
    adv = np.maximum(adv_lo, adv_hi)
    return cost_c + 0.5 * sig_c * sig_c * d2 + adv


def hjb_layer(v_next, b_c, sig_c, cost_c, glo, ghi, dt, dx, want_policy=False):
    """One explicit backward HJB layer: v_k = v_{k+1} + dt * min_u H_u.

    Ties in the minimum go to the lowest control index.
    """
    cand = hjb_candidates(v_next, b_c, sig_c, cost_c, glo, ghi, dx)
    if want_policy:
        idx = np.argmin(cand, axis=0).astype(np.int32)
        best = np.take_along_axis(cand, idx[None, :].astype(np.intp), axis=0)[0]
        return v_next + dt * best, idx
    best = cand[0].copy()
    for u in range(1, cand.shape[0]):
        best = np.minimum(best, cand[u])
    return v_next + dt * best


def hjb_sweep(v_terminal, b_c, sig_c, cost_c, glo_arr, ghi_arr, dt, dx,
              stored_k, out_values):
    """n backward HJB layers with layer-independent coefficients.

    stored_k: ascending int64 array of layer indices whose value rows are
    written into out_values (len(stored_k), M); must contain 0 and n.
    glo_arr/ghi_arr are per computed layer k in [0, n).
    """
    v = np.array(v_terminal, dtype=np.float64, copy=True)
    n = glo_arr.shape[0]
    ptr = stored_k.shape[0] - 1
    if stored_k[ptr] == n:
        out_values[ptr] = v
        ptr -= 1
    for k in range(n - 1, -1, -1):
        v = hjb_layer(v, b_c, sig_c, cost_c, float(glo_arr[k]), float(ghi_arr[k]), dt, dx)
        if ptr >= 0 and stored_k[ptr] == k:
            out_values[ptr] = v
            ptr -= 1
    return v
