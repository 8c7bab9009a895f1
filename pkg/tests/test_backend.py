"""Bitwise agreement between the compiled kernels and the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from riskdrift import _backend
from riskdrift import _kernels_py as pure

compiled = pytest.importorskip("riskdrift._kernels")


def _rand_layer(rng, m):
    y = rng.normal(size=m) * 3.0
    b = rng.normal(size=m)
    sig = 0.3 + rng.random(m)
    cost = rng.normal(size=m)
    return y, b, sig, cost


def test_backend_tag():
    assert _backend.BACKEND in ("compiled", "pure")
    if os.environ.get("RISKDRIFT_PURE", "") != "1":
        assert _backend.BACKEND == "compiled"


def test_pure_env_forces_fallback():
    env = dict(os.environ, RISKDRIFT_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from riskdrift import _backend; print(_backend.BACKEND)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "pure"


def test_lattice_layer_bitwise():
    rng = np.random.default_rng(7)
    for trial in range(20):
        m = int(rng.integers(3, 160))
        y, b, sig, cost = _rand_layer(rng, m)
        dt = float(10.0 ** rng.uniform(-4, -2))
        dx = float(np.sqrt(dt) * (1.0 + sig.max()))
        glo = float(rng.uniform(-1, 0.2))
        ghi = float(rng.uniform(glo, 1))
        a = compiled.lattice_layer(y, b, sig, cost, glo, ghi, dt, dx)
        p = pure.lattice_layer(y, b, sig, cost, glo, ghi, dt, dx)
        assert np.array_equal(a, p)
        buf = np.empty_like(y)
        compiled.lattice_layer(y, b, sig, cost, glo, ghi, dt, dx, out=buf)
        assert np.array_equal(buf, p)


def test_lattice_zprofile_bitwise_with_degenerate_sigma():
    rng = np.random.default_rng(11)
    for trial in range(10):
        m = int(rng.integers(5, 120))
        y, b, sig, _ = _rand_layer(rng, m)
        sig[rng.integers(0, m)] = 0.0
        dt, dx = 1e-3, 0.06
        a = compiled.lattice_zprofile(y, b, sig, dt, dx)
        p = pure.lattice_zprofile(y, b, sig, dt, dx)
        assert np.array_equal(a, p)


def test_lattice_sweep_bitwise():
    rng = np.random.default_rng(13)
    m, n = 91, 23
    y, b, sig, cost = _rand_layer(rng, m)
    glo_arr = rng.uniform(-0.8, 0.0, size=n)
    ghi_arr = glo_arr + rng.uniform(0.0, 1.0, size=n)
    dt = 1e-3
    dx = float(np.sqrt(dt) * (1.0 + sig.max()))
    a = compiled.lattice_sweep(y, b, sig, cost, glo_arr, ghi_arr, dt, dx)
    p = pure.lattice_sweep(y, b, sig, cost, glo_arr, ghi_arr, dt, dx)
    assert np.array_equal(a, p)


def test_hjb_candidates_bitwise():
    rng = np.random.default_rng(17)
    for trial in range(10):
        m = int(rng.integers(5, 140))
        n_u = int(rng.integers(1, 6))
        v = rng.normal(size=m) * 2.0
        b_c = rng.normal(size=(n_u, m))
        sig_c = 0.2 + rng.random((n_u, m))
        cost_c = rng.normal(size=(n_u, m))
        glo, ghi = -0.4, 0.7
        a = compiled.hjb_candidates(v, b_c, sig_c, cost_c, glo, ghi, 0.05)
        p = pure.hjb_candidates(v, b_c, sig_c, cost_c, glo, ghi, 0.05)
        assert np.array_equal(a, p)


def test_hjb_layer_bitwise_with_policy():
    rng = np.random.default_rng(19)
    m, n_u = 83, 4
    v = rng.normal(size=m)
    b_c = rng.normal(size=(n_u, m))
    sig_c = 0.2 + rng.random((n_u, m))
    cost_c = rng.normal(size=(n_u, m))
    dt, dx = 1e-4, 0.05
    a = compiled.hjb_layer(v, b_c, sig_c, cost_c, -0.5, 0.5, dt, dx)
    p = pure.hjb_layer(v, b_c, sig_c, cost_c, -0.5, 0.5, dt, dx)
    assert np.array_equal(a, p)
    av, ai = compiled.hjb_layer(v, b_c, sig_c, cost_c, -0.5, 0.5, dt, dx,
                                want_policy=True)
    pv, pi = pure.hjb_layer(v, b_c, sig_c, cost_c, -0.5, 0.5, dt, dx,
                            want_policy=True)
    assert np.array_equal(av, pv)
    assert np.array_equal(ai, pi)
    assert ai.dtype == np.int32


def test_hjb_sweep_bitwise():
    rng = np.random.default_rng(23)
    m, n_u, n = 71, 3, 37
    v = rng.normal(size=m)
    b_c = rng.normal(size=(n_u, m))
    sig_c = 0.2 + rng.random((n_u, m))
    cost_c = rng.normal(size=(n_u, m))
    glo_arr = np.full(n, -0.3)
    ghi_arr = np.full(n, 0.3)
    dt, dx = 5e-5, 0.05
    stored = np.array([0, 7, 19, n], dtype=np.int64)
    out_a = np.empty((stored.size, m))
    out_p = np.empty((stored.size, m))
    a = compiled.hjb_sweep(v, b_c, sig_c, cost_c, glo_arr, ghi_arr, dt, dx,
                           stored, out_a)
    p = pure.hjb_sweep(v, b_c, sig_c, cost_c, glo_arr, ghi_arr, dt, dx,
                       stored, out_p)
    assert np.array_equal(a, p)
    assert np.array_equal(out_a, out_p)


def test_solver_output_identical_across_backends():
    argv = ["-m", "riskdrift.cli", "solve-dp", "--h", "0.5",
            "--inner-dt", "0.0025", "--radius", "3"]
    runs = {}
    for tag, extra in (("compiled", {}), ("pure", {"RISKDRIFT_PURE": "1"})):
        env = dict(os.environ, **extra)
        env.pop("RISKDRIFT_PURE", None) if tag == "compiled" else None
        out = subprocess.run([sys.executable] + argv, env=env,
                             capture_output=True, text=True, check=True)
        runs[tag] = out.stdout
    assert runs["compiled"] == runs["pure"]
