"""Compare the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--nodes 1201] [--steps 4000]

Both backends produce bitwise-identical output, so the numbers differ only
in speed. The end-to-end row re-solves the default control problem through
the library entry points with RISKDRIFT_PURE toggling the backend in a
subprocess.
"""

import argparse
import subprocess
import sys
import time

import numpy as np


def _timed(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(nodes, steps):
    try:
        from riskdrift import _kernels as compiled
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    from riskdrift import _kernels_py as pure

    rng = np.random.default_rng(0)
    y = rng.normal(size=nodes)
    b = rng.normal(size=nodes) * 0.3
    sig = 0.5 + rng.random(nodes)
    cost = rng.normal(size=nodes)
    dt = 1e-4
    dx = float(np.sqrt(dt) * (1.0 + sig.max()))
    glo_arr = np.full(steps, -0.4)
    ghi_arr = np.full(steps, 0.4)

    n_u = 4
    v = rng.normal(size=nodes)
    b_c = rng.normal(size=(n_u, nodes)) * 0.3
    sig_c = 0.5 + rng.random((n_u, nodes))
    cost_c = rng.normal(size=(n_u, nodes))
    dx_fd = 0.01
    dt_fd = 0.4 / (sig_c.max() ** 2 / dx_fd**2)
    stored = np.array([0, steps], dtype=np.int64)

    rows = []

    def add(name, run_compiled, run_pure, check_equal):
        tc = _timed(run_compiled)
        tp = _timed(run_pure)
        assert check_equal(), f"{name}: backends disagree"
        rows.append((name, tc, tp, tp / tc))

    out_c = {}
    add("lattice_sweep",
        lambda: out_c.__setitem__("a", compiled.lattice_sweep(
            y, b, sig, cost, glo_arr, ghi_arr, dt, dx)),
        lambda: out_c.__setitem__("p", pure.lattice_sweep(
            y, b, sig, cost, glo_arr, ghi_arr, dt, dx)),
        lambda: np.array_equal(out_c["a"], out_c["p"]))

    buf_a = np.empty((2, nodes))
    buf_p = np.empty((2, nodes))
    add("hjb_sweep",
        lambda: compiled.hjb_sweep(v, b_c, sig_c, cost_c, glo_arr, ghi_arr,
                                   dt_fd, dx_fd, stored, buf_a),
        lambda: pure.hjb_sweep(v, b_c, sig_c, cost_c, glo_arr, ghi_arr,
                               dt_fd, dx_fd, stored, buf_p),
        lambda: np.array_equal(buf_a, buf_p))

    print(f"{'kernel':<14} {'compiled':>10} {'numpy':>10} {'speedup':>8}")
    for name, tc, tp, ratio in rows:
        print(f"{name:<14} {tc * 1e3:>9.2f}ms {tp * 1e3:>9.2f}ms "
              f"{ratio:>7.1f}x")
    return 0


def bench_end_to_end():
    argv = [sys.executable, "-m", "riskdrift.cli", "solve-dp",
            "--h", "0.35", "--inner-dt", "0.000125", "--radius", "4"]
    outs = {}
    for tag, env_extra in (("compiled", {}), ("pure", {"RISKDRIFT_PURE": "1"})):
        import os
        env = dict(os.environ, **env_extra)
        t0 = time.perf_counter()
        r = subprocess.run(argv, env=env, capture_output=True, text=True)
        secs = time.perf_counter() - t0
        if r.returncode != 0:
            print(f"solve-dp ({tag}) failed:\n{r.stderr}")
            return 1
        outs[tag] = (r.stdout, secs)
    same = outs["compiled"][0] == outs["pure"][0]
    print(f"{'solve-dp':<14} {outs['compiled'][1] * 1e3:>9.0f}ms "
          f"{outs['pure'][1] * 1e3:>9.0f}ms "
          f"{outs['pure'][1] / outs['compiled'][1]:>7.1f}x   "
          f"(output identical: {same})")
    return 0 if same else 1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=1201)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    rc = bench_kernels(args.nodes, args.steps)
    if rc == 0 and not args.skip_end_to_end:
        rc = bench_end_to_end()
    return rc


if __name__ == "__main__":
    sys.exit(main())
