"""Smoke test for the treecast extension module.

Build and run:

    cargo build --release -p treecast-py --features extension-module
    cp target/release/libtreecast.so python/treecast.so
    python3 python/smoke_test.py
"""

import math

import treecast as tc


def main():
    p = tc.ModelParams(2, 0.4)
    assert abs(p.ks_factor - 0.08) < 1e-12
    assert abs(tc.critical_epsilon(2) - p.eps_c) < 1e-15

    skl = [tc.brute_force_tree(p, n)["skl"] for n in range(1, 5)]
    assert all(b / a <= 0.08 + 1e-9 for a, b in zip(skl, skl[1:])), skl

    assert abs(tc.divergence("tv", [0.5, 0.5], [0.9, 0.1]) - 0.4) < 1e-12
    e, s = tc.nongaussianness([-1.0, 1.0], [0.5, 0.5])
    assert abs(e - math.sqrt(1 - 2 / math.pi)) < 1e-9
    assert abs(s - math.sqrt(2 / math.pi)) < 1e-9
    assert tc.wasserstein(2.0, ([0.0], [1.0]), ([1.0], [1.0])) == 1.0
    assert abs(tc.bp_combine([0.5, 0.5], 0.5) - 1 / 2.125) < 1e-12

    cfg = tc.QbpConfig(64, lam=1.02)
    sig = cfg.evolve(200)
    assert len(sig) == 201
    assert all(cfg.a - 1e-9 <= v <= cfg.b + 1e-9 for v in sig)
    assert tc.quantize_symmetric(0.3, 4) == 3

    slope, _, r2 = tc.powerlaw_fit([(l, tc.critical_epsilon(2) - l ** -2.0) for l in (4, 8, 16, 32)])
    assert abs(slope + 2) < 1e-9 and abs(r2 - 1) < 1e-9

    near = tc.ModelParams(2, tc.critical_epsilon(2) - 0.005)
    traj = tc.evolve_pair(near, tc.Scheme.alternating_and_or(2), 200)
    assert traj[-1]["skl"] < 1e-6

    scheme = tc.Scheme.from_json(tc.Scheme.majority(3).to_json())
    assert scheme.d == 3 and scheme.alphabet == 2

    rep = tc.density_evolution(tc.ModelParams(2, 0.1), 5, 20000, 1)
    assert rep["sigma2"][0] == 1.0 and 0 < rep["xi_hat"] < 1

    logs = tc.cycling_demo(tc.ModelParams(2, 0.1), 500, [0.34, 0.33, 0.33], [0.33, 0.34, 0.33])
    assert all(math.isfinite(v) for v in logs)

    try:
        tc.brute_force_tree(tc.ModelParams(2, 0.2), 5)
    except tc.BudgetError:
        pass
    else:
        raise AssertionError("expected BudgetError")
    try:
        tc.ModelParams(2, 0.7)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("treecast smoke test ok")


if __name__ == "__main__":
    main()
