"""Smoke test for the gradflux extension module.

Build first:  cargo build -p gradflux-py --release
Then run:     python3 python/smoke_test.py
"""

import importlib.util
import json
import math
import os
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    for name in ("libgradflux.so", "libgradflux.dylib", "gradflux.dll"):
        path = os.path.join(ROOT, "target", "release", name)
        if os.path.exists(path):
            spec = importlib.util.spec_from_file_location("gradflux", path)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("extension not found; run `cargo build -p gradflux-py --release` first")


def main():
    gf = load()
    fp = gf.FluxPair.parse("burgers,burgers_plus_1")
    assert abs(fp.gap(0.3) - 1.0) < 1e-15

    flux_used, waves = gf.solve_riemann(1.0, -1.0, fp)
    assert flux_used == "g" and len(waves) == 1 and waves[0][3] == "shock"
    assert abs(gf.rh_speed(1.0, -1.0, fp)) < 1e-15
    assert gf.liu_admissible(1.0, -1.0, fp)

    p0 = gf.Profile.example11(4000)
    semi, events = gf.run_semigroup(p0, fp, 0.01, 0.5, [0.1 * k for k in range(6)])
    control, _ = gf.run_semigroup(p0, fp, 0.01, 0.5, [0.1 * k for k in range(6)], control=True)
    jumps = semi.theta_max_jump(0.05)
    assert max(jumps[1:]) < 0.3, jumps
    assert min(control.theta_max_jump(0.05)) >= 0.9
    dist = semi.l1_series(control)
    assert dist[-1][1] > 0.7, dist
    report = json.loads(semi.structural_checks(fp, h=0.01))
    assert report["flags"]["tv_nonincreasing"]

    sine = gf.Profile.sample("periodic:1", 400, lambda x: 0.5 * math.sin(2 * math.pi * x))
    visc = gf.run_viscous(sine, fp, 4e-3, 4e-3, 1 / 200, 0.1, [0.05])
    assert len(visc) == 3
    assert abs(visc.profile(2).integral() - sine.integral()) < 1e-12

    with tempfile.TemporaryDirectory() as out:
        text = "scenario = flat\nflux = burgers,burgers_plus_1\ninitial = constant:0.3\nt_end = 0.2\n"
        summary = json.loads(gf.run_config(text, out))
        assert all(d <= 1e-12 for _, d in summary["pairwise"])

    print(f"ok: {len(events)} events, L1(t=0.5) = {dist[-1][1]:.6f}")


if __name__ == "__main__":
    main()
