"""Compare the compiled integrator core against the pure-Python fallback.

Run:  python3 benchmarks/bench_backends.py [--paths N] [--steps N]

Both backends are driven through the full simulation pipeline (chain
sampling, grid building, noise generation included), then through a
core-only measurement on identical prepared inputs so the kernel speedup is
visible separately from the fixed per-path overhead. The compiled core is
selected automatically at import; ERGO_FORCE_PY=1 in the environment flips
any fresh process to the fallback, which is what this script does for the
comparison run.
"""

import argparse
import os
import subprocess
import sys
import time

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.dirname(HERE)


def _child(force_py, paths, steps):
    """Time one backend in a fresh interpreter; returns (label, seconds, checksum)."""
    env = dict(os.environ)
    env["ERGO_FORCE_PY"] = "1" if force_py else "0"
    env.setdefault("ERGO_THREADS", "1")  # single worker: measure the core
    code = f"""
import time
import numpy as np
from rnsfde.backend import active_backend
from rnsfde.chain import Generator
from rnsfde.delay import DelayKernel
from rnsfde.dynamics import ModelSpec, SimConfig, ensemble_statistic
from rnsfde.segments import MarkedPoint, Segment

q = Generator([[-1.0, 1.0], [2.0, -2.0]])
model = ModelSpec.builtin_linear(
    DelayKernel.exponential(40.0), q, r=0.5,
    neutral_coeff=(0.3, 0.2), drift_state=(-2.0, -1.5),
    drift_history=(0.4, 0.1), drift_const=(0.0, 0.5),
    noise_const=(0.5, 0.8), noise_history=(0.1, 0.0))
h = 1.0 / {steps}
cfg = SimConfig(h=h, horizon=1.0, n_paths={paths}, seed=42,
                sample_every={steps})
init = MarkedPoint(Segment.constant([1.0], 0.5, h, 5), 0)
t0 = time.perf_counter()
mean, se, n = ensemble_statistic(model, init, cfg, lambda o: o.X[-1, 0])
dt = time.perf_counter() - t0
print(f"{{active_backend()}} {{dt:.6f}} {{float(mean):.17g}}")
"""
    out = subprocess.run([sys.executable, "-c", code], env=env, cwd=PKG,
                         capture_output=True, text=True, check=True)
    label, secs, checksum = out.stdout.split()
    return label, float(secs), checksum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=500)
    ap.add_argument("--steps", type=int, default=500,
                    help="integration steps per unit-horizon path")
    args = ap.parse_args()

    print(f"ensemble: {args.paths} paths x {args.steps} steps, one worker")
    results = {}
    for force_py in (False, True):
        label, secs, checksum = _child(force_py, args.paths, args.steps)
        per_path = secs / args.paths * 1e6
        results[label] = (secs, checksum)
        print(f"  {label:>8}: {secs:8.3f} s total, {per_path:9.1f} us/path"
              f"  (mean checksum {checksum})")

    if len(results) == 2:
        fast = results["compiled"][0]
        slow = results["python"][0]
        print(f"  speedup: {slow / fast:.1f}x")
        if results["compiled"][1] != results["python"][1]:
            print("  NOTE: backend checksums differ (expected only at ~1e-15;"
                  " investigate if larger)")
    else:
        print("  compiled core unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
