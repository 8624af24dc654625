"""Compare the compiled kernel backend against the NumPy reference.

Two views:

* micro -- per-kernel timings on training-shaped inputs, both backends
  imported side by side;
* end-to-end -- wall time of real training iterations (one plain run, one
  Jacobian-normalized run) in subprocesses pinned to one backend via
  SMOOTHRL_KERNELS.

Usage: python benchmarks/bench_kernels.py [--quick] [--json PATH]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, *args, repeat, number):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def micro(repeat, number):
    from smoothrl.kernels import _fast, _reference

    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, (64, 64))
    g = rng.standard_normal((64, 64))
    y = np.tanh(x)
    s = 1.0 / (1.0 + np.exp(-x))
    rewards = rng.uniform(-16, 0, 2048)
    values = rng.standard_normal(2048)
    dones = (rng.uniform(size=2048) < 0.1).astype(np.float64)

    cases = {
        "tanh (64x64)": lambda impl: impl.tanh(x),
        "tanh_grad (64x64)": lambda impl: impl.tanh_grad(y, g),
        "elu (64x64)": lambda impl: impl.elu(x),
        "softplus (64x64)": lambda impl: impl.softplus(x),
        "sigmoid (64x64)": lambda impl: impl.sigmoid(x),
        "softplus_grad (64x64)": lambda impl: impl.softplus_grad(x, g),
        "sigmoid_grad (64x64)": lambda impl: impl.sigmoid_grad(s, g),
        "gae_scan (2048)": lambda impl: impl.gae_scan(
            rewards, values, dones, -1.0, 0.99, 0.95
        ),
    }

    def adam_case(impl):
        p = np.zeros((64, 64))
        m = np.zeros((64, 64))
        v = np.zeros((64, 64))
        impl.adam_step(p, g, m, v, 1, 3e-4, 0.9, 0.999, 1e-8)

    cases["adam_step (64x64)"] = adam_case

    rows = []
    for name, fn in cases.items():
        t_ref = _time(fn, _reference, repeat=repeat, number=number)
        t_fast = _time(fn, _fast, repeat=repeat, number=number)
        rows.append({
            "kernel": name,
            "reference_us": t_ref * 1e6,
            "fast_us": t_fast * 1e6,
            "speedup": t_ref / t_fast,
        })
    return rows


_E2E_SNIPPET = """
import time
import numpy as np
from smoothrl import kernels
from smoothrl.envs import PendulumEnv
from smoothrl.ppo import PpoTrainer, PpoConfig
from smoothrl.regularizers import parse_method

assert kernels.backend_name() == {backend!r}, kernels.backend_name()
cfg = PpoConfig(total_steps={steps})
trainer = PpoTrainer(PendulumEnv(seed=np.random.SeedSequence((0, 1))),
                     parse_method({method!r}), cfg, seed=0)
t0 = time.perf_counter()
trainer.train()
print(time.perf_counter() - t0)
"""


def end_to_end(steps):
    rows = []
    for method in ("vanilla", "lipsnet"):
        timings = {}
        for backend in ("reference", "fast"):
            env = dict(os.environ, SMOOTHRL_KERNELS=backend)
            code = _E2E_SNIPPET.format(backend=backend, steps=steps, method=method)
            out = subprocess.run(
                [sys.executable, "-c", code], env=env,
                capture_output=True, text=True, check=True,
            )
            timings[backend] = float(out.stdout.strip().splitlines()[-1])
        rows.append({
            "run": f"{method} training ({steps} steps)",
            "reference_s": timings["reference"],
            "fast_s": timings["fast"],
            "speedup": timings["reference"] / timings["fast"],
        })
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="fewer repetitions, shorter training runs")
    parser.add_argument("--json", help="also write results to this path")
    args = parser.parse_args(argv)

    repeat, number = (3, 200) if args.quick else (5, 1000)
    steps = 2048 if args.quick else 6144

    micro_rows = micro(repeat, number)
    print(f"{'kernel':28s} {'reference':>12s} {'compiled':>12s} {'speedup':>9s}")
    for row in micro_rows:
        print(f"{row['kernel']:28s} {row['reference_us']:10.2f}us "
              f"{row['fast_us']:10.2f}us {row['speedup']:8.2f}x")

    e2e_rows = end_to_end(steps)
    print()
    print(f"{'end-to-end':28s} {'reference':>12s} {'compiled':>12s} {'speedup':>9s}")
    for row in e2e_rows:
        print(f"{row['run']:28s} {row['reference_s']:11.2f}s "
              f"{row['fast_s']:11.2f}s {row['speedup']:8.2f}x")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"micro": micro_rows, "end_to_end": e2e_rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
