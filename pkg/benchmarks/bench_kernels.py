"""Compare the compiled closed-loop kernel with the same source run as plain Python.

Each mode runs in a fresh interpreter because the JIT switch is read at import.

    python3 benchmarks/bench_kernels.py --horizon 5 --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from idepred.examples import build_example41
from idepred.numerics import make_partition
from idepred.scheme import InitialConditions, SchemeConfig, run_closed_loop

horizon, repeat = float(sys.argv[1]), int(sys.argv[2])
sys_, cert, shaping = build_example41()
cfg = SchemeConfig(horizon=horizon)
part = make_partition(cfg.Ts, cfg.Ts, horizon, h=cfg.h)
ic = InitialConditions(x0=np.array([2.0, -1.5]), xi0=0.0)
t0 = time.perf_counter()
res = run_closed_loop(sys_, cert, shaping, cfg, part, ic)
first = time.perf_counter() - t0
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    res = run_closed_loop(sys_, cert, shaping, cfg, part, ic)
    times.append(time.perf_counter() - t0)
print(json.dumps({"first": first, "best": min(times), "steps": res.n_steps,
                  "x_end": res.x[-1].tolist()}))
"""


def run(disable_jit: bool, horizon: float, repeat: int) -> dict:
    env = dict(os.environ, IDEPRED_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", CHILD, str(horizon), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=5.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    jit = run(False, args.horizon, args.repeat)
    py = run(True, args.horizon, args.repeat)
    print(f"steps            {jit['steps']}")
    print(f"numba  first     {jit['first']:8.3f} s  (includes compilation)")
    print(f"numba  best      {jit['best']:8.3f} s  ({1e6 * jit['best'] / jit['steps']:.2f} us/step)")
    print(f"python best      {py['best']:8.3f} s  ({1e6 * py['best'] / py['steps']:.2f} us/step)")
    print(f"speedup          {py['best'] / jit['best']:8.1f} x")
    diff = max(abs(a - b) for a, b in zip(jit["x_end"], py["x_end"]))
    print(f"max |x_end| diff {diff:.3e}")


if __name__ == "__main__":
    main()
