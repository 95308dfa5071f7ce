"""Compiled vs pure-Python shooting kernels.

Times each kernel on generator-sized inputs for both backends, then one
closed-loop run per backend (the pure-Python one in a subprocess with
``CDFMPC_PURE_PYTHON=1``).

    python3 benchmarks/bench_kernels.py [--repeat 200] [--horizon 8] [--steps 200]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cdfmpc import kernels
from cdfmpc.model import get_model

LOOP = """
import time, numpy as np
from cdfmpc import kernels
from cdfmpc.controller import ControllerConfig, closed_loop
from cdfmpc.model import get_model
from cdfmpc.storage import KernelFunction
cfg = ControllerConfig(KernelFunction([0.1, 10, 0.1, 10]), N=4)
t0 = time.perf_counter()
closed_loop(cfg, get_model("generator2"), np.array([0, 0.15, 0, -0.15]), {steps})
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(L):
    st = get_model("generator2").structure
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, 4)
    U = np.ascontiguousarray(rng.uniform(-5, 5, (L, 2)))
    X = kernels.python_backend.rollout(st.A, st.B, st.E, st.C, x0, U)
    Fx, Fu = kernels.python_backend.linearize(st.A, st.B, st.E, st.C, X, U)
    gX = np.ascontiguousarray(rng.normal(size=X.shape))
    Q = np.ascontiguousarray(np.diag([0.1, 10, 0.1, 10]))
    w = np.ones(L + 1)
    return {
        "rollout": lambda b: b.rollout(st.A, st.B, st.E, st.C, x0, U),
        "linearize": lambda b: b.linearize(st.A, st.B, st.E, st.C, X, U),
        "sensitivities": lambda b: b.sensitivities(Fx, Fu),
        "adjoint_gradient": lambda b: b.adjoint_gradient(Fx, Fu, gX),
        "weighted_quadratic_sum": lambda b: b.weighted_quadratic_sum(X, Q, w),
    }


def closed_loop_seconds(steps, pure):
    env = dict(os.environ, CDFMPC_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", LOOP.format(steps=steps)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--horizon", type=int, default=8)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the pure-Python backend is available")
    py = kernels.python_backend
    print(f"{'kernel':24s} {'python us':>10s} {'active us':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(args.horizon).items():
        tp = min(timeit.repeat(lambda: fn(py), number=args.repeat, repeat=3)) / args.repeat
        tc = min(timeit.repeat(lambda: fn(kernels), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:24s} {tp * 1e6:10.1f} {tc * 1e6:10.1f} {tp / tc:8.2f}")

    print(f"\nclosed loop, N=4, {args.steps} steps")
    for pure in (False, True):
        backend, secs = closed_loop_seconds(args.steps, pure)
        print(f"  {backend:8s} {secs:7.2f} s")


if __name__ == "__main__":
    main()
