"""Time the compiled and numpy kernels, then a full training step per backend.

    python3 benchmarks/bench_kernels.py [--repeat 200]

The training-step comparison re-imports the package in a subprocess with
MMBRIDGE_PURE_PYTHON set, since the backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mmbridge.autodiff import KL_EPS, NORM_EPS
from mmbridge.kernels import get_backend

STEP_SNIPPET = """
import timeit
from mmbridge.data import DatasetSpec, generate_dataset
from mmbridge.model import DataDims, ModelConfig, ParamStore
from mmbridge.optim import Optimizer
from mmbridge.trainer import train_step
from mmbridge.kernels import BACKEND
spec = DatasetSpec(train_per_class=4, test_per_class=1)
tr, _ = generate_dataset(spec)
store = ParamStore.initialize(ModelConfig(), DataDims.of(tr), 0)
opt = Optimizer("adam", 1e-3)
xs, xt, y = tr.x_src[:32], tr.x_tgt[:32], tr.labels[:32]
n = {repeat}
t = min(timeit.repeat(lambda: train_step(store, opt, xs, xt, y), number=n, repeat=3)) / n
print(BACKEND, t)
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat


def bench_kernels(repeat, batch=32, steps=10, slots=32, dim=16):
    rng = np.random.default_rng(0)
    q = rng.standard_normal((batch * steps, dim))
    mem = rng.standard_normal((slots, dim))
    g = rng.standard_normal((batch * steps, slots))
    r = 16.0
    rows = []
    results = {}
    for name in ("python", "cython"):
        try:
            k = get_backend(name)
        except ImportError:
            print(f"{name}: not available (extension not built)")
            continue
        w, cos, qn, mn = k.address_forward(q, mem, r, NORM_EPS)
        p = w
        qd = k.address_forward(q + 0.1, mem, r, NORM_EPS)[0]
        gr = np.ones(len(p))
        timings = {
            "address_forward": _best(lambda: k.address_forward(q, mem, r, NORM_EPS), repeat),
            "address_backward": _best(
                lambda: k.address_backward(g, w, cos, q, mem, qn, mn, r, NORM_EPS), repeat),
            "kl_forward": _best(lambda: k.kl_forward(p, qd, KL_EPS), repeat),
            "kl_backward": _best(lambda: k.kl_backward(gr, p, qd, KL_EPS), repeat),
        }
        results[name] = timings
    for op in ("address_forward", "address_backward", "kl_forward", "kl_backward"):
        py = results.get("python", {}).get(op)
        cy = results.get("cython", {}).get(op)
        speed = f"{py / cy:6.2f}x" if py and cy else "     -"
        rows.append(f"{op:<18} {py * 1e6 if py else float('nan'):>10.1f} "
                    f"{cy * 1e6 if cy else float('nan'):>10.1f}  {speed}")
    print(f"kernels on {batch * steps} queries x {slots} slots x {dim} dims (microseconds)")
    print(f"{'op':<18} {'python':>10} {'cython':>10}  speedup")
    print("\n".join(rows))


def bench_step(repeat):
    print("\nfull training step, batch 32, default model (milliseconds)")
    for pure in ("", "1"):
        env = dict(os.environ, MMBRIDGE_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout
        backend, t = out.split()
        print(f"{backend:<8} {float(t) * 1e3:8.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_step(max(args.repeat // 10, 5))


if __name__ == "__main__":
    main()
