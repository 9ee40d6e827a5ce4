"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter because the choice is made at
import time from ``LAMAML_DISABLE_NUMBA``.  Reported per backend:

* microseconds per fused loss+gradient call on the 784-100-100-10 MLP for
  batch sizes 1, 10 and 20 (the sizes the trainers actually use), and
* seconds for a short La-MAML run on a synthetic stream.

Usage: ``python benchmarks/bench_kernels.py [--repeats N]``
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def child(repeats: int) -> dict:
    import numpy as np

    from lamaml import BACKEND
    from lamaml.algorithms import TrainerConfig, run_training
    from lamaml.nn import Network, loss_and_grad
    from lamaml.rng import seeded_rng
    from lamaml.tasks import make_synthetic_tasks

    rng = np.random.default_rng(0)
    net = Network((784, 100, 100, 10))
    theta = net.init_params(rng)
    out = {"backend": BACKEND, "us_per_call": {}}
    for bs in (1, 10, 20):
        X = rng.random((bs, 784))
        y = rng.integers(0, 10, bs)
        loss_and_grad(net, theta, X, y)  # compile / warm caches
        t0 = time.perf_counter()
        for _ in range(repeats):
            loss_and_grad(net, theta, X, y)
        out["us_per_call"][bs] = 1e6 * (time.perf_counter() - t0) / repeats

    stream = make_synthetic_tasks(3, 5, 50, 100, 4.0, seeded_rng(0, "tasks")).with_protocol(glances=2)
    cfg = TrainerConfig(algorithm="lamaml", hidden=(100, 100), alpha_init=0.1, eta=0.1, glances=2)
    run_training(stream, cfg, 0)
    t0 = time.perf_counter()
    rec = run_training(stream, cfg, 0)
    out["lamaml_run_s"] = time.perf_counter() - t0
    out["final_acc"] = rec.acc[-1].tolist()
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2000)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(child(args.repeats)))
        return 0

    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, LAMAML_DISABLE_NUMBA=disable)
        proc = subprocess.run(
            [sys.executable, __file__, "--child", "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(proc.stdout))

    print(f"{'backend':<8} {'bs=1 us':>10} {'bs=10 us':>10} {'bs=20 us':>10} {'la-maml s':>10}")
    for r in results:
        u = r["us_per_call"]
        print(f"{r['backend']:<8} {u['1']:>10.1f} {u['10']:>10.1f} {u['20']:>10.1f} {r['lamaml_run_s']:>10.2f}")
    if len(results) == 2 and results[0]["backend"] != results[1]["backend"]:
        a, b = results
        same = a["final_acc"] == b["final_acc"]
        print(f"speedup (numpy/numba) on the training run: {b['lamaml_run_s'] / a['lamaml_run_s']:.2f}x")
        print(f"identical final accuracies across backends: {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
