"""Time the numba and numpy kernel backends on DELTA-sized batches.

Usage: ``python3 benchmarks/bench_kernels.py [--agents 20] [--width 32] [--repeat 200]``
"""

import argparse
import time

import numpy as np

from delta_agg import algorithms as alg
from delta_agg import graph as gr
from delta_agg import kernels
from delta_agg import problem as pb
from delta_agg.estimator import MlpArch, xavier_init


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--agents", type=int, default=20)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    n, arch = args.agents, MlpArch(2, args.width)
    rng = np.random.default_rng(0)
    theta = np.stack([xavier_init(arch, i) for i in range(n)])
    u = rng.uniform(-5, 5, (n, 2))
    y = rng.uniform(0, 50, n)
    w = gr.metropolis_weights(gr.generate_erdos_renyi(n, 0.5, 0))
    prob = pb.generate_problem(n, 0)
    v = rng.normal(size=(n, 1))

    rows = []
    backends = ["numpy"] + (["numba"] if kernels.NUMBA_AVAILABLE else [])
    for name in backends:
        k = kernels.get_backend(name)
        cases = {
            "forward+input grad": lambda: k.mlp_value_input_grad(theta, u, arch.hidden_width),
            "loss+param grad": lambda: k.mlp_loss_param_grad(theta, u, y, 1e-3, arch.hidden_width),
            "neighbor mix": lambda: k.mix(w.indptr, w.indices, w.data, v),
        }
        with kernels.use_backend(name):
            net = alg.init_state(rng.normal(size=n), theta)
            cfg = alg.StepConfig(1e-4, arch=arch)
            cases["full DELTA round"] = lambda: alg.delta_step(net, prob, w, cfg)
            for case, fn in cases.items():
                best, med = best_of(fn, args.repeat)
                rows.append((case, name, best, med))

    print(f"N={n} agents, hidden width {arch.hidden_width}, {arch.n_params} parameters per agent")
    print(f"{'kernel':<20} {'backend':<8} {'best us':>10} {'median us':>10}")
    for case, name, best, med in sorted(rows):
        print(f"{case:<20} {name:<8} {best * 1e6:10.1f} {med * 1e6:10.1f}")


if __name__ == "__main__":
    main()
