"""Time the compiled kernels against the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--number 200] [--json out.json]

Each row is the best of ``--repeat`` timings of ``--number`` calls, in
microseconds per call. The env row is one 30 Hz control tick (30 physics
substeps with contact, PD and filtering).
"""

import argparse
import json
import timeit

import numpy as np

from exosquat import _backend
from exosquat.default_model import default_exo_spec
from exosquat.environment import EnvConfig, SquatEnv
from exosquat.multibody import build_model


def kernel_cases(model, rng):
    k = model.kernel
    q = model.standing_state(1e5).q
    q[model.act_q] += rng.uniform(-0.2, 0.2, len(model.act_q))
    v = rng.normal(0.0, 0.3, model.nv)
    w = np.zeros((model.nb, 6))
    g = np.array([0.0, 0.0, -9.81])
    tau = np.zeros(model.nv)
    tau[model.act_v] = rng.uniform(-50, 50, len(model.act_v))
    qdd = rng.normal(size=model.nv)
    qs, vs = q.copy(), v.copy()
    return {
        "fk": lambda: k.fk(q),
        "mass_matrix": lambda: k.mass_matrix(q),
        "rnea": lambda: k.rnea(q, v, qdd, w, g),
        "forward_dynamics": lambda: k.forward_dynamics(q, v, tau, w, g),
        "contact": lambda: k.contact(q, v, 0.8, 1e5, 1e3, 0.01),
        "step": lambda: k.step(qs, vs, tau, w, g, 1.0 / 900.0, True),
    }


def env_case(backend):
    env = SquatEnv(EnvConfig(mode="perturbed"), seed=0, backend=backend)
    env.reset(seed=1)
    action = np.zeros(8)

    def tick():
        env.step(action)
        if env.done:
            env.reset(seed=1)
    return tick


def bench(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--number", type=int, default=200)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="also write the results to this file")
    args = p.parse_args(argv)

    backends = _backend.available()
    spec = default_exo_spec()
    results = {}
    for b in backends:
        model = build_model(spec, backend=b)
        cases = kernel_cases(model, np.random.default_rng(0))
        cases["env_tick"] = env_case(b)
        for name, fn in cases.items():
            n = max(1, args.number // 20) if name == "env_tick" else args.number
            results.setdefault(name, {})[b] = bench(fn, n, args.repeat)

    head = f"{'kernel':<18}" + "".join(f"{b + ' us':>14}" for b in backends)
    if len(backends) > 1:
        head += f"{'speedup':>10}"
    print(head)
    for name, row in results.items():
        line = f"{name:<18}" + "".join(f"{row[b]:>14.1f}" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['compiled']:>9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
