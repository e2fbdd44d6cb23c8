"""Compare the compiled kernels with their pure-Python twins.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time for each backend
and the speedup, then times one end-to-end simulation per backend in a
subprocess (the backend is chosen at import time).
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from mcsim import _kernels_py as py

try:
    from mcsim import _kernels as cy
except ImportError:
    cy = None


def lru_ops(mod, ops):
    sets = mod.LruSets(64, 8)
    for s, tag in ops:
        w = sets.find(s, tag)
        if w >= 0:
            sets.touch(s, w)
        else:
            sets.install(s, sets.victim(s, 0xFF), tag)


def cases(mod):
    rng = random.Random(0)
    addrs = [rng.randrange(1 << 22) for _ in range(50_000)]
    ops = [(rng.randrange(64), rng.randrange(32)) for _ in range(50_000)]
    values = [rng.getrandbits(64) for _ in range(50_000)]
    widths = [6, 1, 1, 3, 5, 15]
    return {
        "simulate_lru (50k refs)": lambda: mod.simulate_lru(addrs, 256, 8, 6),
        "LruSets find/touch/install (50k)": lambda: lru_ops(mod, ops),
        "xor_fold (50k)": lambda: [mod.xor_fold(v, 3) for v in values],
        "extract_fields (50k)": lambda: [mod.extract_fields(a, widths) for a in addrs],
    }


SIM = (
    "import time\n"
    "from mcsim.config import SystemConfig, validate_config\n"
    "from mcsim.engine import run\n"
    "from mcsim.trace import generate_trace\n"
    "t = generate_trace('RandomUniform', {'threads': 4, 'events': 2000, 'footprint_blocks': 4096}, seed=1)\n"
    "cfg = validate_config(SystemConfig(core_count=4))\n"
    "s = time.perf_counter(); run(cfg, t); print(time.perf_counter() - s)\n"
)


def simulate(pure: bool) -> float:
    env = dict(os.environ, MCSIM_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SIM], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    py_cases, cy_cases = cases(py), cases(cy)
    print(f"{'kernel':36s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for name in py_cases:
        t_py = min(timeit.repeat(py_cases[name], number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(cy_cases[name], number=1, repeat=args.repeat))
        print(f"{name:36s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:7.1f}x")
    t_py = min(simulate(True) for _ in range(3))
    t_cy = min(simulate(False) for _ in range(3))
    print(f"{'full simulation (4 x 2000 events)':36s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
