"""Compare the compiled and pure-numpy convolution kernels.

Times forward and backward passes on the layer shapes of one MDN block and
on a full model forward, then prints a table of milliseconds per call and
the speedup of the compiled backend.

    python benchmarks/bench_conv.py [--size 64] [--batch 1] [--repeat 5]
"""

import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from mdn_mri.core import backend

# (label, in channels, out channels, kernel, dilation)
LAYERS = [
    ("conv0 9x9 1->32", 1, 32, 9, 1),
    ("conv1 3x3 32->64 d2", 32, 64, 3, 2),
    ("conv2 3x3 64->32 d3", 64, 32, 3, 3),
    ("fusion 3x3 96->1", 96, 1, 3, 1),
    ("dense 7x7 64->32", 64, 32, 7, 1),
]


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def bench_layers(kernels, size, batch, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for label, c, o, k, d in LAYERS:
        x = rng.standard_normal((batch, c, size, size)).astype(np.float32)
        w = rng.standard_normal((o, c, k, k)).astype(np.float32)
        b = np.zeros(o, np.float32)
        up = rng.standard_normal((batch, o, size, size)).astype(np.float32)
        row = [label]
        for mod in kernels.values():
            row.append(_best(lambda: mod.conv_forward(x, w, b, d), repeat))
            row.append(_best(lambda: mod.conv_backward(x, w, up, d), repeat))
        rows.append(row)
    return rows


def bench_model(name, size, batch, repeat):
    # Backend choice happens at import, so each one runs in a fresh interpreter.
    code = (
        "import timeit, numpy as np\n"
        "from mdn_mri.model import ModelConfig, build_model\n"
        "m = build_model(ModelConfig(), seed=0, fusion_init='he')\n"
        f"x = np.random.default_rng(0).random(({batch}, 1, {size}, {size})).astype(np.float32)\n"
        "def step():\n"
        "    out = m.forward(x, training=True)\n"
        "    m.zero_grad()\n"
        "    m.backward(out - x)\n"
        f"print(min(timeit.repeat(step, number=1, repeat={repeat})) * 1e3)\n"
    )
    env = dict(os.environ, MDN_BACKEND=name)
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    return float(res.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    kernels = {"python": backend.get("python")}
    try:
        kernels["cython"] = importlib.import_module("mdn_mri.core._conv_ext")
    except ImportError:
        print("compiled extension not built; timing the numpy kernels only")

    print(f"{args.batch}x{args.size}x{args.size} float32, best of {args.repeat} (ms)")
    head = f"{'layer':<22}" + "".join(f"{n + ' fwd':>13}{n + ' bwd':>13}" for n in kernels)
    if "cython" in kernels:
        head += f"{'speedup':>10}"
    print(head)
    for row in bench_layers(kernels, args.size, args.batch, args.repeat):
        line = f"{row[0]:<22}" + "".join(f"{v:13.2f}" for v in row[1:])
        if "cython" in kernels:
            line += f"{(row[1] + row[2]) / (row[3] + row[4]):9.1f}x"
        print(line)

    steps = {name: bench_model(name, args.size, args.batch, args.repeat) for name in kernels}
    line = f"{'model fwd+bwd':<22}" + "".join(f"{v:26.2f}" for v in steps.values())
    if "cython" in steps:
        line += f"{steps['python'] / steps['cython']:9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
