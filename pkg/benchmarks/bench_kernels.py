"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times the matrix product at training-like shapes and one stage-1 epoch on
the default synthetic dataset, and confirms both backends agree bit for bit.
"""
import argparse
import json
import timeit

import numpy as np

from corrdistill import available_backends, set_backend
from corrdistill.data_io import SyntheticConfig, generate_synthetic
from corrdistill.numerics import matmul
from corrdistill.optim import ScheduleConfig
from corrdistill.trainer import TrainConfig, train_stage1

SHAPES = [(64, 32, 256), (64, 256, 64), (64, 64, 64), (300, 64, 1500)]


def bench_matmul(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n, m, p in SHAPES:
        a, b = rng.standard_normal((n, m)), rng.standard_normal((m, p))
        row = {"bench": "matmul", "shape": f"{n}x{m}x{p}"}
        outputs = {}
        for name in available_backends():
            set_backend(name)
            outputs[name] = matmul(a, b)
            row[f"{name}_ms"] = 1e3 * min(timeit.repeat(lambda: matmul(a, b), number=1, repeat=repeat))
        row["identical"] = len({o.tobytes() for o in outputs.values()}) == 1
        rows.append(row)
    return rows


def bench_epoch(repeat):
    _, _, man = generate_synthetic(SyntheticConfig())
    # two epochs because warmup takes the first; timing covers both
    cfg = TrainConfig(schedule=ScheduleConfig(lr_peak=1e-3, lr_final=5e-6, epochs=2), seed=1)
    row = {"bench": "train_2_epochs"}
    ckpts = {}
    for name in available_backends():
        set_backend(name)
        ckpts[name] = train_stage1(man, cfg)[0]
        row[f"{name}_ms"] = 1e3 * min(timeit.repeat(lambda: train_stage1(man, cfg), number=1, repeat=repeat))
    first = next(iter(ckpts.values()))
    row["identical"] = all(c.equals(first) for c in ckpts.values())
    return [row]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if len(available_backends()) < 2:
        print(json.dumps({"warning": "compiled backend not built; only the numpy fallback is timed"}))
    for row in bench_matmul(args.repeat) + bench_epoch(max(1, args.repeat // 2)):
        if "cython_ms" in row:
            row["speedup"] = row["python_ms"] / row["cython_ms"]
        print(json.dumps({k: round(v, 3) if isinstance(v, float) else v for k, v in row.items()}))
    set_backend("auto")


if __name__ == "__main__":
    main()
