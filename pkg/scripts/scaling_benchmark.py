"""Wall-time scaling of the full pipeline across graph sizes.

The pipeline is designed to run in O(n log n): blockwise sampling, matrix-free
power iteration for the spectrum, one sparse matvec per moment-table entry,
and O(m) sampling. This script measures it.

Usage: python scripts/scaling_benchmark.py [--sizes 25000 50000 100000] [--seed 0]
"""
import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from graphon_forge.graphon_model import StepGraphon, save_graphon
from graphon_forge.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[25_000, 50_000, 100_000])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = StepGraphon(np.array([0.5, 0.5]), np.array([[7.0, 1.0], [1.0, 7.0]]))
    with tempfile.TemporaryDirectory() as td:
        save_graphon(model, Path(td) / "model.json")
        rows = []
        for n in args.sizes:
            cfg = PipelineConfig(
                model=str(Path(td) / "model.json"), n=n, seed=args.seed,
                N_override=4, determinism=True, threads=1,
            )
            t0 = time.perf_counter()
            res = run_pipeline(cfg, out_dir=Path(td) / f"bench-{n}")
            wall = time.perf_counter() - t0
            rows.append((n, wall, res.manifest["timings_sec"]))
            print(f"n={n:>8d}: {wall:6.2f}s  stages="
                  f"{ {k: round(v, 2) for k, v in rows[-1][2].items()} }")
        if len(rows) >= 2:
            n0, t0s, _ = rows[0]
            n1, t1s, _ = rows[-1]
            ideal = (n1 * np.log(n1)) / (n0 * np.log(n0))
            print(f"ratio {t1s / t0s:.2f} vs n log n ideal {ideal:.2f}")


if __name__ == "__main__":
    main()
