"""Compiled kernels versus the numpy fallback on the two hot paths.

    python benchmarks/bench_kernels.py [--repeat 5]

The physics step is timed both as one scalar call (the environment's per-step
cost) and vectorised over a SOC grid; the DP sweep is one full backward pass
over a desk-scale voyage on the default oracle grid.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from shipems import _kernels_py as py
from shipems.config import ProfileConfig, ShipConfig
from shipems.dp import DpGrid
from shipems.kernels import pack
from shipems.profiles import generate

try:
    from shipems import _kernels as ext
except ImportError:  # pragma: no cover
    ext = None


def cases():
    ship = ShipConfig(n_clusters=1)
    ph = pack(ship)
    args = (ph.params, ph.eff_x, ph.eff_eta, ph.conv)
    grid = DpGrid()
    xg, sg = grid.x_grid(), grid.soc_grid(ship)
    offs = grid.offsets(ship)
    prof = generate(0, 10, ProfileConfig(class_mix=(0.5, 0.5, 0.0))).train[0]
    pd = np.ascontiguousarray(prof.sailing_demand)
    pp = np.ascontiguousarray(prof.port_demand)
    x0, x1 = np.array([0.5]), np.array([0.54])

    def scalar_step(mod):
        return lambda: mod.step(*args, x0, x1, 0.8, 2000.0, 0, 1)

    def vector_step(mod):
        return lambda: mod.step(*args, x0, x1, sg, 2000.0, 0, 1)

    def dp_sweep(mod):
        vt = mod.port_cost_grid(*args, xg, sg, pp)
        return lambda: mod.dp_backward(*args, xg, sg, offs, pd, vt)

    return [("step (scalar SOC)", scalar_step, 2000), ("step (201 SOC nodes)", vector_step, 500),
            (f"DP sweep ({len(pd)} x {len(xg)} x {len(sg)})", dp_sweep, 1)]


def bench(repeat: int) -> list[dict]:
    rows = []
    for name, make, number in cases():
        row = {"kernel": name}
        for label, mod in (("numpy", py), ("compiled", ext)):
            if mod is None:
                continue
            fn = make(mod)
            best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
            row[f"{label}_s"] = best
        if "compiled_s" in row:
            row["speedup"] = row["numpy_s"] / row["compiled_s"]
        rows.append(row)
    return rows


def _fmt(seconds: float) -> str:
    if seconds >= 1.0:
        return f"{seconds:10.2f} s"
    if seconds >= 1e-3:
        return f"{seconds * 1e3:9.2f} ms"
    return f"{seconds * 1e6:9.1f} us"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args()
    rows = bench(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    if ext is None:
        print("compiled extension not built: timing the numpy fallback only")
    print(f"{'kernel':<28}{'numpy':>12}{'compiled':>12}{'speedup':>10}")
    for r in rows:
        comp = _fmt(r["compiled_s"]) if "compiled_s" in r else f"{'-':>12}"
        sp = f"{r['speedup']:9.1f}x" if "speedup" in r else f"{'-':>10}"
        print(f"{r['kernel']:<28}{_fmt(r['numpy_s'])}{comp}{sp}")


if __name__ == "__main__":
    main()
