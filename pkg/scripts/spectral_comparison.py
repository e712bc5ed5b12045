#!/usr/bin/env python
"""Dataset-averaged spectral profiles for pooled anchors and query footprints.

Runs on seeded synthetic grids with randomly initialized connectors, so the
curves exercise the measurement pipeline; they say nothing about trained models.

    python scripts/spectral_comparison.py --samples 32 --budget 100 --out runs/spectral
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from parcel.baselines import m3_forward, mqt_forward
from parcel.connector import ConnectorParams, FeatureGrid, QueryBank, pcqr_forward, route_budget
from parcel.iofmt import profile_csv
from parcel.spectral import attention_footprint, cumulative_concentration, dataset_average, radial_profile
from parcel.synth import synth_grid


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/spectral"))
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    params = ConnectorParams.init(args.width, args.heads, 4 * args.width, rng)
    bank = QueryBank.init(256, args.width, rng)
    parcel_bank = QueryBank(bank.embeddings[:192])
    route = route_budget(args.budget)

    families = {"source": [], "pool_4x4": [], "pool_8x8": [], "parcel_query": [], "mqt_query": []}
    for i in range(args.samples):
        kind = ("cosine", "gaussian")[i % 2]
        grid = synth_grid(kind, (16, 16, args.width), seed=args.seed * 100_003 + i)
        families["source"].append(radial_profile(grid))
        families["pool_4x4"].append(radial_profile(FeatureGrid.from_tokens(m3_forward(grid, 16), 4, 4)))
        families["pool_8x8"].append(radial_profile(FeatureGrid.from_tokens(m3_forward(grid, 64), 8, 8)))
        out = pcqr_forward(grid, route, parcel_bank, params)
        if route.n_queries:
            families["parcel_query"].append(attention_footprint(grid, out.weights))
        families["mqt_query"].append(attention_footprint(grid, mqt_forward(grid, args.budget, bank, params).weights))

    args.out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, profiles in families.items():
        if not profiles:
            continue
        mean = dataset_average(profiles)
        conc = cumulative_concentration(mean)
        (args.out / f"{name}_radial.csv").write_text(profile_csv(mean.radii, mean.values))
        (args.out / f"{name}_concentration.csv").write_text(profile_csv(conc.radii, conc.values))
        summary[name] = {"r_max": mean.r_max, "concentration_r1": float(conc.values[0])}
        print(f"{name:>13}: r_max={mean.r_max}  C(1)={conc.values[0]:.3f}")
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
