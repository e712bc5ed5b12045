#!/usr/bin/env python
"""Prefill TFLOPs and KV cache for every budget and connector mode, as CSV."""

from __future__ import annotations

import argparse
import sys

from parcel.connector import budget_menu
from parcel.costmodel import ModelConfig, Workload, total_report
from parcel.iofmt import table_csv


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--step", type=int, default=16)
    args = p.parse_args()

    cfg = ModelConfig()
    rows = []
    for b in range(16, 257, args.step):
        for mode in ("parcel", "mqt", "m3"):
            if mode == "m3" and b not in budget_menu("m3"):
                continue
            w = Workload.image(b, mode=mode) if args.frames == 1 else Workload.video(b, frames=args.frames, mode=mode)
            r = total_report(cfg, w)
            rows.append({"budget": b, "mode": mode, "connector_flops": r.connector,
                         "total_flops": r.total, "tflops": str(r.tflops), "kv_mb": r.kv_mb})
    sys.stdout.write(table_csv(rows, list(rows[0])))


if __name__ == "__main__":
    main()
