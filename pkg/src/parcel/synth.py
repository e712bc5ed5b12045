"""Seeded synthetic feature grids, so every analysis runs without model weights."""

from __future__ import annotations

import numpy as np

from .connector import FeatureGrid

KINDS = ("gaussian", "cosine", "impulse")


def parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise ValueError(f"shape must look like HxWxC with positive sides, got {text!r}")
    return tuple(int(p) for p in parts)


def synth_grid(kind: str, shape: tuple[int, int, int], seed: int = 0, modes: int = 3) -> FeatureGrid:
    h, w, c = shape
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        return FeatureGrid(rng.standard_normal((h, w, c)))
    if kind == "cosine":
        hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        out = np.zeros((h, w, c))
        for ch in range(c):
            for _ in range(modes):
                fu = rng.integers(0, max(h // 2, 1) + 1)
                fv = rng.integers(0, max(w // 2, 1) + 1)
                phase = rng.uniform(0, 2 * np.pi)
                out[:, :, ch] += rng.uniform(0.5, 1.5) * np.cos(2 * np.pi * (fu * hh / h + fv * ww / w) + phase)
        return FeatureGrid(out)
    if kind == "impulse":
        out = np.zeros((h, w, c))
        n = max(1, (h * w) // 16)
        idx = rng.choice(h * w, size=n, replace=False)
        out.reshape(h * w, c)[idx] = rng.standard_normal((n, c))
        return FeatureGrid(out)
    raise ValueError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
