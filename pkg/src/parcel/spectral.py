"""Spectral diagnostics for feature grids and attention footprints.

Pipeline for one grid: remove the per-channel spatial mean, take the 2D DFT
scaled by 1/(H*W), average |coefficient|^2 over channels, then average that
power over unit-width rings around the (shifted) origin for radii
1..floor(min(H, W)/2). Grids are always analyzed at their native size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .connector import FeatureGrid
from .numerics import ShapeError

EPSILON = 1e-15


@dataclass(frozen=True)
class Spectrum:
    """Per-channel normalized DFT coefficients, shape (H, W, C), unshifted."""

    coefficients: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.coefficients.shape[:2]


@dataclass(frozen=True)
class PowerSpectrum:
    """Channel-averaged power. ``centered`` means the DC term sits at index (H//2, W//2)."""

    values: np.ndarray
    centered: bool = False

    def shifted(self) -> "PowerSpectrum":
        if self.centered:
            return self
        return PowerSpectrum(np.fft.fftshift(self.values), True)


@dataclass(frozen=True)
class RadialProfile:
    """Power per radius; radii with empty rings are left out, never zero-filled."""

    r_max: int
    radii: np.ndarray
    values: np.ndarray
    normalized: bool = False
    epsilon: float = EPSILON

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if radii.shape != values.shape or radii.ndim != 1:
            raise ShapeError("radii and values must be 1-D arrays of equal length")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    @property
    def zero_energy(self) -> bool:
        return not np.any(self.values)

    def as_dict(self) -> dict[int, float]:
        return {int(r): float(v) for r, v in zip(self.radii, self.values)}


def nyquist_radius(height: int, width: int) -> int:
    return min(height, width) // 2


def dc_remove(grid: FeatureGrid) -> FeatureGrid:
    v = grid.values
    return FeatureGrid(v - v.mean(axis=(0, 1), keepdims=True))


def dft2_normalized(grid: FeatureGrid) -> Spectrum:
    """DFT with basis exp(-2*pi*i*(u*h/H + v*w/W)) and a 1/(H*W) factor, after DC removal."""
    centered = dc_remove(grid).values
    h, w = centered.shape[:2]
    return Spectrum(np.fft.fft2(centered, axes=(0, 1)) / (h * w))


def parseval_gap(grid: FeatureGrid) -> np.ndarray:
    """Per-channel relative mismatch between spectral power and mean spatial AC energy."""
    centered = dc_remove(grid).values
    h, w = centered.shape[:2]
    spatial = np.sum(centered**2, axis=(0, 1)) / (h * w)
    spectral = np.sum(np.abs(dft2_normalized(grid).coefficients) ** 2, axis=(0, 1))
    scale = np.maximum(np.abs(spatial), np.finfo(float).tiny)
    return np.abs(spectral - spatial) / scale


def psd(spectrum: Spectrum) -> PowerSpectrum:
    return PowerSpectrum(np.mean(np.abs(spectrum.coefficients) ** 2, axis=2))


def grid_psd(grid: FeatureGrid) -> PowerSpectrum:
    return psd(dft2_normalized(grid))


def frequency_radius(height: int, width: int) -> np.ndarray:
    """rho(u, v) on the shifted grid, u in [-floor(H/2), ceil(H/2)-1] and likewise v."""
    u = np.arange(height) - height // 2
    v = np.arange(width) - width // 2
    return np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)


def radial_mean_power(power: PowerSpectrum) -> RadialProfile:
    s = power.shifted().values
    h, w = s.shape
    r_max = nyquist_radius(h, w)
    rho = frequency_radius(h, w)
    radii, values = [], []
    for r in range(1, r_max + 1):
        ring = (rho >= r - 0.5) & (rho < r + 0.5) & (rho <= r_max)
        if ring.any():
            radii.append(r)
            values.append(s[ring].mean())
    return RadialProfile(r_max, np.array(radii, dtype=np.int64), np.array(values, dtype=np.float64))


def normalize_profile(p: RadialProfile, epsilon: float | None = None) -> RadialProfile:
    eps = p.epsilon if epsilon is None else epsilon
    return RadialProfile(p.r_max, p.radii, p.values / (np.sum(p.values) + eps), True, eps)


def cumulative_concentration(p: RadialProfile) -> RadialProfile:
    if not p.normalized:
        raise ValueError("cumulative concentration needs a normalized profile")
    return RadialProfile(p.r_max, p.radii, np.cumsum(p.values), True, p.epsilon)


def radial_profile(grid: FeatureGrid, epsilon: float = EPSILON) -> RadialProfile:
    """Normalized radial mean power of a single grid."""
    return normalize_profile(radial_mean_power(grid_psd(grid)), epsilon)


def attention_footprint(grid: FeatureGrid, weights, epsilon: float = EPSILON) -> RadialProfile:
    """Normalized radial profile of the grid re-weighted by each query's attention map.

    Each attention row is rescaled to unit spatial mean, multiplied into the
    grid, and the resulting PSDs are averaged over queries.
    """
    a = np.asarray(weights, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != grid.n_tokens:
        raise ShapeError(f"weights {a.shape} do not match a {grid.height}x{grid.width} grid")
    if a.shape[0] == 0:
        raise ShapeError("attention footprint needs at least one query")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("attention weights must be finite and nonnegative")
    maps = a.reshape(-1, grid.height, grid.width)
    maps = maps / (maps.mean(axis=(1, 2), keepdims=True) + epsilon)
    total = np.zeros((grid.height, grid.width))
    for m in maps:
        total += grid_psd(FeatureGrid(grid.values * m[:, :, None])).values
    mean_power = PowerSpectrum(total / len(maps))
    return normalize_profile(radial_mean_power(mean_power), epsilon)


def dataset_average(profiles: Sequence[RadialProfile]) -> RadialProfile:
    """Pointwise mean of per-sample profiles, summed in input order."""
    if not profiles:
        raise ValueError("no profiles to average")
    first = profiles[0]
    acc = np.zeros_like(first.values)
    for p in profiles:
        if p.r_max != first.r_max or not np.array_equal(p.radii, first.radii):
            raise ShapeError(f"profile support mismatch: r_max {p.r_max} vs {first.r_max}")
        acc = acc + p.values
    return RadialProfile(first.r_max, first.radii, acc / len(profiles), first.normalized, first.epsilon)


def truncate_profile(p: RadialProfile, r_max: int) -> RadialProfile:
    """Restrict a profile to radii <= r_max, for explicit cross-family comparisons."""
    keep = p.radii <= r_max
    return RadialProfile(min(r_max, p.r_max), p.radii[keep], p.values[keep], p.normalized, p.epsilon)


def high_frequency_mass(p: RadialProfile, cutoff: int) -> float:
    """Share of a normalized profile above radius ``cutoff``."""
    return float(np.sum(p.values[p.radii > cutoff]))
