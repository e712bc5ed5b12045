"""Binary grid/attention files and the JSON/CSV report formats.

FGRID: b"FGRD", then little-endian u32 version (=1), H, W, C, then H*W*C
float32 values in (h, w, c) order. ATTW: b"ATTW", version, N_q, H, W, then
N_q*H*W float32 values, one row per query. Files must be exactly
header + payload bytes long.

Concurrent writes to the same path are the caller's problem.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .connector import FeatureGrid

VERSION = 1
HEADER_SIZE = 20
DEFAULT_SIZE_CAP = 1 << 30
_HEADER = struct.Struct("<4s4I")


class FormatError(ValueError):
    """Base class for malformed binary files."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class NegativeWeightError(FormatError):
    pass


class SizeLimitError(FormatError):
    pass


@dataclass(frozen=True)
class AttentionWeights:
    """Query-to-grid attention, one row of H*W weights per query."""

    weights: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape[1] != self.height * self.width:
            raise ValueError(f"weights {w.shape} do not match a {self.height}x{self.width} grid")
        object.__setattr__(self, "weights", w)

    @property
    def n_queries(self) -> int:
        return self.weights.shape[0]


def _pack(magic: bytes, dims: tuple[int, int, int], values: np.ndarray) -> bytes:
    return _HEADER.pack(magic, VERSION, *dims) + np.ascontiguousarray(values, dtype="<f4").tobytes()


def _unpack(data: bytes, magic: bytes, size_cap: int, source: str) -> tuple[tuple[int, int, int], np.ndarray]:
    if len(data) < HEADER_SIZE:
        raise TruncatedError(f"{source}: {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    got, version, a, b, c = _HEADER.unpack_from(data)
    if got != magic:
        raise BadMagicError(f"{source}: bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise VersionError(f"{source}: unsupported version {version}, expected {VERSION}")
    payload = 4 * a * b * c
    if payload > size_cap:
        raise SizeLimitError(f"{source}: header asks for {payload} payload bytes, cap is {size_cap}")
    if len(data) < HEADER_SIZE + payload:
        raise TruncatedError(f"{source}: payload has {len(data) - HEADER_SIZE} bytes, expected {payload}")
    if len(data) > HEADER_SIZE + payload:
        raise TrailingDataError(f"{source}: {len(data) - HEADER_SIZE - payload} unexpected trailing bytes")
    values = np.frombuffer(data, dtype="<f4", count=a * b * c, offset=HEADER_SIZE)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{source}: payload contains NaN or Inf")
    return (a, b, c), values


def _read(path, size_cap: int) -> bytes:
    path = Path(path)
    size = path.stat().st_size
    if size > HEADER_SIZE + size_cap:
        raise SizeLimitError(f"{path}: file of {size} bytes exceeds the size cap")
    return path.read_bytes()


def encode_fgrid(grid: FeatureGrid) -> bytes:
    v = grid.values.astype("<f4")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("grid values overflow float32")
    return _pack(b"FGRD", (grid.height, grid.width, grid.channels), v)


def decode_fgrid(data: bytes, size_cap: int = DEFAULT_SIZE_CAP, source: str = "<bytes>") -> FeatureGrid:
    (h, w, c), values = _unpack(data, b"FGRD", size_cap, source)
    if min(h, w, c) < 1:
        raise FormatError(f"{source}: empty grid {h}x{w}x{c}")
    return FeatureGrid(values.astype(np.float64).reshape(h, w, c))


def write_fgrid(grid: FeatureGrid, path) -> None:
    Path(path).write_bytes(encode_fgrid(grid))


def read_fgrid(path, size_cap: int = DEFAULT_SIZE_CAP) -> FeatureGrid:
    return decode_fgrid(_read(path, size_cap), size_cap, str(path))


def encode_attw(att: AttentionWeights) -> bytes:
    w = np.asarray(att.weights).astype("<f4")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("attention weights are not finite")
    if np.any(w < 0):
        raise NegativeWeightError("attention weights must be nonnegative")
    return _pack(b"ATTW", (att.n_queries, att.height, att.width), w)


def decode_attw(data: bytes, size_cap: int = DEFAULT_SIZE_CAP, source: str = "<bytes>") -> AttentionWeights:
    (nq, h, w), values = _unpack(data, b"ATTW", size_cap, source)
    if np.any(values < 0):
        raise NegativeWeightError(f"{source}: negative attention weight")
    return AttentionWeights(values.astype(np.float64).reshape(nq, h * w), h, w)


def write_attw(att: AttentionWeights, path) -> None:
    Path(path).write_bytes(encode_attw(att))


def read_attw(path, size_cap: int = DEFAULT_SIZE_CAP) -> AttentionWeights:
    return decode_attw(_read(path, size_cap), size_cap, str(path))


def json_report(tool: str, version: str, inputs: dict, outputs: dict) -> str:
    """Deterministic JSON text with the {tool, version, inputs, outputs} layout."""
    doc = {"tool": tool, "version": version, "inputs": inputs, "outputs": outputs}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def profile_csv(radii, values) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["r", "value"])
    for r, v in zip(radii, values):
        writer.writerow([int(r), repr(float(v))])
    return buf.getvalue()


def read_profile_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (
        np.array([int(r["r"]) for r in rows], dtype=np.int64),
        np.array([float(r["value"]) for r in rows], dtype=np.float64),
    )


def table_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
