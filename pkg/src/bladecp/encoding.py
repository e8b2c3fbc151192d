"""Blade profile <-> 20x20 input matrix for the station classifiers.

A profile's 400 tangential coordinates fill a 20x20 matrix in a fixed
index layout: pressure-side points LE->TE occupy rows 0-9 in row-major
order, suction-side points LE->TE occupy rows 10-19.  For a point index
i on its side, row = side_offset + i // 20 and col = i % 20, so the
cell position encodes the axial station and the cell value encodes the
normalized tangential coordinate.

Values are normalized to [0, 1] by a library-wide y range so every
blade is encoded on the same scale; out-of-range coordinates clamp and
are counted rather than raised, since a perturbed blade may poke
slightly past the range observed when the normalization was fixed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import BladeProfile

MATRIX_SIDE = 20
MATRIX_CELLS = MATRIX_SIDE * MATRIX_SIDE         # 400, one per surface point
_SIDE_ROWS = MATRIX_SIDE // 2                    # rows per blade side


class EncodingError(ValueError):
    """Invalid normalization range or matrix."""


@dataclass(frozen=True)
class NormRange:
    """Library-wide tangential-coordinate range used for normalization."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not (np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise EncodingError("non-finite normalization range")
        if self.y_min >= self.y_max:
            raise EncodingError(f"empty normalization range: [{self.y_min}, {self.y_max}]")

    @property
    def span(self) -> float:
        return self.y_max - self.y_min


@dataclass
class ClampCounter:
    """Running count of encoded values that fell outside the norm range."""

    clamped: int = 0


def library_norm(profiles: Iterable[BladeProfile]) -> NormRange:
    """Global y range over both sides of every profile."""
    y_min = np.inf
    y_max = -np.inf
    for p in profiles:
        lo = min(p.pressure[:, 1].min(), p.suction[:, 1].min())
        hi = max(p.pressure[:, 1].max(), p.suction[:, 1].max())
        y_min = min(y_min, lo)
        y_max = max(y_max, hi)
    if not np.isfinite(y_min) or y_min >= y_max:
        raise EncodingError("cannot derive a normalization range from the profiles")
    return NormRange(float(y_min), float(y_max))


def cell_for_point(side: str, index: int) -> tuple[int, int]:
    """(row, col) of surface point `index` (LE->TE) on the given side."""
    if side == "pressure":
        offset = 0
    elif side == "suction":
        offset = _SIDE_ROWS
    else:
        raise EncodingError(f"unknown side: {side!r}")
    if not 0 <= index < MATRIX_CELLS // 2:
        raise EncodingError(f"point index out of range: {index}")
    return offset + index // MATRIX_SIDE, index % MATRIX_SIDE


def point_for_cell(row: int, col: int) -> tuple[str, int]:
    """Inverse of cell_for_point."""
    if not (0 <= row < MATRIX_SIDE and 0 <= col < MATRIX_SIDE):
        raise EncodingError(f"cell out of range: ({row}, {col})")
    side = "pressure" if row < _SIDE_ROWS else "suction"
    return side, (row % _SIDE_ROWS) * MATRIX_SIDE + col


def encode(
    profile: BladeProfile, norm: NormRange, counter: ClampCounter | None = None
) -> np.ndarray:
    """Normalized (20, 20) float64 matrix of the profile's y coordinates."""
    if 2 * profile.points_per_side != MATRIX_CELLS:
        raise EncodingError(
            f"profile has {profile.points_per_side} points per side; "
            f"the matrix encodes exactly {MATRIX_CELLS // 2}"
        )
    y = np.concatenate([profile.pressure[:, 1], profile.suction[:, 1]])
    u = (y - norm.y_min) / norm.span
    out_of_range = int(np.count_nonzero((u < 0.0) | (u > 1.0)))
    if counter is not None:
        counter.clamped += out_of_range
    return np.clip(u, 0.0, 1.0).reshape(MATRIX_SIDE, MATRIX_SIDE)


def decode(matrix: np.ndarray, norm: NormRange) -> tuple[np.ndarray, np.ndarray]:
    """Per-point y values (pressure, suction) recovered from a matrix."""
    validate_matrix(matrix)
    y = norm.y_min + matrix.reshape(MATRIX_CELLS) * norm.span
    half = MATRIX_CELLS // 2
    return y[:half].copy(), y[half:].copy()


def validate_matrix(matrix: np.ndarray) -> None:
    if matrix.shape != (MATRIX_SIDE, MATRIX_SIDE):
        raise EncodingError(f"matrix shape {matrix.shape} != (20, 20)")
    if not np.isfinite(matrix).all():
        raise EncodingError("non-finite matrix cells")
    if matrix.min() < 0.0 or matrix.max() > 1.0:
        raise EncodingError("matrix cells outside [0, 1]")


# --- serialization ---

def matrix_to_bytes(matrix: np.ndarray) -> bytes:
    """400 little-endian float32 values, row-major."""
    return np.ascontiguousarray(matrix, dtype="<f4").tobytes()


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) != MATRIX_CELLS * 4:
        raise EncodingError(f"matrix buffer is {len(buf)} bytes, expected {MATRIX_CELLS * 4}")
    flat = np.frombuffer(buf, dtype="<f4").astype(np.float64)
    return flat.reshape(MATRIX_SIDE, MATRIX_SIDE)


MATRIX_RECORD_SIZE = MATRIX_CELLS * 4


def matrix_to_pgm(matrix: np.ndarray) -> bytes:
    """Binary 8-bit PGM image of the matrix, cell value * 255."""
    validate_matrix(matrix)
    pixels = np.round(matrix * 255.0).astype(np.uint8)
    header = f"P5\n{MATRIX_SIDE} {MATRIX_SIDE}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def grey_to_pgm(image: np.ndarray) -> bytes:
    """Binary 8-bit PGM of any 2-D greyscale image with values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise EncodingError(f"image must be 2-D: shape {img.shape}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise EncodingError("image values out of [0, 1]")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + np.round(img * 255.0).astype(np.uint8).tobytes()
