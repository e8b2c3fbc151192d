"""Turbine blade section geometry.

Coordinates are blade-local: x is the axial direction normalized so the
section spans x/c in [0, 1], y is the tangential direction in the same
units.  Metal angles are measured from the axial direction; the section
turns the flow across the axial direction, so the exit camber tangent
slopes opposite to the inlet tangent.

Each surface side is stored as a single-valued curve y(x) sampled on a
cosine-clustered x grid, pressure side below the camber line, suction
side above.  Thickness and bump perturbations are applied as tangential
offsets from the camber line, which keeps both sides on the shared x
grid and the section closed at both ends.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

TE_CLOSURE_TOL = 1e-9  # max gap between the two trailing-edge points

# Closed trailing-edge half-thickness polynomial (coefficients of
# sqrt(x), x, x^2, x^3, x^4).  Peak value 0.1 near x = 0.30, exactly
# zero at x = 1, blunt sqrt(x) nose at x = 0.
_THICK_COEF = (0.2969, -0.1260, -0.3516, 0.2843, -0.1036)


class GeometryError(ValueError):
    """Invalid blade geometry or perturbation request."""


@dataclass(frozen=True)
class DatumSpec:
    """Datum section parameters.

    Angles are magnitudes in degrees from axial.  chord is the axial
    extent and fixes the length unit; every other length is a fraction
    of it.
    """

    inlet_metal_angle: float = 41.08   # deg from axial at the leading edge
    exit_metal_angle: float = 69.25    # deg from axial at the trailing edge
    pitch_to_chord: float = 0.79       # cascade pitch / chord
    chord: float = 1.0
    max_thickness: float = 0.12        # peak thickness / chord, near 30% chord
    points_per_side: int = 200
    camber_join: float = 0.45          # x/c where the arc hands over to the parabola
    camber_turn_split: float = 0.95    # fraction of total turning done by the join

    def __post_init__(self):
        if not (0.0 < self.inlet_metal_angle < 85.0):
            raise GeometryError(f"inlet metal angle out of range: {self.inlet_metal_angle}")
        if not (0.0 < self.exit_metal_angle < 85.0):
            raise GeometryError(f"exit metal angle out of range: {self.exit_metal_angle}")
        if self.pitch_to_chord <= 0.0:
            raise GeometryError(f"pitch_to_chord must be positive: {self.pitch_to_chord}")
        if self.chord <= 0.0:
            raise GeometryError(f"chord must be positive: {self.chord}")
        # Zero thickness is allowed: it degenerates to a camber sheet,
        # which the geometry supports even though the flow solver cannot.
        if not (0.0 <= self.max_thickness < 0.5):
            raise GeometryError(f"max_thickness out of range: {self.max_thickness}")
        if self.points_per_side < 10:
            raise GeometryError(f"points_per_side too small: {self.points_per_side}")
        if not (0.0 < self.camber_join < 1.0):
            raise GeometryError(f"camber_join out of (0, 1): {self.camber_join}")
        if not (0.0 < self.camber_turn_split <= 1.0):
            raise GeometryError(f"camber_turn_split out of (0, 1]: {self.camber_turn_split}")


@dataclass(frozen=True)
class BladeProfile:
    """Sampled blade section: two sides, leading edge to trailing edge."""

    pressure: np.ndarray  # (n, 2) x/c, y/c, LE -> TE
    suction: np.ndarray   # (n, 2)
    blade_id: int = 0

    def __post_init__(self):
        validate_profile(self)

    @property
    def points_per_side(self) -> int:
        return self.pressure.shape[0]

    def side(self, name: str) -> np.ndarray:
        if name == "pressure":
            return self.pressure
        if name == "suction":
            return self.suction
        raise GeometryError(f"unknown side: {name!r}")


def validate_profile(profile: BladeProfile) -> None:
    p, s = profile.pressure, profile.suction
    if p.shape != s.shape or p.ndim != 2 or p.shape[1] != 2:
        raise GeometryError(f"side shape mismatch: {p.shape} vs {s.shape}")
    if not (np.isfinite(p).all() and np.isfinite(s).all()):
        raise GeometryError("non-finite coordinates")
    for name, xy in (("pressure", p), ("suction", s)):
        x = xy[:, 0]
        if x[0] < -1e-12 or x[-1] > 1.0 + 1e-12 or np.any(np.diff(x) < 0):
            raise GeometryError(f"{name} x/c not non-decreasing within [0, 1]")
    if np.hypot(*(p[0] - s[0])) > TE_CLOSURE_TOL:
        raise GeometryError("leading-edge points of the two sides do not coincide")
    if np.hypot(*(p[-1] - s[-1])) > TE_CLOSURE_TOL:
        raise GeometryError("trailing-edge gap exceeds closure tolerance")
    if np.any(s[:, 1] < p[:, 1]):
        raise GeometryError("sides cross: suction y < pressure y")


def cosine_stations(n: int) -> np.ndarray:
    """x/c stations clustered toward both edges, x_j = (1 - cos(pi j/(n-1)))/2."""
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))


def camber_line(x: np.ndarray, spec: DatumSpec) -> np.ndarray:
    """Camber y(x): circular arc up front, parabolic aft section.

    The tangent angle runs from +inlet to -exit metal angle (turning
    crosses the axial direction).  The arc carries camber_turn_split of
    the total turning up to x = camber_join; the parabola finishes the
    rest.  Front-loading the turning like this is what closes the blade
    passage down to its design throat; an evenly-turning camber leaves
    the covered passage too open and the cascade under-turns badly.
    Both pieces meet the end tangents exactly and join with a
    continuous slope.
    """
    a1 = math.radians(spec.inlet_metal_angle)
    a2 = -math.radians(spec.exit_metal_angle)
    xj = spec.camber_join
    aj = a1 - spec.camber_turn_split * (a1 - a2)

    # Arc: tangent angle linear in arc length <=> sin(theta) linear in x.
    span = math.sin(a1) - math.sin(aj)
    xa = np.minimum(x, xj)
    if abs(span) > 1e-12:
        sin_t = math.sin(a1) - (xa / xj) * span
        y_arc = (np.sqrt(1.0 - sin_t**2) - math.cos(a1)) * (xj / span)
    else:
        y_arc = math.tan(a1) * xa

    # Parabola: slope linear in x from tan(aj) at the join to tan(a2) at the TE.
    tj, t2 = math.tan(aj), math.tan(a2)
    xp = np.maximum(x, xj) - xj
    y_par = tj * xp + 0.5 * (t2 - tj) / (1.0 - xj) * xp**2

    if abs(span) > 1e-12:
        sin_j = math.sin(aj)
        y_join = (math.sqrt(1.0 - sin_j**2) - math.cos(a1)) * (xj / span)
    else:
        y_join = math.tan(a1) * xj
    return np.where(x <= xj, y_arc, y_join + y_par)


def half_thickness(x: np.ndarray, spec: DatumSpec) -> np.ndarray:
    """Half thickness t(x)/2; closed TE, rounded LE, peak near 30% chord."""
    c = _THICK_COEF
    poly = c[0] * np.sqrt(x) + x * (c[1] + x * (c[2] + x * (c[3] + x * c[4])))
    # The polynomial closes the TE exactly in reals; clamp the float noise
    # (~1e-17 at x = 1) so thickness is never negative.
    return (spec.max_thickness / 0.2) * np.maximum(poly, 0.0)


def build_datum(spec: DatumSpec = DatumSpec()) -> BladeProfile:
    """Construct the datum section from camber plus tangential thickness."""
    x = cosine_stations(spec.points_per_side)
    yc = camber_line(x, spec)
    yt = half_thickness(x, spec)
    pressure = np.column_stack([x, yc - yt])
    suction = np.column_stack([x, yc + yt])
    return BladeProfile(pressure=pressure, suction=suction, blade_id=0)


@dataclass(frozen=True)
class PerturbSpec:
    """Sine-bump perturbation of one side's tangential offset.

    Each bump peaks at its center with the given amplitude (chord
    units); width sets the bump extent (0.2 is the plain half-sine).
    An envelope fades every bump to exactly zero for x/c <= 0.05 and
    x/c >= 0.95 so the edge points never move.
    """

    side: str
    centers: tuple[float, ...]
    amplitudes: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        if self.side not in ("pressure", "suction"):
            raise GeometryError(f"unknown side: {self.side!r}")
        n = len(self.centers)
        if len(self.amplitudes) != n or len(self.widths) != n:
            raise GeometryError("centers/amplitudes/widths length mismatch")
        for c in self.centers:
            if not (0.05 < c < 0.95):
                raise GeometryError(f"bump center out of (0.05, 0.95): {c}")
        for a in self.amplitudes:
            if abs(a) > 0.05:
                raise GeometryError(f"bump amplitude exceeds 0.05 chord: {a}")
        for w in self.widths:
            if w <= 0.0:
                raise GeometryError(f"bump width must be positive: {w}")


def _edge_envelope(x: np.ndarray) -> np.ndarray:
    # smoothstep up over [0.05, 0.15], down over [0.85, 0.95]
    def smoothstep(u):
        u = np.clip(u, 0.0, 1.0)
        return u * u * (3.0 - 2.0 * u)

    return smoothstep((x - 0.05) / 0.10) * smoothstep((0.95 - x) / 0.10)


def bump_displacement(x: np.ndarray, pspec: PerturbSpec) -> np.ndarray:
    """Tangential displacement field of the bump set at stations x."""
    env = _edge_envelope(x)
    disp = np.zeros_like(x)
    for c, a, w in zip(pspec.centers, pspec.amplitudes, pspec.widths):
        m = math.log(0.5) / math.log(c)      # sin peak lands on the center
        t = 0.2 / w                           # width 0.2 -> plain half-sine
        disp += a * np.sin(np.pi * x**m) ** t * env
    return disp


def perturb(profile: BladeProfile, pspec: PerturbSpec) -> BladeProfile:
    """Apply bumps to one side; the other side is untouched.

    Raises GeometryError if the perturbed side crosses the other one
    (negative thickness).
    """
    xy = profile.side(pspec.side)
    new = xy.copy()
    new[:, 1] = xy[:, 1] + bump_displacement(xy[:, 0], pspec)
    if pspec.side == "pressure":
        return replace(profile, pressure=new)
    return replace(profile, suction=new)


@dataclass(frozen=True)
class BumpAxes:
    """Grid axes for one bump slot: every (center, amplitude, width) combination."""

    centers: tuple[float, ...]
    amplitudes: tuple[float, ...]
    widths: tuple[float, ...]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (len(self.centers), len(self.amplitudes), len(self.widths))


@dataclass(frozen=True)
class SweepGrid:
    """Cross product of bump-parameter axes for both sides.

    Library size is the product of all axis sizes.  Optional seeded
    jitter decorates each grid point: amplitude and width scale by a
    uniform factor, centers shift by a uniform offset.  Amplitude
    jitter is multiplicative, so a zero-amplitude grid point stays the
    exact datum.
    """

    pressure: tuple[BumpAxes, ...]
    suction: tuple[BumpAxes, ...]
    amp_jitter: float = 0.0     # fractional, amplitude *= U[1-j, 1+j]
    center_jitter: float = 0.0  # absolute x/c shift, center += U[-j, +j]
    width_jitter: float = 0.0   # fractional, width *= U[1-j, 1+j]

    @property
    def dims(self) -> tuple[int, ...]:
        out: list[int] = []
        for side in (self.pressure, self.suction):
            for bump in side:
                out.extend(bump.dims)
        return tuple(out)

    @property
    def count(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))


def _grid_point(grid: SweepGrid, index: int, seed: int) -> tuple[PerturbSpec, PerturbSpec]:
    # Indices past the grid size wrap onto the grid but keep their own
    # jitter stream, so oversized libraries stay distinct blades.
    digits = np.unravel_index(index % grid.count, grid.dims)
    rng = np.random.default_rng([seed, index])
    it = iter(digits)
    specs = []
    for side_name, side in (("pressure", grid.pressure), ("suction", grid.suction)):
        centers, amps, widths = [], [], []
        for bump in side:
            ci, ai, wi = next(it), next(it), next(it)
            # Draw jitter unconditionally to keep the stream layout fixed.
            af = rng.uniform(1.0 - grid.amp_jitter, 1.0 + grid.amp_jitter)
            cd = rng.uniform(-grid.center_jitter, grid.center_jitter)
            wf = rng.uniform(1.0 - grid.width_jitter, 1.0 + grid.width_jitter)
            centers.append(bump.centers[ci] + cd)
            amps.append(bump.amplitudes[ai] * af)
            widths.append(bump.widths[wi] * wf)
        specs.append(PerturbSpec(side_name, tuple(centers), tuple(amps), tuple(widths)))
    return specs[0], specs[1]


def generate_library(
    datum: BladeProfile, grid: SweepGrid, seed: int, count: int | None = None
) -> tuple[list[BladeProfile], list[int]]:
    """Enumerate the sweep in grid-index order.

    Returns (profiles, skipped_indices).  Blade ids equal grid indices,
    so the sequence is reproducible for a given grid and seed no matter
    how the work is scheduled.  Invalid combinations (side crossing)
    are skipped and reported, never silently renumbered.  count, when
    given, truncates or extends the enumeration (extension relies on
    jitter for distinctness).
    """
    profiles: list[BladeProfile] = []
    skipped: list[int] = []
    if count is None:
        count = grid.count
    for index in range(count):
        p_spec, s_spec = _grid_point(grid, index, seed)
        try:
            blade = perturb(perturb(datum, p_spec), s_spec)
        except GeometryError:
            skipped.append(index)
            continue
        profiles.append(replace(blade, blade_id=index))
    return profiles, skipped


# --- serialization ---

def profile_to_bytes(profile: BladeProfile) -> bytes:
    """id as unsigned 32-bit, then 2 * points_per_side (x, y) float64 pairs,
    little endian, pressure LE->TE then suction LE->TE."""
    coords = np.concatenate([profile.pressure, profile.suction], axis=0)
    return struct.pack("<I", profile.blade_id) + coords.astype("<f8").tobytes()


def profile_from_bytes(buf: bytes, points_per_side: int) -> BladeProfile:
    (blade_id,) = struct.unpack_from("<I", buf, 0)
    coords = np.frombuffer(buf, dtype="<f8", count=4 * points_per_side, offset=4)
    coords = coords.reshape(2 * points_per_side, 2).astype(np.float64)
    return BladeProfile(
        pressure=coords[:points_per_side].copy(),
        suction=coords[points_per_side:].copy(),
        blade_id=int(blade_id),
    )


def profile_record_size(points_per_side: int) -> int:
    return 4 + 4 * points_per_side * 8


def profile_to_text(profile: BladeProfile) -> str:
    """Plain-text export, one 'x y side' triple per line."""
    lines = []
    for name in ("pressure", "suction"):
        for x, y in profile.side(name):
            lines.append(f"{float(x)!r} {float(y)!r} {name}")
    return "\n".join(lines) + "\n"
