"""Incompressible inviscid cascade flow by a linear-strength vortex panel method.

The blade contour carries a vortex sheet whose strength varies linearly
over each straight panel between surface nodes.  Cascade periodicity
enters through the kernel of an infinite vortex row of pitch t stacked
in the tangential (y) direction,

    w(z) = -i Gamma / (2 t) * coth(pi (z - z0) / t),

anchored so the induced velocity vanishes far upstream; the inlet
velocity is then exactly the specified one and the whole tangential
velocity jump Gamma/t appears downstream.  Flow tangency is collocated
at panel midpoints, closed either by the Kutta condition (equal and
opposite sheet strength at the two trailing-edge panels) or by a
prescribed total circulation.

With the interior held stagnant, the exterior surface speed at a node
equals the local sheet strength, so Cp = 1 - (gamma/U)^2 lands exactly
on the surface points.  Everything is normalized by the inlet speed and
inlet dynamic head (rho = U = 1, inlet static pressure = 0 gauge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import BladeProfile

TANGENCY_TOL = 1e-8          # max |V.n| at control points, fraction of inlet speed
ISOLATED_PITCH = 1e6         # pitch/chord at or above this solves the single-blade limit
_GL_ORDER = 4                # per-panel quadrature points for the cascade remainder
_TARGET_SIDE = 400           # internal solve resolution aimed for per side


class SolverError(ValueError):
    """Panel system could not be solved to tolerance."""


@dataclass(frozen=True)
class FlowConditions:
    """Inlet state and cascade spacing; angles in degrees from axial.

    inlet_static_pressure is the gauge reference p1; Cp is referenced to
    it and to the inlet dynamic head, so its value never enters the
    solve.  chord fixes the length unit (profiles are chord-normalized).
    """

    inlet_angle: float = 41.08
    inlet_speed: float = 1.0
    pitch_to_chord: float = 0.79
    rho: float = 1.0
    inlet_static_pressure: float = 0.0
    chord: float = 1.0

    def __post_init__(self):
        if abs(self.inlet_angle) >= 85.0:
            raise SolverError(f"inlet angle out of range: {self.inlet_angle}")
        if self.inlet_speed <= 0.0:
            raise SolverError(f"inlet speed must be positive: {self.inlet_speed}")
        if self.pitch_to_chord <= 0.0:
            raise SolverError(f"pitch must be positive: {self.pitch_to_chord}")
        if self.rho <= 0.0:
            raise SolverError(f"density must be positive: {self.rho}")
        if self.chord <= 0.0:
            raise SolverError(f"chord must be positive: {self.chord}")

    @property
    def is_isolated(self) -> bool:
        return not math.isfinite(self.pitch_to_chord) or self.pitch_to_chord >= ISOLATED_PITCH


@dataclass(frozen=True)
class CpDistribution:
    """Surface pressure coefficient at every profile point."""

    x_pressure: np.ndarray
    cp_pressure: np.ndarray
    x_suction: np.ndarray
    cp_suction: np.ndarray
    circulation: float       # counterclockwise-positive, units U * chord
    exit_angle: float        # deg from axial, signed
    tangency_residual: float
    blade_id: int = 0

    def __post_init__(self):
        cp_max = max(self.cp_pressure.max(), self.cp_suction.max())
        if cp_max > 1.0 + 0.02:
            raise SolverError(f"Cp exceeds stagnation bound: {cp_max}")
        if not (
            np.isfinite(self.cp_pressure).all()
            and np.isfinite(self.cp_suction).all()
            and math.isfinite(self.circulation)
        ):
            raise SolverError("non-finite Cp solution")

    def side(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "pressure":
            return self.x_pressure, self.cp_pressure
        if name == "suction":
            return self.x_suction, self.cp_suction
        raise SolverError(f"unknown side: {name!r}")


def _gl_rule() -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    return 0.5 * (x + 1.0), 0.5 * w  # mapped to [0, 1]


def _contour_nodes(pressure: np.ndarray, suction: np.ndarray) -> np.ndarray:
    """Closed contour, pressure TE -> LE -> suction TE (clockwise).

    The shared LE point appears once; the trailing edge keeps a double
    node so the Kutta condition can address both TE panels.
    """
    p = pressure[::-1]
    s = suction[1:]
    xy = np.concatenate([p, s], axis=0)
    return xy[:, 0] + 1j * xy[:, 1]


_CLEARANCE_FRACTION = 0.35   # target panel length as a fraction of side-to-side gap
_MAX_SPLIT = 32              # per-interval refinement cap


def _te_scale(profile: BladeProfile) -> float:
    """Mean length of the last stored interval on each side."""
    a = np.hypot(*(profile.pressure[-1] - profile.pressure[-2]))
    b = np.hypot(*(profile.suction[-1] - profile.suction[-2]))
    return 0.5 * (a + b)


def _interval_factors(
    pressure: np.ndarray, suction: np.ndarray, base: int, clear_floor: float
) -> list[np.ndarray]:
    """Per-interval split counts for each side, clearance-aware.

    Flat panels with midpoint collocation lose accuracy once two sheets
    run closer together than a panel length, which the two sides of a
    thin loaded trailing edge do.  Intervals are split until their
    length drops under a fraction of the local gap between the sides.
    The floor keeps the counts bounded where the sides meet.
    """
    xp, yp = pressure[:, 0], pressure[:, 1]
    xs, ys = suction[:, 0], suction[:, 1]
    factors = []
    for side in (pressure, suction):
        seg = np.diff(side, axis=0)
        length = np.hypot(seg[:, 0], seg[:, 1])
        xm = 0.5 * (side[:-1, 0] + side[1:, 0])
        clearance = np.interp(xm, xs, ys) - np.interp(xm, xp, yp)
        clearance = np.maximum(clearance, clear_floor)
        need = np.ceil(length / (_CLEARANCE_FRACTION * clearance)).astype(int)
        factors.append(np.clip(need, base, _MAX_SPLIT))
    return factors


def _oversample_sides(
    pressure: np.ndarray, suction: np.ndarray, base: int, clear_floor: float
):
    """Spline-refine both sides; original nodes stay in the refined sets.

    Parametric cubic splines in the node index keep the leading-edge
    region well behaved (surface coordinates are smooth functions of the
    index even where y(x) has a square-root nose).  Returns the refined
    sides plus, per side, the indices of the original nodes within them.
    """
    if base == 1:
        eye = np.arange(pressure.shape[0])
        return pressure, suction, eye, eye
    refined, maps = [], []
    counts_both = _interval_factors(pressure, suction, base, clear_floor)
    for side, counts in zip((pressure, suction), counts_both):
        t = np.arange(side.shape[0], dtype=float)
        pieces = [i + np.arange(c, dtype=float) / c for i, c in enumerate(counts)]
        tf = np.concatenate(pieces + [t[-1:]])
        refined.append(
            np.column_stack(
                [CubicSpline(t, side[:, 0])(tf), CubicSpline(t, side[:, 1])(tf)]
            )
        )
        maps.append(np.concatenate([[0], np.cumsum(counts)]))
    return refined[0], refined[1], maps[0], maps[1]


def _isolated_coefficients(zpts: np.ndarray, z1: np.ndarray, z2: np.ndarray):
    """Per-panel influence of unit nodal strengths, single-blade kernel.

    Returns (Ca, Cb): complex (P, M) arrays with w = Ca gamma_j + Cb gamma_j1.
    Evaluation exactly on a panel resolves to the principal branch; only
    the (continuous) normal component is consumed there.
    """
    L = np.abs(z2 - z1)
    e = (z2 - z1) / L
    zl = (zpts[:, None] - z1[None, :]) * np.conj(e)[None, :]
    A = np.log(zl / (zl - L))
    coef = -1j / (2.0 * np.pi) * np.conj(e)[None, :]
    Ca = coef * (A * (1.0 - zl / L) + 1.0)
    Cb = coef * ((zl / L) * A - 1.0)
    return Ca, Cb


def _cascade_remainder(zpts: np.ndarray, z1: np.ndarray, z2: np.ndarray, pitch: float):
    """Row kernel minus the single-blade singularity, Gauss-Legendre per panel.

    R(xi) = -i/2 * [ (coth(pi xi / pitch) + 1) / pitch - 1/(pi xi) ]
    is analytic at xi = 0 (the upstream anchoring supplies the +1), so a
    short fixed rule integrates it to solver precision.  coth + 1 is
    evaluated as 2/(1 - exp(-2 arg)), one complex exp per element; the
    exp overflows harmlessly to inf (giving the correct -0 limit) far
    upstream, so the overflow warning is suppressed.
    """
    u, w = _gl_rule()
    L = np.abs(z2 - z1)
    Ca = np.zeros((zpts.size, z1.size), dtype=complex)
    Cb = np.zeros_like(Ca)
    for uk, wk in zip(u, w):
        zq = z1 + (z2 - z1) * uk
        xi = zpts[:, None] - zq[None, :]
        arg = np.pi * xi / pitch
        with np.errstate(over="ignore"):
            R = -0.5j * (2.0 / (pitch * (1.0 - np.exp(-2.0 * arg))) - 1.0 / (np.pi * xi))
        Ca += (wk * (1.0 - uk)) * R
        Cb += (wk * uk) * R
    Ca *= L[None, :]
    Cb *= L[None, :]
    return Ca, Cb


def _nodal_coefficients(zpts: np.ndarray, nodes: np.ndarray, pitch: float | None) -> np.ndarray:
    """Complex velocity at zpts per unit nodal sheet strength, (P, M+1)."""
    z1, z2 = nodes[:-1], nodes[1:]
    Ca, Cb = _isolated_coefficients(zpts, z1, z2)
    if pitch is not None:
        Ra, Rb = _cascade_remainder(zpts, z1, z2, pitch)
        Ca = Ca + Ra
        Cb = Cb + Rb
    C = np.zeros((zpts.size, nodes.size), dtype=complex)
    C[:, :-1] += Ca
    C[:, 1:] += Cb
    return C


@dataclass(frozen=True)
class PanelSolution:
    """Solved sheet strengths plus enough context to probe the field."""

    nodes: np.ndarray        # complex contour nodes (at solve resolution)
    gamma: np.ndarray        # nodal sheet strength, counterclockwise-positive
    flow: FlowConditions
    pitch: float | None      # None in the single-blade limit
    tangency_residual: float
    orig_idx: np.ndarray     # solve-node index of each stored surface point

    @property
    def onset(self) -> complex:
        a = math.radians(self.flow.inlet_angle)
        return self.flow.inlet_speed * complex(math.cos(a), math.sin(a))

    @property
    def circulation(self) -> float:
        L = np.abs(np.diff(self.nodes))
        return float(np.sum(0.5 * L * (self.gamma[:-1] + self.gamma[1:])))

    def velocity_at(self, zpts: np.ndarray) -> np.ndarray:
        """Complex velocity u + iv at field points (not on the contour)."""
        zpts = np.atleast_1d(np.asarray(zpts, dtype=complex))
        C = _nodal_coefficients(zpts, self.nodes, self.pitch)
        w = C @ self.gamma
        return np.conj(w) + self.onset


def solve_panels(
    profile: BladeProfile,
    flow: FlowConditions,
    kutta: bool = True,
    circulation: float = 0.0,
    te_gap: float | None = None,
    oversample: int | None = None,
) -> PanelSolution:
    """Assemble and solve the tangency system.

    kutta=False replaces the Kutta row by a prescribed total circulation
    (needed for smooth bodies, where the sheet leaves a one-parameter
    circulation family undetermined).

    In Kutta mode the two trailing-edge endpoints are first nudged apart
    along their side normals by te_gap; None scales the gap to the last
    stored surface interval, which keeps the opened base self-similar
    across stored resolutions.  On a closed thin wedge the two TE panels
    are nearly coincident with opposite normals, which makes their
    tangency equations nearly dependent and lets an equal-and-opposite
    TE strength pair grow unchecked; a small open base restores
    conditioning while satisfying every tangency equation exactly.

    oversample solves on a spline-refined copy of the contour; None
    picks the even factor that brings each side closest to _TARGET_SIDE
    intervals, so the internal resolution (and hence the answer) is
    insensitive to the stored sampling.  Intervals where the two sides
    run closer together than a panel length (the thin TE) are split
    further.  The stored surface points remain a subset of the solve
    nodes.
    """
    n = profile.points_per_side
    if oversample is None:
        oversample = max(2, 2 * int(_TARGET_SIDE / (2 * (n - 1)) + 0.5))
    if oversample < 1:
        raise SolverError(f"oversample must be a positive integer: {oversample}")
    if te_gap is None:
        te_gap = _te_scale(profile) if kutta else 0.0
    pressure_w = profile.pressure.copy()
    suction_w = profile.suction.copy()
    if kutta and te_gap > 0.0:
        for side, sign in ((pressure_w, -1.0), (suction_w, 1.0)):
            d = side[-1] - side[-2]
            d /= math.hypot(*d)
            side[-1] += 0.5 * te_gap * sign * np.array([-d[1], d[0]])
    floor = 0.5 * (te_gap if te_gap > 0.0 else _te_scale(profile))
    pressure_f, suction_f, map_p, map_s = _oversample_sides(
        pressure_w, suction_w, oversample, floor
    )
    nodes = _contour_nodes(pressure_f, suction_f)
    n_fine_p = pressure_f.shape[0]
    orig_idx = np.empty(2 * n - 1, dtype=int)
    orig_idx[:n] = (n_fine_p - 1) - map_p[::-1]
    orig_idx[n:] = (n_fine_p - 1) + map_s[1:]
    z1, z2 = nodes[:-1], nodes[1:]
    L = np.abs(z2 - z1)
    if np.any(L <= 0.0):
        raise SolverError("degenerate geometry: zero-length panel")
    e = (z2 - z1) / L
    mid = 0.5 * (z1 + z2)
    # Outward normal of the clockwise contour: tangent rotated +90 deg.
    nx, ny = -e.imag, e.real

    pitch = None if flow.is_isolated else flow.pitch_to_chord
    C = _nodal_coefficients(mid, nodes, pitch)
    # w = u - iv  =>  V.n per unit gamma = Re(C) nx - Im(C) ny
    A = np.zeros((nodes.size, nodes.size))
    A[:-1] = C.real * nx[:, None] - C.imag * ny[:, None]

    a = math.radians(flow.inlet_angle)
    U = flow.inlet_speed
    rhs = np.zeros(nodes.size)
    rhs[:-1] = -(U * math.cos(a) * nx + U * math.sin(a) * ny)

    if kutta:
        A[-1, 0] = 1.0
        A[-1, -1] = 1.0
        rhs[-1] = 0.0
    else:
        A[-1, :-1] += 0.5 * L
        A[-1, 1:] += 0.5 * L
        rhs[-1] = circulation

    try:
        gamma = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as err:
        raise SolverError(
            f"singular influence matrix (cond={np.linalg.cond(A):.3e})"
        ) from err

    resid = A @ gamma - rhs
    tangency = float(np.abs(resid[:-1]).max())
    if not np.isfinite(gamma).all() or tangency > TANGENCY_TOL * U:
        raise SolverError(
            f"tangency residual {tangency:.3e} exceeds {TANGENCY_TOL:.1e} * U "
            f"(cond={np.linalg.cond(A):.3e})"
        )
    return PanelSolution(
        nodes=nodes,
        gamma=gamma,
        flow=flow,
        pitch=pitch,
        tangency_residual=tangency,
        orig_idx=orig_idx,
    )


def solve_cascade(
    profile: BladeProfile,
    flow: FlowConditions,
    kutta: bool = True,
    circulation: float = 0.0,
    te_gap: float | None = None,
    oversample: int | None = None,
) -> CpDistribution:
    """Surface Cp at every profile point, referenced to the inlet dynamic head."""
    sol = solve_panels(
        profile,
        flow,
        kutta=kutta,
        circulation=circulation,
        te_gap=te_gap,
        oversample=oversample,
    )
    n = profile.points_per_side
    # Surface speed at a node is |gamma|; node n-1 is the shared LE.
    cp = 1.0 - (sol.gamma[sol.orig_idx] / flow.inlet_speed) ** 2
    cp_pressure = cp[n - 1 :: -1]
    cp_suction = cp[n - 1 :]
    dist = CpDistribution(
        x_pressure=profile.pressure[:, 0].copy(),
        cp_pressure=np.ascontiguousarray(cp_pressure),
        x_suction=profile.suction[:, 0].copy(),
        cp_suction=np.ascontiguousarray(cp_suction),
        circulation=sol.circulation,
        exit_angle=_exit_angle(sol.circulation, flow),
        tangency_residual=sol.tangency_residual,
        blade_id=profile.blade_id,
    )
    return dist


def _exit_angle(circulation: float, flow: FlowConditions) -> float:
    a = math.radians(flow.inlet_angle)
    vx = flow.inlet_speed * math.cos(a)
    vy = flow.inlet_speed * math.sin(a)
    if flow.is_isolated:
        return flow.inlet_angle
    vy2 = vy + circulation / flow.pitch_to_chord
    return math.degrees(math.atan2(vy2, vx))


def exit_flow_angle(dist: CpDistribution, flow: FlowConditions) -> float:
    """Mass-averaged exit flow angle from the cascade momentum relation.

    Axial velocity is conserved across the row; the tangential velocity
    picks up circulation/pitch, so zero circulation returns the inlet
    angle unchanged.
    """
    return _exit_angle(dist.circulation, flow)


def dynamic_head_ratio(dist: CpDistribution, flow: FlowConditions) -> float:
    """Exit-to-inlet dynamic head ratio (cos a1 / cos a2)^2."""
    a1 = math.radians(flow.inlet_angle)
    a2 = math.radians(_exit_angle(dist.circulation, flow))
    return (math.cos(a1) / math.cos(a2)) ** 2


def sample_cp_at(dist: CpDistribution, side: str, cx: float) -> float:
    """Cp at axial station cx on one side, linear in x/c between samples."""
    if not 0.0 <= cx <= 1.0:
        raise SolverError(f"station x/c out of [0, 1]: {cx}")
    x, cp = dist.side(side)
    return float(np.interp(cx, x, cp))


# --- serialization ---

def cp_record_bytes(dist: CpDistribution) -> bytes:
    """Cp at all points (pressure then suction) as little-endian float64,
    then circulation and exit angle."""
    body = np.concatenate(
        [dist.cp_pressure, dist.cp_suction, [dist.circulation, dist.exit_angle]]
    )
    return body.astype("<f8").tobytes()


def cp_record_size(points_per_side: int) -> int:
    return (2 * points_per_side + 2) * 8


def cp_from_bytes(
    buf: bytes,
    points_per_side: int,
    x_pressure: np.ndarray,
    x_suction: np.ndarray,
    blade_id: int = 0,
) -> CpDistribution:
    n = points_per_side
    vals = np.frombuffer(buf, dtype="<f8", count=2 * n + 2).astype(np.float64)
    return CpDistribution(
        x_pressure=x_pressure,
        cp_pressure=vals[:n].copy(),
        x_suction=x_suction,
        cp_suction=vals[n : 2 * n].copy(),
        circulation=float(vals[2 * n]),
        exit_angle=float(vals[2 * n + 1]),
        tangency_residual=float("nan"),  # solve diagnostic, not stored per record
        blade_id=blade_id,
    )
