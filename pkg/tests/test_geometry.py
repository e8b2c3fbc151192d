"""Blade geometry: datum construction, bump perturbations, sweep, bytes."""

import math

import numpy as np
import pytest

from bladecp.geometry import (
    BumpAxes,
    DatumSpec,
    GeometryError,
    PerturbSpec,
    SweepGrid,
    build_datum,
    bump_displacement,
    cosine_stations,
    generate_library,
    perturb,
    profile_from_bytes,
    profile_record_size,
    profile_to_bytes,
    profile_to_text,
    validate_profile,
)


def camber_tangent_deg(profile, at_le: bool) -> float:
    """Independent camber-slope oracle: both sides are tangential offsets
    from the camber line at shared x stations, so side midpoints lie on
    the camber line exactly."""
    mid = 0.5 * (profile.pressure + profile.suction)
    a, b = (mid[0], mid[1]) if at_le else (mid[-2], mid[-1])
    return math.degrees(math.atan2(b[1] - a[1], b[0] - a[0]))


class TestDatum:
    def test_metal_angles_within_tenth_degree(self):
        datum = build_datum(DatumSpec())
        assert camber_tangent_deg(datum, at_le=True) == pytest.approx(41.08, abs=0.1)
        assert camber_tangent_deg(datum, at_le=False) == pytest.approx(-69.25, abs=0.1)

    def test_point_count_is_400(self):
        datum = build_datum(DatumSpec())
        assert datum.pressure.shape[0] + datum.suction.shape[0] == 400

    def test_zero_thickness_degenerates_to_camber_sheet(self):
        flat = build_datum(DatumSpec(max_thickness=0.0))
        np.testing.assert_array_equal(flat.pressure, flat.suction)

    def test_profile_is_closed_and_ordered(self):
        datum = build_datum(DatumSpec())
        validate_profile(datum)
        assert np.hypot(*(datum.pressure[0] - datum.suction[0])) <= 1e-9
        assert np.hypot(*(datum.pressure[-1] - datum.suction[-1])) <= 1e-9
        assert datum.pressure[0, 0] == 0.0 and datum.pressure[-1, 0] == 1.0

    def test_rejects_bad_specs(self):
        with pytest.raises(GeometryError):
            DatumSpec(inlet_metal_angle=0.0)
        with pytest.raises(GeometryError):
            DatumSpec(max_thickness=0.5)
        with pytest.raises(GeometryError):
            DatumSpec(pitch_to_chord=-1.0)


class TestPerturb:
    def test_zero_amplitude_is_identity(self):
        datum = build_datum(DatumSpec())
        same = perturb(
            datum, PerturbSpec("suction", (0.5,), (0.0,), (0.2,))
        )
        np.testing.assert_array_equal(same.suction, datum.suction)
        np.testing.assert_array_equal(same.pressure, datum.pressure)

    def test_single_bump_max_displacement(self):
        # Oracle: displacement is purely tangential, so per-point motion
        # is |y_new - y_old|; brute-force the max over all 200 points.
        datum = build_datum(DatumSpec())
        bumped = perturb(
            datum, PerturbSpec("suction", (0.5,), (0.01,), (0.2,))
        )
        moved = np.abs(bumped.suction[:, 1] - datum.suction[:, 1])
        assert moved.max() == pytest.approx(0.01, abs=1e-6)
        x = datum.suction[:, 0]
        nearest = np.abs(x - 0.5).min()
        assert abs(x[moved.argmax()] - 0.5) <= nearest + 1e-12

    def test_other_side_untouched(self):
        datum = build_datum(DatumSpec())
        bumped = perturb(
            datum, PerturbSpec("suction", (0.3,), (0.02,), (0.2,))
        )
        np.testing.assert_array_equal(bumped.pressure, datum.pressure)

    def test_edges_never_move(self):
        datum = build_datum(DatumSpec())
        for side in ("pressure", "suction"):
            sign = -1.0 if side == "pressure" else 1.0
            big = perturb(
                datum,
                PerturbSpec(side, (0.3, 0.7), (0.05 * sign, 0.05 * sign), (0.3, 0.3)),
            )
            moved = np.abs(big.side(side)[:, 1] - datum.side(side)[:, 1])
            assert moved[0] < 1e-4 and moved[-1] < 1e-4
            # The envelope pins everything outside (0.05, 0.95) exactly.
            x = datum.side(side)[:, 0]
            outside = (x <= 0.05) | (x >= 0.95)
            assert np.all(moved[outside] == 0.0)

    def test_displacement_linear_in_amplitude(self):
        x = cosine_stations(200)
        one = bump_displacement(x, PerturbSpec("suction", (0.4,), (0.013,), (0.25,)))
        two = bump_displacement(x, PerturbSpec("suction", (0.4,), (0.026,), (0.25,)))
        np.testing.assert_allclose(two, 2.0 * one, rtol=0, atol=1e-12)

    def test_rejects_side_crossing(self):
        datum = build_datum(DatumSpec())
        with pytest.raises(GeometryError):
            # Thickness peaks at 0.06 chord per side; a -0.05 suction dip
            # plus a +0.05 pressure rise crosses near mid-chord.
            perturb(
                perturb(datum, PerturbSpec("suction", (0.3,), (-0.05,), (0.3,))),
                PerturbSpec("pressure", (0.3,), (0.05,), (0.3,)),
            )

    def test_rejects_out_of_range_parameters(self):
        with pytest.raises(GeometryError):
            PerturbSpec("suction", (0.04,), (0.01,), (0.2,))
        with pytest.raises(GeometryError):
            PerturbSpec("suction", (0.5,), (0.06,), (0.2,))
        with pytest.raises(GeometryError):
            PerturbSpec("camber", (0.5,), (0.01,), (0.2,))


def small_grid(jitter=0.0) -> SweepGrid:
    axes = BumpAxes(
        centers=(0.3, 0.5, 0.7),
        amplitudes=(-0.02, -0.01, 0.0, 0.01, 0.02),
        widths=(0.15, 0.3),
    )
    return SweepGrid(
        pressure=(axes,),
        suction=(axes,),
        amp_jitter=jitter,
        center_jitter=jitter / 10,
        width_jitter=jitter,
    )


class TestLibrary:
    def test_grid_count_is_axis_product(self):
        assert small_grid().count == 3 * 5 * 2 * 3 * 5 * 2

    def test_full_scale_count_accepted(self):
        grid = small_grid()
        assert grid.count == 900
        # Oversized requests wrap the grid with fresh jitter, so the
        # full-scale library size is a valid target.
        profiles, skipped = generate_library(
            build_datum(DatumSpec(points_per_side=20)),
            grid,
            seed=3,
            count=1805,
        )
        assert len(profiles) + len(skipped) == 1805

    def test_contains_exact_datum_at_zero_amplitude_point(self):
        datum = build_datum(DatumSpec(points_per_side=40))
        grid = small_grid(jitter=0.2)
        profiles, _ = generate_library(datum, grid, seed=11, count=150)
        hits = [
            p
            for p in profiles
            if np.array_equal(p.pressure, datum.pressure)
            and np.array_equal(p.suction, datum.suction)
        ]
        assert hits, "zero-amplitude grid point must reproduce the datum bitwise"

    def test_deterministic_across_reruns(self):
        datum = build_datum(DatumSpec(points_per_side=30))
        grid = small_grid(jitter=0.15)
        a, askip = generate_library(datum, grid, seed=5, count=200)
        b, bskip = generate_library(datum, grid, seed=5, count=200)
        assert askip == bskip
        assert [profile_to_bytes(p) for p in a] == [profile_to_bytes(p) for p in b]

    def test_every_generated_profile_is_valid(self):
        datum = build_datum(DatumSpec(points_per_side=30))
        profiles, _ = generate_library(datum, small_grid(jitter=0.2), seed=9, count=300)
        for p in profiles:
            validate_profile(p)

    def test_ids_follow_grid_indices_despite_skips(self):
        datum = build_datum(DatumSpec(points_per_side=30))
        grid = small_grid()
        profiles, skipped = generate_library(datum, grid, seed=1)
        ids = [p.blade_id for p in profiles]
        assert sorted(ids + skipped) == list(range(grid.count))


class TestSerialization:
    def test_bytes_round_trip(self):
        datum = build_datum(DatumSpec())
        blob = profile_to_bytes(datum)
        assert len(blob) == profile_record_size(200) == 4 + 400 * 2 * 8
        back = profile_from_bytes(blob, 200)
        assert back.blade_id == datum.blade_id
        np.testing.assert_array_equal(back.pressure, datum.pressure)
        np.testing.assert_array_equal(back.suction, datum.suction)

    def test_text_export_shape(self):
        datum = build_datum(DatumSpec(points_per_side=20))
        lines = profile_to_text(datum).strip().split("\n")
        assert len(lines) == 40
        x, y, side = lines[0].split()
        assert side == "pressure"
        assert float(x) == 0.0
        assert lines[-1].split()[2] == "suction"
