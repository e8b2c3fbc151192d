"""Label binning, splits, and the dataset container/file format."""

import numpy as np
import pytest

from bladecp.dataset import (
    DEFAULT_INTERVAL,
    SPLIT_NAMES,
    STATIONS,
    ClampCounter,
    DatasetError,
    LabelSpec,
    build_bank,
    compute_label_spec,
    cp_to_label,
    label_to_cp_center,
    load_dataset,
    save_dataset,
    split_assignment,
    station_name,
)
from bladecp.geometry import DatumSpec, PerturbSpec, build_datum, perturb
from bladecp.panel import FlowConditions, solve_cascade


class TestLabelSpec:
    def test_width_3_2_gives_32_labels(self):
        spec = compute_label_spec("suction", 0.4, np.array([-2.0, 1.2]))
        assert spec.n_labels == 32

    def test_width_0_5_gives_5_labels(self):
        spec = compute_label_spec("pressure", 0.2, np.array([0.0, 0.5]))
        assert spec.n_labels == 5

    def test_identical_values_give_1_label(self):
        spec = compute_label_spec("pressure", 0.1, np.full(10, 0.3))
        assert spec.n_labels == 1

    def test_every_observed_value_lands_in_range(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(-3.0, 1.0, size=500)
        spec = compute_label_spec("suction", 0.5, values)
        counter = ClampCounter()
        labels = [cp_to_label(v, spec, counter) for v in values]
        assert counter.clamped == 0
        assert min(labels) == 0
        assert all(0 <= k < spec.n_labels for k in labels)

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(DatasetError):
            compute_label_spec("suction", 0.4, np.array([]))
        with pytest.raises(DatasetError):
            compute_label_spec("suction", 0.4, np.array([0.0, np.nan]))


def spec_2_01() -> LabelSpec:
    return LabelSpec(side="suction", cx=0.4, cp_min=-2.0, interval=0.1, n_labels=32)


class TestCpToLabel:
    def test_lower_edge_is_label_0(self):
        assert cp_to_label(-2.0, spec_2_01()) == 0

    def test_documented_floor_example(self):
        assert cp_to_label(-0.55, spec_2_01()) == 14

    def test_bin_edges_go_up(self):
        # -1.9 sits exactly on the 0/1 edge; floor sends it up.
        assert cp_to_label(-1.9, spec_2_01()) == 1

    def test_above_range_clamps_and_counts(self):
        counter = ClampCounter()
        assert cp_to_label(5.0, spec_2_01(), counter) == 31
        assert counter.clamped == 1

    def test_below_range_clamps_and_counts(self):
        counter = ClampCounter()
        assert cp_to_label(-2.5, spec_2_01(), counter) == 0
        assert counter.clamped == 1

    def test_exact_top_edge_not_counted(self):
        counter = ClampCounter()
        assert cp_to_label(-2.0 + 32 * 0.1, spec_2_01(), counter) == 31
        assert counter.clamped == 0


class TestLabelCenters:
    def test_label_0_center(self):
        assert label_to_cp_center(0, spec_2_01()) == pytest.approx(-1.95)

    def test_label_31_center(self):
        assert label_to_cp_center(31, spec_2_01()) == pytest.approx(1.15)

    def test_round_trip_every_label(self):
        spec = spec_2_01()
        for k in range(spec.n_labels):
            assert cp_to_label(label_to_cp_center(k, spec), spec) == k

    def test_out_of_range_label_rejected(self):
        with pytest.raises(DatasetError):
            label_to_cp_center(32, spec_2_01())


class TestSplit:
    def test_six_samples(self):
        codes = split_assignment(6, seed=0)
        counts = np.bincount(codes, minlength=3)
        assert counts.tolist() == [4, 1, 1]

    def test_full_scale_counts(self):
        codes = split_assignment(63450, seed=0)
        counts = np.bincount(codes, minlength=3)
        assert counts.tolist() == [42300, 10575, 10575]

    def test_remainder_goes_to_train(self):
        codes = split_assignment(6 + 5, seed=3)
        counts = np.bincount(codes, minlength=3)
        assert counts.tolist() == [9, 1, 1]

    def test_deterministic(self):
        np.testing.assert_array_equal(
            split_assignment(100, seed=42), split_assignment(100, seed=42)
        )
        assert not np.array_equal(
            split_assignment(100, seed=42), split_assignment(100, seed=43)
        )

    def test_exhaustive_and_disjoint(self):
        codes = split_assignment(1000, seed=1)
        assert codes.shape == (1000,)
        assert set(np.unique(codes)) == {0, 1, 2}

    def test_too_few_samples_rejected(self):
        with pytest.raises(DatasetError):
            split_assignment(5, seed=0)


@pytest.fixture(scope="module")
def small_bank():
    datum = build_datum(DatumSpec())
    flow = FlowConditions()
    rng = np.random.default_rng(7)
    profiles = [datum]
    for i in range(1, 12):
        side = "pressure" if i % 2 else "suction"
        sign = -1.0 if side == "pressure" else 1.0
        profiles.append(
            perturb(
                datum,
                PerturbSpec(
                    side,
                    (float(rng.uniform(0.25, 0.75)),),
                    (float(sign * rng.uniform(0.005, 0.03)),),
                    (0.2,),
                ),
            )
        )
    profiles = [
        p if p.blade_id == i else type(p)(p.pressure, p.suction, blade_id=i)
        for i, p in enumerate(profiles)
    ]
    cps = [solve_cascade(p, flow) for p in profiles]
    return build_bank(profiles, cps, split_seed=11)


class TestBank:
    def test_eighteen_stations(self, small_bank):
        assert len(STATIONS) == 18
        assert len(small_bank.label_specs) == 18
        assert small_bank.station_cp.shape == (18, 12)

    def test_station_names(self):
        assert station_name("suction", 0.4) == "suction_0.40"
        assert [station_name(s, x) for s, x in STATIONS][0] == "pressure_0.10"

    def test_split_counts(self, small_bank):
        counts = {s: small_bank.split_ids(s).size for s in SPLIT_NAMES}
        assert counts == {"train": 8, "validation": 2, "test": 2}

    def test_labels_within_spec(self, small_bank):
        for side, cx in STATIONS:
            labels = small_bank.labels_for(side, cx)
            k = small_bank.station_index(side, cx)
            assert labels.min() >= 0
            assert labels.max() < small_bank.label_specs[k].n_labels

    def test_interval_default(self, small_bank):
        assert small_bank.interval == DEFAULT_INTERVAL == 0.1

    def test_blade_position(self, small_bank):
        assert small_bank.blade_position(small_bank.profiles[3].blade_id) == 3
        with pytest.raises(DatasetError):
            small_bank.blade_position(999)


class TestDatasetFile:
    def test_save_load_round_trip(self, small_bank, tmp_path):
        path = tmp_path / "bank.bldn"
        save_dataset(small_bank, str(path))
        loaded = load_dataset(str(path))
        assert loaded.count == small_bank.count
        np.testing.assert_array_equal(loaded.split, small_bank.split)
        np.testing.assert_array_equal(loaded.matrices, small_bank.matrices)
        for a, b in zip(loaded.label_specs, small_bank.label_specs):
            assert a == b
        # Byte-identical re-serialization.
        path2 = tmp_path / "bank2.bldn"
        save_dataset(loaded, str(path2))
        assert path.read_bytes() == path2.read_bytes()

    def test_version_mismatch_rejected(self, small_bank, tmp_path):
        path = tmp_path / "bank.bldn"
        save_dataset(small_bank, str(path))
        raw = bytearray(path.read_bytes())
        raw[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetError):
            load_dataset(str(path))

    def test_bad_magic_rejected(self, small_bank, tmp_path):
        path = tmp_path / "bank.bldn"
        save_dataset(small_bank, str(path))
        raw = bytearray(path.read_bytes())
        raw[0] = 0
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetError):
            load_dataset(str(path))

    def test_manifest_label_counts_match_recomputation(self, small_bank, tmp_path):
        # Oracle: rebuild each station's spec from the stored Cp records.
        path = tmp_path / "bank.bldn"
        save_dataset(small_bank, str(path))
        loaded = load_dataset(str(path))
        from bladecp.panel import sample_cp_at

        for k, (side, cx) in enumerate(STATIONS):
            values = np.array(
                [sample_cp_at(dist, side, cx) for dist in loaded.cps]
            )
            fresh = compute_label_spec(side, cx, values, loaded.interval)
            assert fresh.n_labels == loaded.label_specs[k].n_labels
            assert fresh.cp_min == loaded.label_specs[k].cp_min
